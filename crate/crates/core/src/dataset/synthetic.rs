//! Colour-separable two-class fixture: melanoma images are red-dominant,
//! benign images blue-dominant, each pixel perturbed by seeded noise so every
//! file has distinct content.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, Label};

const NOISE: i32 = 20;

pub fn color_image(label: Label, side: u32, rng: &mut impl Rng) -> RgbImage {
    let base: [i32; 3] = match label {
        Label::Melanoma => [200, 40, 40],
        Label::Benign => [40, 40, 200],
    };
    RgbImage::from_fn(side, side, |_, _| {
        let mut px = [0u8; 3];
        for (p, b) in px.iter_mut().zip(base) {
            *p = (b + rng.random_range(-NOISE..=NOISE)).clamp(0, 255) as u8;
        }
        Rgb(px)
    })
}

/// Writes `<root>/melanoma/*.png` and `<root>/benign/*.png`.
pub fn write_color_fixture(
    root: &Path,
    melanoma: usize,
    benign: usize,
    side: u32,
    seed: u64,
) -> Result<(), DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (label, count) in [(Label::Melanoma, melanoma), (Label::Benign, benign)] {
        let dir = root.join(label.as_str());
        std::fs::create_dir_all(&dir)?;
        for i in 0..count {
            color_image(label, side, &mut rng)
                .save(dir.join(format!("synthetic_{}_{i:04}.png", label.as_str())))
                .map_err(|e| DatasetError::Io(std::io::Error::other(e)))?;
        }
    }
    Ok(())
}
