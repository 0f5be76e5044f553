use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::model::BackboneId;
use crate::nn::Real;

pub const TARGET_SIDE: u32 = 224;

/// Channel statistics shipped with the torchvision ImageNet checkpoints of
/// VGG16, VGG19 and AlexNet.
pub const IMAGENET_MEANS: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STDS: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    Bilinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub target_height: u32,
    pub target_width: u32,
    pub channel_means: [f64; 3],
    pub channel_stds: [f64; 3],
    pub resize_mode: ResizeMode,
    pub backbone_id: BackboneId,
}

impl PreprocessSpec {
    /// Default preprocessing for a backbone: 224x224 bilinear resize and the
    /// normalisation its pretrained weights were trained with.
    pub fn for_backbone(backbone_id: BackboneId) -> Self {
        Self {
            target_height: TARGET_SIDE,
            target_width: TARGET_SIDE,
            channel_means: IMAGENET_MEANS,
            channel_stds: IMAGENET_STDS,
            resize_mode: ResizeMode::Bilinear,
            backbone_id,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.target_height != TARGET_SIDE || self.target_width != TARGET_SIDE {
            return Err(DatasetError::Invalid(format!(
                "preprocessing target must be {TARGET_SIDE}x{TARGET_SIDE}, got {}x{}",
                self.target_height, self.target_width
            )));
        }
        if let Some(s) = self.channel_stds.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(DatasetError::Invalid(format!("channel std {s} must be positive")));
        }
        if self.channel_means.iter().any(|m| !m.is_finite()) {
            return Err(DatasetError::Invalid("channel means must be finite".into()));
        }
        Ok(())
    }

    /// Converts an RGB image to a normalised `(3, H, W)` array.
    pub fn apply<T: Real>(&self, image: &RgbImage) -> Array3<T> {
        let (w, h) = (self.target_width, self.target_height);
        let resized;
        let img = if image.dimensions() == (w, h) {
            image
        } else {
            let filter = match self.resize_mode {
                ResizeMode::Bilinear => FilterType::Triangle,
            };
            resized = image::imageops::resize(image, w, h, filter);
            &resized
        };
        // per-channel lookup table: 256 possible inputs
        let tables: Vec<Vec<T>> = (0..3)
            .map(|c| {
                (0..256)
                    .map(|p| T::lit((p as f64 / 255.0 - self.channel_means[c]) / self.channel_stds[c]))
                    .collect()
            })
            .collect();
        Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
            tables[c][img.get_pixel(x as u32, y as u32)[c] as usize]
        })
    }
}

/// Decodes `path` (grayscale is promoted to RGB), resizes it to the target
/// size and normalises each channel: `(pixel / 255 - mean) / std`.
pub fn preprocess_image<T: Real>(path: &Path, spec: &PreprocessSpec) -> Result<Array3<T>, DatasetError> {
    spec.validate()?;
    let decoded = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| DatasetError::Decode { path: path.to_path_buf(), reason: e.to_string() })?;
    Ok(spec.apply(&decoded.to_rgb8()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb};

    fn spec(means: [f64; 3], stds: [f64; 3]) -> PreprocessSpec {
        PreprocessSpec { channel_means: means, channel_stds: stds, ..PreprocessSpec::for_backbone(BackboneId::Vgg16) }
    }

    #[test]
    fn resizes_arbitrary_input_to_224() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.png");
        RgbImage::from_fn(600, 450, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 7])).save(&path).unwrap();
        let out = preprocess_image::<f32>(&path, &PreprocessSpec::for_backbone(BackboneId::Vgg19)).unwrap();
        assert_eq!(out.dim(), (3, 224, 224));
    }

    #[test]
    fn identity_normalisation_divides_by_255() {
        let img = RgbImage::from_fn(224, 224, |x, y| Rgb([((x + y) % 256) as u8, (x % 256) as u8, (y % 256) as u8]));
        let out = spec([0.0; 3], [1.0; 3]).apply::<f32>(&img);
        for ((c, y, x), &v) in out.indexed_iter() {
            let p = img.get_pixel(x as u32, y as u32)[c];
            assert_eq!(v, p as f32 / 255.0);
        }
    }

    #[test]
    fn white_image_hand_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        RgbImage::from_pixel(37, 91, Rgb([255, 255, 255])).save(&path).unwrap();
        let out = preprocess_image::<f64>(&path, &spec([0.5; 3], [0.25; 3])).unwrap();
        assert!(out.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn grayscale_is_promoted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        GrayImage::from_pixel(10, 10, Luma([51])).save(&path).unwrap();
        let out = preprocess_image::<f32>(&path, &spec([0.0; 3], [1.0; 3])).unwrap();
        assert_eq!(out.dim(), (3, 224, 224));
        assert!(out.iter().all(|&v| (v - 0.2).abs() < 1e-6));
    }

    #[test]
    fn invalid_specs_and_files() {
        let bad = PreprocessSpec { channel_stds: [1.0, 0.0, 1.0], ..PreprocessSpec::for_backbone(BackboneId::Vgg16) };
        assert!(bad.validate().is_err());
        let small = PreprocessSpec { target_width: 100, ..PreprocessSpec::for_backbone(BackboneId::Vgg16) };
        assert!(small.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.jpg");
        std::fs::write(&path, b"junk").unwrap();
        assert!(matches!(
            preprocess_image::<f32>(&path, &PreprocessSpec::for_backbone(BackboneId::Vgg16)),
            Err(DatasetError::Decode { .. })
        ));
    }
}
