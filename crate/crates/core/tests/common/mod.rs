//! Oracles shared by the integration and acceptance suites. Kept independent
//! of the implementation paths they check.
#![allow(dead_code)]

pub mod oracles;

use lesiontl_core::model::{BackboneId, FreezePolicy, Layer, ModelSpec, Network};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tiny variant: 8x8 input, one 2-filter conv, one 4-unit hidden layer.
pub fn gradient_check_spec(dropout_rate: f64) -> ModelSpec {
    ModelSpec {
        backbone_id: BackboneId::Tiny { channels: vec![2] },
        pretrained: false,
        num_classes: 2,
        dropout_rate,
        head_widths: vec![4],
        freeze: FreezePolicy::none(),
        excluded_head_layers: vec![],
        input_size: 8,
        weights_path: None,
    }
}

pub fn random_batch(n: usize, size: usize, seed: u64) -> (Array4<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array4::from_shape_simple_fn((n, 3, size, size), || rng.random_range(-1.0..1.0));
    let y = (0..n).map(|i| i % 2).collect();
    (x, y)
}

/// Worst relative error between analytic and central-difference gradients
/// over every trainable parameter. The dropout mask is re-drawn from the same
/// seed for every evaluation so the loss is a fixed function of the weights.
pub fn max_gradient_error(net: &Network<f64>, x: &Array4<f64>, y: &[usize], mask_seed: u64, step: f64) -> (f64, usize) {
    let analytic = net.forward_backward(x, y, &mut ChaCha8Rng::seed_from_u64(mask_seed)).grads;
    let loss_at = |n: &Network<f64>| n.forward_backward(x, y, &mut ChaCha8Rng::seed_from_u64(mask_seed)).loss;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe = net.clone();
    for (li, layer) in net.layers().iter().enumerate() {
        let trainable = match layer {
            Layer::Conv(c) => c.trainable,
            Layer::Dense(d) => d.trainable,
            _ => false,
        };
        if !trainable {
            continue;
        }
        let grad = analytic.per_layer[li].as_ref().expect("trainable layer has a gradient");
        for which in 0..2 {
            let count = if which == 0 { grad.weight.len() } else { grad.bias.len() };
            for k in 0..count {
                let original = *param_slot(&mut probe, li, which, k);
                *param_slot(&mut probe, li, which, k) = original + step;
                let plus = loss_at(&probe);
                *param_slot(&mut probe, li, which, k) = original - step;
                let minus = loss_at(&probe);
                *param_slot(&mut probe, li, which, k) = original;
                let numeric = (plus - minus) / (2.0 * step);
                let a = if which == 0 { grad.weight.as_slice().unwrap()[k] } else { grad.bias.as_slice().unwrap()[k] };
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((a - numeric).abs() / denom);
                checked += 1;
            }
        }
    }
    (worst, checked)
}

fn param_slot(net: &mut Network<f64>, layer: usize, which: usize, k: usize) -> &mut f64 {
    let (w, b) = match &mut net.layers_mut()[layer] {
        Layer::Conv(c) => (&mut c.weight, &mut c.bias),
        Layer::Dense(d) => (&mut d.weight, &mut d.bias),
        _ => unreachable!("only weight-bearing layers are probed"),
    };
    if which == 0 {
        &mut w.as_slice_mut().unwrap()[k]
    } else {
        &mut b.as_slice_mut().unwrap()[k]
    }
}

/// Small trainable network for fast integration tests.
pub fn tiny_spec(channels: &[usize], head: &[usize], input_size: usize, dropout_rate: f64) -> ModelSpec {
    ModelSpec {
        backbone_id: BackboneId::Tiny { channels: channels.to_vec() },
        pretrained: false,
        num_classes: 2,
        dropout_rate,
        head_widths: head.to_vec(),
        freeze: FreezePolicy::none(),
        excluded_head_layers: vec![],
        input_size,
        weights_path: None,
    }
}

/// Linearly separable in-memory images: melanoma leans red, benign leans
/// blue, with uniform noise. Ids are `<prefix>_<i>`.
pub fn separable_set(prefix: &str, n: usize, size: usize, seed: u64) -> lesiontl_core::dataset::ImageSet<f32> {
    use lesiontl_core::dataset::{ImageSet, Label};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Melanoma } else { Label::Benign };
            let bias = if label == Label::Melanoma { [1.0f32, -0.5, -1.0] } else { [-1.0, -0.5, 1.0] };
            let x = ndarray::Array3::from_shape_fn((3, size, size), |(c, _, _)| bias[c] + rng.random_range(-0.8f32..0.8));
            (format!("{prefix}_{i:04}"), label, x)
        })
        .collect();
    ImageSet::from_arrays(items)
}
