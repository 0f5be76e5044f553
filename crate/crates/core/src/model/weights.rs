//! Safetensors weight files: pretrained backbones and model exports.
//!
//! Tensors are named `<layer>.weight` / `<layer>.bias`. Convolution weights
//! have shape `[out, in, k, k]`, fully connected weights `[out, in]`, which is
//! the torchvision layout, so converted torchvision checkpoints load as-is.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use safetensors::{Dtype, SafeTensors};
use sha2::{Digest, Sha256};

use super::network::{Layer, Network};
use super::spec::BackboneId;
use super::ModelError;
use crate::nn::Real;

pub const CACHE_ENV: &str = "LESIONTL_CACHE";
pub const EXPORT_WEIGHTS_FILE: &str = "weights.safetensors";
pub const EXPORT_SPEC_FILE: &str = "model_spec.json";

/// Directory holding `<backbone>.safetensors` pretrained weight files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightCache {
    dir: PathBuf,
}

impl WeightCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `$LESIONTL_CACHE`, falling back to `~/.cache/lesiontl`.
    pub fn from_env() -> Self {
        if let Some(dir) = std::env::var_os(CACHE_ENV) {
            return Self::new(dir);
        }
        let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
        Self::new(home.join(".cache").join("lesiontl"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, backbone: &BackboneId) -> PathBuf {
        self.dir.join(format!("{}.safetensors", backbone.weight_file_stem()))
    }
}

pub fn sha256_file(path: &Path) -> Result<String, std::io::Error> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn read_weight_file(path: &Path) -> Result<Vec<u8>, ModelError> {
    std::fs::read(path).map_err(|source| ModelError::WeightLoad {
        path: path.to_path_buf(),
        reason: source.to_string(),
    })
}

fn tensor_values<T: Real>(
    file: &SafeTensors<'_>,
    path: &Path,
    name: &str,
    expected_shape: &[usize],
) -> Result<Vec<T>, ModelError> {
    let err = |reason: String| ModelError::WeightLoad { path: path.to_path_buf(), reason };
    let view = file.tensor(name).map_err(|e| err(format!("tensor `{name}`: {e}")))?;
    if view.shape() != expected_shape {
        return Err(err(format!("tensor `{name}` has shape {:?}, expected {:?}", view.shape(), expected_shape)));
    }
    match view.dtype() {
        Dtype::F32 => Ok(f32::decode_le(view.data()).into_iter().map(|v| T::lit(v as f64)).collect()),
        Dtype::F64 => Ok(f64::decode_le(view.data()).into_iter().map(T::lit).collect()),
        other => Err(err(format!("tensor `{name}` has unsupported dtype {other:?}"))),
    }
}

fn load_layers<T: Real>(net: &mut Network<T>, path: &Path, backbone_only: bool) -> Result<String, ModelError> {
    let bytes = read_weight_file(path)?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let file = SafeTensors::deserialize(&bytes).map_err(|e| ModelError::WeightLoad {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for layer in net.layers_mut() {
        let (name, weight, bias, shape) = match layer {
            Layer::Conv(c) => {
                let shape = c.weight_shape().to_vec();
                (c.name.clone(), &mut c.weight, &mut c.bias, shape)
            }
            Layer::Dense(d) if !backbone_only => {
                let shape = vec![d.outputs(), d.inputs()];
                (d.name.clone(), &mut d.weight, &mut d.bias, shape)
            }
            _ => continue,
        };
        let w = tensor_values::<T>(&file, path, &format!("{name}.weight"), &shape)?;
        let b = tensor_values::<T>(&file, path, &format!("{name}.bias"), &shape[..1])?;
        weight.as_slice_mut().expect("contiguous").copy_from_slice(&w);
        bias.as_slice_mut().expect("contiguous").copy_from_slice(&b);
    }
    Ok(digest)
}

/// Loads the convolutional layers from a pretrained file; returns its SHA-256.
pub fn load_backbone<T: Real>(net: &mut Network<T>, path: &Path) -> Result<String, ModelError> {
    load_layers(net, path, true)
}

/// Loads every weight-bearing layer (model export).
pub fn load_all<T: Real>(net: &mut Network<T>, path: &Path) -> Result<String, ModelError> {
    load_layers(net, path, false)
}

/// Saves every weight-bearing layer of `net`.
pub fn save_network<T: Real>(net: &Network<T>, path: &Path) -> Result<(), ModelError> {
    save_layers(net, path, |_| true)
}

/// Saves only the convolutional backbone, in the pretrained-file layout.
pub fn save_backbone<T: Real>(net: &Network<T>, path: &Path) -> Result<(), ModelError> {
    save_layers(net, path, |layer| matches!(layer, Layer::Conv(_)))
}

fn save_layers<T: Real>(net: &Network<T>, path: &Path, keep: impl Fn(&Layer<T>) -> bool) -> Result<(), ModelError> {
    let mut encoded: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for layer in net.layers().iter().filter(|l| keep(l)) {
        let (name, weight, bias, shape) = match layer {
            Layer::Conv(c) => (&c.name, &c.weight, &c.bias, c.weight_shape().to_vec()),
            Layer::Dense(d) => (&d.name, &d.weight, &d.bias, vec![d.outputs(), d.inputs()]),
            _ => continue,
        };
        encoded.push((format!("{name}.weight"), shape.clone(), T::encode_le(weight.as_slice().expect("contiguous"))));
        encoded.push((format!("{name}.bias"), shape[..1].to_vec(), T::encode_le(bias.as_slice().expect("contiguous"))));
    }
    let views = encoded
        .iter()
        .map(|(name, shape, data)| {
            safetensors::tensor::TensorView::new(T::DTYPE, shape.clone(), data).map(|v| (name.clone(), v))
        })
        .collect::<Result<HashMap<_, _>, _>>()
        .map_err(|e| ModelError::WeightSave(e.to_string()))?;
    safetensors::serialize_to_file(views, &None, path).map_err(|e| ModelError::WeightSave(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, FreezePolicy, ModelSpec};

    fn tiny(seed_pretrained: bool) -> ModelSpec {
        ModelSpec {
            backbone_id: BackboneId::Tiny { channels: vec![2] },
            pretrained: seed_pretrained,
            head_widths: vec![3],
            input_size: 8,
            freeze: FreezePolicy::none(),
            ..ModelSpec::default()
        }
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::<f32>::initialise(&tiny(false), 11).unwrap();
        net.export(dir.path()).unwrap();
        let back = Network::<f32>::load_export(dir.path()).unwrap();
        assert_eq!(back.snapshot(), net.snapshot());
        assert_eq!(back.spec(), net.spec());
    }

    #[test]
    fn missing_pretrained_file_is_a_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = WeightCache::new(dir.path());
        let spec = ModelSpec { pretrained: true, ..ModelSpec::new(BackboneId::Vgg16) };
        let err = build_model::<f32>(&ModelSpec { head_widths: vec![8], ..spec }, 0, &cache).unwrap_err();
        assert!(matches!(err, ModelError::WeightLoad { .. }), "{err}");
    }

    #[test]
    fn backbone_file_loads_into_fresh_model_and_is_digested() {
        let dir = tempfile::tempdir().unwrap();
        let source = Network::<f32>::initialise(&tiny(false), 5).unwrap();
        let file = dir.path().join("backbone.safetensors");
        save_backbone(&source, &file).unwrap();
        let mut target = Network::<f32>::initialise(&tiny(false), 6).unwrap();
        let digest = load_backbone(&mut target, &file).unwrap();
        assert_eq!(digest, sha256_file(&file).unwrap());
        let (s, t) = (source.snapshot(), target.snapshot());
        assert_eq!(s.layers[0], t.layers[0]);
        assert_ne!(s.layers[1], t.layers[1], "head stays freshly initialised");
    }
}
