use std::path::Path;

use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spec::{BackboneOp, FreezePolicy, ModelSpec, OUTPUT_LAYER_NAME};
use super::weights::{self, WeightCache};
use super::ModelError;
use crate::nn::{
    self, argmax_rows, cross_entropy_with_grad, softmax_rows, Activation, Conv2d, Dense, MaxPool2d, ParamGrad,
    Real, Shape, Tensor,
};
use crate::optim::Optimizer;

pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Pool(MaxPool2d),
    Flatten { name: String },
    Dense(Dense<T>),
}

impl<T: Real> Layer<T> {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv(c) => &c.name,
            Layer::Pool(p) => &p.name,
            Layer::Flatten { name } => name,
            Layer::Dense(d) => &d.name,
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.param_count(),
            Layer::Dense(d) => d.param_count(),
            _ => 0,
        }
    }

    fn trainable(&self) -> bool {
        match self {
            Layer::Conv(c) => c.trainable,
            Layer::Dense(d) => d.trainable,
            _ => false,
        }
    }

    fn has_params(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::Dense(_))
    }

    fn output_shape(&self, input: Shape) -> Option<Shape> {
        match self {
            Layer::Conv(c) => c.output_shape(input),
            Layer::Pool(p) => p.output_shape(input),
            Layer::Flatten { .. } => Some(Shape::Flat(input.numel())),
            Layer::Dense(d) => match input {
                Shape::Flat(n) if n == d.inputs() => Some(Shape::Flat(d.outputs())),
                _ => None,
            },
        }
    }

    fn forward(&self, x: Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv(c) => Tensor::Spatial(c.forward(x.as_spatial())),
            Layer::Pool(p) => Tensor::Spatial(p.forward(x.as_spatial())),
            Layer::Flatten { .. } => Tensor::Flat(nn::flatten(x.into_spatial())),
            Layer::Dense(d) => Tensor::Flat(d.forward(x.as_flat())),
        }
    }
}

/// One row of a model summary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub name: String,
    pub kind: String,
    pub output_shape: String,
    pub params: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub layers: Vec<LayerSummary>,
    pub total_params: usize,
    pub trainable_params: usize,
}

impl ModelSummary {
    /// CSV with header `name,kind,output_shape,params,trainable`.
    pub fn write_csv(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
        w.write_record(["name", "kind", "output_shape", "params", "trainable"])?;
        for l in &self.layers {
            w.write_record([
                l.name.as_str(),
                l.kind.as_str(),
                l.output_shape.as_str(),
                &l.params.to_string(),
                if l.trainable { "true" } else { "false" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gradients for each layer, `None` for frozen or weightless layers.
#[derive(Debug)]
pub struct Gradients<T> {
    pub per_layer: Vec<Option<ParamGrad<T>>>,
}

/// Copy of every weight-bearing layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSnapshot<T> {
    pub layers: Vec<(String, Array2<T>, Array1<T>)>,
}

/// Result of a training forward/backward pass over one batch.
#[derive(Debug)]
pub struct BatchOutcome<T> {
    pub loss: T,
    pub correct: usize,
    pub grads: Gradients<T>,
}

enum LayerCache<T> {
    Conv(nn::ConvCache<T>),
    Pool(nn::PoolCache),
    Flatten(Shape),
    Dense(nn::DenseCache<T>),
}

/// Backbone plus classifier head, with softmax applied on output.
#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: ModelSpec,
    layers: Vec<Layer<T>>,
    pretrained_digest: Option<String>,
}

/// Builds the network described by `spec`, loading pretrained backbone
/// weights from `cache` when `spec.pretrained` is set. Head layers (and the
/// backbone when not pretrained) are randomly initialised from `seed`.
pub fn build_model<T: Real>(
    spec: &ModelSpec,
    seed: u64,
    cache: &WeightCache,
) -> Result<(Network<T>, ModelSummary), ModelError> {
    let mut net = Network::<T>::initialise(spec, seed)?;
    if spec.pretrained {
        let path = spec.weights_path.clone().unwrap_or_else(|| cache.path_for(&spec.backbone_id));
        net.pretrained_digest = Some(weights::load_backbone(&mut net, &path)?);
    }
    let summary = net.summary();
    Ok((net, summary))
}

/// Applies `policy` to a built model and returns the updated summary.
pub fn apply_freeze_policy<T: Real>(net: &mut Network<T>, policy: FreezePolicy) -> Result<ModelSummary, ModelError> {
    policy.validate(&net.spec.backbone_id)?;
    let mut conv_index = 0;
    for layer in &mut net.layers {
        if let Layer::Conv(c) = layer {
            c.trainable = !policy.freezes(conv_index);
            conv_index += 1;
        }
    }
    net.spec.freeze = policy;
    Ok(net.summary())
}

impl<T: Real> Network<T> {
    /// Randomly initialised network (He-normal backbone and hidden head,
    /// near-zero output layer) with the spec's freeze policy applied.
    pub fn initialise(spec: &ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut shape = Shape::Spatial { channels: INPUT_CHANNELS, height: spec.input_size, width: spec.input_size };
        let mut conv_index = 0;
        for op in spec.backbone_id.plan() {
            let layer = match op {
                BackboneOp::Conv { name, out_channels, kernel, stride, padding } => {
                    let Shape::Spatial { channels, .. } = shape else { unreachable!() };
                    let mut conv = Conv2d::zeros(name, channels, out_channels, kernel, stride, padding);
                    let fan_in = channels * kernel * kernel;
                    fill_normal(conv.weight.as_slice_mut().expect("fresh array"), (2.0 / fan_in as f64).sqrt(), &mut rng);
                    conv.trainable = !spec.freeze.freezes(conv_index);
                    conv_index += 1;
                    Layer::Conv(conv)
                }
                BackboneOp::Pool { name, kernel, stride } => Layer::Pool(MaxPool2d::new(name, kernel, stride)),
            };
            shape = layer.output_shape(shape).ok_or_else(|| {
                ModelError::Spec(format!(
                    "input size {} collapses to nothing at layer `{}`",
                    spec.input_size,
                    layer.name()
                ))
            })?;
            layers.push(layer);
        }
        layers.push(Layer::Flatten { name: "flatten".into() });
        let mut width = shape.numel();
        for (name, out) in spec.active_head_layers() {
            let mut dense = Dense::zeros(name, width, out, Activation::Relu, spec.dropout_rate);
            fill_normal(dense.weight.as_slice_mut().expect("fresh array"), (2.0 / width as f64).sqrt(), &mut rng);
            layers.push(Layer::Dense(dense));
            width = out;
        }
        let mut output = Dense::zeros(OUTPUT_LAYER_NAME, width, spec.num_classes, Activation::Identity, 0.0);
        fill_normal(output.weight.as_slice_mut().expect("fresh array"), 0.01 / (width as f64).sqrt(), &mut rng);
        layers.push(Layer::Dense(output));
        Ok(Self { spec: spec.clone(), layers, pretrained_digest: None })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// SHA-256 of the pretrained weight file the backbone was loaded from.
    pub fn pretrained_digest(&self) -> Option<&str> {
        self.pretrained_digest.as_deref()
    }

    pub fn input_shape(&self) -> Shape {
        Shape::Spatial { channels: INPUT_CHANNELS, height: self.spec.input_size, width: self.spec.input_size }
    }

    pub fn summary(&self) -> ModelSummary {
        let mut shape = self.input_shape();
        let mut rows = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(shape).expect("shapes validated at build time");
            let kind = match layer {
                Layer::Conv(_) => "conv2d",
                Layer::Pool(_) => "maxpool2d",
                Layer::Flatten { .. } => "flatten",
                Layer::Dense(_) if i + 1 == self.layers.len() => "output",
                Layer::Dense(_) => "dense",
            };
            rows.push(LayerSummary {
                name: layer.name().to_string(),
                kind: kind.to_string(),
                output_shape: shape.to_string(),
                params: layer.param_count(),
                trainable: layer.trainable(),
            });
        }
        let total_params = rows.iter().map(|r| r.params).sum();
        let trainable_params = rows.iter().filter(|r| r.trainable).map(|r| r.params).sum();
        ModelSummary { layers: rows, total_params, trainable_params }
    }

    fn check_input(&self, x: &Array4<T>) {
        let (_, c, h, w) = x.dim();
        let s = self.spec.input_size;
        assert!(
            c == INPUT_CHANNELS && h == s && w == s,
            "network expects Nx{INPUT_CHANNELS}x{s}x{s} input, got {:?}",
            x.dim()
        );
    }

    /// Evaluation-mode logits (dropout off).
    pub fn logits(&self, x: &Array4<T>) -> Array2<T> {
        self.check_input(x);
        let mut act = Tensor::Spatial(x.to_owned());
        for layer in &self.layers {
            act = layer.forward(act);
        }
        act.into_flat()
    }

    /// Per-class probabilities, one row per input.
    pub fn predict_proba(&self, x: &Array4<T>) -> Array2<T> {
        softmax_rows(&self.logits(x))
    }

    /// Predicted class indices (argmax; ties go to the lower index).
    pub fn predict(&self, x: &Array4<T>) -> Vec<usize> {
        argmax_rows(&self.logits(x))
    }

    fn first_trainable(&self) -> Option<usize> {
        self.layers.iter().position(|l| l.trainable())
    }

    /// Training-mode forward pass (dropout active, drawn from `rng`) followed
    /// by backpropagation of the mean cross-entropy.
    pub fn forward_backward<R: Rng + ?Sized>(&self, x: &Array4<T>, targets: &[usize], rng: &mut R) -> BatchOutcome<T> {
        self.check_input(x);
        let start = self.first_trainable().unwrap_or(self.layers.len());
        let mut act = Tensor::Spatial(x.to_owned());
        for layer in &self.layers[..start] {
            act = layer.forward(act);
        }
        let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(self.layers.len() - start);
        for layer in &self.layers[start..] {
            act = match layer {
                Layer::Conv(c) => {
                    let (y, cache) = c.forward_train(act.into_spatial());
                    caches.push(LayerCache::Conv(cache));
                    Tensor::Spatial(y)
                }
                Layer::Pool(p) => {
                    let (y, cache) = p.forward_train(act.as_spatial());
                    caches.push(LayerCache::Pool(cache));
                    Tensor::Spatial(y)
                }
                Layer::Flatten { .. } => {
                    let x = act.into_spatial();
                    let (_, channels, height, width) = x.dim();
                    caches.push(LayerCache::Flatten(Shape::Spatial { channels, height, width }));
                    Tensor::Flat(nn::flatten(x))
                }
                Layer::Dense(d) => {
                    let (y, cache) = d.forward_train(act.into_flat(), rng);
                    caches.push(LayerCache::Dense(cache));
                    Tensor::Flat(y)
                }
            };
        }
        let logits = act.into_flat();
        let correct = argmax_rows(&logits).iter().zip(targets).filter(|(p, t)| p == t).count();
        let (loss, grad_logits) = cross_entropy_with_grad(&logits, targets);

        let mut per_layer: Vec<Option<ParamGrad<T>>> = (0..self.layers.len()).map(|_| None).collect();
        let mut grad = Tensor::Flat(grad_logits);
        for (offset, cache) in caches.iter().enumerate().rev() {
            let idx = start + offset;
            let need_input = idx > start;
            grad = match (&self.layers[idx], cache) {
                (Layer::Conv(c), LayerCache::Conv(cache)) => {
                    let (p, dx) = c.backward(cache, grad.as_spatial(), need_input);
                    per_layer[idx] = p;
                    match dx {
                        Some(dx) => Tensor::Spatial(dx),
                        None => break,
                    }
                }
                (Layer::Pool(p), LayerCache::Pool(cache)) => Tensor::Spatial(p.backward(cache, grad.as_spatial())),
                (Layer::Flatten { .. }, LayerCache::Flatten(shape)) => {
                    Tensor::Spatial(nn::unflatten(grad.into_flat(), *shape))
                }
                (Layer::Dense(d), LayerCache::Dense(cache)) => {
                    let (p, dx) = d.backward(cache, grad.as_flat(), need_input);
                    per_layer[idx] = p;
                    match dx {
                        Some(dx) => Tensor::Flat(dx),
                        None => break,
                    }
                }
                _ => unreachable!("cache kinds follow layer kinds"),
            };
        }
        BatchOutcome { loss, correct, grads: Gradients { per_layer } }
    }

    /// Applies one optimizer step to every trainable layer. Frozen layers are
    /// never touched.
    pub fn apply_gradients(&mut self, grads: &Gradients<T>, optimizer: &mut Optimizer<T>) {
        optimizer.begin_step();
        let mut slot = 0;
        for (layer, grad) in self.layers.iter_mut().zip(&grads.per_layer) {
            let (weight, bias, trainable) = match layer {
                Layer::Conv(c) => (&mut c.weight, &mut c.bias, c.trainable),
                Layer::Dense(d) => (&mut d.weight, &mut d.bias, d.trainable),
                _ => continue,
            };
            if let (true, Some(g)) = (trainable, grad) {
                optimizer.update(slot, weight.as_slice_mut().expect("contiguous"), g.weight.as_slice().expect("contiguous"));
                optimizer.update(slot + 1, bias.as_slice_mut().expect("contiguous"), g.bias.as_slice().expect("contiguous"));
            }
            slot += 2;
        }
    }

    pub fn snapshot(&self) -> WeightSnapshot<T> {
        let layers = self
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some((c.name.clone(), c.weight.clone(), c.bias.clone())),
                Layer::Dense(d) => Some((d.name.clone(), d.weight.clone(), d.bias.clone())),
                _ => None,
            })
            .collect();
        WeightSnapshot { layers }
    }

    pub fn restore(&mut self, snapshot: &WeightSnapshot<T>) {
        let targets = self.layers.iter_mut().filter(|l| l.has_params());
        for (layer, (name, w, b)) in targets.zip(&snapshot.layers) {
            match layer {
                Layer::Conv(c) => {
                    assert_eq!(&c.name, name);
                    c.weight.assign(w);
                    c.bias.assign(b);
                }
                Layer::Dense(d) => {
                    assert_eq!(&d.name, name);
                    d.weight.assign(w);
                    d.bias.assign(b);
                }
                _ => unreachable!(),
            }
        }
    }

    /// Writes `weights.safetensors` and `model_spec.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir)?;
        weights::save_network(self, &dir.join(weights::EXPORT_WEIGHTS_FILE))?;
        let spec = serde_json::to_string_pretty(&self.spec)?;
        std::fs::write(dir.join(weights::EXPORT_SPEC_FILE), spec + "\n")?;
        Ok(())
    }

    /// Reconstructs a network from a directory written by [`Network::export`].
    pub fn load_export(dir: &Path) -> Result<Self, ModelError> {
        let spec: ModelSpec = serde_json::from_slice(&std::fs::read(dir.join(weights::EXPORT_SPEC_FILE))?)?;
        let mut net = Self::initialise(&spec, 0)?;
        weights::load_all(&mut net, &dir.join(weights::EXPORT_WEIGHTS_FILE))?;
        Ok(net)
    }
}

fn fill_normal<T: Real, R: Rng + ?Sized>(values: &mut [T], std: f64, rng: &mut R) {
    let dist = Normal::new(0.0, std).expect("finite std");
    for v in values {
        *v = T::lit(dist.sample(rng));
    }
}
