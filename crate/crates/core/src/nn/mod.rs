//! Minimal CPU tensor layers used by the lesion classifiers.
//!
//! Activations flow as NCHW `Array4` through the convolutional part and as
//! `(batch, features)` `Array2` through the fully connected head. Every
//! layer has a pure evaluation forward pass (`&self`, no caching) and a
//! training forward pass that returns a cache consumed by `backward`.

mod conv;
mod dense;
mod loss;
mod pool;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{Array2, Array4, NdFloat};
use num_traits::FromPrimitive;
use safetensors::Dtype;

pub use conv::{Conv2d, ConvCache};
pub use dense::{Activation, Dense, DenseCache};
pub use loss::{argmax_rows, cross_entropy_with_grad, log_softmax_rows, softmax_rows};
pub use pool::{MaxPool2d, PoolCache};

/// Floating point element type of a network.
///
/// Production runs use `f32`; the gradient check runs in `f64`.
pub trait Real: NdFloat + FromPrimitive + Default + Sum + Debug + Display {
    const DTYPE: Dtype;

    fn encode_le(values: &[Self]) -> Vec<u8>;
    fn decode_le(bytes: &[u8]) -> Vec<Self>;

    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("literal representable")
    }
}

impl Real for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn encode_le(values: &[Self]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn decode_le(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

impl Real for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn encode_le(values: &[Self]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn decode_le(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect()
    }
}

/// Activation tensor passed between layers.
#[derive(Clone, Debug, PartialEq)]
pub enum Tensor<T> {
    Spatial(Array4<T>),
    Flat(Array2<T>),
}

impl<T: Real> Tensor<T> {
    pub fn batch_len(&self) -> usize {
        match self {
            Tensor::Spatial(a) => a.shape()[0],
            Tensor::Flat(a) => a.shape()[0],
        }
    }

    pub fn into_spatial(self) -> Array4<T> {
        match self {
            Tensor::Spatial(a) => a,
            Tensor::Flat(_) => panic!("expected a spatial activation, got a flat one"),
        }
    }

    pub fn into_flat(self) -> Array2<T> {
        match self {
            Tensor::Flat(a) => a,
            Tensor::Spatial(_) => panic!("expected a flat activation, got a spatial one"),
        }
    }

    pub fn as_spatial(&self) -> &Array4<T> {
        match self {
            Tensor::Spatial(a) => a,
            Tensor::Flat(_) => panic!("expected a spatial activation, got a flat one"),
        }
    }

    pub fn as_flat(&self) -> &Array2<T> {
        match self {
            Tensor::Flat(a) => a,
            Tensor::Spatial(_) => panic!("expected a flat activation, got a spatial one"),
        }
    }
}

/// Per-sample activation shape, excluding the batch dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Spatial { channels: usize, height: usize, width: usize },
    Flat(usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Spatial { channels, height, width } => channels * height * width,
            Shape::Flat(n) => n,
        }
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Spatial { channels, height, width } => write!(f, "{channels}x{height}x{width}"),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// Gradient of a weight-bearing layer: weight matrix and bias vector.
#[derive(Clone, Debug)]
pub struct ParamGrad<T> {
    pub weight: Array2<T>,
    pub bias: ndarray::Array1<T>,
}

/// Flattens NCHW activations to `(batch, c*h*w)` in channel-major order.
pub fn flatten<T: Real>(x: Array4<T>) -> Array2<T> {
    let n = x.shape()[0];
    let per = x.len() / n.max(1);
    let x = x.as_standard_layout().into_owned();
    x.into_shape_with_order((n, per)).expect("contiguous activation")
}

pub fn unflatten<T: Real>(x: Array2<T>, shape: Shape) -> Array4<T> {
    let n = x.shape()[0];
    match shape {
        Shape::Spatial { channels, height, width } => x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, channels, height, width))
            .expect("flat gradient matches spatial shape"),
        Shape::Flat(_) => panic!("unflatten needs a spatial shape"),
    }
}
