use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{ParamGrad, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Raw logits; softmax is applied by the network.
    Identity,
}

/// Fully connected layer, optionally followed by ReLU and inverted dropout.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub name: String,
    /// `(out_features, in_features)`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
    pub dropout: f64,
    pub trainable: bool,
}

#[derive(Debug)]
pub struct DenseCache<T> {
    input: Array2<T>,
    activated: Array2<T>,
    // scaled keep-mask (0 or 1/(1-p)); absent when dropout is off
    mask: Option<Array2<T>>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(name: impl Into<String>, inputs: usize, outputs: usize, activation: Activation, dropout: f64) -> Self {
        Self {
            name: name.into(),
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
            activation,
            dropout,
            trainable: true,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn affine(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = Array2::<T>::zeros((x.nrows(), self.outputs()));
        general_mat_mul(T::one(), x, &self.weight.t(), T::zero(), &mut y);
        y += &self.bias;
        if self.activation == Activation::Relu {
            y.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
        }
        y
    }

    /// Evaluation pass: dropout disabled.
    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        self.affine(x)
    }

    pub fn forward_train<R: Rng + ?Sized>(&self, x: Array2<T>, rng: &mut R) -> (Array2<T>, DenseCache<T>) {
        let activated = self.affine(&x);
        if self.dropout > 0.0 {
            let keep = 1.0 - self.dropout;
            let scale = T::lit(1.0 / keep);
            let mask = Array2::from_shape_simple_fn(activated.raw_dim(), || {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            });
            let out = &activated * &mask;
            (out, DenseCache { input: x, activated, mask: Some(mask) })
        } else {
            (activated.clone(), DenseCache { input: x, activated, mask: None })
        }
    }

    pub fn backward(
        &self,
        cache: &DenseCache<T>,
        grad_out: &Array2<T>,
        need_input_grad: bool,
    ) -> (Option<ParamGrad<T>>, Option<Array2<T>>) {
        let mut g = match &cache.mask {
            Some(mask) => grad_out * mask,
            None => grad_out.to_owned(),
        };
        if self.activation == Activation::Relu {
            ndarray::Zip::from(&mut g).and(&cache.activated).for_each(|g, &y| {
                if y <= T::zero() {
                    *g = T::zero();
                }
            });
        }
        let param = self.trainable.then(|| {
            let mut weight = Array2::<T>::zeros(self.weight.raw_dim());
            general_mat_mul(T::one(), &g.t(), &cache.input, T::zero(), &mut weight);
            ParamGrad { weight, bias: g.sum_axis(Axis(0)) }
        });
        let dx = need_input_grad.then(|| {
            let mut dx = Array2::<T>::zeros(cache.input.raw_dim());
            general_mat_mul(T::one(), &g, &self.weight, T::zero(), &mut dx);
            dx
        });
        (param, dx)
    }
}
