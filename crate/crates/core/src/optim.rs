//! Stateful parameter updaters: SGD with momentum and Adam.

use serde::{Deserialize, Serialize};

use crate::nn::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn label(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimizerError {
    #[error("learning rate must be positive and finite, got {0}")]
    LearningRate(f64),
    #[error("momentum must be in [0, 1), got {0}")]
    Momentum(f64),
}

/// Parameter updater. Each parameter tensor is addressed by a stable slot
/// index; per-slot state is allocated on first use.
#[derive(Clone, Debug)]
pub enum Optimizer<T> {
    Sgd {
        learning_rate: T,
        momentum: T,
        velocity: Vec<Vec<T>>,
    },
    Adam {
        learning_rate: T,
        beta1: T,
        beta2: T,
        epsilon: T,
        step: i32,
        first_moment: Vec<Vec<T>>,
        second_moment: Vec<Vec<T>>,
    },
}

/// Creates an optimizer. `momentum` is ignored by Adam.
pub fn make_optimizer<T: Real>(kind: OptimizerKind, learning_rate: f64, momentum: f64) -> Result<Optimizer<T>, OptimizerError> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(OptimizerError::LearningRate(learning_rate));
    }
    Ok(match kind {
        OptimizerKind::Sgd => {
            if !(0.0..1.0).contains(&momentum) {
                return Err(OptimizerError::Momentum(momentum));
            }
            Optimizer::Sgd { learning_rate: T::lit(learning_rate), momentum: T::lit(momentum), velocity: Vec::new() }
        }
        OptimizerKind::Adam => Optimizer::Adam {
            learning_rate: T::lit(learning_rate),
            beta1: T::lit(ADAM_BETA1),
            beta2: T::lit(ADAM_BETA2),
            epsilon: T::lit(ADAM_EPSILON),
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        },
    })
}

fn slot_state<T: Real>(states: &mut Vec<Vec<T>>, slot: usize, len: usize) -> &mut Vec<T> {
    if states.len() <= slot {
        states.resize_with(slot + 1, Vec::new);
    }
    let state = &mut states[slot];
    if state.len() != len {
        *state = vec![T::zero(); len];
    }
    state
}

impl<T: Real> Optimizer<T> {
    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Sgd { .. } => OptimizerKind::Sgd,
            Optimizer::Adam { .. } => OptimizerKind::Adam,
        }
    }

    /// Marks the start of one optimisation step (advances Adam's counter).
    pub fn begin_step(&mut self) {
        if let Optimizer::Adam { step, .. } = self {
            *step += 1;
        }
    }

    pub fn update(&mut self, slot: usize, param: &mut [T], grad: &[T]) {
        assert_eq!(param.len(), grad.len(), "parameter/gradient length mismatch");
        match self {
            Optimizer::Sgd { learning_rate, momentum, velocity } => {
                let lr = *learning_rate;
                let mu = *momentum;
                let v = slot_state(velocity, slot, param.len());
                for ((p, &g), v) in param.iter_mut().zip(grad).zip(v.iter_mut()) {
                    *v = mu * *v + g;
                    *p = *p - lr * *v;
                }
            }
            Optimizer::Adam { learning_rate, beta1, beta2, epsilon, step, first_moment, second_moment } => {
                assert!(*step > 0, "begin_step must precede Adam updates");
                let (b1, b2, eps, lr) = (*beta1, *beta2, *epsilon, *learning_rate);
                let correction1 = T::one() - b1.powi(*step);
                let correction2 = T::one() - b2.powi(*step);
                let m = slot_state(first_moment, slot, param.len());
                let v = slot_state(second_moment, slot, param.len());
                for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let m_hat = *m / correction1;
                    let v_hat = *v / correction2;
                    *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_step() {
        let mut opt = make_optimizer::<f64>(OptimizerKind::Sgd, 0.1, 0.0).unwrap();
        let mut w = [1.0];
        opt.begin_step();
        opt.update(0, &mut w, &[0.5]);
        assert!((w[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut opt = make_optimizer::<f64>(OptimizerKind::Sgd, 0.1, 0.9).unwrap();
        let mut w = [0.0];
        for _ in 0..2 {
            opt.begin_step();
            opt.update(0, &mut w, &[1.0]);
        }
        // v1 = 1, v2 = 1.9
        assert!((w[0] + 0.29).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        for &g in &[0.5, -3.0, 1e-3, 42.0] {
            let lr = 1e-3;
            let mut opt = make_optimizer::<f64>(OptimizerKind::Adam, lr, 0.0).unwrap();
            let mut w = [2.0];
            opt.begin_step();
            opt.update(0, &mut w, &[g]);
            // m_hat = g, v_hat = g^2
            let oracle = 2.0 - lr * g / (g.abs() + ADAM_EPSILON);
            assert!((w[0] - oracle).abs() < 1e-12, "g={g}");
            assert!(((2.0 - w[0]).abs() - lr).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert_eq!(make_optimizer::<f32>(OptimizerKind::Adam, 0.0, 0.0).unwrap_err(), OptimizerError::LearningRate(0.0));
        assert!(make_optimizer::<f32>(OptimizerKind::Sgd, -1.0, 0.0).is_err());
        assert!(make_optimizer::<f32>(OptimizerKind::Sgd, 0.1, 1.0).is_err());
    }
}
