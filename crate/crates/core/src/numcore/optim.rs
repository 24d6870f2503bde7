use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    pub grad_clip: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            alpha: 0.99,
            eps: 1e-5,
            grad_clip: 10.0,
        }
    }
}

/// RMSProp with global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct RmsProp<T> {
    pub config: RmsPropConfig,
    square_avg: Vec<Tensor<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(config: RmsPropConfig, store: &ParameterStore<T>) -> Self {
        let square_avg = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { config, square_avg }
    }

    /// Applies one update from the grads in `store`; returns the pre-clip grad norm.
    pub fn step(&mut self, store: &mut ParameterStore<T>) -> T {
        let norm = store.grad_norm();
        let clip = T::lit(self.config.grad_clip);
        let factor = if norm > clip && norm > T::zero() {
            clip / norm
        } else {
            T::one()
        };
        let (lr, alpha, eps) = (
            T::lit(self.config.lr),
            T::lit(self.config.alpha),
            T::lit(self.config.eps),
        );
        for (p, sq) in store.iter_mut().zip(&mut self.square_avg) {
            let grads = p.grad.data().to_vec();
            for ((v, s), g) in p.value.data_mut().iter_mut().zip(sq.data_mut()).zip(grads) {
                let g = g * factor;
                *s = alpha * *s + (T::one() - alpha) * g * g;
                *v = *v - lr * g / (s.sqrt() + eps);
            }
        }
        norm
    }
}
