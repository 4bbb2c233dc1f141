use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore};
use crate::error::{shape_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-5,
            rho: 0.9,
            epsilon: 1e-7,
        }
    }
}

/// RMSProp with momentum and L2 weight decay folded into the gradient:
///
/// ```text
/// acc ← ρ·acc + (1 − ρ)·g²
/// v   ← μ·v + lr·(g + wd·θ) / sqrt(acc + ε)
/// θ   ← θ − v
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<T> {
    pub config: RmsPropConfig,
    pub acc: Vec<Tensor<T>>,
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Real> RmsProp<T> {
    pub fn new(config: RmsPropConfig, params: &ParamStore<T>) -> Self {
        let zeros = || -> Vec<Tensor<T>> {
            params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect()
        };
        RmsProp {
            config,
            acc: zeros(),
            velocity: zeros(),
        }
    }

    /// Applies one update with learning rate `config.lr · lr_scale`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr_scale: f64) -> Result<()> {
        let c = self.config;
        let lr = T::of_f64(c.lr * lr_scale);
        let (rho, mu, wd, eps) = (
            T::of_f64(c.rho),
            T::of_f64(c.momentum),
            T::of_f64(c.weight_decay),
            T::of_f64(c.epsilon),
        );
        let one = T::one();
        for id in params.ids().collect::<Vec<_>>() {
            let theta = params.get_mut(id);
            let i = id.0;
            let zero;
            let g = match grads.param(id) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(theta.shape());
                    &zero
                }
            };
            if g.shape() != theta.shape() || self.acc[i].shape() != theta.shape() {
                return Err(shape_err!("gradient/state shape mismatch for parameter {i}"));
            }
            let (acc, vel) = (self.acc[i].data_mut(), self.velocity[i].data_mut());
            for (((t, &gv), a), v) in theta
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(acc.iter_mut())
                .zip(vel.iter_mut())
            {
                *a = rho * *a + (one - rho) * gv * gv;
                *v = mu * *v + lr * (gv + wd * *t) / (*a + eps).sqrt();
                *t = *t - *v;
            }
        }
        Ok(())
    }
}

/// Staircase decay: `0.96^floor(epoch / 2.4)`.
pub fn lr_schedule(epoch: f64) -> f64 {
    // The small offset keeps products like 3.0 * 2.4 = 7.199… on the right step.
    0.96f64.powf((epoch / 2.4 + 1e-9).floor())
}
