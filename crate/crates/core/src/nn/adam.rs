use std::collections::BTreeMap;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{Module, ParamKind, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient; adds `weight_reg * w` to the gradient of every
    /// [`ParamKind::Weight`] tensor, i.e. `weight_reg / 2 * ||w||^2` in the loss.
    pub weight_reg: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_reg: 1e-6,
        }
    }
}

/// First/second moment estimates keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState<F: Real> {
    pub step: u64,
    pub m: BTreeMap<String, ArrayD<F>>,
    pub v: BTreeMap<String, ArrayD<F>>,
}

#[derive(Debug, Clone)]
pub struct Adam<F: Real> {
    pub config: AdamConfig,
    pub state: AdamState<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState {
                step: 0,
                m: BTreeMap::new(),
                v: BTreeMap::new(),
            },
        }
    }

    /// Apply one update from the gradients currently stored in `model`.
    pub fn step<M: Module<F> + ?Sized>(&mut self, model: &mut M) {
        let cfg = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (F::from_f64_lossy(cfg.beta1), F::from_f64_lossy(cfg.beta2));
        let lr_t = F::from_f64_lossy(cfg.lr / bc1);
        let inv_sqrt_bc2 = F::from_f64_lossy(1.0 / bc2.sqrt());
        let eps = F::from_f64_lossy(cfg.eps);
        let wr = F::from_f64_lossy(cfg.weight_reg);
        let state = &mut self.state;
        model.visit_mut("", &mut |name, p| {
            if p.kind == ParamKind::Buffer {
                return;
            }
            let m = state
                .m
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            let v = state
                .v
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            let decay = p.kind == ParamKind::Weight && cfg.weight_reg != 0.0;
            for (((w, g), mi), vi) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = if decay { *g + wr * *w } else { *g };
                *mi = b1 * *mi + (F::one() - b1) * g;
                *vi = b2 * *vi + (F::one() - b2) * g * g;
                *w -= lr_t * *mi / ((*vi).sqrt() * inv_sqrt_bc2 + eps);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    struct Quad(Param<f64>);

    impl Module<f64> for Quad {
        fn visit(&self, _: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
            f("w", &self.0)
        }
        fn visit_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
            f("w", &mut self.0)
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut q = Quad(Param::filled(&[2], 1.0, ParamKind::Bias));
        q.0.grad[[0]] = 3.0;
        q.0.grad[[1]] = -0.5;
        let mut opt = Adam::new(AdamConfig {
            weight_reg: 0.0,
            ..Default::default()
        });
        opt.step(&mut q);
        assert!((q.0.value[[0]] - (1.0 - 0.005)).abs() < 1e-9);
        assert!((q.0.value[[1]] - (1.0 + 0.005)).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut q = Quad(Param::filled(&[1], 4.0, ParamKind::Bias));
        let mut opt = Adam::new(AdamConfig {
            lr: 0.1,
            weight_reg: 0.0,
            ..Default::default()
        });
        for _ in 0..500 {
            q.0.grad[[0]] = 2.0 * (q.0.value[[0]] - 1.5);
            opt.step(&mut q);
        }
        assert!((q.0.value[[0]] - 1.5).abs() < 1e-2);
    }
}
