use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis, Ix2};
use rand::Rng;

use super::{join, Module, Param, ParamKind, Real};

/// Fully connected layer, `y = x W^T + b` on row-major `[batch, features]`.
#[derive(Debug, Clone)]
pub struct Linear<F: Real> {
    pub weight: Param<F>,
    pub bias: Param<F>,
}

#[derive(Debug)]
pub struct LinearCache<F: Real> {
    x: Array2<F>,
}

impl<F: Real> Linear<F> {
    /// Uniform `±1/sqrt(in)` initialization for both weight and bias.
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            weight: Param::uniform(&[out_features, in_features], bound, ParamKind::Weight, rng),
            bias: Param::uniform(&[out_features], bound, ParamKind::Bias, rng),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: Array2<F>) -> (Array2<F>, LinearCache<F>) {
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut y = Array2::zeros((x.nrows(), self.out_features()));
        general_mat_mul(F::one(), &x, &w.t(), F::zero(), &mut y);
        for mut row in y.outer_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.bias.value.iter()) {
                *v += *b;
            }
        }
        (y, LinearCache { x })
    }

    pub fn backward(&mut self, cache: LinearCache<F>, dy: &Array2<F>) -> Array2<F> {
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            general_mat_mul(F::one(), &dy.t(), &cache.x, F::one(), &mut gw);
        }
        for (g, d) in self.bias.grad.iter_mut().zip(dy.sum_axis(Axis(0)).iter()) {
            *g += *d;
        }
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        dy.dot(&w)
    }
}

impl<F: Real> Module<F> for Linear<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
