use ndarray::{Array, Dimension};
use rand::Rng;

use super::{Mode, Real};

pub struct Relu;

impl Relu {
    pub fn forward<F: Real, D: Dimension>(x: Array<F, D>) -> Array<F, D> {
        x.mapv_into(|v| if v > F::zero() { v } else { F::zero() })
    }

    /// `y` is the forward output; its positive cells pass the gradient.
    pub fn backward<F: Real, D: Dimension>(y: &Array<F, D>, mut dy: Array<F, D>) -> Array<F, D> {
        dy.zip_mut_with(y, |d, &v| {
            if v <= F::zero() {
                *d = F::zero()
            }
        });
        dy
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - p)` at train time.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

#[derive(Debug)]
pub struct DropoutCache<F: Real> {
    mask: Option<Vec<F>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout p must be in [0, 1)");
        Self { p }
    }

    pub fn forward<F: Real, D: Dimension, R: Rng + ?Sized>(
        &self,
        mut x: Array<F, D>,
        mode: Mode,
        rng: &mut R,
    ) -> (Array<F, D>, DropoutCache<F>) {
        if mode == Mode::Eval || self.p == 0.0 {
            return (x, DropoutCache { mask: None });
        }
        let scale = F::from_f64_lossy(1.0 / (1.0 - self.p));
        let mask: Vec<F> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < self.p { F::zero() } else { scale })
            .collect();
        for (v, m) in x.iter_mut().zip(&mask) {
            *v *= *m;
        }
        (x, DropoutCache { mask: Some(mask) })
    }

    pub fn backward<F: Real, D: Dimension>(&self, cache: DropoutCache<F>, mut dy: Array<F, D>) -> Array<F, D> {
        if let Some(mask) = cache.mask {
            for (d, m) in dy.iter_mut().zip(&mask) {
                *d *= *m;
            }
        }
        dy
    }
}
