use ndarray::{Array1, Array3};

use super::{join, Mode, Module, Param, ParamKind, Real};

/// Batch normalization over the channel axis of a `[C, B, L]` tensor.
///
/// Training mode normalizes with batch statistics; the running estimates are
/// folded in when `backward` consumes the cache, so parameters stay untouched
/// during `forward`.
#[derive(Debug, Clone)]
pub struct BatchNorm1d<F: Real> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Param<F>,
    pub running_var: Param<F>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug)]
pub struct BatchNormCache<F: Real> {
    xhat: Array3<F>,
    inv_std: Array1<F>,
    mode: Mode,
    batch_mean: Array1<F>,
    batch_var_unbiased: Array1<F>,
}

impl<F: Real> BatchNorm1d<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], F::one(), ParamKind::Bias),
            beta: Param::zeros(&[channels], ParamKind::Bias),
            running_mean: Param::zeros(&[channels], ParamKind::Buffer),
            running_var: Param::filled(&[channels], F::one(), ParamKind::Buffer),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Array3<F>, mode: Mode) -> (Array3<F>, BatchNormCache<F>) {
        let (c, b, l) = x.dim();
        assert_eq!(c, self.channels(), "batch-norm channels");
        let n = b * l;
        let x = x.as_standard_layout();
        let xs = x.as_slice().unwrap();
        let eps = F::from_f64_lossy(self.eps);
        let mut xhat = vec![F::zero(); xs.len()];
        let mut y = vec![F::zero(); xs.len()];
        let mut inv_std = Array1::zeros(c);
        let mut batch_mean = Array1::zeros(c);
        let mut batch_var = Array1::zeros(c);

        for ci in 0..c {
            let seg = &xs[ci * n..(ci + 1) * n];
            let (mean, var) = match mode {
                Mode::Train => {
                    let nf = F::from_usize(n).unwrap();
                    let mean = seg.iter().copied().sum::<F>() / nf;
                    let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
                    batch_mean[ci] = mean;
                    batch_var[ci] = if n > 1 {
                        var * nf / F::from_usize(n - 1).unwrap()
                    } else {
                        var
                    };
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.value[[ci]], self.running_var.value[[ci]]),
            };
            let is = F::one() / (var + eps).sqrt();
            inv_std[ci] = is;
            let g = self.gamma.value[[ci]];
            let bt = self.beta.value[[ci]];
            let xh = &mut xhat[ci * n..(ci + 1) * n];
            let yo = &mut y[ci * n..(ci + 1) * n];
            for i in 0..n {
                let h = (seg[i] - mean) * is;
                xh[i] = h;
                yo[i] = g * h + bt;
            }
        }
        let y = Array3::from_shape_vec((c, b, l), y).unwrap();
        let cache = BatchNormCache {
            xhat: Array3::from_shape_vec((c, b, l), xhat).unwrap(),
            inv_std,
            mode,
            batch_mean,
            batch_var_unbiased: batch_var,
        };
        (y, cache)
    }

    pub fn backward(&mut self, cache: BatchNormCache<F>, dy: &Array3<F>) -> Array3<F> {
        let (c, b, l) = dy.dim();
        let n = b * l;
        let nf = F::from_usize(n).unwrap();
        let dy = dy.as_standard_layout();
        let ds = dy.as_slice().unwrap();
        let xh = cache.xhat.as_slice().unwrap();
        let mut dx = vec![F::zero(); ds.len()];
        for ci in 0..c {
            let d = &ds[ci * n..(ci + 1) * n];
            let h = &xh[ci * n..(ci + 1) * n];
            let sum_dy: F = d.iter().copied().sum();
            let sum_dy_h: F = d.iter().zip(h).map(|(&a, &b)| a * b).sum();
            self.gamma.grad[[ci]] += sum_dy_h;
            self.beta.grad[[ci]] += sum_dy;
            let g = self.gamma.value[[ci]];
            let is = cache.inv_std[ci];
            let out = &mut dx[ci * n..(ci + 1) * n];
            match cache.mode {
                Mode::Train => {
                    let k = g * is / nf;
                    for i in 0..n {
                        out[i] = k * (nf * d[i] - sum_dy - h[i] * sum_dy_h);
                    }
                }
                Mode::Eval => {
                    let k = g * is;
                    for i in 0..n {
                        out[i] = k * d[i];
                    }
                }
            }
        }
        if cache.mode == Mode::Train {
            self.update_running(&cache);
        }
        Array3::from_shape_vec((c, b, l), dx).unwrap()
    }

    fn update_running(&mut self, cache: &BatchNormCache<F>) {
        let m = F::from_f64_lossy(self.momentum);
        let keep = F::one() - m;
        for ci in 0..self.channels() {
            let rm = &mut self.running_mean.value[[ci]];
            *rm = keep * *rm + m * cache.batch_mean[ci];
            let rv = &mut self.running_var.value[[ci]];
            *rv = keep * *rv + m * cache.batch_var_unbiased[ci];
        }
    }
}

impl<F: Real> Module<F> for BatchNorm1d<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_normalizes_each_channel() {
        let bn = BatchNorm1d::<f64>::new(2);
        let x = Array3::from_shape_fn((2, 3, 4), |(c, b, l)| (c * 10 + b * 4 + l) as f64);
        let (y, _) = bn.forward(&x, Mode::Train);
        for c in 0..2 {
            let seg: Vec<f64> = y.slice(ndarray::s![c, .., ..]).iter().copied().collect();
            let mean = seg.iter().sum::<f64>() / 12.0;
            let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn train_backward_matches_finite_differences() {
        let mut bn = BatchNorm1d::<f64>::new(2);
        bn.gamma.value[[0]] = 1.3;
        bn.beta.value[[1]] = -0.4;
        let x = Array3::from_shape_fn((2, 2, 3), |(c, b, l)| ((c * 6 + b * 3 + l) as f64 * 0.7).sin());
        let g = Array3::from_shape_fn((2, 2, 3), |(c, b, l)| ((c + b * 2 + l * 5) as f64).cos());
        let loss = |bn: &BatchNorm1d<f64>, x: &Array3<f64>| -> f64 {
            let (y, _) = bn.forward(x, Mode::Train);
            y.iter().zip(g.iter()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = bn.forward(&x, Mode::Train);
        let dx = bn.clone().backward(cache, &g);
        let h = 1e-6;
        for idx in [[0, 0, 0], [0, 1, 2], [1, 0, 1], [1, 1, 0]] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let num = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * h);
            assert!((num - dx[idx]).abs() < 1e-6, "{num} vs {}", dx[idx]);
        }
    }

    #[test]
    fn backward_updates_running_stats_in_train_mode_only() {
        let mut bn = BatchNorm1d::<f64>::new(1);
        let x = Array3::from_elem((1, 2, 2), 3.0);
        let (_, cache) = bn.forward(&x, Mode::Eval);
        bn.backward(cache, &Array3::zeros((1, 2, 2)));
        assert_eq!(bn.running_mean.value[[0]], 0.0);
        let (_, cache) = bn.forward(&x, Mode::Train);
        bn.backward(cache, &Array3::zeros((1, 2, 2)));
        assert!((bn.running_mean.value[[0]] - 0.3).abs() < 1e-12);
    }
}
