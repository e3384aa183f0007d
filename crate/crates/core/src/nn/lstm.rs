use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, Axis, Ix2};
use rand::Rng;

use super::{join, Module, Param, ParamKind, Real};

/// Single-direction LSTM over a time-major `[T, B, D]` sequence.
///
/// Gate order inside the stacked matrices is input, forget, cell, output.
/// Initial hidden and cell states are zero. A `reverse` layer walks the
/// sequence from the last step to the first but writes its outputs at the
/// original time indices.
#[derive(Debug, Clone)]
pub struct Lstm<F: Real> {
    pub w_ih: Param<F>,
    pub w_hh: Param<F>,
    pub bias: Param<F>,
    pub hidden: usize,
    pub reverse: bool,
}

#[derive(Debug)]
pub struct LstmCache<F: Real> {
    x: Array2<F>,
    /// Activated gates `[T, B, 4H]`, stored by time index.
    gates: Vec<F>,
    c: Vec<F>,
    tanh_c: Vec<F>,
    h: Vec<F>,
    steps: usize,
    batch: usize,
}

fn sigmoid<F: Real>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

impl<F: Real> Lstm<F> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, reverse: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Param::uniform(&[4 * hidden, input], bound, ParamKind::Weight, rng),
            w_hh: Param::uniform(&[4 * hidden, hidden], bound, ParamKind::Weight, rng),
            bias: Param::uniform(&[4 * hidden], bound, ParamKind::Bias, rng),
            hidden,
            reverse,
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.value.shape()[1]
    }

    fn time_index(&self, step: usize, steps: usize) -> usize {
        if self.reverse {
            steps - 1 - step
        } else {
            step
        }
    }

    /// Returns all hidden outputs `[T, B, H]`.
    pub fn forward(&self, x: &Array3<F>) -> (Array3<F>, LstmCache<F>) {
        let (t_len, b, d) = x.dim();
        assert_eq!(d, self.input_size(), "lstm input width");
        let h = self.hidden;
        let g4 = 4 * h;
        let x2 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t_len * b, d))
            .unwrap();
        let w_ih = self.w_ih.value.view().into_dimensionality::<Ix2>().unwrap();
        let w_hh = self.w_hh.value.view().into_dimensionality::<Ix2>().unwrap();

        let mut pre = Array2::<F>::zeros((t_len * b, g4));
        general_mat_mul(F::one(), &x2, &w_ih.t(), F::zero(), &mut pre);
        for mut row in pre.outer_iter_mut() {
            for (v, bv) in row.iter_mut().zip(self.bias.value.iter()) {
                *v += *bv;
            }
        }

        let mut gates = vec![F::zero(); t_len * b * g4];
        let mut cs = vec![F::zero(); t_len * b * h];
        let mut tcs = vec![F::zero(); t_len * b * h];
        let mut hs = vec![F::zero(); t_len * b * h];
        let mut h_prev = Array2::<F>::zeros((b, h));
        let mut c_prev = vec![F::zero(); b * h];

        for step in 0..t_len {
            let t = self.time_index(step, t_len);
            let mut a = pre.slice(s![t * b..(t + 1) * b, ..]).to_owned();
            if step > 0 {
                general_mat_mul(F::one(), &h_prev, &w_hh.t(), F::one(), &mut a);
            }
            let a = a.as_slice().unwrap();
            let gt = &mut gates[t * b * g4..(t + 1) * b * g4];
            let ct = &mut cs[t * b * h..(t + 1) * b * h];
            let tct = &mut tcs[t * b * h..(t + 1) * b * h];
            let ht = &mut hs[t * b * h..(t + 1) * b * h];
            for bi in 0..b {
                let ar = &a[bi * g4..(bi + 1) * g4];
                let gr = &mut gt[bi * g4..(bi + 1) * g4];
                for k in 0..h {
                    let i = sigmoid(ar[k]);
                    let f = sigmoid(ar[h + k]);
                    let g = ar[2 * h + k].tanh();
                    let o = sigmoid(ar[3 * h + k]);
                    gr[k] = i;
                    gr[h + k] = f;
                    gr[2 * h + k] = g;
                    gr[3 * h + k] = o;
                    let c = f * c_prev[bi * h + k] + i * g;
                    let tc = c.tanh();
                    ct[bi * h + k] = c;
                    tct[bi * h + k] = tc;
                    ht[bi * h + k] = o * tc;
                }
            }
            c_prev.copy_from_slice(ct);
            h_prev
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&hs[t * b * h..(t + 1) * b * h]);
        }

        let out = Array3::from_shape_vec((t_len, b, h), hs.clone()).unwrap();
        let cache = LstmCache {
            x: x2,
            gates,
            c: cs,
            tanh_c: tcs,
            h: hs,
            steps: t_len,
            batch: b,
        };
        (out, cache)
    }

    /// `dy` is the gradient w.r.t. every hidden output `[T, B, H]`.
    pub fn backward(&mut self, cache: LstmCache<F>, dy: &Array3<F>) -> Array3<F> {
        let (t_len, b, h) = (cache.steps, cache.batch, self.hidden);
        let g4 = 4 * h;
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().unwrap();
        let w_hh = self.w_hh.value.view().into_dimensionality::<Ix2>().unwrap().to_owned();

        let mut d_pre = vec![F::zero(); t_len * b * g4];
        let mut h_prev_all = vec![F::zero(); t_len * b * h];
        let mut dh_next = Array2::<F>::zeros((b, h));
        let mut dc_next = vec![F::zero(); b * h];
        let zeros = vec![F::zero(); b * h];

        for step in (0..t_len).rev() {
            let t = self.time_index(step, t_len);
            let (c_prev, h_prev) = if step == 0 {
                (&zeros[..], &zeros[..])
            } else {
                let tp = self.time_index(step - 1, t_len);
                (
                    &cache.c[tp * b * h..(tp + 1) * b * h],
                    &cache.h[tp * b * h..(tp + 1) * b * h],
                )
            };
            h_prev_all[t * b * h..(t + 1) * b * h].copy_from_slice(h_prev);
            let gt = &cache.gates[t * b * g4..(t + 1) * b * g4];
            let tct = &cache.tanh_c[t * b * h..(t + 1) * b * h];
            let dyt = &dys[t * b * h..(t + 1) * b * h];
            let dpt = &mut d_pre[t * b * g4..(t + 1) * b * g4];
            let dhn = dh_next.as_slice().unwrap();
            for bi in 0..b {
                let gr = &gt[bi * g4..(bi + 1) * g4];
                let dr = &mut dpt[bi * g4..(bi + 1) * g4];
                for k in 0..h {
                    let idx = bi * h + k;
                    let (i, f, g, o) = (gr[k], gr[h + k], gr[2 * h + k], gr[3 * h + k]);
                    let tc = tct[idx];
                    let dh = dyt[idx] + dhn[idx];
                    let d_o = dh * tc;
                    let dc = dh * o * (F::one() - tc * tc) + dc_next[idx];
                    let di = dc * g;
                    let dg = dc * i;
                    let df = dc * c_prev[idx];
                    dc_next[idx] = dc * f;
                    dr[k] = di * i * (F::one() - i);
                    dr[h + k] = df * f * (F::one() - f);
                    dr[2 * h + k] = dg * (F::one() - g * g);
                    dr[3 * h + k] = d_o * o * (F::one() - o);
                }
            }
            let da = ArrayView2::from_shape((b, g4), &dpt[..]).unwrap();
            general_mat_mul(F::one(), &da, &w_hh, F::zero(), &mut dh_next);
        }

        let d_pre = Array2::from_shape_vec((t_len * b, g4), d_pre).unwrap();
        let h_prev_all = Array2::from_shape_vec((t_len * b, h), h_prev_all).unwrap();
        {
            let mut g = self.w_hh.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            general_mat_mul(F::one(), &d_pre.t(), &h_prev_all, F::one(), &mut g);
        }
        {
            let mut g = self.w_ih.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            general_mat_mul(F::one(), &d_pre.t(), &cache.x, F::one(), &mut g);
        }
        for (g, d) in self.bias.grad.iter_mut().zip(d_pre.sum_axis(Axis(0)).iter()) {
            *g += *d;
        }
        let w_ih = self.w_ih.value.view().into_dimensionality::<Ix2>().unwrap();
        let dx = d_pre.dot(&w_ih);
        let d = dx.ncols();
        dx.into_shape_with_order((t_len, b, d)).unwrap()
    }
}

impl<F: Real> Module<F> for Lstm<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Forward and backward LSTMs whose outputs are concatenated per time step.
#[derive(Debug, Clone)]
pub struct BiLstm<F: Real> {
    pub fwd: Lstm<F>,
    pub bwd: Lstm<F>,
}

#[derive(Debug)]
pub struct BiLstmCache<F: Real> {
    fwd: LstmCache<F>,
    bwd: LstmCache<F>,
}

impl<F: Real> BiLstm<F> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fwd: Lstm::new(input, hidden, false, rng),
            bwd: Lstm::new(input, hidden, true, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    /// Output `[T, B, 2H]`: forward states in `..H`, backward states in `H..`.
    pub fn forward(&self, x: &Array3<F>) -> (Array3<F>, BiLstmCache<F>) {
        let (hf, cf) = self.fwd.forward(x);
        let (hb, cb) = self.bwd.forward(x);
        let (t, b, h) = hf.dim();
        let mut out = Array3::zeros((t, b, 2 * h));
        out.slice_mut(s![.., .., ..h]).assign(&hf);
        out.slice_mut(s![.., .., h..]).assign(&hb);
        (out, BiLstmCache { fwd: cf, bwd: cb })
    }

    pub fn backward(&mut self, cache: BiLstmCache<F>, dy: &Array3<F>) -> Array3<F> {
        let h = self.hidden();
        let dyf = dy.slice(s![.., .., ..h]).to_owned();
        let dyb = dy.slice(s![.., .., h..]).to_owned();
        let mut dx = self.fwd.backward(cache.fwd, &dyf);
        dx += &self.bwd.backward(cache.bwd, &dyb);
        dx
    }
}

impl<F: Real> Module<F> for BiLstm<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.fwd.visit(&join(prefix, "fwd"), f);
        self.bwd.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.fwd.visit_mut(&join(prefix, "fwd"), f);
        self.bwd.visit_mut(&join(prefix, "bwd"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn weighted_sum(y: &Array3<f64>, g: &Array3<f64>) -> f64 {
        y.iter().zip(g.iter()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for reverse in [false, true] {
            let mut lstm = Lstm::<f64>::new(3, 4, reverse, &mut rng);
            let x = Array3::from_shape_fn((5, 2, 3), |(t, b, d)| ((t * 3 + b * 7 + d) as f64 * 0.37).sin());
            let g = Array3::from_shape_fn((5, 2, 4), |(t, b, k)| ((t + b * 2 + k * 3) as f64 * 0.21).cos());
            let (_, cache) = lstm.forward(&x);
            let dx = lstm.backward(cache, &g);
            let eps = 1e-6;
            for idx in [[0, 0, 0], [2, 1, 2], [4, 0, 1]] {
                let mut xp = x.clone();
                xp[idx] += eps;
                let mut xm = x.clone();
                xm[idx] -= eps;
                let num = (weighted_sum(&lstm.forward(&xp).0, &g) - weighted_sum(&lstm.forward(&xm).0, &g)) / (2.0 * eps);
                assert!((num - dx[idx]).abs() < 1e-7, "x{idx:?}: {num} vs {}", dx[idx]);
            }
            for (row, col) in [(0usize, 0usize), (5, 3), (13, 1)] {
                let analytic = lstm.w_hh.grad[[row, col]];
                let mut p = lstm.clone();
                p.w_hh.value[[row, col]] += eps;
                let mut m = lstm.clone();
                m.w_hh.value[[row, col]] -= eps;
                let num = (weighted_sum(&p.forward(&x).0, &g) - weighted_sum(&m.forward(&x).0, &g)) / (2.0 * eps);
                assert!((num - analytic).abs() < 1e-7, "w_hh: {num} vs {analytic}");
            }
        }
    }

    #[test]
    fn reverse_direction_sees_time_reversed_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fwd = Lstm::<f64>::new(2, 3, false, &mut rng);
        let mut rev = fwd.clone();
        rev.reverse = true;
        let x = Array3::from_shape_fn((4, 1, 2), |(t, _, d)| (t * 2 + d) as f64 * 0.1);
        let mut xr = x.clone();
        xr.invert_axis(Axis(0));
        let (a, _) = rev.forward(&x);
        let (mut b, _) = fwd.forward(&xr);
        b.invert_axis(Axis(0));
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
