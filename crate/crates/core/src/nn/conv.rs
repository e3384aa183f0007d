use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, Axis, Ix2};
use rand::Rng;

use super::{join, same_padding, Module, Param, ParamKind, Real};

/// 1-D convolution with TF-style "same" padding (`ceil(len / stride)` outputs).
///
/// Weights are stored as `[out_channels, in_channels * kernel]`, which is the
/// left operand of the im2col GEMM.
#[derive(Debug, Clone)]
pub struct Conv1d<F: Real> {
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug)]
pub struct ConvCache<F: Real> {
    col: Array2<F>,
    in_channels: usize,
    batch: usize,
    in_len: usize,
    out_len: usize,
    pad_left: usize,
}

impl<F: Real> Conv1d<F> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        let fan_in = in_channels * kernel;
        let weight = Param::he_normal(&[out_channels, fan_in], fan_in, rng);
        let bias = bias.then(|| Param::zeros(&[out_channels], ParamKind::Bias));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn out_len(&self, in_len: usize) -> usize {
        in_len.div_ceil(self.stride)
    }

    pub fn forward(&self, x: &Array3<F>) -> (Array3<F>, ConvCache<F>) {
        let (c, b, l) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let out_len = self.out_len(l);
        let (pad_left, _) = same_padding(l, self.kernel, self.stride);
        let col = im2col(x, self.kernel, self.stride, pad_left, out_len);

        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut y = Array2::<F>::zeros((self.out_channels, b * out_len));
        general_mat_mul(F::one(), &w, &col, F::zero(), &mut y);
        if let Some(bias) = &self.bias {
            for (mut row, &bv) in y.outer_iter_mut().zip(bias.value.iter()) {
                row.mapv_inplace(|v| v + bv);
            }
        }
        let y = y.into_shape_with_order((self.out_channels, b, out_len)).unwrap();
        let cache = ConvCache {
            col,
            in_channels: c,
            batch: b,
            in_len: l,
            out_len,
            pad_left,
        };
        (y, cache)
    }

    pub fn backward(&mut self, cache: ConvCache<F>, dy: &Array3<F>) -> Array3<F> {
        let dy = dy.as_standard_layout();
        let n = cache.batch * cache.out_len;
        let dy2 = dy.view().into_shape_with_order((self.out_channels, n)).unwrap();

        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            general_mat_mul(F::one(), &dy2, &cache.col.t(), F::one(), &mut gw);
        }
        if let Some(bias) = &mut self.bias {
            let db = dy2.sum_axis(Axis(1));
            for (g, d) in bias.grad.iter_mut().zip(db.iter()) {
                *g += *d;
            }
        }
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut dcol = Array2::<F>::zeros((cache.in_channels * self.kernel, n));
        general_mat_mul(F::one(), &w.t(), &dy2, F::zero(), &mut dcol);
        col2im(&dcol, &cache, self.kernel, self.stride)
    }
}

impl<F: Real> Module<F> for Conv1d<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Output positions `t` whose input index `t*stride + k - pad_left` lies in `0..in_len`.
fn valid_range(k: usize, stride: usize, pad_left: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad_left > k {
        (pad_left - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad_left > k {
        (in_len + pad_left - k).div_ceil(stride).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn im2col<F: Real>(x: &Array3<F>, kernel: usize, stride: usize, pad_left: usize, out_len: usize) -> Array2<F> {
    let (c, b, l) = x.dim();
    let x = x.as_standard_layout();
    if kernel == 1 && stride == 1 {
        return x.into_owned().into_shape_with_order((c, b * l)).unwrap();
    }
    let xs = x.as_slice().unwrap();
    let mut col = vec![F::zero(); c * kernel * b * out_len];
    for ci in 0..c {
        for k in 0..kernel {
            let (lo, hi) = valid_range(k, stride, pad_left, l, out_len);
            let row = (ci * kernel + k) * b * out_len;
            for bi in 0..b {
                let src = &xs[(ci * b + bi) * l..(ci * b + bi + 1) * l];
                let dst = &mut col[row + bi * out_len..row + (bi + 1) * out_len];
                if stride == 1 {
                    let start = lo + k - pad_left;
                    dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                } else {
                    for t in lo..hi {
                        dst[t] = src[t * stride + k - pad_left];
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c * kernel, b * out_len), col).unwrap()
}

fn col2im<F: Real>(dcol: &Array2<F>, cache: &ConvCache<F>, kernel: usize, stride: usize) -> Array3<F> {
    let (c, b, l, out_len, pad_left) = (
        cache.in_channels,
        cache.batch,
        cache.in_len,
        cache.out_len,
        cache.pad_left,
    );
    if kernel == 1 && stride == 1 {
        return dcol.clone().into_shape_with_order((c, b, l)).unwrap();
    }
    let ds = dcol.as_slice().unwrap();
    let mut dx = vec![F::zero(); c * b * l];
    for ci in 0..c {
        for k in 0..kernel {
            let (lo, hi) = valid_range(k, stride, pad_left, l, out_len);
            let row = (ci * kernel + k) * b * out_len;
            for bi in 0..b {
                let src = &ds[row + bi * out_len..row + (bi + 1) * out_len];
                let dst = &mut dx[(ci * b + bi) * l..(ci * b + bi + 1) * l];
                for t in lo..hi {
                    dst[t * stride + k - pad_left] += src[t];
                }
            }
        }
    }
    Array3::from_shape_vec((c, b, l), dx).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct convolution straight from the definition.
    fn naive(conv: &Conv1d<f64>, x: &Array3<f64>) -> Array3<f64> {
        let (c, b, l) = x.dim();
        let lout = conv.out_len(l);
        let (pl, _) = same_padding(l, conv.kernel, conv.stride);
        let w = conv.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut y = Array3::zeros((conv.out_channels, b, lout));
        for o in 0..conv.out_channels {
            for bi in 0..b {
                for t in 0..lout {
                    let mut s = conv.bias.as_ref().map_or(0.0, |p| p.value[[o]]);
                    for ci in 0..c {
                        for k in 0..conv.kernel {
                            let pos = (t * conv.stride + k) as isize - pl as isize;
                            if pos >= 0 && (pos as usize) < l {
                                s += w[[o, ci * conv.kernel + k]] * x[[ci, bi, pos as usize]];
                            }
                        }
                    }
                    y[[o, bi, t]] = s;
                }
            }
        }
        y
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, l) in &[(7, 2, 31), (3, 1, 10), (1, 2, 9), (1, 1, 5), (50, 6, 120), (8, 1, 13)] {
            let conv = Conv1d::<f64>::new(3, 4, k, s, true, &mut rng);
            let x = Array3::from_shape_fn((3, 2, l), |(a, b, c)| ((a * 7 + b * 3 + c) as f64).sin());
            let (y, _) = conv.forward(&x);
            let expect = naive(&conv, &x);
            assert_eq!(y.dim(), expect.dim());
            for (a, e) in y.iter().zip(expect.iter()) {
                assert!((a - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> == <x, conv^T(g)> for the bias-free map.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(k, s, l) in &[(7, 2, 30), (3, 2, 11), (3, 1, 8)] {
            let mut conv = Conv1d::<f64>::new(2, 3, k, s, false, &mut rng);
            let x = Array3::from_shape_fn((2, 2, l), |(a, b, c)| ((a + 2 * b + 3 * c) as f64).cos());
            let (y, cache) = conv.forward(&x);
            let g = Array3::from_shape_fn(y.dim(), |(a, b, c)| ((a * 5 + b + c) as f64 * 0.3).sin());
            let dx = conv.backward(cache, &g);
            let lhs: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(dx.iter()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }
}
