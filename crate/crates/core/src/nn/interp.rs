use ndarray::Array3;

use super::Real;

/// Source indices and weights for align-corners linear resampling.
fn taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|j| {
            if in_len == 1 || out_len == 1 {
                return (0, 0, 0.0);
            }
            let pos = j as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
            let lo = (pos.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Linearly resample the last axis of `[C, B, L_in]` to `out_len`, with the
/// first and last samples pinned to the input endpoints.
pub fn linear_interp_forward<F: Real>(x: &Array3<F>, out_len: usize) -> Array3<F> {
    let (c, b, l) = x.dim();
    let taps = taps(l, out_len);
    let x = x.as_standard_layout();
    let xs = x.as_slice().unwrap();
    let mut y = Vec::with_capacity(c * b * out_len);
    for row in 0..c * b {
        let src = &xs[row * l..(row + 1) * l];
        for &(lo, hi, w) in &taps {
            let w = F::from_f64_lossy(w);
            y.push(src[lo] * (F::one() - w) + src[hi] * w);
        }
    }
    Array3::from_shape_vec((c, b, out_len), y).unwrap()
}

pub fn linear_interp_backward<F: Real>(dy: &Array3<F>, in_len: usize) -> Array3<F> {
    let (c, b, out_len) = dy.dim();
    let taps = taps(in_len, out_len);
    let dy = dy.as_standard_layout();
    let ds = dy.as_slice().unwrap();
    let mut dx = vec![F::zero(); c * b * in_len];
    for row in 0..c * b {
        for (j, &(lo, hi, w)) in taps.iter().enumerate() {
            let w = F::from_f64_lossy(w);
            let g = ds[row * out_len + j];
            dx[row * in_len + lo] += g * (F::one() - w);
            dx[row * in_len + hi] += g * w;
        }
    }
    Array3::from_shape_vec((c, b, in_len), dx).unwrap()
}
