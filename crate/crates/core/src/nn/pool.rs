use ndarray::Array3;

use super::{same_padding, Real};

/// Max pooling with "same" padding; padded cells never win.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool1d {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug)]
pub struct MaxPoolCache {
    argmax: Vec<u32>,
    in_dim: (usize, usize, usize),
}

impl MaxPool1d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        Self { kernel, stride }
    }

    pub fn out_len(&self, in_len: usize) -> usize {
        in_len.div_ceil(self.stride)
    }

    pub fn forward<F: Real>(&self, x: &Array3<F>) -> (Array3<F>, MaxPoolCache) {
        let (c, b, l) = x.dim();
        let out_len = self.out_len(l);
        let (pad_left, _) = same_padding(l, self.kernel, self.stride);
        let x = x.as_standard_layout();
        let xs = x.as_slice().unwrap();
        let mut y = Vec::with_capacity(c * b * out_len);
        let mut argmax = Vec::with_capacity(c * b * out_len);
        for row in 0..c * b {
            let src = &xs[row * l..(row + 1) * l];
            for t in 0..out_len {
                let start = (t * self.stride) as isize - pad_left as isize;
                let lo = start.max(0) as usize;
                let hi = ((start + self.kernel as isize).max(0) as usize).min(l);
                let mut best = lo.min(l - 1);
                for i in lo..hi {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                y.push(src[best]);
                argmax.push(best as u32);
            }
        }
        let y = Array3::from_shape_vec((c, b, out_len), y).unwrap();
        (y, MaxPoolCache { argmax, in_dim: (c, b, l) })
    }

    pub fn backward<F: Real>(&self, cache: MaxPoolCache, dy: &Array3<F>) -> Array3<F> {
        let (c, b, l) = cache.in_dim;
        let out_len = dy.dim().2;
        let dy = dy.as_standard_layout();
        let ds = dy.as_slice().unwrap();
        let mut dx = vec![F::zero(); c * b * l];
        for row in 0..c * b {
            for t in 0..out_len {
                let k = row * out_len + t;
                dx[row * l + cache.argmax[k] as usize] += ds[k];
            }
        }
        Array3::from_shape_vec((c, b, l), dx).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_maximum_and_routes_gradient() {
        let pool = MaxPool1d::new(3, 2);
        let x = Array3::from_shape_vec((1, 1, 5), vec![1.0, 5.0, 2.0, -1.0, 4.0]).unwrap();
        let (y, cache) = pool.forward(&x);
        // windows with one cell of left padding: [pad,1,5] [5,2,-1] [-1,4,pad]
        assert_eq!(y.as_slice().unwrap(), &[5.0, 5.0, 4.0]);
        let dx = pool.backward(cache, &Array3::from_elem((1, 1, 3), 1.0));
        assert_eq!(dx.as_slice().unwrap(), &[0.0, 2.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn output_length_is_ceil_half() {
        let pool = MaxPool1d::new(3, 2);
        for l in [375usize, 750, 188, 7] {
            let (y, _) = pool.forward(&Array3::<f32>::zeros((1, 1, l)));
            assert_eq!(y.dim().2, l.div_ceil(2));
        }
    }
}
