//! Minimal layer library with hand-written backward passes.
//!
//! Layers are generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks. Every layer
//! follows the same contract: `forward(&self, ..) -> (output, cache)` never
//! mutates parameters, and `backward(&mut self, cache, grad_out)` accumulates
//! into each [`Param::grad`] and returns the gradient w.r.t. the input.
//!
//! Convolutional activations use a `[channels, batch, length]` layout so a
//! whole batch maps onto one GEMM and per-channel reductions are contiguous.

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod interp;
mod linear;
mod loss;
mod lstm;
mod pool;

pub use activation::{Dropout, DropoutCache, Relu};
pub use adam::{Adam, AdamConfig, AdamState};
pub use batchnorm::{BatchNorm1d, BatchNormCache};
pub use conv::{Conv1d, ConvCache};
pub use interp::{linear_interp_backward, linear_interp_forward};
pub use linear::{Linear, LinearCache};
pub use loss::{softmax_rows, softmax_cross_entropy};
pub use lstm::{BiLstm, BiLstmCache, Lstm, LstmCache};
pub use pool::{MaxPool1d, MaxPoolCache};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{ArrayD, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Floating point element type usable by every layer.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Forward-pass behaviour of batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trained and L2-regularized (conv, linear, recurrent matrices).
    Weight,
    /// Trained, not regularized (biases, batch-norm affine).
    Bias,
    /// Not trained; saved with the model (batch-norm running statistics).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param<F: Real> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
    pub kind: ParamKind,
}

impl<F: Real> Param<F> {
    pub fn new(value: ArrayD<F>, kind: ParamKind) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad, kind }
    }

    pub fn zeros(shape: &[usize], kind: ParamKind) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)), kind)
    }

    pub fn filled(shape: &[usize], v: F, kind: ParamKind) -> Self {
        Self::new(ArrayD::from_elem(IxDyn(shape), v), kind)
    }

    /// He (fan-in) normal initialization.
    pub fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        Self::normal(shape, std, rng)
    }

    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("valid std");
        let n: usize = shape.iter().product();
        let data: Vec<F> = (0..n)
            .map(|_| F::from_f64_lossy(dist.sample(rng)))
            .collect();
        Self::new(
            ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches"),
            ParamKind::Weight,
        )
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, kind: ParamKind, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data: Vec<F> = (0..n)
            .map(|_| F::from_f64_lossy(rng.gen_range(-bound..=bound)))
            .collect();
        Self::new(
            ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches"),
            kind,
        )
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns named parameters.
pub trait Module<F: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.kind != ParamKind::Buffer {
                n += p.len()
            }
        });
        n
    }

    /// Sum of squares over [`ParamKind::Weight`] tensors.
    fn weight_sq_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit("", &mut |_, p| {
            if p.kind == ParamKind::Weight {
                s += p.value.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
            }
        });
        s
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `(left, right)` zero padding giving `ceil(len / stride)` outputs.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let needed = ((out - 1) * stride + kernel).saturating_sub(len);
    (needed / 2, needed - needed / 2)
}

/// Flush subnormal floats to zero on the calling thread.
///
/// Gradients decaying through long recurrences otherwise fall into the
/// subnormal range, where x86 arithmetic is orders of magnitude slower.
pub fn flush_subnormals() {
    #[cfg(any(target_arch = "x86", target_arch = "x86_64"))]
    #[allow(deprecated)]
    unsafe {
        #[cfg(target_arch = "x86")]
        use std::arch::x86::{_mm_getcsr, _mm_setcsr};
        #[cfg(target_arch = "x86_64")]
        use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
        // FTZ (bit 15) and DAZ (bit 6).
        _mm_setcsr(_mm_getcsr() | 0x8040);
    }
}
