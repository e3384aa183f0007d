//! End-to-end DeepSleepNet baselines trained in one step with the IITNet head.
//!
//! * [`E2eDeepSleepNet`]: the dual-branch CNN flattens each epoch into a
//!   single feature vector, so the BiLSTM only sees inter-epoch context
//!   (`L` steps).
//! * [`E2eIntraDeepSleepNet`]: the large-filter branch is linearly
//!   interpolated to the small branch's length, channels are concatenated and
//!   two width-1 convs halve the feature width, giving a sub-epoch feature
//!   sequence (`L * l` steps).
//!
//! Branch layouts come from `configs/deepsleepnet.toml`.

use ndarray::{s, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    join, linear_interp_backward, linear_interp_forward, BatchNorm1d, BatchNormCache, Conv1d, ConvCache, Dropout,
    DropoutCache, MaxPool1d, MaxPoolCache, Mode, Module, Param, Real, Relu,
};

use super::{features_to_series, flatten_epochs, series_to_features, ContextHead, HeadCache, HeadConfig, SleepModel};

const DEEPSLEEPNET_TOML: &str = include_str!("../../configs/deepsleepnet.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum BranchLayer {
    Conv { filters: usize, kernel: usize, stride: usize },
    MaxPool { kernel: usize, stride: usize },
    Dropout { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSleepNetConfig {
    pub version: u32,
    pub reference_rate_hz: f64,
    pub feature_dropout: f64,
    pub intra_widths: [usize; 2],
    pub small: Vec<BranchLayer>,
    pub large: Vec<BranchLayer>,
}

impl Default for DeepSleepNetConfig {
    fn default() -> Self {
        toml::from_str(DEEPSLEEPNET_TOML).expect("bundled DeepSleepNet config parses")
    }
}

impl DeepSleepNetConfig {
    /// Kernel sizes and strides rescaled from the reference rate to `rate_hz`.
    pub fn for_rate(&self, rate_hz: f64) -> Self {
        let scale = rate_hz / self.reference_rate_hz;
        let sc = |v: usize| ((v as f64 * scale).round() as usize).max(1);
        let rescale = |layers: &[BranchLayer]| {
            layers
                .iter()
                .enumerate()
                .map(|(i, l)| match *l {
                    // Only the first conv is tied to the sampling rate.
                    BranchLayer::Conv { filters, kernel, stride } if i == 0 => BranchLayer::Conv {
                        filters,
                        kernel: sc(kernel),
                        stride: sc(stride),
                    },
                    ref other => other.clone(),
                })
                .collect()
        };
        Self {
            reference_rate_hz: rate_hz,
            small: rescale(&self.small),
            large: rescale(&self.large),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
enum BranchOp<F: Real> {
    Conv(Conv1d<F>, BatchNorm1d<F>),
    Pool(MaxPool1d),
    Drop(Dropout),
}

#[derive(Debug)]
enum BranchOpCache<F: Real> {
    Conv(ConvCache<F>, BatchNormCache<F>, Array3<F>),
    Pool(MaxPoolCache),
    Drop(DropoutCache<F>),
}

/// One CNN branch: a chain of conv-BN-ReLU, max-pool and dropout steps.
#[derive(Debug, Clone)]
pub struct ConvBranch<F: Real> {
    ops: Vec<BranchOp<F>>,
    out_channels: usize,
}

impl<F: Real> ConvBranch<F> {
    fn new<R: Rng + ?Sized>(layers: &[BranchLayer], rng: &mut R) -> Self {
        let mut ch = 1;
        let ops = layers
            .iter()
            .map(|l| match *l {
                BranchLayer::Conv { filters, kernel, stride } => {
                    let op = BranchOp::Conv(Conv1d::new(ch, filters, kernel, stride, false, rng), BatchNorm1d::new(filters));
                    ch = filters;
                    op
                }
                BranchLayer::MaxPool { kernel, stride } => BranchOp::Pool(MaxPool1d::new(kernel, stride)),
                BranchLayer::Dropout { p } => BranchOp::Drop(Dropout::new(p)),
            })
            .collect();
        Self { ops, out_channels: ch }
    }

    fn out_len(&self, mut n: usize) -> usize {
        for op in &self.ops {
            n = match op {
                BranchOp::Conv(c, _) => c.out_len(n),
                BranchOp::Pool(p) => p.out_len(n),
                BranchOp::Drop(_) => n,
            };
        }
        n
    }

    fn forward<R: Rng + ?Sized>(&self, x: &Array3<F>, mode: Mode, rng: &mut R) -> (Array3<F>, Vec<BranchOpCache<F>>) {
        let mut a = x.clone();
        let mut caches = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            match op {
                BranchOp::Conv(conv, bn) => {
                    let (y, cc) = conv.forward(&a);
                    let (y, nc) = bn.forward(&y, mode);
                    let y = Relu::forward(y);
                    caches.push(BranchOpCache::Conv(cc, nc, y.clone()));
                    a = y;
                }
                BranchOp::Pool(p) => {
                    let (y, pc) = p.forward(&a);
                    caches.push(BranchOpCache::Pool(pc));
                    a = y;
                }
                BranchOp::Drop(d) => {
                    let (y, dc) = d.forward(a, mode, rng);
                    caches.push(BranchOpCache::Drop(dc));
                    a = y;
                }
            }
        }
        (a, caches)
    }

    fn backward(&mut self, caches: Vec<BranchOpCache<F>>, dy: Array3<F>) {
        let mut g = dy;
        for (op, cache) in self.ops.iter_mut().zip(caches).rev() {
            g = match (op, cache) {
                (BranchOp::Conv(conv, bn), BranchOpCache::Conv(cc, nc, y)) => {
                    let g = Relu::backward(&y, g);
                    let g = bn.backward(nc, &g);
                    conv.backward(cc, &g)
                }
                (BranchOp::Pool(p), BranchOpCache::Pool(pc)) => p.backward(pc, &g),
                (BranchOp::Drop(d), BranchOpCache::Drop(dc)) => d.backward(dc, g),
                _ => unreachable!("cache layout mirrors ops"),
            };
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        for (i, op) in self.ops.iter().enumerate() {
            if let BranchOp::Conv(c, bn) = op {
                c.visit(&join(prefix, &format!("{i}.conv")), f);
                bn.visit(&join(prefix, &format!("{i}.bn")), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        for (i, op) in self.ops.iter_mut().enumerate() {
            if let BranchOp::Conv(c, bn) = op {
                c.visit_mut(&join(prefix, &format!("{i}.conv")), f);
                bn.visit_mut(&join(prefix, &format!("{i}.bn")), f);
            }
        }
    }
}

fn check_seq_len(seq_len: usize) -> Result<()> {
    if !(1..=10).contains(&seq_len) {
        return Err(Error::Config(format!("sequence length {seq_len} outside 1..=10")));
    }
    Ok(())
}

/// Dual-branch CNN, one flattened feature vector per epoch, BiLSTM over epochs.
#[derive(Debug, Clone)]
pub struct E2eDeepSleepNet<F: Real> {
    small: ConvBranch<F>,
    large: ConvBranch<F>,
    dropout: Dropout,
    pub head: ContextHead<F>,
    input_length: usize,
    seq_len: usize,
}

#[derive(Debug)]
pub struct DsnCache<F: Real> {
    small: Vec<BranchOpCache<F>>,
    large: Vec<BranchOpCache<F>>,
    dropout: DropoutCache<F>,
    head: HeadCache<F>,
    small_dim: (usize, usize, usize),
    large_dim: (usize, usize, usize),
}

/// `[C, N, l]` to per-epoch flat vectors `[N, C*l]` (channel-major).
fn flatten_branch<F: Real>(a: &Array3<F>) -> Array2<F> {
    let (c, n, l) = a.dim();
    Array2::from_shape_fn((n, c * l), |(e, k)| a[[k / l, e, k % l]])
}

fn unflatten_branch<F: Real>(g: &Array2<F>, dim: (usize, usize, usize)) -> Array3<F> {
    let (_, _, l) = dim;
    Array3::from_shape_fn(dim, |(c, e, t)| g[[e, c * l + t]])
}

impl<F: Real> E2eDeepSleepNet<F> {
    pub fn new<R: Rng + ?Sized>(
        config: &DeepSleepNetConfig,
        head: &HeadConfig,
        input_length: usize,
        seq_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_seq_len(seq_len)?;
        let small = ConvBranch::new(&config.small, rng);
        let large = ConvBranch::new(&config.large, rng);
        let width = small.out_channels * small.out_len(input_length) + large.out_channels * large.out_len(input_length);
        let head = ContextHead::new(width, head, rng)?;
        Ok(Self {
            small,
            large,
            dropout: Dropout::new(config.feature_dropout),
            head,
            input_length,
            seq_len,
        })
    }

    /// Steps the recurrent head runs over per window.
    pub fn rnn_steps(&self) -> usize {
        self.seq_len
    }

    pub fn epoch_feature_width(&self) -> usize {
        self.head.input_size()
    }
}

impl<F: Real> SleepModel<F> for E2eDeepSleepNet<F> {
    type Cache = DsnCache<F>;

    fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn input_length(&self) -> usize {
        self.input_length
    }

    fn forward<R: Rng + ?Sized>(&self, x: &Array3<F>, mode: Mode, rng: &mut R) -> crate::Result<(Array2<F>, DsnCache<F>)> {
        self.check_input(x)?;
        let b = x.dim().0;
        let flat = flatten_epochs(x);
        let (sa, sc) = self.small.forward(&flat, mode, rng);
        let (la, lc) = self.large.forward(&flat, mode, rng);
        let (small_dim, large_dim) = (sa.dim(), la.dim());
        let fs = flatten_branch(&sa);
        let fl = flatten_branch(&la);
        let n = fs.nrows();
        let mut feat = Array2::zeros((n, fs.ncols() + fl.ncols()));
        feat.slice_mut(s![.., ..fs.ncols()]).assign(&fs);
        feat.slice_mut(s![.., fs.ncols()..]).assign(&fl);
        let (feat, dc) = self.dropout.forward(feat, mode, rng);
        let d = feat.ncols();
        // [B*L, D] -> [L, B, D]
        let series = Array3::from_shape_fn((self.seq_len, b, d), |(i, s, k)| feat[[s * self.seq_len + i, k]]);
        let (logits, hc) = self.head.forward(&series)?;
        Ok((
            logits,
            DsnCache {
                small: sc,
                large: lc,
                dropout: dc,
                head: hc,
                small_dim,
                large_dim,
            },
        ))
    }

    fn backward(&mut self, cache: DsnCache<F>, dlogits: &Array2<F>) {
        let dseries = self.head.backward(cache.head, dlogits);
        let (l, b, d) = dseries.dim();
        let dfeat = Array2::from_shape_fn((b * l, d), |(e, k)| dseries[[e % l, e / l, k]]);
        let dfeat = self.dropout.backward(cache.dropout, dfeat);
        let ws = cache.small_dim.0 * cache.small_dim.2;
        let ds = unflatten_branch(&dfeat.slice(s![.., ..ws]).to_owned(), cache.small_dim);
        let dl = unflatten_branch(&dfeat.slice(s![.., ws..]).to_owned(), cache.large_dim);
        self.small.backward(cache.small, ds);
        self.large.backward(cache.large, dl);
    }
}

impl<F: Real> Module<F> for E2eDeepSleepNet<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.small.visit(&join(prefix, "small"), f);
        self.large.visit(&join(prefix, "large"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.small.visit_mut(&join(prefix, "small"), f);
        self.large.visit_mut(&join(prefix, "large"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Dual-branch CNN turned into a sub-epoch feature sequence.
#[derive(Debug, Clone)]
pub struct E2eIntraDeepSleepNet<F: Real> {
    small: ConvBranch<F>,
    large: ConvBranch<F>,
    mix1: (Conv1d<F>, BatchNorm1d<F>),
    mix2: (Conv1d<F>, BatchNorm1d<F>),
    dropout: Dropout,
    pub head: ContextHead<F>,
    input_length: usize,
    seq_len: usize,
}

#[derive(Debug)]
pub struct IntraCache<F: Real> {
    small: Vec<BranchOpCache<F>>,
    large: Vec<BranchOpCache<F>>,
    large_len: usize,
    small_channels: usize,
    mix1: (ConvCache<F>, BatchNormCache<F>, Array3<F>),
    mix2: (ConvCache<F>, BatchNormCache<F>, Array3<F>),
    dropout: DropoutCache<F>,
    head: HeadCache<F>,
    sub_epochs: usize,
}

impl<F: Real> E2eIntraDeepSleepNet<F> {
    pub fn new<R: Rng + ?Sized>(
        config: &DeepSleepNetConfig,
        head: &HeadConfig,
        input_length: usize,
        seq_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_seq_len(seq_len)?;
        let small = ConvBranch::new(&config.small, rng);
        let large = ConvBranch::new(&config.large, rng);
        let concat = small.out_channels + large.out_channels;
        let [w1, w2] = config.intra_widths;
        let mix1 = (Conv1d::new(concat, w1, 1, 1, false, rng), BatchNorm1d::new(w1));
        let mix2 = (Conv1d::new(w1, w2, 1, 1, false, rng), BatchNorm1d::new(w2));
        let head = ContextHead::new(w2, head, rng)?;
        Ok(Self {
            small,
            large,
            mix1,
            mix2,
            dropout: Dropout::new(config.feature_dropout),
            head,
            input_length,
            seq_len,
        })
    }

    /// Sub-epoch count per epoch (the small branch's output length).
    pub fn sub_epochs(&self) -> usize {
        self.small.out_len(self.input_length)
    }

    pub fn large_branch_len(&self) -> usize {
        self.large.out_len(self.input_length)
    }

    pub fn rnn_steps(&self) -> usize {
        self.seq_len * self.sub_epochs()
    }

    /// Large-branch output after interpolation; exposed for shape checks.
    pub fn interpolated_large(&self, x: &Array3<F>) -> Result<(Array3<F>, Array3<F>)> {
        self.check_input(x)?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let flat = flatten_epochs(x);
        let (sa, _) = self.small.forward(&flat, Mode::Eval, &mut rng);
        let (la, _) = self.large.forward(&flat, Mode::Eval, &mut rng);
        let li = linear_interp_forward(&la, sa.dim().2);
        Ok((sa, li))
    }
}

fn mix_forward<F: Real>(m: &(Conv1d<F>, BatchNorm1d<F>), x: &Array3<F>, mode: Mode) -> (Array3<F>, (ConvCache<F>, BatchNormCache<F>, Array3<F>)) {
    let (y, cc) = m.0.forward(x);
    let (y, nc) = m.1.forward(&y, mode);
    let y = Relu::forward(y);
    (y.clone(), (cc, nc, y))
}

fn mix_backward<F: Real>(
    m: &mut (Conv1d<F>, BatchNorm1d<F>),
    cache: (ConvCache<F>, BatchNormCache<F>, Array3<F>),
    dy: Array3<F>,
) -> Array3<F> {
    let g = Relu::backward(&cache.2, dy);
    let g = m.1.backward(cache.1, &g);
    m.0.backward(cache.0, &g)
}

impl<F: Real> SleepModel<F> for E2eIntraDeepSleepNet<F> {
    type Cache = IntraCache<F>;

    fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn input_length(&self) -> usize {
        self.input_length
    }

    fn forward<R: Rng + ?Sized>(&self, x: &Array3<F>, mode: Mode, rng: &mut R) -> crate::Result<(Array2<F>, IntraCache<F>)> {
        self.check_input(x)?;
        let flat = flatten_epochs(x);
        let (sa, sc) = self.small.forward(&flat, mode, rng);
        let (la, lc) = self.large.forward(&flat, mode, rng);
        let (cs, n, ls) = sa.dim();
        let large_len = la.dim().2;
        let li = linear_interp_forward(&la, ls);
        let mut cat = Array3::zeros((cs + li.dim().0, n, ls));
        cat.slice_mut(s![..cs, .., ..]).assign(&sa);
        cat.slice_mut(s![cs.., .., ..]).assign(&li);
        let (m1, mc1) = mix_forward(&self.mix1, &cat, mode);
        let (m2, mc2) = mix_forward(&self.mix2, &m1, mode);
        let (m2, dc) = self.dropout.forward(m2, mode, rng);
        let series = features_to_series(&m2, self.seq_len);
        let (logits, hc) = self.head.forward(&series)?;
        Ok((
            logits,
            IntraCache {
                small: sc,
                large: lc,
                large_len,
                small_channels: cs,
                mix1: mc1,
                mix2: mc2,
                dropout: dc,
                head: hc,
                sub_epochs: ls,
            },
        ))
    }

    fn backward(&mut self, cache: IntraCache<F>, dlogits: &Array2<F>) {
        let dseries = self.head.backward(cache.head, dlogits);
        let g = series_to_features(&dseries, self.seq_len, cache.sub_epochs);
        let g = self.dropout.backward(cache.dropout, g);
        let g = mix_backward(&mut self.mix2, cache.mix2, g);
        let g = mix_backward(&mut self.mix1, cache.mix1, g);
        let cs = cache.small_channels;
        let ds = g.slice(s![..cs, .., ..]).to_owned();
        let dli = g.slice(s![cs.., .., ..]).to_owned();
        let dl = linear_interp_backward(&dli, cache.large_len);
        self.small.backward(cache.small, ds);
        self.large.backward(cache.large, dl);
    }
}

impl<F: Real> Module<F> for E2eIntraDeepSleepNet<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.small.visit(&join(prefix, "small"), f);
        self.large.visit(&join(prefix, "large"), f);
        self.mix1.0.visit(&join(prefix, "mix1.conv"), f);
        self.mix1.1.visit(&join(prefix, "mix1.bn"), f);
        self.mix2.0.visit(&join(prefix, "mix2.conv"), f);
        self.mix2.1.visit(&join(prefix, "mix2.bn"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.small.visit_mut(&join(prefix, "small"), f);
        self.large.visit_mut(&join(prefix, "large"), f);
        self.mix1.0.visit_mut(&join(prefix, "mix1.conv"), f);
        self.mix1.1.visit_mut(&join(prefix, "mix1.bn"), f);
        self.mix2.0.visit_mut(&join(prefix, "mix2.conv"), f);
        self.mix2.1.visit_mut(&join(prefix, "mix2.bn"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
