//! Modified 1-D ResNet-50 that turns one 30-s epoch into a sequence of
//! sub-epoch feature vectors.
//!
//! Layout (defaults, 3000-sample input):
//!
//! | stage  | blocks                          | output  |
//! |--------|---------------------------------|---------|
//! | stem   | conv 7, 64, stride 2            | 1500    |
//! | conv2  | max-pool 3/2, [1,16 / 3,16 / 1,64] x3 | 750 |
//! | conv3  | [1,16 / 3,16 / 1,64] x4, stride 2 | 375   |
//! | conv4  | max-pool 3/2, [1,32 / 3,32 / 1,128] x6, stride 2 | 94 |
//! | conv5  | [1,32 / 3,32 / 1,128] x3, stride 2 | 47   |
//! | out    | dropout 0.5                     | 47 x 128 |
//!
//! Every conv and pool uses "same" padding, so each stride-2 step maps a
//! length `n` to `ceil(n / 2)`. Bottlenecks are post-activation
//! (conv-BN-ReLU, conv-BN-ReLU, conv-BN, add, ReLU); the stride sits on the
//! width-3 conv and a 1x1 conv + BN projection replaces the identity
//! shortcut wherever the stride or channel count changes.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    join, same_padding, BatchNorm1d, BatchNormCache, Conv1d, ConvCache, Dropout, DropoutCache, MaxPool1d,
    MaxPoolCache, Mode, Module, Param, Real, Relu,
};

use super::FeatureSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_length: usize,
    pub stem_kernel: usize,
    pub stem_filters: usize,
    pub stem_stride: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub stage_blocks: Vec<usize>,
    /// `(reduce, middle, expand)` filter counts per stage.
    pub stage_filters: Vec<[usize; 3]>,
    /// Stride of the first block in each stage.
    pub stage_strides: Vec<usize>,
    /// Stage index preceded by an additional max-pool.
    pub extra_pool_before_stage: Option<usize>,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_length: 3000,
            stem_kernel: 7,
            stem_filters: 64,
            stem_stride: 2,
            pool_kernel: 3,
            pool_stride: 2,
            stage_blocks: vec![3, 4, 6, 3],
            stage_filters: vec![[16, 16, 64], [16, 16, 64], [32, 32, 128], [32, 32, 128]],
            stage_strides: vec![1, 2, 2, 2],
            extra_pool_before_stage: Some(2),
            dropout: 0.5,
        }
    }
}

/// One step of the length schedule; used for shape and receptive-field bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthStep {
    pub kernel: usize,
    pub stride: usize,
}

impl EncoderConfig {
    /// The same architecture for a different epoch length (e.g. another sample rate).
    pub fn with_input_length(mut self, input_length: usize) -> Self {
        self.input_length = input_length;
        self
    }

    /// Sub-epoch feature width `u` (filters of the last stage).
    pub fn feature_width(&self) -> usize {
        self.stage_filters.last().map_or(self.stem_filters, |f| f[2])
    }

    /// Every conv/pool along the main path, in order.
    pub fn length_schedule(&self) -> Vec<LengthStep> {
        let mut steps = vec![
            LengthStep {
                kernel: self.stem_kernel,
                stride: self.stem_stride,
            },
            LengthStep {
                kernel: self.pool_kernel,
                stride: self.pool_stride,
            },
        ];
        for (s, &blocks) in self.stage_blocks.iter().enumerate() {
            if self.extra_pool_before_stage == Some(s) {
                steps.push(LengthStep {
                    kernel: self.pool_kernel,
                    stride: self.pool_stride,
                });
            }
            for b in 0..blocks {
                let stride = if b == 0 { self.stage_strides[s] } else { 1 };
                steps.push(LengthStep { kernel: 1, stride: 1 });
                steps.push(LengthStep { kernel: 3, stride });
                steps.push(LengthStep { kernel: 1, stride: 1 });
            }
        }
        steps
    }

    /// Number of sub-epoch vectors `l` produced for an input of `input_len` samples.
    pub fn feature_len(&self, input_len: usize) -> usize {
        self.length_schedule()
            .iter()
            .fold(input_len, |n, s| n.div_ceil(s.stride))
    }

    /// Input sample span `[start, end)` (clipped to the epoch) seen by each output column.
    pub fn receptive_fields(&self) -> Vec<(usize, usize)> {
        // Track, per layer, the affine map from output index to the first input
        // index of its window plus the window size, composed back to the input.
        let mut len = self.input_length;
        let mut jump: i64 = 1;
        let mut start: i64 = 0;
        let mut size: i64 = 1;
        for step in self.length_schedule() {
            let (pad_left, _) = same_padding(len, step.kernel, step.stride);
            start += -(pad_left as i64) * jump;
            size += (step.kernel as i64 - 1) * jump;
            jump *= step.stride as i64;
            len = len.div_ceil(step.stride);
        }
        (0..len as i64)
            .map(|i| {
                let lo = (start + i * jump).max(0) as usize;
                let hi = ((start + i * jump + size).max(0) as usize).min(self.input_length);
                (lo, hi)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stage_blocks.len();
        if n == 0 || self.stage_filters.len() != n || self.stage_strides.len() != n {
            return Err(Error::Config("encoder stage lists must be non-empty and equally long".into()));
        }
        if self.stage_blocks.iter().any(|&b| b == 0) {
            return Err(Error::Config("every encoder stage needs at least one block".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Shortcut<F: Real> {
    conv: Conv1d<F>,
    bn: BatchNorm1d<F>,
}

#[derive(Debug, Clone)]
pub struct Bottleneck<F: Real> {
    conv1: Conv1d<F>,
    bn1: BatchNorm1d<F>,
    conv2: Conv1d<F>,
    bn2: BatchNorm1d<F>,
    conv3: Conv1d<F>,
    bn3: BatchNorm1d<F>,
    shortcut: Option<Shortcut<F>>,
}

#[derive(Debug)]
pub struct BottleneckCache<F: Real> {
    c1: ConvCache<F>,
    n1: BatchNormCache<F>,
    r1: Array3<F>,
    c2: ConvCache<F>,
    n2: BatchNormCache<F>,
    r2: Array3<F>,
    c3: ConvCache<F>,
    n3: BatchNormCache<F>,
    short: Option<(ConvCache<F>, BatchNormCache<F>)>,
    out: Array3<F>,
}

impl<F: Real> Bottleneck<F> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, filters: [usize; 3], stride: usize, rng: &mut R) -> Self {
        let [a, b, out] = filters;
        let shortcut = (stride != 1 || in_ch != out).then(|| Shortcut {
            conv: Conv1d::new(in_ch, out, 1, stride, false, rng),
            bn: BatchNorm1d::new(out),
        });
        Self {
            conv1: Conv1d::new(in_ch, a, 1, 1, false, rng),
            bn1: BatchNorm1d::new(a),
            conv2: Conv1d::new(a, b, 3, stride, false, rng),
            bn2: BatchNorm1d::new(b),
            conv3: Conv1d::new(b, out, 1, 1, false, rng),
            bn3: BatchNorm1d::new(out),
            shortcut,
        }
    }

    pub fn has_projection(&self) -> bool {
        self.shortcut.is_some()
    }

    pub fn forward(&self, x: &Array3<F>, mode: Mode) -> (Array3<F>, BottleneckCache<F>) {
        let (a, c1) = self.conv1.forward(x);
        let (a, n1) = self.bn1.forward(&a, mode);
        let r1 = Relu::forward(a);
        let (a, c2) = self.conv2.forward(&r1);
        let (a, n2) = self.bn2.forward(&a, mode);
        let r2 = Relu::forward(a);
        let (a, c3) = self.conv3.forward(&r2);
        let (mut a, n3) = self.bn3.forward(&a, mode);
        let short = match &self.shortcut {
            Some(sc) => {
                let (s, cc) = sc.conv.forward(x);
                let (s, nc) = sc.bn.forward(&s, mode);
                a += &s;
                Some((cc, nc))
            }
            None => {
                a += x;
                None
            }
        };
        let out = Relu::forward(a);
        let cache = BottleneckCache {
            c1,
            n1,
            r1,
            c2,
            n2,
            r2,
            c3,
            n3,
            short,
            out: out.clone(),
        };
        (out, cache)
    }

    pub fn backward(&mut self, cache: BottleneckCache<F>, dy: Array3<F>) -> Array3<F> {
        let d = Relu::backward(&cache.out, dy);
        let mut dx = match (&mut self.shortcut, cache.short) {
            (Some(sc), Some((cc, nc))) => {
                let ds = sc.bn.backward(nc, &d);
                sc.conv.backward(cc, &ds)
            }
            _ => d.clone(),
        };
        let g = self.bn3.backward(cache.n3, &d);
        let g = self.conv3.backward(cache.c3, &g);
        let g = Relu::backward(&cache.r2, g);
        let g = self.bn2.backward(cache.n2, &g);
        let g = self.conv2.backward(cache.c2, &g);
        let g = Relu::backward(&cache.r1, g);
        let g = self.bn1.backward(cache.n1, &g);
        dx += &self.conv1.backward(cache.c1, &g);
        dx
    }

    /// Zero every residual-branch weight and put all batch norms in identity
    /// configuration (unit scale, zero shift, zero mean, unit variance).
    pub fn zero_residual_branch(&mut self) {
        for conv in [&mut self.conv1, &mut self.conv2, &mut self.conv3] {
            conv.weight.value.fill(F::zero());
        }
        let eps_free = |bn: &mut BatchNorm1d<F>| {
            bn.gamma.value.fill(F::one());
            bn.beta.value.fill(F::zero());
            bn.running_mean.value.fill(F::zero());
            bn.running_var.value.fill(F::one());
            bn.eps = 0.0;
        };
        eps_free(&mut self.bn1);
        eps_free(&mut self.bn2);
        eps_free(&mut self.bn3);
        if let Some(sc) = &mut self.shortcut {
            eps_free(&mut sc.bn);
        }
    }
}

impl<F: Real> Module<F> for Bottleneck<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.bn3.visit(&join(prefix, "bn3"), f);
        if let Some(sc) = &self.shortcut {
            sc.conv.visit(&join(prefix, "shortcut.conv"), f);
            sc.bn.visit(&join(prefix, "shortcut.bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
        self.conv3.visit_mut(&join(prefix, "conv3"), f);
        self.bn3.visit_mut(&join(prefix, "bn3"), f);
        if let Some(sc) = &mut self.shortcut {
            sc.conv.visit_mut(&join(prefix, "shortcut.conv"), f);
            sc.bn.visit_mut(&join(prefix, "shortcut.bn"), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder<F: Real> {
    config: EncoderConfig,
    stem: Conv1d<F>,
    stem_bn: BatchNorm1d<F>,
    pool: MaxPool1d,
    /// `(extra pool before this stage, blocks)`.
    stages: Vec<(bool, Vec<Bottleneck<F>>)>,
    dropout: Dropout,
}

#[derive(Debug)]
pub struct EncoderCache<F: Real> {
    stem: ConvCache<F>,
    stem_bn: BatchNormCache<F>,
    stem_out: Array3<F>,
    pool: MaxPoolCache,
    stages: Vec<(Option<MaxPoolCache>, Vec<BottleneckCache<F>>)>,
    dropout: DropoutCache<F>,
}

impl<F: Real> Encoder<F> {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stem = Conv1d::new(1, config.stem_filters, config.stem_kernel, config.stem_stride, false, rng);
        let stem_bn = BatchNorm1d::new(config.stem_filters);
        let mut in_ch = config.stem_filters;
        let mut stages = Vec::new();
        for s in 0..config.stage_blocks.len() {
            let filters = config.stage_filters[s];
            let blocks = (0..config.stage_blocks[s])
                .map(|b| {
                    let stride = if b == 0 { config.stage_strides[s] } else { 1 };
                    let block = Bottleneck::new(in_ch, filters, stride, rng);
                    in_ch = filters[2];
                    block
                })
                .collect();
            stages.push((config.extra_pool_before_stage == Some(s), blocks));
        }
        Ok(Self {
            pool: MaxPool1d::new(config.pool_kernel, config.pool_stride),
            dropout: Dropout::new(config.dropout),
            config,
            stem,
            stem_bn,
            stages,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Bottleneck<F>> {
        self.stages.iter_mut().flat_map(|(_, b)| b.iter_mut())
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Bottleneck<F>> {
        self.stages.iter().flat_map(|(_, b)| b.iter())
    }

    /// Batched forward: `[1, N, input_length]` epochs to `[u, N, l]` features.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Array3<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array3<F>, EncoderCache<F>)> {
        let (c, _, len) = x.dim();
        if c != 1 || len != self.config.input_length {
            return Err(Error::Shape(format!(
                "encoder expects [1, N, {}] input, got [{c}, N, {len}]",
                self.config.input_length
            )));
        }
        let (a, stem) = self.stem.forward(x);
        let (a, stem_bn) = self.stem_bn.forward(&a, mode);
        let stem_out = Relu::forward(a);
        let (mut a, pool) = self.pool.forward(&stem_out);
        let mut stage_caches = Vec::with_capacity(self.stages.len());
        for (extra_pool, blocks) in &self.stages {
            let pc = if *extra_pool {
                let (p, pc) = self.pool.forward(&a);
                a = p;
                Some(pc)
            } else {
                None
            };
            let mut bcs = Vec::with_capacity(blocks.len());
            for block in blocks {
                let (o, bc) = block.forward(&a, mode);
                a = o;
                bcs.push(bc);
            }
            stage_caches.push((pc, bcs));
        }
        let (a, dropout) = self.dropout.forward(a, mode, rng);
        let cache = EncoderCache {
            stem,
            stem_bn,
            stem_out,
            pool,
            stages: stage_caches,
            dropout,
        };
        Ok((a, cache))
    }

    pub fn backward(&mut self, cache: EncoderCache<F>, dy: Array3<F>) -> Array3<F> {
        let mut g = self.dropout.backward(cache.dropout, dy);
        for ((extra_pool, blocks), (pc, bcs)) in self.stages.iter_mut().zip(cache.stages).rev() {
            for (block, bc) in blocks.iter_mut().zip(bcs).rev() {
                g = block.backward(bc, g);
            }
            if *extra_pool {
                g = self.pool.backward(pc.expect("pool cache"), &g);
            }
        }
        let g = self.pool.backward(cache.pool, &g);
        let g = Relu::backward(&cache.stem_out, g);
        let g = self.stem_bn.backward(cache.stem_bn, &g);
        self.stem.backward(cache.stem, &g)
    }

    /// Inference-mode features for a single epoch, shaped `[l, u]` (row = sub-epoch).
    pub fn encode_epoch(&self, samples: &[F]) -> Result<FeatureSequence<F>> {
        let x = Array3::from_shape_vec((1, 1, samples.len()), samples.to_vec()).unwrap();
        let feats = self.encode_batch(&x)?;
        Ok(feats.into_iter().next().expect("one epoch"))
    }

    /// Inference-mode features for every epoch of a sequence, stacked
    /// chronologically into `[(L * l), u]`.
    pub fn encode_sequence(&self, epochs: &[&[F]]) -> Result<FeatureSequence<F>> {
        if epochs.is_empty() {
            return Err(Error::Shape("empty epoch sequence".into()));
        }
        let n = epochs[0].len();
        if let Some(bad) = epochs.iter().position(|e| e.len() != n) {
            return Err(Error::Shape(format!(
                "ragged sequence: epoch {bad} has {} samples, epoch 0 has {n}",
                epochs[bad].len()
            )));
        }
        let flat: Vec<F> = epochs.iter().flat_map(|e| e.iter().copied()).collect();
        let x = Array3::from_shape_vec((1, epochs.len(), n), flat).unwrap();
        let blocks = self.encode_batch(&x)?;
        let u = self.config.feature_width();
        let l = blocks[0].nrows();
        let mut out = Array2::zeros((epochs.len() * l, u));
        for (i, b) in blocks.iter().enumerate() {
            out.slice_mut(ndarray::s![i * l..(i + 1) * l, ..]).assign(b);
        }
        Ok(out)
    }

    fn encode_batch(&self, x: &Array3<F>) -> Result<Vec<FeatureSequence<F>>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let (feats, _) = self.forward(x, Mode::Eval, &mut rng)?;
        let (u, n, l) = feats.dim();
        Ok((0..n)
            .map(|e| Array2::from_shape_fn((l, u), |(t, c)| feats[[c, e, t]]))
            .collect())
    }
}

impl<F: Real> Module<F> for Encoder<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.stem.visit(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit(&join(prefix, "stem.bn"), f);
        for (s, (_, blocks)) in self.stages.iter().enumerate() {
            for (b, block) in blocks.iter().enumerate() {
                block.visit(&join(prefix, &format!("stage{}.{b}", s + 1)), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.stem.visit_mut(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit_mut(&join(prefix, "stem.bn"), f);
        for (s, (_, blocks)) in self.stages.iter_mut().enumerate() {
            for (b, block) in blocks.iter_mut().enumerate() {
                block.visit_mut(&join(prefix, &format!("stage{}.{b}", s + 1)), f);
            }
        }
    }
}
