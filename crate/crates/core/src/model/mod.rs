//! Sleep-scoring networks: IITNet and the two DeepSleepNet-derived baselines.

mod any;
mod baselines;
mod encoder;
mod head;

pub use any::{AnyCache, AnyModel, ModelKind, ModelSpec};
pub use baselines::{BranchLayer, DeepSleepNetConfig, E2eDeepSleepNet, E2eIntraDeepSleepNet};
pub use encoder::{Bottleneck, Encoder, EncoderCache, EncoderConfig, LengthStep};
pub use head::{ContextHead, HeadCache, HeadConfig};

use ndarray::{Array2, Array3, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Mode, Module, Param, Real};
use crate::stage::StageLabel;

/// Sub-epoch feature vectors, one row per sub-epoch in chronological order.
pub type FeatureSequence<F> = Array2<F>;

/// A many-to-one sleep-stage classifier over windows of `seq_len` epochs.
///
/// Inputs are `[B, L, samples_per_epoch]` with the target epoch last.
pub trait SleepModel<F: Real>: Module<F> + Send + Sync {
    type Cache;

    fn seq_len(&self) -> usize;

    fn input_length(&self) -> usize;

    fn forward<R: Rng + ?Sized>(&self, x: &Array3<F>, mode: Mode, rng: &mut R) -> Result<(Array2<F>, Self::Cache)>;

    /// Accumulates parameter gradients from `dlogits` (`[B, classes]`).
    fn backward(&mut self, cache: Self::Cache, dlogits: &Array2<F>);

    fn logits(&self, x: &Array3<F>) -> Result<Array2<F>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        Ok(self.forward(x, Mode::Eval, &mut rng)?.0)
    }

    /// Eval-mode class probabilities `[B, classes]`.
    fn classify(&self, x: &Array3<F>) -> Result<Array2<F>> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    fn check_input(&self, x: &Array3<F>) -> Result<()> {
        let (_, l, n) = x.dim();
        if l != self.seq_len() || n != self.input_length() {
            return Err(Error::Shape(format!(
                "model expects [B, {}, {}] input, got [B, {l}, {n}]",
                self.seq_len(),
                self.input_length()
            )));
        }
        Ok(())
    }
}

/// Most likely stage; ties go to the lowest class index.
pub fn predict_stage<F: Real>(probs: ArrayView1<'_, F>) -> StageLabel {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    StageLabel::from_index(best).expect("five-class output")
}

/// `[u, B*L, l]` encoder output to a `[L*l, B, u]` time-major series; epoch
/// `s*L + i` contributes rows `i*l .. (i+1)*l` of sample `s`.
pub fn features_to_series<F: Real>(feats: &Array3<F>, seq_len: usize) -> Array3<F> {
    let (u, n, l) = feats.dim();
    let b = n / seq_len;
    let fs = feats.as_standard_layout();
    let src = fs.as_slice().unwrap();
    let mut out = vec![F::zero(); n * l * u];
    for c in 0..u {
        for e in 0..n {
            let (s, i) = (e / seq_len, e % seq_len);
            for j in 0..l {
                out[((i * l + j) * b + s) * u + c] = src[(c * n + e) * l + j];
            }
        }
    }
    Array3::from_shape_vec((seq_len * l, b, u), out).unwrap()
}

/// Inverse of [`features_to_series`].
pub fn series_to_features<F: Real>(series: &Array3<F>, seq_len: usize, l: usize) -> Array3<F> {
    let (_, b, u) = series.dim();
    let n = b * seq_len;
    let ss = series.as_standard_layout();
    let src = ss.as_slice().unwrap();
    let mut out = vec![F::zero(); u * n * l];
    for c in 0..u {
        for e in 0..n {
            let (s, i) = (e / seq_len, e % seq_len);
            for j in 0..l {
                out[(c * n + e) * l + j] = src[((i * l + j) * b + s) * u + c];
            }
        }
    }
    Array3::from_shape_vec((u, n, l), out).unwrap()
}

/// IITNet: the residual encoder applied to each epoch with shared weights,
/// followed by the BiLSTM context head over the concatenated sub-epoch features.
#[derive(Debug, Clone)]
pub struct IitNet<F: Real> {
    pub encoder: Encoder<F>,
    pub head: ContextHead<F>,
    seq_len: usize,
}

#[derive(Debug)]
pub struct IitNetCache<F: Real> {
    encoder: EncoderCache<F>,
    head: HeadCache<F>,
    feature_len: usize,
}

impl<F: Real> IitNet<F> {
    pub fn new<R: Rng + ?Sized>(
        encoder: EncoderConfig,
        head: &HeadConfig,
        seq_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        let u = encoder.feature_width();
        let encoder = Encoder::new(encoder, rng)?;
        let head = ContextHead::new(u, head, rng)?;
        Ok(Self {
            encoder,
            head,
            seq_len,
        })
    }

    /// Sub-epoch features of every window, `[B][L*l, u]`, without the recurrent head.
    pub fn feature_series(&self, x: &Array3<F>) -> Result<Array3<F>> {
        self.check_input(x)?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let flat = flatten_epochs(x);
        let (feats, _) = self.encoder.forward(&flat, Mode::Eval, &mut rng)?;
        Ok(features_to_series(&feats, self.seq_len))
    }
}

/// `[B, L, n]` to the encoder's `[1, B*L, n]` layout (same memory order).
pub(crate) fn flatten_epochs<F: Real>(x: &Array3<F>) -> Array3<F> {
    let (b, l, n) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((1, b * l, n))
        .unwrap()
}

impl<F: Real> SleepModel<F> for IitNet<F> {
    type Cache = IitNetCache<F>;

    fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn input_length(&self) -> usize {
        self.encoder.config().input_length
    }

    fn forward<R: Rng + ?Sized>(&self, x: &Array3<F>, mode: Mode, rng: &mut R) -> Result<(Array2<F>, Self::Cache)> {
        self.check_input(x)?;
        let (feats, enc_cache) = self.encoder.forward(&flatten_epochs(x), mode, rng)?;
        let feature_len = feats.dim().2;
        let series = features_to_series(&feats, self.seq_len);
        let (logits, head_cache) = self.head.forward(&series)?;
        Ok((
            logits,
            IitNetCache {
                encoder: enc_cache,
                head: head_cache,
                feature_len,
            },
        ))
    }

    fn backward(&mut self, cache: Self::Cache, dlogits: &Array2<F>) {
        let dseries = self.head.backward(cache.head, dlogits);
        let dfeats = series_to_features(&dseries, self.seq_len, cache.feature_len);
        self.encoder.backward(cache.encoder, dfeats);
    }
}

impl<F: Real> Module<F> for IitNet<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.encoder.visit(&crate::nn::join(prefix, "encoder"), f);
        self.head.visit(&crate::nn::join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.encoder.visit_mut(&crate::nn::join(prefix, "encoder"), f);
        self.head.visit_mut(&crate::nn::join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(predict_stage(arr1(&[0.1, 0.6, 0.1, 0.1, 0.1]).view()), StageLabel::N1);
        assert_eq!(predict_stage(arr1(&[0.2f32; 5]).view()), StageLabel::W);
        assert_eq!(predict_stage(arr1(&[0.0, 0.0, 0.0, 0.0, 1.0]).view()), StageLabel::Rem);
    }

    #[test]
    fn series_layout_round_trips() {
        let feats = Array3::from_shape_fn((3, 4, 5), |(c, e, j)| (c * 100 + e * 10 + j) as f64);
        let series = features_to_series(&feats, 2);
        assert_eq!(series.dim(), (10, 2, 3));
        // sample 1, epoch position 1 (global epoch 3), sub-epoch 4, channel 2
        assert_eq!(series[[1 * 5 + 4, 1, 2]], 234.0);
        assert_eq!(series_to_features(&series, 2, 5), feats);
    }
}
