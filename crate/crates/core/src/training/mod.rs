//! One-step end-to-end training: Adam on cross-entropy plus L2, evaluated once
//! per pass over the training set, early stopping on validation cost and
//! selection of the best validation-accuracy snapshot.

mod checkpoint;

pub use checkpoint::{load_named, named_values, Checkpoint, CHECKPOINT_VERSION};

use std::collections::VecDeque;
use std::time::Instant;

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DatasetKind, WindowedSet};
use crate::model::{predict_stage, SleepModel};
use crate::nn::{flush_subnormals, softmax_cross_entropy, softmax_rows, Adam, AdamConfig, AdamState, Mode, Real};
use crate::stage::{ConfusionMatrix, StageLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Gradient-accumulation chunk, in epochs (`samples * L`), so large
    /// batches fit in memory. Batch norm statistics are per chunk.
    pub micro_batch_epochs: usize,
    /// Evaluations without a validation-cost improvement before stopping.
    pub patience: usize,
    pub max_passes: usize,
    pub seed: u64,
    /// Optional wall-clock cap, checked after each evaluation.
    #[serde(default)]
    pub max_seconds: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 256,
            micro_batch_epochs: 128,
            patience: 10,
            max_passes: 100,
            seed: 0,
            max_seconds: None,
        }
    }
}

impl TrainConfig {
    pub fn for_dataset(kind: DatasetKind) -> Self {
        let batch_size = match kind {
            DatasetKind::Mass => 128,
            DatasetKind::SleepEdf | DatasetKind::Shhs => 256,
            DatasetKind::Generic => 64,
        };
        Self {
            batch_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.micro_batch_epochs == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.max_passes == 0 {
            return Err(Error::Config("max_passes must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) || self.adam.weight_reg < 0.0 {
            return Err(Error::Config("learning rate must be positive and weight_reg non-negative".into()));
        }
        Ok(())
    }
}

/// One machine-readable line per evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub pass: usize,
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Patience,
    MaxPasses,
    TimeBudget,
}

/// Parameters and optimizer state captured at one evaluation.
#[derive(Debug, Clone)]
pub struct Snapshot<F: Real> {
    pub params: Vec<(String, ArrayD<F>)>,
    pub optimizer: AdamState<F>,
    pub pass: usize,
    pub step: u64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F: Real> {
    /// Highest validation accuracy seen (earliest on ties).
    pub best: Snapshot<F>,
    pub history: Vec<EvalRecord>,
    pub stop: StopReason,
}

/// Predictions and pooled statistics of a model on a sample set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<StageLabel>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        let t = self.confusion.total();
        if t == 0 {
            0.0
        } else {
            self.confusion.trace() as f64 / t as f64
        }
    }
}

fn chunk_size(micro_batch_epochs: usize, seq_len: usize) -> usize {
    (micro_batch_epochs / seq_len.max(1)).max(1)
}

fn targets(labels: &[StageLabel]) -> Vec<usize> {
    labels.iter().map(|l| l.index()).collect()
}

/// Eval-mode loss, confusion matrix and per-sample predictions.
pub fn evaluate<F: Real, M: SleepModel<F>>(model: &M, set: &WindowedSet<'_>, micro_batch_epochs: usize) -> Result<Evaluation> {
    flush_subnormals();
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut loss = 0.0;
    let mut confusion = ConfusionMatrix::new();
    let mut predictions = Vec::with_capacity(set.len());
    for chunk in idx.chunks(chunk_size(micro_batch_epochs, set.seq_len())) {
        let (x, y) = set.batch::<F>(chunk);
        let logits = model.logits(&x)?;
        let (l, _) = softmax_cross_entropy(&logits, &targets(&y));
        loss += l * chunk.len() as f64;
        let probs = softmax_rows(&logits);
        for (row, &truth) in probs.outer_iter().zip(&y) {
            let p = predict_stage(row);
            confusion.record(p, truth);
            predictions.push(p);
        }
    }
    Ok(Evaluation {
        loss: loss / set.len().max(1) as f64,
        confusion,
        predictions,
    })
}

/// Total objective on one batch: mean cross-entropy plus `weight_reg / 2 * ||w||^2`.
pub fn objective<F: Real, M: SleepModel<F>>(model: &M, x: &ndarray::Array3<F>, y: &[StageLabel], weight_reg: f64) -> Result<f64> {
    let logits = model.logits(x)?;
    Ok(softmax_cross_entropy(&logits, &targets(y)).0 + 0.5 * weight_reg * model.weight_sq_norm())
}

pub fn train<F: Real, M: SleepModel<F>>(
    model: &mut M,
    train_set: &WindowedSet<'_>,
    val_set: &WindowedSet<'_>,
    config: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    train_observed(model, train_set, val_set, config, &mut |r| {
        log::info!("{}", serde_json::to_string(r).unwrap_or_default())
    })
}

/// [`train`] with a callback receiving every evaluation record.
pub fn train_observed<F: Real, M: SleepModel<F>>(
    model: &mut M,
    train_set: &WindowedSet<'_>,
    val_set: &WindowedSet<'_>,
    config: &TrainConfig,
    on_eval: &mut dyn FnMut(&EvalRecord),
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Training("empty validation set".into()));
    }
    let overlap: Vec<String> = train_set
        .subjects()
        .into_iter()
        .filter(|s| val_set.subjects().contains(s))
        .collect();
    if !overlap.is_empty() {
        return Err(Error::Training(format!("subjects in both training and validation sets: {overlap:?}")));
    }
    flush_subnormals();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt: Adam<F> = Adam::new(config.adam);
    let micro = chunk_size(config.micro_batch_epochs, train_set.seq_len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(16);
    let mut best: Option<Snapshot<F>> = None;
    let mut best_cost = f64::INFINITY;
    let mut since_improved = 0;
    let mut stop = StopReason::MaxPasses;

    for pass in 1..=config.max_passes {
        order.shuffle(&mut rng);
        let mut pass_loss = 0.0;
        for (batch_id, batch) in order.chunks(config.batch_size).enumerate() {
            model.zero_grad();
            let mut ce = 0.0;
            for chunk in batch.chunks(micro) {
                let (x, y) = train_set.batch::<F>(chunk);
                let (logits, cache) = model.forward(&x, Mode::Train, &mut rng)?;
                let (l, mut dlogits) = softmax_cross_entropy(&logits, &targets(&y));
                // chunk means -> batch mean
                let w = chunk.len() as f64 / batch.len() as f64;
                dlogits.mapv_inplace(|v| v * F::from_f64_lossy(w));
                model.backward(cache, &dlogits);
                ce += l * w;
            }
            let loss = ce + 0.5 * config.adam.weight_reg * model.weight_sq_norm();
            if recent.len() == 16 {
                recent.pop_front();
            }
            recent.push_back(loss);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at step {} (pass {pass}, batch {batch_id}); recent losses: {:?}",
                    opt.state.step + 1,
                    recent
                )));
            }
            opt.step(model);
            pass_loss += loss * batch.len() as f64;
        }

        let val = evaluate(model, val_set, config.micro_batch_epochs)?;
        let rec = EvalRecord {
            pass,
            step: opt.state.step,
            train_loss: pass_loss / train_set.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy(),
            seconds: started.elapsed().as_secs_f64(),
        };
        on_eval(&rec);
        if !rec.val_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite validation loss after step {} (pass {pass}); recent losses: {recent:?}",
                rec.step
            )));
        }
        if best.as_ref().map_or(true, |b| rec.val_accuracy > b.val_accuracy) {
            best = Some(Snapshot {
                params: named_values(model),
                optimizer: opt.state.clone(),
                pass,
                step: rec.step,
                val_accuracy: rec.val_accuracy,
            });
        }
        if rec.val_loss < best_cost {
            best_cost = rec.val_loss;
            since_improved = 0;
        } else {
            since_improved += 1;
        }
        history.push(rec);
        if since_improved >= config.patience {
            stop = StopReason::Patience;
            break;
        }
        if config.max_seconds.is_some_and(|s| started.elapsed().as_secs_f64() >= s) {
            stop = StopReason::TimeBudget;
            break;
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one evaluation"),
        history,
        stop,
    })
}
