use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, MetricsReport, SplitPlan};
use crate::error::{Error, Result};
use crate::ingest::{DatasetKind, Night, Padding, WindowedSet};
use crate::model::{AnyModel, ModelSpec};
use crate::stage::{ConfusionMatrix, StageLabel};
use crate::training::{evaluate, load_named, train_observed, Checkpoint, EvalRecord, StopReason, TrainConfig};

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub padding: Padding,
    pub dataset_kind: Option<DatasetKind>,
    /// Per-fold reports, logs and checkpoints go under `fold-NN/`.
    pub out_dir: Option<PathBuf>,
}

/// Results of one fold: the best-validation snapshot scored on the test subjects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub best_pass: usize,
    pub best_val_accuracy: f64,
    pub stop: StopReason,
    pub history: Vec<EvalRecord>,
    pub metrics: MetricsReport,
    /// Test predictions per night, in `(subject, recording, stages)` order of the test set.
    #[serde(skip)]
    pub predictions: Vec<(String, String, Vec<StageLabel>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldMean {
    pub accuracy: f64,
    pub mf1: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    /// Metrics of the summed test confusion matrices.
    pub aggregate: MetricsReport,
    /// Unweighted mean over folds, for reference.
    pub fold_mean: FoldMean,
}

/// Build a freshly initialised model per fold from `spec`, seeded by `seed + fold`.
pub fn default_factory(spec: ModelSpec, seed: u64) -> impl FnMut(usize) -> Result<AnyModel<f32>> {
    move |fold| spec.build(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(fold as u64)))
}

fn select<'a>(nights: &'a [Night], subjects: &[String]) -> Vec<&'a Night> {
    let want: BTreeSet<&String> = subjects.iter().collect();
    nights.iter().filter(|n| want.contains(&n.subject_id)).collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Train and test every fold of `plan` in order.
///
/// The plan is checked against the available subjects before any training.
/// A failing fold aborts the run with [`Error::Fold`]; reports of folds that
/// already finished stay on disk.
pub fn run_cross_validation(
    plan: &SplitPlan,
    nights: &[Night],
    factory: &mut dyn FnMut(usize) -> Result<AnyModel<f32>>,
    config: &CvConfig,
) -> Result<CvReport> {
    let subjects: Vec<String> = nights
        .iter()
        .map(|n| n.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    // sub-selected plans (--folds) need not cover every subject
    plan.check_folds(&subjects)?;
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("plan.json"), plan)?;
    }
    let mut folds = Vec::with_capacity(plan.folds.len());
    for fold in &plan.folds {
        let report = run_fold(fold, nights, factory, config).map_err(|e| Error::Fold {
            fold: fold.id,
            source: Box::new(e),
        })?;
        folds.push(report);
    }
    let mut pooled = ConfusionMatrix::new();
    for f in &folds {
        pooled.merge(&f.metrics.confusion);
    }
    let aggregate = compute_metrics(&pooled)?.with_context(config.model.seq_len, config.dataset_kind, Some(config.model.kind));
    let k = folds.len() as f64;
    let fold_mean = FoldMean {
        accuracy: folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / k,
        mf1: folds.iter().map(|f| f.metrics.mf1).sum::<f64>() / k,
        kappa: folds.iter().map(|f| f.metrics.kappa).sum::<f64>() / k,
    };
    let report = CvReport {
        folds,
        aggregate,
        fold_mean,
    };
    if let Some(dir) = &config.out_dir {
        write_json(&dir.join("aggregate.json"), &report)?;
    }
    Ok(report)
}

fn run_fold(
    fold: &super::Fold,
    nights: &[Night],
    factory: &mut dyn FnMut(usize) -> Result<AnyModel<f32>>,
    config: &CvConfig,
) -> Result<FoldReport> {
    let l = config.model.seq_len;
    let train_set = WindowedSet::new(select(nights, &fold.train), l, config.padding)?;
    let val_set = WindowedSet::new(select(nights, &fold.val), l, config.padding)?;
    let test_set = WindowedSet::new(select(nights, &fold.test), l, config.padding)?;
    let fold_dir = config.out_dir.as_ref().map(|d| d.join(format!("fold-{:02}", fold.id)));
    let mut log_file = match &fold_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let p = d.join("history.jsonl");
            Some((fs::File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };

    let mut model = factory(fold.id)?;
    let mut train_config = config.train.clone();
    train_config.seed = config.train.seed.wrapping_add(fold.id as u64);
    let outcome = train_observed(&mut model, &train_set, &val_set, &train_config, &mut |r| {
        let line = serde_json::to_string(r).unwrap_or_default();
        log::info!("fold {} {line}", fold.id);
        if let Some((f, _)) = log_file.as_mut() {
            let _ = writeln!(f, "{line}");
        }
    })?;
    load_named(&mut model, &outcome.best.params)?;
    let test = evaluate(&model, &test_set, train_config.micro_batch_epochs)?;
    let metrics = compute_metrics(&test.confusion)?.with_context(l, config.dataset_kind, Some(config.model.kind));

    let mut predictions: Vec<(String, String, Vec<StageLabel>)> = test_set
        .nights()
        .iter()
        .map(|n| (n.subject_id.clone(), n.recording_id.clone(), Vec::new()))
        .collect();
    for (i, &p) in test.predictions.iter().enumerate() {
        predictions[test_set.item(i).0].2.push(p);
    }

    let report = FoldReport {
        fold: fold.id,
        train_subjects: fold.train.clone(),
        val_subjects: fold.val.clone(),
        test_subjects: fold.test.clone(),
        best_pass: outcome.best.pass,
        best_val_accuracy: outcome.best.val_accuracy,
        stop: outcome.stop,
        history: outcome.history.clone(),
        metrics,
        predictions,
    };
    if let Some(d) = &fold_dir {
        write_json(&d.join("report.json"), &report)?;
        Checkpoint::from_outcome(config.model.clone(), train_config, &outcome).save(d.join("model.ckpt"))?;
    }
    Ok(report)
}
