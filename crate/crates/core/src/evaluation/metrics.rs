use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DatasetKind;
use crate::model::ModelKind;
use crate::stage::{ConfusionMatrix, StageLabel, NUM_STAGES};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const ORIENTATION: &str = "rows=predicted, columns=true";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub stage: StageLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Row sum: epochs predicted as this stage.
    pub predicted: u64,
    /// Column sum: epochs truly in this stage.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub orientation: String,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub mf1: f64,
    pub kappa: f64,
    /// Chance agreement `p_e`.
    pub chance_agreement: f64,
    pub n_epochs: u64,
    pub seq_len: Option<usize>,
    pub dataset_kind: Option<DatasetKind>,
    pub model: Option<ModelKind>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision (by row), recall (by column), F1, accuracy, macro F1 and
/// Cohen's kappa `(p_o - p_e) / (1 - p_e)`.
///
/// Classes with an empty row or column get 0 for the affected scores and a
/// warning in the report instead of NaN.
pub fn compute_metrics(confusion: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = confusion.total();
    if total == 0 {
        return Err(Error::Metrics("confusion matrix is empty".into()));
    }
    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(NUM_STAGES);
    for (i, &stage) in StageLabel::ALL.iter().enumerate() {
        let tp = confusion.counts[i][i];
        let predicted = confusion.row_sum(i);
        let support = confusion.col_sum(i);
        if predicted == 0 {
            warnings.push(format!("{stage}: never predicted, precision set to 0"));
        }
        if support == 0 {
            warnings.push(format!("{stage}: no true epochs, recall set to 0"));
        }
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            stage,
            precision,
            recall,
            f1,
            predicted,
            support,
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let t = total as f64;
    let p_o = confusion.trace() as f64 / t;
    let p_e: f64 = (0..NUM_STAGES)
        .map(|i| (confusion.row_sum(i) as f64 / t) * (confusion.col_sum(i) as f64 / t))
        .sum();
    let kappa = if p_e < 1.0 {
        (p_o - p_e) / (1.0 - p_e)
    } else {
        // every epoch in one class on both sides: agreement is total
        1.0
    };
    let mf1 = per_class.iter().map(|c| c.f1).sum::<f64>() / NUM_STAGES as f64;
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        orientation: ORIENTATION.into(),
        confusion: *confusion,
        per_class,
        accuracy: p_o,
        mf1,
        kappa,
        chance_agreement: p_e,
        n_epochs: total,
        seq_len: None,
        dataset_kind: None,
        model: None,
        warnings,
    })
}

impl MetricsReport {
    pub fn with_context(mut self, seq_len: usize, kind: Option<DatasetKind>, model: Option<ModelKind>) -> Self {
        self.seq_len = Some(seq_len);
        self.dataset_kind = kind;
        self.model = model;
        self
    }

    pub fn f1(&self, stage: StageLabel) -> f64 {
        self.per_class[stage.index()].f1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(counts: [[u64; 5]; 5]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(counts)
    }

    #[test]
    fn perfect_diagonal() {
        let mut c = [[0; 5]; 5];
        for (i, row) in c.iter_mut().enumerate() {
            row[i] = 10;
        }
        let r = compute_metrics(&cm(c)).unwrap();
        assert_eq!((r.accuracy, r.mf1, r.kappa), (1.0, 1.0, 1.0));
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn two_class_hand_example() {
        let mut c = [[0; 5]; 5];
        c[0][0] = 40;
        c[0][1] = 10;
        c[1][0] = 20;
        c[1][1] = 30;
        let r = compute_metrics(&cm(c)).unwrap();
        assert!((r.accuracy - 0.7).abs() < 1e-15);
        assert!((r.chance_agreement - 0.5).abs() < 1e-15);
        assert!((r.kappa - 0.4).abs() < 1e-15);
        // PR of W uses the row (40 / 50), RE the column (40 / 60)
        assert!((r.per_class[0].precision - 0.8).abs() < 1e-15);
        assert!((r.per_class[0].recall - 40.0 / 60.0).abs() < 1e-15);
        assert_eq!(r.per_class[4].f1, 0.0);
        assert_eq!(r.warnings.len(), 6);
    }

    #[test]
    fn uniform_matrix_has_zero_kappa() {
        let r = compute_metrics(&cm([[7; 5]; 5])).unwrap();
        assert!(r.kappa.abs() < 1e-15);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(matches!(compute_metrics(&ConfusionMatrix::new()), Err(Error::Metrics(_))));
    }

    #[test]
    fn single_class_agreement_is_perfect() {
        let mut c = [[0; 5]; 5];
        c[2][2] = 9;
        assert_eq!(compute_metrics(&cm(c)).unwrap().kappa, 1.0);
    }
}
