//! Sleep-stage vocabulary and the value types shared by every pipeline stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of AASM classes after harmonization.
pub const NUM_STAGES: usize = 5;

/// One of the five AASM sleep stages, encoded 0..=4 in the order W, N1, N2, N3, REM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum StageLabel {
    W = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    Rem = 4,
}

impl StageLabel {
    pub const ALL: [StageLabel; NUM_STAGES] = [
        StageLabel::W,
        StageLabel::N1,
        StageLabel::N2,
        StageLabel::N3,
        StageLabel::Rem,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            StageLabel::W => "W",
            StageLabel::N1 => "N1",
            StageLabel::N2 => "N2",
            StageLabel::N3 => "N3",
            StageLabel::Rem => "REM",
        }
    }

    /// True for every stage except wake.
    pub fn is_sleep(self) -> bool {
        self != StageLabel::W
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "W" => Ok(StageLabel::W),
            "N1" => Ok(StageLabel::N1),
            "N2" => Ok(StageLabel::N2),
            "N3" => Ok(StageLabel::N3),
            "REM" | "R" => Ok(StageLabel::Rem),
            other => Err(Error::UnknownLabel {
                token: other.to_string(),
                source_name: "<stage name>".to_string(),
            }),
        }
    }
}

/// Result of mapping a dataset-native annotation onto the AASM vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Harmonized {
    Stage(StageLabel),
    /// Movement or unscored epochs; dropped during ingestion.
    Excluded,
}

/// Map a raw annotation token onto the five-class vocabulary.
///
/// Accepts the union of the SleepEDF/MASS EDF+ strings (`"Sleep stage 4"`),
/// short AASM names (`"N3"`, `"REM"`) and the R&K `S1..S4` spelling. `N4`/`S4`
/// merge into N3. Movement and unknown epochs come back as [`Harmonized::Excluded`].
/// `source_name` is only used to make the error point at the offending file.
pub fn harmonize_label(raw: &str, source_name: &str) -> Result<Harmonized> {
    use StageLabel::*;
    let token = raw.trim();
    let stage = match token {
        "Sleep stage W" | "W" | "Wake" => W,
        "Sleep stage 1" | "N1" | "S1" => N1,
        "Sleep stage 2" | "N2" | "S2" => N2,
        "Sleep stage 3" | "Sleep stage 4" | "N3" | "N4" | "S3" | "S4" => N3,
        "Sleep stage R" | "REM" | "R" => Rem,
        "Movement time" | "Sleep stage ?" | "MOVEMENT" | "UNKNOWN" | "?" | "MT" => {
            return Ok(Harmonized::Excluded)
        }
        _ => {
            return Err(Error::UnknownLabel {
                token: token.to_string(),
                source_name: source_name.to_string(),
            })
        }
    };
    Ok(Harmonized::Stage(stage))
}

/// One 30-s segment of raw signal with its stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEpoch {
    pub samples: Vec<f32>,
    pub label: StageLabel,
    pub subject_id: String,
    /// Index of the epoch within its night, before any trimming.
    pub position: usize,
}

/// `L` chronologically ordered epochs ending at the scored (target) epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub epochs: Vec<LabeledEpoch>,
    pub target_label: StageLabel,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn subject_id(&self) -> &str {
        &self.epochs[0].subject_id
    }

    pub fn target(&self) -> &LabeledEpoch {
        self.epochs.last().expect("sequence sample has at least one epoch")
    }
}

/// 5x5 confusion counts. Rows are predicted classes, columns are true classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_STAGES]; NUM_STAGES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; NUM_STAGES]; NUM_STAGES]) -> Self {
        Self { counts }
    }

    pub fn record(&mut self, predicted: StageLabel, truth: StageLabel) {
        self.counts[predicted.index()][truth.index()] += 1;
    }

    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (StageLabel, StageLabel)>,
    {
        let mut cm = Self::new();
        for (p, t) in pairs {
            cm.record(p, t);
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_STAGES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..NUM_STAGES {
            for j in 0..NUM_STAGES {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        for i in 0..NUM_STAGES {
            assert_eq!(StageLabel::from_index(i).unwrap().index(), i);
        }
        assert!(StageLabel::from_index(5).is_none());
    }

    #[test]
    fn n4_merges_into_n3() {
        assert_eq!(
            harmonize_label("Sleep stage 4", "x").unwrap(),
            Harmonized::Stage(StageLabel::N3)
        );
        assert_eq!(
            harmonize_label("Sleep stage W", "x").unwrap(),
            Harmonized::Stage(StageLabel::W)
        );
        assert_eq!(harmonize_label("Movement time", "x").unwrap(), Harmonized::Excluded);
        assert_eq!(harmonize_label("Sleep stage ?", "x").unwrap(), Harmonized::Excluded);
    }

    #[test]
    fn unknown_token_names_token_and_file() {
        let err = harmonize_label("Lights off", "SC4001EC-Hypnogram.edf").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Lights off"), "{msg}");
        assert!(msg.contains("SC4001EC-Hypnogram.edf"), "{msg}");
    }

    #[test]
    fn confusion_orientation_rows_predicted() {
        let cm = ConfusionMatrix::from_pairs([(StageLabel::N1, StageLabel::W)]);
        assert_eq!(cm.counts[1][0], 1);
        assert_eq!(cm.row_sum(1), 1);
        assert_eq!(cm.col_sum(0), 1);
        assert_eq!(cm.total(), 1);
    }
}
