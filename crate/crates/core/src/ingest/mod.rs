//! Recording ingestion: EDF parsing, annotation adapters, epoch extraction
//! with the wake-trimming / merge / exclusion rules, and sequence windows.

pub mod adapters;
pub mod cache;
pub mod edf;
pub mod resample;
mod windows;

pub use adapters::{adapter_for, Annotation, AnnotationAdapter, RecordingFiles};
pub use windows::{make_sequences, window_indices, WindowedSet};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stage::{harmonize_label, Harmonized, LabeledEpoch, StageLabel, NUM_STAGES};

pub const EPOCH_SECONDS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    SleepEdf,
    Mass,
    Shhs,
    Generic,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::SleepEdf => "sleepedf",
            DatasetKind::Mass => "mass",
            DatasetKind::Shhs => "shhs",
            DatasetKind::Generic => "generic",
        }
    }

    pub fn default_channel(self) -> &'static str {
        match self {
            DatasetKind::SleepEdf => "EEG Fpz-Cz",
            // F4 referenced to the left EOG, as a bipolar derivation
            DatasetKind::Mass => "EEG F4-CLE - EOG Left Horiz",
            DatasetKind::Shhs => "EEG",
            DatasetKind::Generic => "EEG",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sleepedf" | "sleep-edf" => Ok(DatasetKind::SleepEdf),
            "mass" => Ok(DatasetKind::Mass),
            "shhs" => Ok(DatasetKind::Shhs),
            "generic" => Ok(DatasetKind::Generic),
            other => Err(Error::Config(format!(
                "unknown dataset {other:?} (expected sleepedf, mass, shhs or generic)"
            ))),
        }
    }
}

/// How the first `L-1` targets of a night get their missing context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Left-pad by repeating the night's first epoch; every epoch is scored.
    #[default]
    RepeatFirst,
    /// Only score targets with a full window of real predecessors.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub dataset_kind: DatasetKind,
    /// Signal label, or `"A - B"` for a bipolar derivation of two signals.
    pub channel: String,
    pub sample_rate: f64,
    pub wake_trim_epochs: usize,
    /// Apply wake trimming. Defaults to true only for Sleep-EDF.
    pub trim_wake: bool,
    pub seq_len: usize,
    #[serde(default)]
    pub padding: Padding,
}

impl DatasetConfig {
    pub fn for_kind(kind: DatasetKind) -> Self {
        Self {
            dataset_kind: kind,
            channel: kind.default_channel().to_string(),
            sample_rate: 100.0,
            wake_trim_epochs: 60,
            trim_wake: kind == DatasetKind::SleepEdf,
            seq_len: 1,
            padding: Padding::RepeatFirst,
        }
    }

    pub fn samples_per_epoch(&self) -> usize {
        (self.sample_rate * EPOCH_SECONDS).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=10).contains(&self.seq_len) {
            return Err(Error::Config(format!("sequence length {} outside 1..=10", self.seq_len)));
        }
        let n = self.sample_rate * EPOCH_SECONDS;
        if !(self.sample_rate > 0.0) || (n - n.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "sample rate {} Hz does not give a whole number of samples per 30-s epoch",
                self.sample_rate
            )));
        }
        Ok(())
    }
}

/// One subject-night of continuous signal at its native rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub signal: Vec<f32>,
    pub sample_rate: f64,
    pub channel_name: String,
    pub subject_id: String,
    pub recording_id: String,
    /// `(start_index, raw_label)` per 30-s epoch, start in native samples.
    pub epoch_annotations: Vec<(usize, String)>,
}

/// The retained epochs of one recording, in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct Night {
    pub subject_id: String,
    pub recording_id: String,
    pub sample_rate: f64,
    pub epochs: Vec<LabeledEpoch>,
}

impl Night {
    pub fn class_counts(&self) -> [u64; NUM_STAGES] {
        let mut c = [0; NUM_STAGES];
        for e in &self.epochs {
            c[e.label.index()] += 1;
        }
        c
    }

    pub fn labels(&self) -> Vec<StageLabel> {
        self.epochs.iter().map(|e| e.label).collect()
    }
}

fn read_channel(edf: &edf::EdfFile, channel: &str) -> Result<(Vec<f64>, f64)> {
    if edf.header.find_signal(channel).is_none() {
        if let Some((a, b)) = channel.split_once(" - ") {
            let (x, ra) = edf.channel(a)?;
            let (y, rb) = edf.channel(b)?;
            if ra != rb {
                return Err(Error::Config(format!(
                    "cannot derive {channel:?}: {a} is {ra} Hz but {b} is {rb} Hz"
                )));
            }
            return Ok((x.iter().zip(&y).map(|(p, q)| p - q).collect(), ra));
        }
    }
    edf.channel(channel)
}

/// Expand interval annotations into one entry per 30-s epoch.
pub fn expand_annotations(anns: &[Annotation], sample_rate: f64, source_name: &str) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for a in anns {
        let n = a.duration / EPOCH_SECONDS;
        let whole = (n - n.round()).abs() < 1e-6;
        let count = if whole {
            n.round() as usize
        } else if harmonize_label(&a.label, source_name)? == Harmonized::Excluded {
            // dropped anyway; keep the whole epochs it covers
            n.floor() as usize
        } else {
            return Err(Error::EpochDuration {
                seconds: a.duration,
                source_name: source_name.to_string(),
            });
        };
        for k in 0..count {
            let t = a.onset + k as f64 * EPOCH_SECONDS;
            out.push(((t * sample_rate).round().max(0.0) as usize, a.label.clone()));
        }
    }
    Ok(out)
}

/// Read one signal file and its sidecar (located by the dataset adapter).
pub fn read_recording(path: impl AsRef<Path>, config: &DatasetConfig) -> Result<RawRecording> {
    let files = adapter_for(config.dataset_kind).files_for(path.as_ref())?;
    read_recording_files(&files, config)
}

pub fn read_recording_files(files: &RecordingFiles, config: &DatasetConfig) -> Result<RawRecording> {
    let edf = edf::EdfFile::open(&files.signal)?;
    let (signal, sample_rate) = read_channel(&edf, &config.channel)?;
    let epoch_annotations = match &files.annotations {
        Some(p) => {
            let anns = adapter_for(config.dataset_kind).read_annotations(p)?;
            expand_annotations(&anns, sample_rate, &p.display().to_string())?
        }
        None => Vec::new(),
    };
    Ok(RawRecording {
        signal: signal.into_iter().map(|v| v as f32).collect(),
        sample_rate,
        channel_name: config.channel.clone(),
        subject_id: files.subject_id.clone(),
        recording_id: files.recording_id.clone(),
        epoch_annotations,
    })
}

/// Harmonize, bounds-check, trim and filter the annotated epochs.
///
/// Signals at a rate other than `config.sample_rate` are resampled first.
/// Excluded epochs that run past the end of the signal are dropped silently
/// (unscored tails are common); a scored epoch past the end is an error.
pub fn extract_epochs(rec: &RawRecording, config: &DatasetConfig) -> Result<Vec<LabeledEpoch>> {
    config.validate()?;
    let n = config.samples_per_epoch();
    let same_rate = (rec.sample_rate - config.sample_rate).abs() < 1e-9;
    let resampled;
    let signal: &[f32] = if same_rate {
        &rec.signal
    } else {
        resampled = resample::resample(&rec.signal, rec.sample_rate, config.sample_rate)?;
        &resampled
    };
    let scale = config.sample_rate / rec.sample_rate;

    let mut kept: Vec<(usize, usize, Harmonized)> = Vec::with_capacity(rec.epoch_annotations.len());
    for (i, (start, raw)) in rec.epoch_annotations.iter().enumerate() {
        let h = harmonize_label(raw, &rec.recording_id)?;
        let start = if same_rate { *start } else { (*start as f64 * scale).round() as usize };
        let end = start + n;
        if end > signal.len() {
            if h == Harmonized::Excluded {
                continue;
            }
            return Err(Error::AnnotationPastEnd {
                epoch_index: i,
                end,
                signal_len: signal.len(),
            });
        }
        kept.push((i, start, h));
    }

    let (lo, hi) = if config.trim_wake {
        trim_bounds(kept.iter().map(|(i, _, h)| (*i, *h)), config.wake_trim_epochs)
    } else {
        (0, usize::MAX)
    };

    Ok(kept
        .into_iter()
        .filter(|(i, _, _)| (lo..=hi).contains(i))
        .filter_map(|(i, start, h)| match h {
            Harmonized::Stage(label) => Some(LabeledEpoch {
                samples: signal[start..start + n].to_vec(),
                label,
                subject_id: rec.subject_id.clone(),
                position: i,
            }),
            Harmonized::Excluded => None,
        })
        .collect())
}

/// Inclusive epoch-index window kept by wake trimming. Nights without any
/// sleep epoch are kept whole.
pub fn trim_bounds(labels: impl Iterator<Item = (usize, Harmonized)>, trim: usize) -> (usize, usize) {
    let mut first = None;
    let mut last = None;
    for (i, h) in labels {
        if let Harmonized::Stage(s) = h {
            if s.is_sleep() {
                first.get_or_insert(i);
                last = Some(i);
            }
        }
    }
    match (first, last) {
        (Some(f), Some(l)) => (f.saturating_sub(trim), l.saturating_add(trim)),
        _ => (0, usize::MAX),
    }
}

pub fn to_night(rec: &RawRecording, config: &DatasetConfig) -> Result<Night> {
    Ok(Night {
        subject_id: rec.subject_id.clone(),
        recording_id: rec.recording_id.clone(),
        sample_rate: config.sample_rate,
        epochs: extract_epochs(rec, config)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

/// Result of ingesting a dataset directory.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub nights: Vec<Night>,
    pub skipped: Vec<SkippedFile>,
    pub cache_hits: usize,
}

impl IngestReport {
    pub fn class_counts(&self) -> [u64; NUM_STAGES] {
        let mut c = [0; NUM_STAGES];
        for n in &self.nights {
            for (a, b) in c.iter_mut().zip(n.class_counts()) {
                *a += b;
            }
        }
        c
    }

    pub fn total_epochs(&self) -> u64 {
        self.class_counts().iter().sum()
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.nights.iter().map(|n| n.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    /// Nights grouped by subject id.
    pub fn by_subject(&self) -> BTreeMap<String, Vec<&Night>> {
        let mut m: BTreeMap<String, Vec<&Night>> = BTreeMap::new();
        for n in &self.nights {
            m.entry(n.subject_id.clone()).or_default().push(n);
        }
        m
    }
}

/// Ingest every labelled recording in `dir` in parallel.
///
/// With `cache_dir`, nights are read from / written to the binary cache keyed
/// by the content hash of the input files and the configuration. With
/// `skip_bad`, unreadable recordings are listed in the report instead of
/// aborting the run.
pub fn ingest_dir(dir: &Path, config: &DatasetConfig, cache_dir: Option<&Path>, skip_bad: bool) -> Result<IngestReport> {
    config.validate()?;
    let adapter = adapter_for(config.dataset_kind);
    let files: Vec<RecordingFiles> = adapter
        .discover(dir)?
        .into_iter()
        .filter(|f| f.annotations.is_some())
        .collect();
    if files.is_empty() {
        return Err(Error::NoRecordings { dir: dir.to_path_buf() });
    }
    let results: Vec<(RecordingFiles, Result<(Night, bool)>)> = files
        .into_par_iter()
        .map(|f| {
            let r = ingest_one(&f, config, cache_dir);
            (f, r)
        })
        .collect();
    let mut report = IngestReport {
        nights: Vec::new(),
        skipped: Vec::new(),
        cache_hits: 0,
    };
    for (f, r) in results {
        match r {
            Ok((night, hit)) => {
                report.cache_hits += hit as usize;
                report.nights.push(night);
            }
            Err(e) if skip_bad && e.is_data_error() => {
                log::warn!("skipping {}: {e}", f.signal.display());
                report.skipped.push(SkippedFile {
                    path: f.signal.clone(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

fn ingest_one(files: &RecordingFiles, config: &DatasetConfig, cache_dir: Option<&Path>) -> Result<(Night, bool)> {
    let key = match cache_dir {
        Some(_) => Some(cache::cache_key(files, config)?),
        None => None,
    };
    if let (Some(dir), Some(key)) = (cache_dir, &key) {
        let p = cache::cache_path(dir, key);
        if p.exists() {
            return Ok((cache::read_night(&p)?, true));
        }
    }
    let rec = read_recording_files(files, config)?;
    let night = to_night(&rec, config)?;
    if let (Some(dir), Some(key)) = (cache_dir, &key) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        cache::write_night(&cache::cache_path(dir, key), &night)?;
    }
    Ok((night, false))
}
