//! Per-dataset file discovery and annotation parsing.
//!
//! Every adapter turns a sidecar into a list of [`Annotation`]s in seconds so
//! epoch boundaries are independent of the signal's native rate.

use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;

use super::edf::EdfFile;
use super::DatasetKind;
use crate::error::{Error, Result};

/// One scored interval of the hypnogram, in seconds from recording start.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub onset: f64,
    pub duration: f64,
    pub label: String,
}

/// Signal file plus its (optional) annotation sidecar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingFiles {
    pub signal: PathBuf,
    pub annotations: Option<PathBuf>,
    pub subject_id: String,
    pub recording_id: String,
}

pub trait AnnotationAdapter: Send + Sync {
    /// Does this file name look like a signal file of this dataset?
    fn is_signal_file(&self, name: &str) -> bool;

    /// Locate the sidecar and derive ids for one signal file.
    fn files_for(&self, signal: &Path) -> Result<RecordingFiles>;

    fn read_annotations(&self, path: &Path) -> Result<Vec<Annotation>>;

    /// All recordings in `dir`, sorted by recording id.
    fn discover(&self, dir: &Path) -> Result<Vec<RecordingFiles>> {
        let mut out = Vec::new();
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if path.is_file() && self.is_signal_file(name) {
                out.push(self.files_for(&path)?);
            }
        }
        out.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
        Ok(out)
    }
}

pub fn adapter_for(kind: DatasetKind) -> Box<dyn AnnotationAdapter> {
    match kind {
        DatasetKind::SleepEdf => Box::new(SleepEdfAdapter),
        DatasetKind::Mass => Box::new(MassAdapter),
        DatasetKind::Shhs => Box::new(ShhsAdapter),
        DatasetKind::Generic => Box::new(GenericAdapter),
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string()
}

fn edf_plus_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let f = EdfFile::open(path)?;
    Ok(f.annotations()?
        .into_iter()
        .map(|t| Annotation {
            onset: t.onset,
            duration: t.duration.unwrap_or(30.0),
            label: t.text,
        })
        .collect())
}

/// Sleep-EDF: `SC4ssN?0-PSG.edf` with `SC4ssN??-Hypnogram.edf`. Both nights
/// of a subject share the subject id `SC4ss` so splits never separate them.
pub struct SleepEdfAdapter;

impl AnnotationAdapter for SleepEdfAdapter {
    fn is_signal_file(&self, name: &str) -> bool {
        name.ends_with("-PSG.edf")
    }

    fn files_for(&self, signal: &Path) -> Result<RecordingFiles> {
        let name = file_name(signal);
        let stem = name.trim_end_matches("-PSG.edf");
        let key: String = stem.chars().take(7).collect();
        let dir = signal.parent().unwrap_or(Path::new("."));
        let mut hyp = None;
        if let Ok(entries) = fs::read_dir(dir) {
            let mut cands: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    let n = file_name(p);
                    n.starts_with(&key) && n.ends_with("-Hypnogram.edf")
                })
                .collect();
            cands.sort();
            hyp = cands.into_iter().next();
        }
        let subject_id = if stem.len() >= 5 { stem[..5].to_string() } else { stem.to_string() };
        Ok(RecordingFiles {
            signal: signal.to_path_buf(),
            annotations: hyp,
            subject_id,
            recording_id: stem.to_string(),
        })
    }

    fn read_annotations(&self, path: &Path) -> Result<Vec<Annotation>> {
        edf_plus_annotations(path)
    }
}

/// MASS: `<id> PSG.edf` with `<id> Base.edf` (EDF+ stage annotations).
pub struct MassAdapter;

impl AnnotationAdapter for MassAdapter {
    fn is_signal_file(&self, name: &str) -> bool {
        name.ends_with(" PSG.edf")
    }

    fn files_for(&self, signal: &Path) -> Result<RecordingFiles> {
        let name = file_name(signal);
        let id = name.trim_end_matches(" PSG.edf").to_string();
        let base = signal.with_file_name(format!("{id} Base.edf"));
        Ok(RecordingFiles {
            signal: signal.to_path_buf(),
            annotations: base.exists().then_some(base),
            subject_id: id.clone(),
            recording_id: id,
        })
    }

    fn read_annotations(&self, path: &Path) -> Result<Vec<Annotation>> {
        // Base files also carry non-stage events; keep only stage entries.
        Ok(edf_plus_annotations(path)?
            .into_iter()
            .filter(|a| a.label.starts_with("Sleep stage"))
            .collect())
    }
}

/// SHHS: `shhs1-NNNNNN.edf` with `shhs1-NNNNNN-profusion.xml`, looked up next
/// to the signal or in a sibling `annotations/` directory.
pub struct ShhsAdapter;

/// Profusion integer codes to vocabulary tokens understood by `harmonize_label`.
fn profusion_token(code: &str) -> String {
    match code {
        "0" => "W",
        "1" => "N1",
        "2" => "N2",
        "3" => "N3",
        "4" => "N4",
        "5" => "REM",
        "6" => "MT",
        "9" => "?",
        other => other,
    }
    .to_string()
}

impl AnnotationAdapter for ShhsAdapter {
    fn is_signal_file(&self, name: &str) -> bool {
        name.ends_with(".edf")
    }

    fn files_for(&self, signal: &Path) -> Result<RecordingFiles> {
        let name = file_name(signal);
        let id = name.trim_end_matches(".edf").to_string();
        let xml = format!("{id}-profusion.xml");
        let dir = signal.parent().unwrap_or(Path::new("."));
        let annotations = [dir.join(&xml), dir.join("annotations").join(&xml)]
            .into_iter()
            .find(|p| p.exists());
        Ok(RecordingFiles {
            signal: signal.to_path_buf(),
            annotations,
            subject_id: id.clone(),
            recording_id: id,
        })
    }

    fn read_annotations(&self, path: &Path) -> Result<Vec<Annotation>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let source_name = path.display().to_string();
        let len_re = Regex::new(r"<EpochLength>\s*([0-9.]+)\s*</EpochLength>").unwrap();
        let epoch_len: f64 = match len_re.captures(&text) {
            Some(c) => c[1].parse().map_err(|_| Error::BadAnnotation {
                source_name: source_name.clone(),
                reason: format!("bad EpochLength {:?}", &c[1]),
            })?,
            None => 30.0,
        };
        let stages_re = Regex::new(r"(?s)<SleepStages>(.*?)</SleepStages>").unwrap();
        let block = stages_re.captures(&text).ok_or_else(|| Error::BadAnnotation {
            source_name: source_name.clone(),
            reason: "no <SleepStages> element".into(),
        })?;
        let stage_re = Regex::new(r"<SleepStage>\s*([^<]*?)\s*</SleepStage>").unwrap();
        Ok(stage_re
            .captures_iter(&block[1])
            .enumerate()
            .map(|(i, c)| Annotation {
                onset: i as f64 * epoch_len,
                duration: epoch_len,
                label: profusion_token(&c[1]),
            })
            .collect())
    }
}

/// Any EDF with a `<name>.stages.txt` sidecar. Each non-comment line is
/// either a bare label (consecutive 30-s epochs from t=0) or
/// `onset_seconds,duration_seconds,label`.
pub struct GenericAdapter;

impl AnnotationAdapter for GenericAdapter {
    fn is_signal_file(&self, name: &str) -> bool {
        name.ends_with(".edf")
    }

    fn files_for(&self, signal: &Path) -> Result<RecordingFiles> {
        let name = file_name(signal);
        let id = name.trim_end_matches(".edf").to_string();
        let side = signal.with_file_name(format!("{id}.stages.txt"));
        Ok(RecordingFiles {
            signal: signal.to_path_buf(),
            annotations: side.exists().then_some(side),
            subject_id: id.clone(),
            recording_id: id,
        })
    }

    fn read_annotations(&self, path: &Path) -> Result<Vec<Annotation>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        let mut next_onset = 0.0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| Error::BadAnnotation {
                source_name: format!("{}:{}", path.display(), lineno + 1),
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let a = match fields.as_slice() {
                [label] => Annotation {
                    onset: next_onset,
                    duration: 30.0,
                    label: label.to_string(),
                },
                [onset, duration, label] => Annotation {
                    onset: onset.parse().map_err(|_| bad("bad onset"))?,
                    duration: duration.parse().map_err(|_| bad("bad duration"))?,
                    label: label.to_string(),
                },
                _ => return Err(bad("expected `label` or `onset,duration,label`")),
            };
            next_onset = a.onset + a.duration;
            out.push(a);
        }
        Ok(out)
    }
}
