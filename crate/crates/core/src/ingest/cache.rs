//! Binary cache of ingested nights. Layout is documented in `docs/cache-format.md`.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{DatasetConfig, Night, RecordingFiles};
use crate::error::{Error, Result};
use crate::stage::{LabeledEpoch, StageLabel};

pub const MAGIC: &[u8; 8] = b"IITNETC\0";
pub const VERSION: u8 = 1;
pub const EXTENSION: &str = "iitc";

/// Content hash of the input files plus every config field that changes the
/// extracted epochs. Sequence length is deliberately not part of the key.
pub fn cache_key(files: &RecordingFiles, config: &DatasetConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update([VERSION]);
    for p in std::iter::once(&files.signal).chain(files.annotations.as_ref()) {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    let fingerprint = format!(
        "{}|{}|{}|{}|{}|{}|{}",
        config.dataset_kind, config.channel, config.sample_rate, config.trim_wake, config.wake_trim_epochs,
        files.subject_id, files.recording_id
    );
    h.update(fingerprint.as_bytes());
    Ok(hex::encode(&h.finalize()[..16]))
}

pub fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.{EXTENSION}"))
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u16).to_le_bytes());
    out.extend(s.as_bytes());
}

pub fn encode_night(night: &Night) -> Vec<u8> {
    let n = night.epochs.first().map_or(0, |e| e.samples.len());
    let mut out = Vec::with_capacity(64 + night.epochs.len() * (5 + 4 * n));
    out.extend(MAGIC);
    out.push(VERSION);
    out.extend(night.sample_rate.to_le_bytes());
    out.extend((n as u32).to_le_bytes());
    put_str(&mut out, &night.subject_id);
    put_str(&mut out, &night.recording_id);
    out.extend((night.epochs.len() as u32).to_le_bytes());
    for e in &night.epochs {
        out.extend((e.position as u32).to_le_bytes());
        out.push(e.label.index() as u8);
        for v in &e.samples {
            out.extend(v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend(digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Cache {
                path: self.path.to_path_buf(),
                reason: format!("unexpected end of file at byte {}", self.at),
            });
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Cache {
            path: self.path.to_path_buf(),
            reason: "id is not UTF-8".into(),
        })
    }
}

pub fn decode_night(buf: &[u8], path: &Path) -> Result<Night> {
    let bad = |reason: String| Error::Cache {
        path: path.to_path_buf(),
        reason,
    };
    if buf.len() < MAGIC.len() + 1 + 32 || &buf[..8] != MAGIC {
        return Err(bad("not an iitnet cache file".into()));
    }
    if buf[8] != VERSION {
        return Err(bad(format!("format version {} (this build reads {VERSION})", buf[8])));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, at: 9, path };
    let sample_rate = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let n = r.u32()? as usize;
    let subject_id = r.string()?;
    let recording_id = r.string()?;
    let count = r.u32()? as usize;
    let mut epochs = Vec::with_capacity(count);
    for _ in 0..count {
        let position = r.u32()? as usize;
        let label = StageLabel::from_index(r.take(1)?[0] as usize).ok_or_else(|| bad("label out of range".into()))?;
        let samples = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        epochs.push(LabeledEpoch {
            samples,
            label,
            subject_id: subject_id.clone(),
            position,
        });
    }
    if r.at != body.len() {
        return Err(bad(format!("{} trailing bytes", body.len() - r.at)));
    }
    Ok(Night {
        subject_id,
        recording_id,
        sample_rate,
        epochs,
    })
}

pub fn write_night(path: &Path, night: &Night) -> Result<()> {
    // write-then-rename so a crashed run never leaves a half-written entry
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_night(night)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_night(path: &Path) -> Result<Night> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_night(&buf, path)
}

/// Every cached night in `dir`, sorted by recording id.
pub fn read_dir(dir: &Path) -> Result<Vec<Night>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().and_then(|e| e.to_str()) == Some(EXTENSION) {
            out.push(read_night(&p)?);
        }
    }
    out.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
    Ok(out)
}
