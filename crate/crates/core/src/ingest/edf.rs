//! EDF / EDF+ reader and writer.
//!
//! Layout: a 256-byte ASCII main header, then 256 bytes per signal (fields
//! stored column-wise: all labels, then all transducers, ...), then the data
//! records. Each record holds `samples_per_record[i]` 16-bit little-endian
//! two's-complement integers for every signal in turn. Physical values are
//! `(d - dig_min) * (phys_max - phys_min) / (dig_max - dig_min) + phys_min`.
//! EDF+ annotation signals (`"EDF Annotations"`) carry TALs instead of samples.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

impl SignalHeader {
    pub fn is_annotation(&self) -> bool {
        self.label.trim() == ANNOTATION_LABEL
    }

    fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        (digital as f64 - self.digital_min as f64) * self.gain() + self.physical_min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: usize,
    pub reserved: String,
    pub num_records: usize,
    pub record_duration: f64,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    pub fn is_edf_plus(&self) -> bool {
        self.reserved.starts_with("EDF+")
    }

    pub fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }

    pub fn sample_rate(&self, signal: usize) -> f64 {
        self.signals[signal].samples_per_record as f64 / self.record_duration
    }

    pub fn labels(&self) -> Vec<String> {
        self.signals.iter().map(|s| s.label.trim().to_string()).collect()
    }

    pub fn find_signal(&self, label: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.label.trim() == label.trim())
    }
}

/// A parsed EDF file held in memory.
#[derive(Debug, Clone)]
pub struct EdfFile {
    pub path: PathBuf,
    pub header: EdfHeader,
    data: Vec<u8>,
}

/// One time-stamped annotation list entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Tal {
    pub onset: f64,
    pub duration: Option<f64>,
    pub text: String,
}

fn field(bytes: &[u8], path: &Path, name: &str) -> Result<String> {
    std::str::from_utf8(bytes)
        .map(|s| s.trim().to_string())
        .map_err(|_| Error::BadHeader {
            path: path.to_path_buf(),
            reason: format!("{name} is not ASCII"),
        })
}

fn num<T: std::str::FromStr>(bytes: &[u8], path: &Path, name: &str) -> Result<T> {
    let s = field(bytes, path, name)?;
    s.parse().map_err(|_| Error::BadHeader {
        path: path.to_path_buf(),
        reason: format!("{name} {s:?} is not a number"),
    })
}

impl EdfFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, bytes)
    }

    pub fn from_bytes(path: &Path, bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() < 256 {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: 256,
                actual: bytes.len() as u64,
            });
        }
        let h = &bytes[..256];
        let num_signals: usize = num(&h[252..256], path, "number of signals")?;
        let header_bytes: usize = num(&h[184..192], path, "header size")?;
        let expected_header = 256 * (num_signals + 1);
        if header_bytes != expected_header {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                reason: format!("header size {header_bytes} does not match {num_signals} signals ({expected_header})"),
            });
        }
        if bytes.len() < header_bytes {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: header_bytes as u64,
                actual: bytes.len() as u64,
            });
        }
        let raw_records: i64 = num(&h[236..244], path, "number of records")?;
        let record_duration: f64 = num(&h[244..252], path, "record duration")?;
        if !(record_duration > 0.0) {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                reason: format!("record duration {record_duration} must be positive"),
            });
        }

        let sh = &bytes[256..header_bytes];
        let ns = num_signals;
        // Column-wise: field k of signal i sits at offset(k) * ns + i * width(k).
        let widths = [16usize, 80, 8, 8, 8, 8, 8, 80, 8, 32];
        let mut offsets = [0usize; 10];
        for k in 1..10 {
            offsets[k] = offsets[k - 1] + widths[k - 1] * ns;
        }
        let get = |k: usize, i: usize| &sh[offsets[k] + i * widths[k]..offsets[k] + (i + 1) * widths[k]];
        let mut signals = Vec::with_capacity(ns);
        for i in 0..ns {
            let s = SignalHeader {
                label: field(get(0, i), path, "label")?,
                transducer: field(get(1, i), path, "transducer")?,
                physical_dimension: field(get(2, i), path, "physical dimension")?,
                physical_min: num(get(3, i), path, "physical minimum")?,
                physical_max: num(get(4, i), path, "physical maximum")?,
                digital_min: num(get(5, i), path, "digital minimum")?,
                digital_max: num(get(6, i), path, "digital maximum")?,
                prefiltering: field(get(7, i), path, "prefiltering")?,
                samples_per_record: num(get(8, i), path, "samples per record")?,
            };
            if s.digital_max <= s.digital_min {
                return Err(Error::BadHeader {
                    path: path.to_path_buf(),
                    reason: format!("signal {:?} has digital max <= digital min", s.label),
                });
            }
            signals.push(s);
        }

        let record_bytes: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
        let data_len = bytes.len() - header_bytes;
        let num_records = if raw_records < 0 {
            if record_bytes == 0 || data_len % record_bytes != 0 {
                return Err(Error::SampleCountMismatch {
                    path: path.to_path_buf(),
                    expected: record_bytes as u64,
                    actual: data_len as u64,
                });
            }
            data_len / record_bytes
        } else {
            raw_records as usize
        };
        let expected = (num_records * record_bytes) as u64;
        if (data_len as u64) < expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: header_bytes as u64 + expected,
                actual: bytes.len() as u64,
            });
        }
        if data_len as u64 != expected {
            return Err(Error::SampleCountMismatch {
                path: path.to_path_buf(),
                expected,
                actual: data_len as u64,
            });
        }

        let header = EdfHeader {
            version: field(&h[0..8], path, "version")?,
            patient: field(&h[8..88], path, "patient")?,
            recording: field(&h[88..168], path, "recording")?,
            start_date: field(&h[168..176], path, "start date")?,
            start_time: field(&h[176..184], path, "start time")?,
            header_bytes,
            reserved: field(&h[192..236], path, "reserved")?,
            num_records,
            record_duration,
            signals,
        };
        let data = bytes[header_bytes..].to_vec();
        Ok(Self {
            path: path.to_path_buf(),
            header,
            data,
        })
    }

    fn signal_offset(&self, signal: usize) -> usize {
        self.header.signals[..signal]
            .iter()
            .map(|s| s.samples_per_record * 2)
            .sum()
    }

    /// Raw digital samples of one signal across all records.
    pub fn digital(&self, signal: usize) -> Vec<i16> {
        let spr = self.header.signals[signal].samples_per_record;
        let rb = self.header.record_bytes();
        let off = self.signal_offset(signal);
        let mut out = Vec::with_capacity(spr * self.header.num_records);
        for r in 0..self.header.num_records {
            let start = r * rb + off;
            out.extend(
                self.data[start..start + spr * 2]
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]])),
            );
        }
        out
    }

    pub fn physical(&self, signal: usize) -> Vec<f64> {
        let sh = &self.header.signals[signal];
        self.digital(signal).into_iter().map(|d| sh.to_physical(d)).collect()
    }

    /// Physical samples of the signal labelled `channel`.
    pub fn channel(&self, channel: &str) -> Result<(Vec<f64>, f64)> {
        let idx = self.header.find_signal(channel).ok_or_else(|| Error::MissingChannel {
            channel: channel.to_string(),
            path: self.path.clone(),
            available: self.header.labels(),
        })?;
        Ok((self.physical(idx), self.header.sample_rate(idx)))
    }

    /// All TALs from every EDF+ annotation signal, with record time-keeping entries skipped.
    pub fn annotations(&self) -> Result<Vec<Tal>> {
        let mut out = Vec::new();
        let rb = self.header.record_bytes();
        for (i, s) in self.header.signals.iter().enumerate() {
            if !s.is_annotation() {
                continue;
            }
            let off = self.signal_offset(i);
            for r in 0..self.header.num_records {
                let start = r * rb + off;
                let raw = &self.data[start..start + s.samples_per_record * 2];
                out.extend(parse_tals(raw, &self.path)?);
            }
        }
        Ok(out)
    }
}

/// Parse the TALs of one annotation-signal record.
pub fn parse_tals(raw: &[u8], path: &Path) -> Result<Vec<Tal>> {
    let bad = |reason: String| Error::BadAnnotation {
        source_name: path.display().to_string(),
        reason,
    };
    let mut out = Vec::new();
    for tal in raw.split(|&b| b == 0) {
        if tal.is_empty() {
            continue;
        }
        let mut parts = tal.split(|&b| b == 0x14);
        let stamp = parts.next().unwrap_or_default();
        let stamp = std::str::from_utf8(stamp).map_err(|_| bad("non-ASCII onset".into()))?;
        let (onset, duration) = match stamp.split_once('\u{15}') {
            Some((o, d)) => (o, Some(d)),
            None => (stamp, None),
        };
        let onset: f64 = onset
            .trim_start_matches('+')
            .parse()
            .map_err(|_| bad(format!("bad onset {onset:?}")))?;
        let duration = match duration {
            Some(d) if !d.is_empty() => Some(d.parse::<f64>().map_err(|_| bad(format!("bad duration {d:?}")))?),
            _ => None,
        };
        for text in parts {
            if text.is_empty() {
                continue;
            }
            let text = String::from_utf8_lossy(text).trim().to_string();
            out.push(Tal { onset, duration, text });
        }
    }
    Ok(out)
}

/// Signal description for [`write_edf`].
#[derive(Debug, Clone)]
pub struct WriteSignal {
    pub label: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i16,
    pub digital_max: i16,
    pub samples_per_record: usize,
    pub samples: WriteSamples,
}

#[derive(Debug, Clone)]
pub enum WriteSamples {
    Physical(Vec<f64>),
    /// One list of TALs per record (the record time-keeping TAL is added automatically).
    Annotations(Vec<Vec<Tal>>),
}

fn pad(s: &str, width: usize) -> Vec<u8> {
    let mut b: Vec<u8> = s.bytes().take(width).collect();
    b.resize(width, b' ');
    b
}

fn fmt_num(v: f64, width: usize) -> String {
    let s = format!("{v}");
    if s.len() <= width {
        return s;
    }
    let s = format!("{v:.*}", width.saturating_sub(2));
    s[..width].trim_end_matches('.').to_string()
}

fn encode_tal(t: &Tal) -> Vec<u8> {
    let mut b = format!("{}{}", if t.onset >= 0.0 { "+" } else { "" }, t.onset).into_bytes();
    if let Some(d) = t.duration {
        b.push(0x15);
        b.extend(format!("{d}").bytes());
    }
    b.push(0x14);
    b.extend(t.text.bytes());
    b.push(0x14);
    b.push(0);
    b
}

/// Serialize an EDF (or EDF+C when an annotation signal is present) file.
pub fn write_edf(path: impl AsRef<Path>, record_duration: f64, signals: &[WriteSignal]) -> Result<()> {
    let path = path.as_ref();
    let ns = signals.len();
    let num_records = signals
        .iter()
        .map(|s| match &s.samples {
            WriteSamples::Physical(v) => v.len().div_ceil(s.samples_per_record),
            WriteSamples::Annotations(r) => r.len(),
        })
        .max()
        .unwrap_or(0);
    let plus = signals.iter().any(|s| matches!(s.samples, WriteSamples::Annotations(_)));
    let mut out = Vec::new();
    out.extend(pad("0", 8));
    out.extend(pad("X X X X", 80));
    out.extend(pad("Startdate X X X X", 80));
    out.extend(pad("01.01.85", 8));
    out.extend(pad("00.00.00", 8));
    out.extend(pad(&(256 * (ns + 1)).to_string(), 8));
    out.extend(pad(if plus { "EDF+C" } else { "" }, 44));
    out.extend(pad(&num_records.to_string(), 8));
    out.extend(pad(&fmt_num(record_duration, 8), 8));
    out.extend(pad(&ns.to_string(), 4));
    let cols: [(usize, Box<dyn Fn(&WriteSignal) -> String>); 10] = [
        (16, Box::new(|s| s.label.clone())),
        (80, Box::new(|_| String::new())),
        (8, Box::new(|s| s.physical_dimension.clone())),
        (8, Box::new(|s| fmt_num(s.physical_min, 8))),
        (8, Box::new(|s| fmt_num(s.physical_max, 8))),
        (8, Box::new(|s| s.digital_min.to_string())),
        (8, Box::new(|s| s.digital_max.to_string())),
        (80, Box::new(|_| String::new())),
        (8, Box::new(|s| s.samples_per_record.to_string())),
        (32, Box::new(|_| String::new())),
    ];
    for (w, f) in &cols {
        for s in signals {
            out.extend(pad(&f(s), *w));
        }
    }
    for r in 0..num_records {
        for s in signals {
            let spr = s.samples_per_record;
            match &s.samples {
                WriteSamples::Physical(v) => {
                    let gain = (s.physical_max - s.physical_min) / (s.digital_max as f64 - s.digital_min as f64);
                    for k in 0..spr {
                        let p = v.get(r * spr + k).copied().unwrap_or(s.physical_min);
                        let d = ((p - s.physical_min) / gain + s.digital_min as f64)
                            .round()
                            .clamp(s.digital_min as f64, s.digital_max as f64) as i16;
                        out.extend(d.to_le_bytes());
                    }
                }
                WriteSamples::Annotations(recs) => {
                    let mut b = encode_tal(&Tal {
                        onset: r as f64 * record_duration,
                        duration: None,
                        text: String::new(),
                    });
                    for t in recs.get(r).map(Vec::as_slice).unwrap_or_default() {
                        b.extend(encode_tal(t));
                    }
                    if b.len() > spr * 2 {
                        return Err(Error::BadAnnotation {
                            source_name: path.display().to_string(),
                            reason: format!("record {r} annotations need {} bytes, signal holds {}", b.len(), spr * 2),
                        });
                    }
                    b.resize(spr * 2, 0);
                    out.extend(b);
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
