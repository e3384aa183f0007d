//! Versioned named-tensor checkpoint container.
//!
//! ```text
//! magic  "IITNETK\0"            8 bytes
//! version                        u32 LE
//! header_len                     u64 LE
//! header                         JSON, header_len bytes
//! tensor data                    raw little-endian values, concatenated
//! ```
//! The header lists each tensor's name, group (`param`, `adam_m`, `adam_v`),
//! shape and byte offset into the data section.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::model::{AnyModel, ModelSpec};
use crate::nn::{AdamState, Module, Real};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"IITNETK\0";

/// Every parameter and buffer of `model`, in visiting order.
pub fn named_values<F: Real, M: Module<F> + ?Sized>(model: &M) -> Vec<(String, ArrayD<F>)> {
    let mut out = Vec::new();
    model.visit("", &mut |name, p| out.push((name.to_string(), p.value.clone())));
    out
}

/// Overwrite `model`'s tensors from `values`; names and shapes must match exactly.
pub fn load_named<F: Real, M: Module<F> + ?Sized>(model: &mut M, values: &[(String, ArrayD<F>)]) -> Result<()> {
    let map: BTreeMap<&str, &ArrayD<F>> = values.iter().map(|(n, v)| (n.as_str(), v)).collect();
    let mut err = None;
    let mut seen = 0;
    model.visit_mut("", &mut |name, p| match map.get(name) {
        Some(v) if v.shape() == p.value.shape() => {
            p.value.assign(*v);
            seen += 1;
        }
        Some(v) => {
            err.get_or_insert(format!("{name}: shape {:?} vs model {:?}", v.shape(), p.value.shape()));
        }
        None => {
            err.get_or_insert(format!("{name}: missing from checkpoint"));
        }
    });
    if let Some(e) = err {
        return Err(Error::Checkpoint(e));
    }
    if seen != values.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model uses {seen}",
            values.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Checkpoint<F: Real> {
    pub model: ModelSpec,
    pub train_config: TrainConfig,
    pub best_validation_accuracy: f64,
    pub step: u64,
    pub pass: usize,
    pub params: Vec<(String, ArrayD<F>)>,
    pub optimizer: AdamState<F>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    model: ModelSpec,
    train_config: TrainConfig,
    best_validation_accuracy: f64,
    step: u64,
    pass: usize,
    optimizer_step: u64,
    tensors: Vec<TensorEntry>,
}

impl<F: Real> Checkpoint<F> {
    pub fn from_outcome(model: ModelSpec, train_config: TrainConfig, outcome: &TrainOutcome<F>) -> Self {
        let b = &outcome.best;
        Self {
            model,
            train_config,
            best_validation_accuracy: b.val_accuracy,
            step: b.step,
            pass: b.pass,
            params: b.params.clone(),
            optimizer: b.optimizer.clone(),
        }
    }

    /// Rebuild the architecture and load the stored tensors.
    pub fn build_model(&self) -> Result<AnyModel<F>> {
        // every tensor is overwritten below; the init rng only has to terminate
        let mut m = self.model.build::<F, _>(&mut ChaCha8Rng::seed_from_u64(0))?;
        load_named(&mut m, &self.params)?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data = Vec::new();
        let mut tensors = Vec::new();
        let groups = [
            ("param", self.params.iter().map(|(n, v)| (n, v)).collect::<Vec<_>>()),
            ("adam_m", self.optimizer.m.iter().collect()),
            ("adam_v", self.optimizer.v.iter().collect()),
        ];
        for (group, items) in groups {
            for (name, v) in items {
                tensors.push(TensorEntry {
                    name: name.clone(),
                    group: group.into(),
                    shape: v.shape().to_vec(),
                    offset: data.len(),
                });
                for x in v.iter() {
                    x.write_le(&mut data);
                }
            }
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            dtype: F::DTYPE.into(),
            model: self.model.clone(),
            train_config: self.train_config.clone(),
            best_validation_accuracy: self.best_validation_accuracy,
            step: self.step,
            pass: self.pass,
            optimizer_step: self.optimizer.step,
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + data.len());
        out.extend(MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.extend((json.len() as u64).to_le_bytes());
        out.extend(json);
        out.extend(data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not an iitnet checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let json = bytes
            .get(20..20 + hlen)
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json)?;
        if header.dtype != F::DTYPE {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, requested {}",
                header.dtype,
                F::DTYPE
            )));
        }
        let data = &bytes[20 + hlen..];
        let mut params = Vec::new();
        let mut optimizer = AdamState {
            step: header.optimizer_step,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        };
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            let raw = data
                .get(t.offset..t.offset + n * F::BYTES)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the end of the file", t.name)))?;
            let vals: Vec<F> = raw.chunks_exact(F::BYTES).map(F::read_le).collect();
            let arr = ArrayD::from_shape_vec(IxDyn(&t.shape), vals).expect("length matches shape");
            match t.group.as_str() {
                "param" => params.push((t.name, arr)),
                "adam_m" => {
                    optimizer.m.insert(t.name, arr);
                }
                "adam_v" => {
                    optimizer.v.insert(t.name, arr);
                }
                other => return Err(Error::Checkpoint(format!("unknown tensor group {other:?}"))),
            }
        }
        Ok(Self {
            model: header.model,
            train_config: header.train_config,
            best_validation_accuracy: header.best_validation_accuracy,
            step: header.step,
            pass: header.pass,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
