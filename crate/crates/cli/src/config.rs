//! Layered run configuration: built-in defaults, then an optional TOML file,
//! then command-line flags. The resolved result is dumped into every run
//! directory.

use std::fs;
use std::path::Path;

use iitnet::evaluation::Protocol;
use iitnet::ingest::{DatasetConfig, DatasetKind};
use iitnet::model::ModelKind;
use iitnet::training::TrainConfig;
use iitnet::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelKind,
    pub protocol: Protocol,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn defaults(kind: DatasetKind) -> Self {
        Self {
            seed: 0,
            model: ModelKind::Iitnet,
            protocol: Protocol::for_kind(kind),
            dataset: DatasetConfig::for_kind(kind),
            train: TrainConfig::for_dataset(kind),
        }
    }

    /// Defaults for the dataset kind, overlaid with `file` when given. The
    /// kind comes from `kind_flag`, else the file, else `generic`.
    pub fn load(file: Option<&Path>, kind_flag: Option<DatasetKind>) -> Result<Self> {
        let overlay = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let v: toml::Value =
                    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Some(v)
            }
            None => None,
        };
        let file_kind = overlay
            .as_ref()
            .and_then(|v| v.get("dataset")?.get("dataset_kind")?.as_str().map(str::to_owned));
        let kind = match (kind_flag, file_kind) {
            (Some(k), _) => k,
            (None, Some(s)) => s.parse()?,
            (None, None) => DatasetKind::Generic,
        };
        let mut base = toml::Value::try_from(Self::defaults(kind)).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(o) = overlay {
            merge(&mut base, o);
        }
        if let Some(t) = base.get_mut("dataset").and_then(|d| d.as_table_mut()) {
            t.insert("dataset_kind".into(), toml::Value::String(kind.as_str().into()));
        }
        base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Recursive table merge; scalars and arrays in `over` replace those in `base`.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_only_what_it_names() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "seed = 7\n[train]\nbatch_size = 32\n[train.adam]\nlr = 0.001\n").unwrap();
        let c = RunConfig::load(Some(&p), Some(DatasetKind::SleepEdf)).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.adam.lr, 0.001);
        assert_eq!(c.train.adam.weight_reg, 1e-6);
        assert_eq!(c.dataset.channel, "EEG Fpz-Cz");
        assert_eq!(c.protocol, Protocol::SleepEdf);
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let c = RunConfig::defaults(DatasetKind::Mass);
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn mistyped_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "[train]\nbatch_size = \"big\"\n").unwrap();
        assert!(RunConfig::load(Some(&p), None).is_err());
    }
}
