use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mode, Module, Param, Real};

use super::baselines::{DsnCache, IntraCache};
use super::{
    DeepSleepNetConfig, E2eDeepSleepNet, E2eIntraDeepSleepNet, EncoderConfig, HeadConfig, IitNet, IitNetCache,
    SleepModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Iitnet,
    E2eDsn,
    E2eIntraDsn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Iitnet => "iitnet",
            ModelKind::E2eDsn => "e2e-dsn",
            ModelKind::E2eIntraDsn => "e2e-intra-dsn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iitnet" => Ok(ModelKind::Iitnet),
            "e2e-dsn" => Ok(ModelKind::E2eDsn),
            "e2e-intra-dsn" => Ok(ModelKind::E2eIntraDsn),
            other => Err(Error::Config(format!(
                "unknown model {other:?} (expected iitnet, e2e-dsn or e2e-intra-dsn)"
            ))),
        }
    }
}

/// Everything needed to rebuild a model's architecture; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub seq_len: usize,
    pub sample_rate_hz: f64,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub deepsleepnet: DeepSleepNetConfig,
}

impl ModelSpec {
    /// Default architecture for `kind` at `sample_rate_hz` (30-s epochs).
    pub fn new(kind: ModelKind, seq_len: usize, sample_rate_hz: f64) -> Self {
        let input_length = (sample_rate_hz * 30.0).round() as usize;
        Self {
            kind,
            seq_len,
            sample_rate_hz,
            encoder: EncoderConfig::default().with_input_length(input_length),
            head: HeadConfig::default(),
            deepsleepnet: DeepSleepNetConfig::default().for_rate(sample_rate_hz),
        }
    }

    pub fn input_length(&self) -> usize {
        self.encoder.input_length
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=10).contains(&self.seq_len) {
            return Err(Error::Config(format!("sequence length {} outside 1..=10", self.seq_len)));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        self.encoder.validate()
    }

    pub fn build<F: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<AnyModel<F>> {
        self.validate()?;
        let n = self.input_length();
        Ok(match self.kind {
            ModelKind::Iitnet => AnyModel::Iitnet(IitNet::new(self.encoder.clone(), &self.head, self.seq_len, rng)?),
            ModelKind::E2eDsn => AnyModel::E2eDsn(E2eDeepSleepNet::new(
                &self.deepsleepnet,
                &self.head,
                n,
                self.seq_len,
                rng,
            )?),
            ModelKind::E2eIntraDsn => AnyModel::E2eIntraDsn(E2eIntraDeepSleepNet::new(
                &self.deepsleepnet,
                &self.head,
                n,
                self.seq_len,
                rng,
            )?),
        })
    }
}

/// Runtime-selected model; all variants share the head and the report path.
#[derive(Debug, Clone)]
pub enum AnyModel<F: Real> {
    Iitnet(IitNet<F>),
    E2eDsn(E2eDeepSleepNet<F>),
    E2eIntraDsn(E2eIntraDeepSleepNet<F>),
}

#[derive(Debug)]
pub enum AnyCache<F: Real> {
    Iitnet(IitNetCache<F>),
    E2eDsn(DsnCache<F>),
    E2eIntraDsn(IntraCache<F>),
}

impl<F: Real> AnyModel<F> {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Iitnet(_) => ModelKind::Iitnet,
            AnyModel::E2eDsn(_) => ModelKind::E2eDsn,
            AnyModel::E2eIntraDsn(_) => ModelKind::E2eIntraDsn,
        }
    }
}

impl<F: Real> SleepModel<F> for AnyModel<F> {
    type Cache = AnyCache<F>;

    fn seq_len(&self) -> usize {
        match self {
            AnyModel::Iitnet(m) => m.seq_len(),
            AnyModel::E2eDsn(m) => m.seq_len(),
            AnyModel::E2eIntraDsn(m) => m.seq_len(),
        }
    }

    fn input_length(&self) -> usize {
        match self {
            AnyModel::Iitnet(m) => m.input_length(),
            AnyModel::E2eDsn(m) => m.input_length(),
            AnyModel::E2eIntraDsn(m) => m.input_length(),
        }
    }

    fn forward<R: Rng + ?Sized>(&self, x: &Array3<F>, mode: Mode, rng: &mut R) -> Result<(Array2<F>, AnyCache<F>)> {
        Ok(match self {
            AnyModel::Iitnet(m) => {
                let (y, c) = m.forward(x, mode, rng)?;
                (y, AnyCache::Iitnet(c))
            }
            AnyModel::E2eDsn(m) => {
                let (y, c) = m.forward(x, mode, rng)?;
                (y, AnyCache::E2eDsn(c))
            }
            AnyModel::E2eIntraDsn(m) => {
                let (y, c) = m.forward(x, mode, rng)?;
                (y, AnyCache::E2eIntraDsn(c))
            }
        })
    }

    fn backward(&mut self, cache: AnyCache<F>, dlogits: &Array2<F>) {
        match (self, cache) {
            (AnyModel::Iitnet(m), AnyCache::Iitnet(c)) => m.backward(c, dlogits),
            (AnyModel::E2eDsn(m), AnyCache::E2eDsn(c)) => m.backward(c, dlogits),
            (AnyModel::E2eIntraDsn(m), AnyCache::E2eIntraDsn(c)) => m.backward(c, dlogits),
            _ => panic!("cache does not belong to this model variant"),
        }
    }
}

impl<F: Real> Module<F> for AnyModel<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        match self {
            AnyModel::Iitnet(m) => m.visit(prefix, f),
            AnyModel::E2eDsn(m) => m.visit(prefix, f),
            AnyModel::E2eIntraDsn(m) => m.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        match self {
            AnyModel::Iitnet(m) => m.visit_mut(prefix, f),
            AnyModel::E2eDsn(m) => m.visit_mut(prefix, f),
            AnyModel::E2eIntraDsn(m) => m.visit_mut(prefix, f),
        }
    }
}
