use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DatasetKind;

/// Subject-wise evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Protocol {
    /// 20 folds over 20 subjects: 15 train / 4 validation / 1 test.
    SleepEdf,
    /// 31 folds over 62 subjects: 2 test, then 45 train / 15 validation per fold.
    Mass,
    /// One random 5:2:3 train/validation/test split.
    Shhs,
    /// `folds` test groups partitioning the subjects; `val` validation subjects per fold.
    KFold { folds: usize, val: usize },
    /// One random split with the given train/validation/test weights.
    Holdout { train: f64, val: f64, test: f64 },
}

impl Protocol {
    pub fn for_kind(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::SleepEdf => Protocol::SleepEdf,
            DatasetKind::Mass => Protocol::Mass,
            DatasetKind::Shhs => Protocol::Shhs,
            DatasetKind::Generic => Protocol::Holdout {
                train: 5.0,
                val: 2.0,
                test: 3.0,
            },
        }
    }

    /// True when test sets are meant to partition the subjects.
    pub fn is_k_fold(&self) -> bool {
        matches!(self, Protocol::SleepEdf | Protocol::Mass | Protocol::KFold { .. })
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::SleepEdf => f.write_str("sleepedf"),
            Protocol::Mass => f.write_str("mass"),
            Protocol::Shhs => f.write_str("shhs"),
            Protocol::KFold { folds, val } => write!(f, "kfold:{folds}:{val}"),
            Protocol::Holdout { train, val, test } => write!(f, "holdout:{train}:{val}:{test}"),
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    /// `sleepedf`, `mass`, `shhs`, `kfold:K:V` or `holdout:A:B:C`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("bad protocol {s:?} (sleepedf, mass, shhs, kfold:K:V, holdout:A:B:C)"));
        match parts.as_slice() {
            ["sleepedf"] => Ok(Protocol::SleepEdf),
            ["mass"] => Ok(Protocol::Mass),
            ["shhs"] => Ok(Protocol::Shhs),
            ["kfold", k, v] => Ok(Protocol::KFold {
                folds: k.parse().map_err(|_| bad())?,
                val: v.parse().map_err(|_| bad())?,
            }),
            ["holdout", a, b, c] => Ok(Protocol::Holdout {
                train: a.parse().map_err(|_| bad())?,
                val: b.parse().map_err(|_| bad())?,
                test: c.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub id: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

fn fold_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn expect_count(protocol: Protocol, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Split(format!(
            "{protocol} protocol expects {expected} subjects, got {actual}"
        )));
    }
    Ok(())
}

/// Remaining subjects shuffled per fold, first `val` to validation.
fn split_rest(rest: Vec<String>, val: usize, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
    let mut rest = rest;
    rest.shuffle(rng);
    let train = rest.split_off(val);
    (sorted(train), sorted(rest))
}

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

/// Plan for the dataset's own protocol.
pub fn build_split_plan(kind: DatasetKind, subjects: &[String], seed: u64) -> Result<SplitPlan> {
    build_protocol_plan(Protocol::for_kind(kind), subjects, seed)
}

pub fn build_protocol_plan(protocol: Protocol, subjects: &[String], seed: u64) -> Result<SplitPlan> {
    let all: Vec<String> = subjects.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let n = all.len();
    let mut folds = Vec::new();
    let others = |test: &[String]| -> Vec<String> { all.iter().filter(|s| !test.contains(s)).cloned().collect() };
    match protocol {
        Protocol::SleepEdf => {
            expect_count(protocol, 20, n)?;
            for (i, s) in all.iter().enumerate() {
                let test = vec![s.clone()];
                let (train, val) = split_rest(others(&test), 4, &mut fold_rng(seed, i as u64 + 1));
                folds.push(Fold { id: i, train, val, test });
            }
        }
        Protocol::Mass => {
            expect_count(protocol, 62, n)?;
            let mut perm = all.clone();
            perm.shuffle(&mut fold_rng(seed, 0));
            for (i, pair) in perm.chunks(2).enumerate() {
                let test = sorted(pair.to_vec());
                let (train, val) = split_rest(others(&test), 15, &mut fold_rng(seed, i as u64 + 1));
                folds.push(Fold { id: i, train, val, test });
            }
        }
        Protocol::KFold { folds: k, val } => {
            // the largest test group leaves at least one training subject
            if k < 2 || n < k || n - n.div_ceil(k) < val + 1 {
                return Err(Error::Split(format!(
                    "{protocol} cannot be built from {n} subjects"
                )));
            }
            let mut perm = all.clone();
            perm.shuffle(&mut fold_rng(seed, 0));
            let mut start = 0;
            for i in 0..k {
                let size = n / k + usize::from(i < n % k);
                let test = sorted(perm[start..start + size].to_vec());
                start += size;
                let (train, val) = split_rest(others(&test), val, &mut fold_rng(seed, i as u64 + 1));
                folds.push(Fold { id: i, train, val, test });
            }
        }
        Protocol::Shhs | Protocol::Holdout { .. } => {
            let (a, b, c) = match protocol {
                Protocol::Holdout { train, val, test } => (train, val, test),
                _ => (5.0, 2.0, 3.0),
            };
            if !(a > 0.0 && b > 0.0 && c > 0.0) {
                return Err(Error::Split(format!("{protocol}: weights must be positive")));
            }
            if n < 3 {
                return Err(Error::Split(format!("{protocol} needs at least 3 subjects, got {n}")));
            }
            let sum = a + b + c;
            let n_val = ((n as f64 * b / sum).round() as usize).max(1);
            let n_test = ((n as f64 * c / sum).round() as usize).max(1).min(n - n_val - 1);
            let mut perm = all.clone();
            perm.shuffle(&mut fold_rng(seed, 0));
            let test = sorted(perm[..n_test].to_vec());
            let val = sorted(perm[n_test..n_test + n_val].to_vec());
            let train = sorted(perm[n_test + n_val..].to_vec());
            folds.push(Fold { id: 0, train, val, test });
        }
    }
    let plan = SplitPlan { protocol, seed, folds };
    plan.validate(&all)?;
    Ok(plan)
}

impl SplitPlan {
    /// Pairwise disjointness inside every fold, non-empty sets, membership in
    /// `subjects`, and (for k-fold protocols) test sets partitioning the subjects.
    pub fn validate(&self, subjects: &[String]) -> Result<()> {
        self.check_folds(subjects)?;
        if self.protocol.is_k_fold() {
            let mut seen = BTreeSet::new();
            for f in &self.folds {
                for t in &f.test {
                    if !seen.insert(t) {
                        return Err(Error::Split(format!("subject {t:?} is tested in more than one fold")));
                    }
                }
            }
            let known: BTreeSet<&String> = subjects.iter().collect();
            if seen != known {
                return Err(Error::Split(format!(
                    "test sets cover {} of {} subjects",
                    seen.len(),
                    known.len()
                )));
            }
        }
        Ok(())
    }

    /// Per-fold checks only: non-empty, known and pairwise disjoint sets.
    pub fn check_folds(&self, subjects: &[String]) -> Result<()> {
        let known: BTreeSet<&String> = subjects.iter().collect();
        for f in &self.folds {
            let sets = [("train", &f.train), ("validation", &f.val), ("test", &f.test)];
            for (name, s) in sets {
                if s.is_empty() {
                    return Err(Error::Split(format!("fold {}: empty {name} set", f.id)));
                }
                if let Some(x) = s.iter().find(|x| !known.contains(x)) {
                    return Err(Error::Split(format!("fold {}: {name} subject {x:?} has no data", f.id)));
                }
            }
            for (i, (na, a)) in sets.iter().enumerate() {
                for (nb, b) in &sets[i + 1..] {
                    if let Some(x) = a.iter().find(|x| b.contains(x)) {
                        return Err(Error::Split(format!(
                            "fold {}: subject {x:?} is in both the {na} and {nb} sets",
                            f.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Keep only the listed fold ids (desk-scale subsets).
    pub fn select(&self, ids: &[usize]) -> Result<SplitPlan> {
        let mut folds = Vec::new();
        for &id in ids {
            let f = self
                .folds
                .iter()
                .find(|f| f.id == id)
                .ok_or_else(|| Error::Split(format!("no fold {id} (plan has {})", self.folds.len())))?;
            folds.push(f.clone());
        }
        Ok(SplitPlan {
            protocol: self.protocol,
            seed: self.seed,
            folds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:02}")).collect()
    }

    #[test]
    fn sleepedf_has_singleton_tests() {
        let p = build_split_plan(DatasetKind::SleepEdf, &subjects(20), 1).unwrap();
        assert_eq!(p.folds.len(), 20);
        for f in &p.folds {
            assert_eq!((f.train.len(), f.val.len(), f.test.len()), (15, 4, 1));
        }
        let err = build_split_plan(DatasetKind::SleepEdf, &subjects(19), 1).unwrap_err();
        assert!(err.to_string().contains("expects 20 subjects, got 19"), "{err}");
    }

    #[test]
    fn mass_pairs_and_sizes() {
        let p = build_split_plan(DatasetKind::Mass, &subjects(62), 3).unwrap();
        assert_eq!(p.folds.len(), 31);
        for f in &p.folds {
            assert_eq!((f.train.len(), f.val.len(), f.test.len()), (45, 15, 2));
        }
    }

    #[test]
    fn shhs_ratio() {
        let p = build_split_plan(DatasetKind::Shhs, &subjects(100), 3).unwrap();
        let f = &p.folds[0];
        assert_eq!((f.train.len(), f.val.len(), f.test.len()), (50, 20, 30));
    }

    #[test]
    fn leaked_subject_is_rejected() {
        let mut p = build_split_plan(DatasetKind::SleepEdf, &subjects(20), 1).unwrap();
        let t = p.folds[0].test[0].clone();
        p.folds[0].train.push(t);
        assert!(p.validate(&subjects(20)).unwrap_err().to_string().contains("both"));
    }

    #[test]
    fn protocol_strings_round_trip() {
        for s in ["sleepedf", "mass", "shhs", "kfold:5:2", "holdout:6:1:1"] {
            assert_eq!(s.parse::<Protocol>().unwrap().to_string(), s);
        }
        assert!("kfold:x".parse::<Protocol>().is_err());
    }

    #[test]
    fn kfold_partitions() {
        let p = build_protocol_plan(Protocol::KFold { folds: 3, val: 1 }, &subjects(8), 0).unwrap();
        let mut tests: Vec<_> = p.folds.iter().flat_map(|f| f.test.clone()).collect();
        tests.sort();
        assert_eq!(tests, subjects(8));
        assert!(build_protocol_plan(Protocol::KFold { folds: 3, val: 5 }, &subjects(6), 0).is_err());
    }
}
