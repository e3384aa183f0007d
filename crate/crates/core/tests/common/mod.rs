#![allow(dead_code)]

use iitnet::ingest::Night;
use iitnet::model::{EncoderConfig, HeadConfig, ModelKind, ModelSpec};
use iitnet::synthetic::{generate_nights, SyntheticSpec};
use iitnet::training::TrainConfig;

pub const TOY_RATE: f64 = 10.0;

/// Two-stage residual encoder and a narrow head; same code paths, far fewer flops.
pub fn toy_spec(seq_len: usize, dropout: f64) -> ModelSpec {
    let mut spec = ModelSpec::new(ModelKind::Iitnet, seq_len, TOY_RATE);
    spec.encoder = EncoderConfig {
        input_length: (TOY_RATE * 30.0) as usize,
        stem_kernel: 7,
        stem_filters: 8,
        stem_stride: 2,
        pool_kernel: 3,
        pool_stride: 2,
        stage_blocks: vec![1, 1],
        stage_filters: vec![[4, 4, 16], [8, 8, 16]],
        stage_strides: vec![1, 2],
        extra_pool_before_stage: Some(1),
        dropout,
    };
    spec.head = HeadConfig {
        hidden_size: 16,
        ..HeadConfig::default()
    };
    spec
}

pub fn toy_nights(n_subjects: usize, epochs: usize, noise: f64, seed: u64) -> Vec<Night> {
    let mut spec = SyntheticSpec::new(n_subjects, epochs, TOY_RATE);
    spec.noise_level = noise;
    generate_nights(&spec, seed).unwrap()
}

pub fn toy_train_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig {
        batch_size: 16,
        micro_batch_epochs: 64,
        patience: 100,
        max_passes: 10,
        seed,
        ..TrainConfig::default()
    };
    c.adam.lr = 1e-3;
    c
}

/// Metrics recomputed from the expanded list of (predicted, true) pairs,
/// with chance agreement counted over every cross pair.
pub struct OracleMetrics {
    pub precision: [f64; 5],
    pub recall: [f64; 5],
    pub f1: [f64; 5],
    pub accuracy: f64,
    pub mf1: f64,
    pub kappa: f64,
}

pub fn oracle_metrics(counts: &[[u64; 5]; 5]) -> OracleMetrics {
    let mut pairs = Vec::new();
    for (p, row) in counts.iter().enumerate() {
        for (t, &n) in row.iter().enumerate() {
            for _ in 0..n {
                pairs.push((p, t));
            }
        }
    }
    let n = pairs.len() as f64;
    let mut precision = [0.0; 5];
    let mut recall = [0.0; 5];
    let mut f1 = [0.0; 5];
    for c in 0..5 {
        let hit = pairs.iter().filter(|&&(p, t)| p == c && t == c).count() as f64;
        let pred = pairs.iter().filter(|&&(p, _)| p == c).count() as f64;
        let truth = pairs.iter().filter(|&&(_, t)| t == c).count() as f64;
        precision[c] = if pred > 0.0 { hit / pred } else { 0.0 };
        recall[c] = if truth > 0.0 { hit / truth } else { 0.0 };
        let s = precision[c] + recall[c];
        f1[c] = if s > 0.0 { 2.0 * precision[c] * recall[c] / s } else { 0.0 };
    }
    let agree = pairs.iter().filter(|&&(p, t)| p == t).count() as f64;
    // chance agreement: a random prediction paired with a random truth
    let mut cross = 0u64;
    for &(p, _) in &pairs {
        for &(_, t) in &pairs {
            cross += u64::from(p == t);
        }
    }
    let p_o = agree / n;
    let p_e = cross as f64 / (n * n);
    let kappa = if p_e < 1.0 { 1.0 - (1.0 - p_o) / (1.0 - p_e) } else { 1.0 };
    OracleMetrics {
        precision,
        recall,
        f1,
        accuracy: p_o,
        mf1: f1.iter().sum::<f64>() / 5.0,
        kappa,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Uniform i.i.d. stages, so every subject covers every class.
pub fn toy_nights_iid(n_subjects: usize, epochs: usize, noise: f64, seed: u64) -> Vec<Night> {
    let mut spec = SyntheticSpec::new(n_subjects, epochs, TOY_RATE);
    spec.noise_level = noise;
    spec.transition_kernel = iitnet::synthetic::iid_kernel([0.2; 5]);
    generate_nights(&spec, seed).unwrap()
}
