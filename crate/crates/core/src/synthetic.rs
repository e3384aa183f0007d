//! EEG-like synthetic recordings with Markov stage sequences.
//!
//! Each epoch is band-limited background noise plus an oscillation in the
//! stage's band. A fraction `ambiguity` of epochs carries no oscillation at
//! all, so their stage can only be inferred from neighbouring epochs.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{cache, edf, DatasetConfig, DatasetKind, Night, RawRecording};
use crate::stage::{StageLabel, NUM_STAGES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSignal {
    pub low_hz: f64,
    pub high_hz: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub epochs_per_subject: usize,
    pub sample_rate: f64,
    /// Indexed by stage (W, N1, N2, N3, REM).
    pub class_signal_map: [StageSignal; NUM_STAGES],
    /// Row-stochastic; row = current stage, column = next stage.
    pub transition_kernel: [[f64; NUM_STAGES]; NUM_STAGES],
    /// Standard deviation of the background noise.
    pub noise_level: f64,
    /// Probability that an epoch shows no stage oscillation.
    #[serde(default)]
    pub ambiguity: f64,
}

/// Stage bands at 100 Hz; [`SyntheticSpec::new`] compresses them for lower rates.
const BANDS_100HZ: [(f64, f64, f64); NUM_STAGES] = [
    (9.0, 11.0, 1.0),  // W: alpha
    (4.0, 6.0, 0.8),   // N1: theta
    (13.0, 15.0, 1.0), // N2: sigma
    (1.0, 2.0, 2.0),   // N3: delta, high amplitude
    (20.0, 25.0, 0.6), // REM: low-amplitude fast activity
];

impl SyntheticSpec {
    pub fn new(n_subjects: usize, epochs_per_subject: usize, sample_rate: f64) -> Self {
        let scale = (sample_rate / 100.0).min(1.0);
        let class_signal_map = BANDS_100HZ.map(|(lo, hi, a)| StageSignal {
            low_hz: lo * scale,
            high_hz: hi * scale,
            amplitude: a,
        });
        Self {
            n_subjects,
            epochs_per_subject,
            sample_rate,
            class_signal_map,
            transition_kernel: sticky_kernel(0.9),
            noise_level: 0.3,
            ambiguity: 0.0,
        }
    }

    pub fn samples_per_epoch(&self) -> usize {
        (self.sample_rate * 30.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.transition_kernel.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("transition kernel row {i} is not a distribution: {row:?}")));
            }
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return Err(Error::Config(format!("ambiguity {} outside [0, 1]", self.ambiguity)));
        }
        if self.noise_level < 0.0 || !(self.sample_rate > 0.0) {
            return Err(Error::Config("noise level and sample rate must be non-negative / positive".into()));
        }
        let nyquist = self.sample_rate / 2.0;
        for (s, b) in StageLabel::ALL.iter().zip(&self.class_signal_map) {
            if !(b.low_hz > 0.0 && b.low_hz <= b.high_hz && b.high_hz < nyquist) {
                return Err(Error::Config(format!(
                    "band {}..{} Hz for {s} must lie inside (0, {nyquist}) Hz",
                    b.low_hz, b.high_hz
                )));
            }
        }
        Ok(())
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        let mut c = DatasetConfig::for_kind(DatasetKind::Generic);
        c.sample_rate = self.sample_rate;
        c.channel = "EEG".into();
        c
    }
}

/// Self-transition probability `p_self`, remaining mass spread evenly.
pub fn sticky_kernel(p_self: f64) -> [[f64; NUM_STAGES]; NUM_STAGES] {
    let off = (1.0 - p_self) / (NUM_STAGES - 1) as f64;
    let mut k = [[off; NUM_STAGES]; NUM_STAGES];
    for (i, row) in k.iter_mut().enumerate() {
        row[i] = p_self;
    }
    k
}

/// Context-free labels: every row is the same distribution.
pub fn iid_kernel(probs: [f64; NUM_STAGES]) -> [[f64; NUM_STAGES]; NUM_STAGES] {
    [probs; NUM_STAGES]
}

/// Stationary distribution by power iteration.
pub fn stationary(kernel: &[[f64; NUM_STAGES]; NUM_STAGES]) -> [f64; NUM_STAGES] {
    let mut p = [1.0 / NUM_STAGES as f64; NUM_STAGES];
    for _ in 0..10_000 {
        let mut q = [0.0; NUM_STAGES];
        for (i, row) in kernel.iter().enumerate() {
            for (j, k) in row.iter().enumerate() {
                q[j] += p[i] * k;
            }
        }
        let diff: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
        p = q;
        if diff < 1e-15 {
            break;
        }
    }
    p
}

fn subject_rng(seed: u64, subject: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(subject as u64 + 1);
    r
}

/// Stage sequence of one night drawn from the kernel, starting from its stationary law.
pub fn sample_stages<R: Rng + ?Sized>(spec: &SyntheticSpec, n: usize, rng: &mut R) -> Vec<StageLabel> {
    let rows: Vec<WeightedIndex<f64>> = spec
        .transition_kernel
        .iter()
        .map(|r| WeightedIndex::new(r).expect("validated kernel"))
        .collect();
    let init = WeightedIndex::new(stationary(&spec.transition_kernel)).expect("distribution");
    let mut out = Vec::with_capacity(n);
    let mut s = init.sample(rng);
    for _ in 0..n {
        out.push(StageLabel::from_index(s).unwrap());
        s = rows[s].sample(rng);
    }
    out
}

fn epoch_signal<R: Rng + ?Sized>(spec: &SyntheticSpec, stage: StageLabel, rng: &mut R) -> Vec<f32> {
    let n = spec.samples_per_epoch();
    let dt = 1.0 / spec.sample_rate;
    // AR(1) background: unit variance, low-pass coloured
    let a: f64 = 0.8;
    let g = (1.0 - a * a).sqrt();
    let mut state: f64 = rng.sample(StandardNormal);
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            state = a * state + g * e;
            spec.noise_level * state
        })
        .collect();
    if !rng.gen_bool(spec.ambiguity) {
        let band = spec.class_signal_map[stage.index()];
        // two components so the spectrum covers the band rather than one line
        for _ in 0..2 {
            let f = rng.gen_range(band.low_hz..=band.high_hz);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let amp = band.amplitude * rng.gen_range(0.6..0.9);
            for (k, v) in x.iter_mut().enumerate() {
                *v += amp * (2.0 * PI * f * k as f64 * dt + phase).sin();
            }
        }
    }
    x.into_iter().map(|v| v as f32).collect()
}

/// One labelled recording per subject; deterministic in `(spec, seed)`.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Vec<RawRecording>> {
    spec.validate()?;
    let n = spec.samples_per_epoch();
    Ok((0..spec.n_subjects)
        .into_par_iter()
        .map(|s| {
            let mut rng = subject_rng(seed, s);
            let stages = sample_stages(spec, spec.epochs_per_subject, &mut rng);
            let mut signal = Vec::with_capacity(n * stages.len());
            for &st in &stages {
                signal.extend(epoch_signal(spec, st, &mut rng));
            }
            let id = format!("syn{s:03}");
            RawRecording {
                signal,
                sample_rate: spec.sample_rate,
                channel_name: "EEG".into(),
                subject_id: id.clone(),
                recording_id: id,
                epoch_annotations: stages
                    .iter()
                    .enumerate()
                    .map(|(i, st)| (i * n, st.name().to_string()))
                    .collect(),
            }
        })
        .collect())
}

/// [`generate`] followed by epoch extraction, one night per subject.
pub fn generate_nights(spec: &SyntheticSpec, seed: u64) -> Result<Vec<Night>> {
    let config = spec.dataset_config();
    generate(spec, seed)?
        .iter()
        .map(|r| crate::ingest::to_night(r, &config))
        .collect()
}

/// Write nights into `dir` in the ingestion cache format.
pub fn write_cache(nights: &[Night], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    nights
        .iter()
        .map(|night| {
            let bytes = cache::encode_night(night);
            let key = hex::encode(&Sha256::digest(&bytes)[..16]);
            let p = cache::cache_path(dir, &key);
            cache::write_night(&p, night)?;
            Ok(p)
        })
        .collect()
}

/// Write recordings as EDF files with `.stages.txt` sidecars (generic layout).
pub fn write_edf_dataset(recordings: &[RawRecording], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in recordings {
        let peak = r.signal.iter().fold(1e-6f32, |m, v| m.max(v.abs())) as f64 * 1.01;
        let spr = r.sample_rate.round().max(1.0) as usize;
        edf::write_edf(
            dir.join(format!("{}.edf", r.recording_id)),
            spr as f64 / r.sample_rate,
            &[edf::WriteSignal {
                label: r.channel_name.clone(),
                physical_dimension: "uV".into(),
                physical_min: -peak,
                physical_max: peak,
                digital_min: -32768,
                digital_max: 32767,
                samples_per_record: spr,
                samples: edf::WriteSamples::Physical(r.signal.iter().map(|&v| v as f64).collect()),
            }],
        )?;
        let text: String = r.epoch_annotations.iter().map(|(_, l)| format!("{l}\n")).collect();
        let side = dir.join(format!("{}.stages.txt", r.recording_id));
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    }
    Ok(())
}
