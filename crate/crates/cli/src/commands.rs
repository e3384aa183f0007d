use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use iitnet::evaluation::{
    build_protocol_plan, compute_metrics, default_factory, render_confusion, render_summary, run_cross_validation,
    CvConfig, MetricsReport, SplitPlan,
};
use iitnet::ingest::{
    adapter_for, cache, ingest_dir, read_recording_files, to_night, window_indices, DatasetConfig, DatasetKind, Night,
    Padding, SkippedFile, WindowedSet,
};
use iitnet::model::{predict_stage, AnyModel, ModelSpec, SleepModel};
use iitnet::nn::softmax_rows;
use iitnet::stage::{StageLabel, NUM_STAGES};
use iitnet::synthetic::{generate, generate_nights, iid_kernel, sticky_kernel, write_cache, write_edf_dataset, SyntheticSpec};
use iitnet::training::{evaluate, train_observed, Checkpoint};
use iitnet::{Error, Result};
use ndarray::Array3;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::plot::{curve_svg, hypnogram_svg};
use crate::{Cli, Command, DataArgs, RecordingArgs, TrainArgs};

pub fn run(command: Command, args: Vec<String>) -> Result<()> {
    match command {
        Command::Ingest { data, out } => ingest(&data, out, args),
        Command::Synth {
            subjects,
            epochs,
            rate,
            noise,
            ambiguity,
            kernel,
            seed,
            edf,
            out,
        } => {
            let mut spec = SyntheticSpec::new(subjects, epochs, rate);
            spec.noise_level = noise;
            spec.ambiguity = ambiguity;
            spec.transition_kernel = parse_kernel(&kernel)?;
            synth(&spec, seed, edf, &out, args)
        }
        Command::Experiment {
            data,
            train,
            seq_len,
            folds,
            out,
        } => experiment(&data, &train, &seq_len, folds.as_deref(), out, args),
        Command::Train {
            data,
            train,
            seq_len,
            fold,
            out,
        } => train_fold(&data, &train, seq_len, fold, out, args),
        Command::Evaluate {
            checkpoint,
            data,
            subjects,
            out,
        } => evaluate_cmd(&checkpoint, &data, subjects.as_deref(), out, args),
        Command::Predict { rec, out } => predict_cmd(&rec, out, false, args),
        Command::Hypnogram { rec, out } => predict_cmd(&rec, out, true, args),
        Command::Rerun { manifest, out } => rerun(&manifest, out),
    }
}

fn default_out(command: &str) -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    PathBuf::from("runs").join(format!("{command}-{secs}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn parse_kernel(s: &str) -> Result<[[f64; NUM_STAGES]; NUM_STAGES]> {
    match s.split_once(':') {
        Some(("sticky", p)) => {
            let p: f64 = p
                .parse()
                .map_err(|_| Error::Config(format!("bad self-transition probability in {s:?}")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("self-transition probability {p} outside [0, 1]")));
            }
            Ok(sticky_kernel(p))
        }
        None if s == "iid" => Ok(iid_kernel([1.0 / NUM_STAGES as f64; NUM_STAGES])),
        _ => Err(Error::Config(format!("bad kernel {s:?} (sticky:P or iid)"))),
    }
}

/// "4", "1-10" or "1,4,10".
pub fn parse_seq_lens(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("bad sequence length list {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    for &l in &out {
        if !(1..=10).contains(&l) {
            return Err(Error::Config(format!("sequence length {l} outside 1..=10")));
        }
    }
    Ok(out)
}

fn parse_ids(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("bad fold list {s:?}"))))
        .collect()
}

fn resolve(data: &DataArgs, train: Option<&TrainArgs>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(data.config.as_deref(), data.dataset)?;
    if let Some(c) = &data.channel {
        cfg.dataset.channel = c.clone();
    }
    if let Some(r) = data.rate {
        cfg.dataset.sample_rate = r;
    }
    if let Some(t) = train {
        if let Some(s) = t.seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        if let Some(m) = t.model {
            cfg.model = m;
        }
        if let Some(p) = t.protocol {
            cfg.protocol = p;
        }
        if let Some(lr) = t.lr {
            cfg.train.adam.lr = lr;
        }
        if let Some(b) = t.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(p) = t.patience {
            cfg.train.patience = p;
        }
        if let Some(m) = t.max_passes {
            cfg.train.max_passes = m;
        }
        if t.max_seconds.is_some() {
            cfg.train.max_seconds = t.max_seconds;
        }
        cfg.train.validate()?;
    }
    cfg.dataset.validate()?;
    Ok(cfg)
}

fn is_cache_dir(dir: &Path) -> bool {
    fs::read_dir(dir).is_ok_and(|entries| {
        entries
            .flatten()
            .any(|e| e.path().extension().and_then(|x| x.to_str()) == Some("iitc"))
    })
}

/// Nights from a cache directory or from raw recordings (through the cache).
/// A cache directory fixes the sample rate; a conflicting `--rate` is an error.
fn load_nights(data: &DataArgs, cfg: &mut RunConfig) -> Result<(Vec<Night>, Vec<SkippedFile>)> {
    if is_cache_dir(&data.data) {
        let nights = cache::read_dir(&data.data)?;
        let rates: BTreeSet<u64> = nights.iter().map(|n| n.sample_rate.to_bits()).collect();
        if rates.len() > 1 {
            return Err(Error::Config("cached nights have different sample rates".into()));
        }
        let rate = nights[0].sample_rate;
        if data.rate.is_some_and(|r| (r - rate).abs() > 1e-9) {
            return Err(Error::Config(format!(
                "--rate {} given but the cached nights are at {rate} Hz",
                cfg.dataset.sample_rate
            )));
        }
        cfg.dataset.sample_rate = rate;
        return Ok((nights, Vec::new()));
    }
    let cache_dir = data.cache_dir.join(cfg.dataset.dataset_kind.as_str());
    let report = ingest_dir(&data.data, &cfg.dataset, Some(&cache_dir), data.skip_bad)?;
    log::info!(
        "{} nights ({} from cache), {} skipped",
        report.nights.len(),
        report.cache_hits,
        report.skipped.len()
    );
    Ok((report.nights, report.skipped))
}

fn start_manifest(command: &str, args: Vec<String>, out: &Path, data: Option<&DataArgs>, cfg: Option<&RunConfig>) -> Result<RunManifest> {
    let mut m = RunManifest::new(command, args, out);
    if let Some(d) = data {
        m.dataset_paths.push(d.data.clone());
        m.add_input(&d.data)?;
        if let Some(c) = &d.config {
            m.config_file = Some(c.clone());
            m.add_input(c)?;
        }
    }
    if let Some(c) = cfg {
        m.seed = Some(c.seed);
        m.resolved_config = Some(c.to_toml()?);
    }
    Ok(m)
}

fn class_table(counts: [u64; NUM_STAGES]) -> String {
    let total: u64 = counts.iter().sum();
    let mut s = String::new();
    let _ = write!(s, "{:>8}", "total");
    for st in StageLabel::ALL {
        let _ = write!(s, " {:>7}", st.name());
    }
    let _ = write!(s, "\n{total:>8}");
    for c in counts {
        let _ = write!(s, " {c:>7}");
    }
    s.push('\n');
    s
}

fn ingest(data: &DataArgs, out: Option<PathBuf>, args: Vec<String>) -> Result<()> {
    let out = out.unwrap_or_else(|| default_out("ingest"));
    let mut cfg = resolve(data, None)?;
    let manifest = start_manifest("ingest", args, &out, Some(data), Some(&cfg))?;
    manifest.write()?;
    let (nights, skipped) = load_nights(data, &mut cfg)?;
    let mut counts = [0u64; NUM_STAGES];
    for n in &nights {
        for (c, k) in counts.iter_mut().zip(n.class_counts()) {
            *c += k;
        }
    }
    let subjects: BTreeSet<&String> = nights.iter().map(|n| &n.subject_id).collect();
    let mut text = format!(
        "{} recordings, {} subjects, {} skipped\n",
        nights.len(),
        subjects.len(),
        skipped.len()
    );
    text.push_str(&class_table(counts));
    for s in &skipped {
        let _ = writeln!(text, "skipped {}: {}", s.path.display(), s.reason);
    }
    print!("{text}");
    write_text(&out.join("ingest-report.txt"), &text)?;
    let per_night: Vec<serde_json::Value> = nights
        .iter()
        .map(|n| {
            serde_json::json!({
                "subject_id": n.subject_id,
                "recording_id": n.recording_id,
                "class_counts": n.class_counts(),
            })
        })
        .collect();
    write_json(
        &out.join("ingest-report.json"),
        &serde_json::json!({
            "stages": StageLabel::ALL.map(|s| s.name()),
            "class_counts": counts,
            "total_epochs": counts.iter().sum::<u64>(),
            "nights": per_night,
            "skipped": skipped,
        }),
    )
}

fn synth(spec: &SyntheticSpec, seed: u64, edf: bool, out: &Path, args: Vec<String>) -> Result<()> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = RunManifest::new("synth", args, out);
    manifest.seed = Some(seed);
    manifest.write()?;
    if edf {
        write_edf_dataset(&generate(spec, seed)?, out)?;
    } else {
        write_cache(&generate_nights(spec, seed)?, out)?;
    }
    write_json(&out.join("synthetic-spec.json"), spec)?;
    println!(
        "wrote {} subjects x {} epochs at {} Hz to {}",
        spec.n_subjects,
        spec.epochs_per_subject,
        spec.sample_rate,
        out.display()
    );
    Ok(())
}

fn subjects_of(nights: &[Night]) -> Vec<String> {
    nights
        .iter()
        .map(|n| n.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn plan_for(cfg: &RunConfig, nights: &[Night], folds: Option<&str>) -> Result<SplitPlan> {
    let plan = build_protocol_plan(cfg.protocol, &subjects_of(nights), cfg.seed)?;
    match folds {
        Some(f) => plan.select(&parse_ids(f)?),
        None => Ok(plan),
    }
}

fn experiment(
    data: &DataArgs,
    train: &TrainArgs,
    seq_lens: &str,
    folds: Option<&str>,
    out: Option<PathBuf>,
    args: Vec<String>,
) -> Result<()> {
    let lens = parse_seq_lens(seq_lens)?;
    let out = out.unwrap_or_else(|| default_out("experiment"));
    let mut cfg = resolve(data, Some(train))?;
    let mut manifest = start_manifest("experiment", args, &out, Some(data), Some(&cfg))?;
    manifest.write()?;
    let (nights, _) = load_nights(data, &mut cfg)?;
    manifest.resolved_config = Some(cfg.to_toml()?);
    manifest.write()?;
    let plan = plan_for(&cfg, &nights, folds)?;

    let mut curve = Vec::new();
    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    for &l in &lens {
        let spec = ModelSpec::new(cfg.model, l, cfg.dataset.sample_rate);
        let cv = CvConfig {
            model: spec.clone(),
            train: cfg.train.clone(),
            padding: cfg.dataset.padding,
            dataset_kind: Some(cfg.dataset.dataset_kind),
            out_dir: Some(out.join(format!("L{l:02}"))),
        };
        let mut factory = default_factory(spec, cfg.seed);
        let report = run_cross_validation(&plan, &nights, &mut factory, &cv)?;
        let a = &report.aggregate;
        log::info!("L={l}: accuracy {:.4}, MF1 {:.4}, kappa {:.4}", a.accuracy, a.mf1, a.kappa);
        curve.push((l, a.accuracy, a.mf1, a.kappa));
        reports.push((format!("{} L={l}", cfg.model), report.aggregate));
    }

    let mut tsv = String::from("seq_len\taccuracy\tmf1\tkappa\n");
    for (l, a, m, k) in &curve {
        let _ = writeln!(tsv, "{l}\t{a:.6}\t{m:.6}\t{k:.6}");
    }
    write_text(&out.join("curve.tsv"), &tsv)?;
    curve_svg(&out.join("curve.svg"), &curve)?;
    let rows: Vec<(String, &MetricsReport)> = reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    let summary = render_summary(&rows);
    write_text(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn train_fold(
    data: &DataArgs,
    train: &TrainArgs,
    seq_len: usize,
    fold: usize,
    out: Option<PathBuf>,
    args: Vec<String>,
) -> Result<()> {
    let out = out.unwrap_or_else(|| default_out("train"));
    let mut cfg = resolve(data, Some(train))?;
    cfg.dataset.seq_len = seq_len;
    cfg.dataset.validate()?;
    let mut manifest = start_manifest("train", args, &out, Some(data), Some(&cfg))?;
    manifest.write()?;
    let (nights, _) = load_nights(data, &mut cfg)?;
    manifest.resolved_config = Some(cfg.to_toml()?);
    manifest.write()?;
    let plan = plan_for(&cfg, &nights, Some(&fold.to_string()))?;
    plan.check_folds(&subjects_of(&nights))?;
    let f = &plan.folds[0];
    let pick = |ids: &[String]| -> Vec<&Night> { nights.iter().filter(|n| ids.contains(&n.subject_id)).collect() };
    let train_set = WindowedSet::new(pick(&f.train), seq_len, cfg.dataset.padding)?;
    let val_set = WindowedSet::new(pick(&f.val), seq_len, cfg.dataset.padding)?;

    let spec = ModelSpec::new(cfg.model, seq_len, cfg.dataset.sample_rate);
    let mut model = default_factory(spec.clone(), cfg.seed)(fold)?;
    let mut log = String::new();
    let outcome = train_observed(&mut model, &train_set, &val_set, &cfg.train, &mut |r| {
        let line = serde_json::to_string(r).unwrap_or_default();
        log::info!("{line}");
        log.push_str(&line);
        log.push('\n');
    })?;
    write_text(&out.join("history.jsonl"), &log)?;
    write_json(&out.join("fold.json"), f)?;
    Checkpoint::from_outcome(spec, cfg.train.clone(), &outcome).save(out.join("model.ckpt"))?;
    println!(
        "best validation accuracy {:.4} at pass {} (stopped: {:?}); checkpoint {}",
        outcome.best.val_accuracy,
        outcome.best.pass,
        outcome.stop,
        out.join("model.ckpt").display()
    );
    Ok(())
}

fn evaluate_cmd(checkpoint: &Path, data: &DataArgs, subjects: Option<&str>, out: Option<PathBuf>, args: Vec<String>) -> Result<()> {
    let out = out.unwrap_or_else(|| default_out("evaluate"));
    let ck = Checkpoint::<f32>::load(checkpoint)?;
    let mut cfg = resolve(data, None)?;
    if data.rate.is_none() {
        cfg.dataset.sample_rate = ck.model.sample_rate_hz;
    }
    let mut manifest = start_manifest("evaluate", args, &out, Some(data), Some(&cfg))?;
    manifest.add_input(checkpoint)?;
    manifest.write()?;
    let (nights, _) = load_nights(data, &mut cfg)?;
    check_rate(cfg.dataset.sample_rate, ck.model.sample_rate_hz)?;
    let wanted: Option<Vec<String>> = subjects.map(|s| s.split(',').map(|x| x.trim().to_string()).collect());
    let chosen: Vec<&Night> = nights
        .iter()
        .filter(|n| wanted.as_ref().map_or(true, |w| w.contains(&n.subject_id)))
        .collect();
    if chosen.is_empty() {
        return Err(Error::Config("no recordings match the requested subjects".into()));
    }
    let model = ck.build_model()?;
    let set = WindowedSet::new(chosen, ck.model.seq_len, cfg.dataset.padding)?;
    let ev = evaluate(&model, &set, ck.train_config.micro_batch_epochs)?;
    let report = compute_metrics(&ev.confusion)?.with_context(
        ck.model.seq_len,
        Some(cfg.dataset.dataset_kind),
        Some(ck.model.kind),
    );
    write_json(&out.join("metrics.json"), &report)?;
    let name = format!("{} L={}", ck.model.kind, ck.model.seq_len);
    let text = format!("{}\n{}", render_summary(&[(name, &report)]), render_confusion(&report));
    write_text(&out.join("metrics.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn check_rate(recording: f64, checkpoint: f64) -> Result<()> {
    if (recording - checkpoint).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "recording is sampled at {recording} Hz but the checkpoint was trained at {checkpoint} Hz; \
             a trained model is tied to the sampling rate it saw and is not expected to transfer \
             (pass --resample to convert the signal anyway)"
        )));
    }
    Ok(())
}

/// Epoch signals of one recording at the checkpoint's rate, with expert
/// labels when the recording has annotations.
fn load_recording(rec: &RecordingArgs, rate: f64) -> Result<(String, Vec<Vec<f32>>, Option<Vec<StageLabel>>)> {
    let path = &rec.recording;
    if path.extension().and_then(|e| e.to_str()) == Some("iitc") {
        let night = cache::read_night(path)?;
        check_rate(night.sample_rate, rate)?;
        let labels = night.labels();
        let epochs = night.epochs.into_iter().map(|e| e.samples).collect();
        return Ok((night.recording_id, epochs, Some(labels)));
    }
    let kind = rec.dataset.unwrap_or(DatasetKind::Generic);
    let mut cfg = DatasetConfig::for_kind(kind);
    if let Some(c) = &rec.channel {
        cfg.channel = c.clone();
    }
    cfg.sample_rate = rate;
    let files = adapter_for(kind).files_for(path)?;
    let raw = read_recording_files(&files, &cfg)?;
    if !rec.resample {
        check_rate(raw.sample_rate, rate)?;
    }
    if files.annotations.is_some() {
        let night = to_night(&raw, &cfg)?;
        let labels = night.labels();
        let epochs = night.epochs.into_iter().map(|e| e.samples).collect();
        return Ok((raw.recording_id, epochs, Some(labels)));
    }
    let signal = if (raw.sample_rate - rate).abs() > 1e-9 {
        iitnet::ingest::resample::resample(&raw.signal, raw.sample_rate, rate)?
    } else {
        raw.signal
    };
    let epochs = signal.chunks_exact(cfg.samples_per_epoch()).map(<[f32]>::to_vec).collect();
    Ok((raw.recording_id, epochs, None))
}

/// Predicted stage for every epoch, earliest epochs padded by repetition.
pub fn predict_series(model: &AnyModel<f32>, epochs: &[Vec<f32>], micro_batch_epochs: usize) -> Result<Vec<StageLabel>> {
    let l = model.seq_len();
    let n = model.input_length();
    if let Some(e) = epochs.iter().find(|e| e.len() != n) {
        return Err(Error::Shape(format!("epoch has {} samples, model expects {n}", e.len())));
    }
    let chunk = (micro_batch_epochs / l).max(1);
    let mut out = Vec::with_capacity(epochs.len());
    let targets: Vec<usize> = (0..epochs.len()).collect();
    for batch in targets.chunks(chunk) {
        let mut data = Vec::with_capacity(batch.len() * l * n);
        for &t in batch {
            for i in window_indices(t, l, Padding::RepeatFirst).expect("repeat-first always yields a window") {
                data.extend_from_slice(&epochs[i]);
            }
        }
        let x = Array3::from_shape_vec((batch.len(), l, n), data).expect("window shape");
        let probs = softmax_rows(&model.logits(&x)?);
        out.extend(probs.outer_iter().map(predict_stage));
    }
    Ok(out)
}

fn predict_cmd(rec: &RecordingArgs, out: Option<PathBuf>, plot: bool, args: Vec<String>) -> Result<()> {
    let command = if plot { "hypnogram" } else { "predict" };
    let out = out.unwrap_or_else(|| default_out(command));
    let ck = Checkpoint::<f32>::load(&rec.checkpoint)?;
    let mut manifest = start_manifest(command, args, &out, None, None)?;
    manifest.add_input(&rec.checkpoint)?;
    manifest.add_input(&rec.recording)?;
    manifest.write()?;
    let (id, epochs, expert) = load_recording(rec, ck.model.sample_rate_hz)?;
    if epochs.is_empty() {
        return Err(Error::Shape(format!("{} has no complete epochs", rec.recording.display())));
    }
    let model = ck.build_model()?;
    let predicted = predict_series(&model, &epochs, ck.train_config.micro_batch_epochs)?;

    let mut series = match &expert {
        Some(_) => String::from("epoch\tpredicted\texpert\n"),
        None => String::from("epoch\tpredicted\n"),
    };
    for (i, p) in predicted.iter().enumerate() {
        match &expert {
            Some(e) => {
                let _ = writeln!(series, "{i}\t{p}\t{}", e[i]);
            }
            None => {
                let _ = writeln!(series, "{i}\t{p}");
            }
        }
    }
    write_text(&out.join("stages.tsv"), &series)?;
    if plot {
        hypnogram_svg(&out.join("hypnogram.svg"), &id, &predicted, expert.as_deref())?;
    } else {
        // tolerate a closed pipe (`iitnet predict ... | head`)
        let _ = std::io::Write::write_all(&mut std::io::stdout(), series.as_bytes());
    }
    if let Some(e) = &expert {
        let hits = predicted.iter().zip(e).filter(|(p, t)| p == t).count();
        println!(
            "agreement {:.6} ({hits} of {} epochs)",
            hits as f64 / predicted.len() as f64,
            predicted.len()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn rerun(manifest_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let m = RunManifest::read(manifest_path)?;
    let out = out.unwrap_or_else(|| {
        let mut s = m.output_dir.clone().into_os_string();
        s.push("-rerun");
        PathBuf::from(s)
    });
    let mut args = Vec::with_capacity(m.args.len() + 2);
    let mut it = m.args.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
        } else if !a.starts_with("--out=") {
            args.push(a.clone());
        }
    }
    args.push("--out".into());
    args.push(out.display().to_string());
    let cli = Cli::try_parse_from(std::iter::once("iitnet".to_string()).chain(args.iter().cloned()))
        .map_err(|e| Error::Config(format!("manifest arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Rerun { .. }) {
        return Err(Error::Config("a rerun manifest cannot be replayed".into()));
    }
    run(cli.command, args)
}
