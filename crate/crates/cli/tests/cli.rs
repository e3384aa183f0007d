//! End-to-end runs of the `iitnet` binary on tiny 10 Hz synthetic data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use iitnet::stage::NUM_STAGES;
use iitnet::synthetic::{generate_nights, iid_kernel, SyntheticSpec};
use serde_json::Value;

fn iitnet(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iitnet"))
        .args(args)
        .env("IITNET_CACHE_DIR", cache)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

/// `synth` into `dir`; iid stages so every class shows up in a short night.
fn synth(root: &Path, dir: &Path, subjects: usize, epochs: usize, seed: u64, edf: bool) {
    let (s, e, sd) = (subjects.to_string(), epochs.to_string(), seed.to_string());
    let mut args = vec![
        "synth", "--subjects", &s, "--epochs", &e, "--rate", "10", "--kernel", "iid", "--seed", &sd, "--out", p(dir),
    ];
    if edf {
        args.push("--edf");
    }
    ok(&iitnet(&args, root));
}

fn iitc_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "iitc"))
        .collect();
    v.sort();
    v
}

const QUICK: [&str; 8] = ["--max-passes", "1", "--batch-size", "16", "--protocol", "kfold:2:1", "--seed", "3"];

#[test]
fn ingest_counts_match_the_library() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("edf");
    synth(t.path(), &data, 3, 40, 11, true);
    let out = t.path().join("ingest");
    let stdout = ok(&iitnet(
        &["ingest", "--data", p(&data), "--rate", "10", "--out", p(&out)],
        &t.path().join("cache"),
    ));
    assert!(stdout.contains("3 recordings, 3 subjects, 0 skipped"), "{stdout}");

    let mut spec = SyntheticSpec::new(3, 40, 10.0);
    spec.transition_kernel = iid_kernel([1.0 / NUM_STAGES as f64; NUM_STAGES]);
    let mut expected = [0u64; NUM_STAGES];
    for n in generate_nights(&spec, 11).unwrap() {
        for (c, k) in expected.iter_mut().zip(n.class_counts()) {
            *c += k;
        }
    }
    let report = json(&out.join("ingest-report.json"));
    let got: Vec<u64> = report["class_counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(got, expected.to_vec());
    assert_eq!(report["total_epochs"].as_u64(), Some(120));

    // second pass is served from the cache with the same counts
    let again = t.path().join("ingest2");
    ok(&iitnet(
        &["ingest", "--data", p(&data), "--rate", "10", "--out", p(&again)],
        &t.path().join("cache"),
    ));
    assert_eq!(json(&again.join("ingest-report.json"))["class_counts"], report["class_counts"]);
}

#[test]
fn bad_recordings_are_listed_with_skip_bad_and_fatal_without() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("edf");
    synth(t.path(), &data, 2, 20, 5, true);
    let victim = data.join("syn001.edf");
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();

    let cache = t.path().join("cache");
    let out = iitnet(&["ingest", "--data", p(&data), "--rate", "10", "--out", p(&t.path().join("a"))], &cache);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let stdout = ok(&iitnet(
        &["ingest", "--data", p(&data), "--rate", "10", "--skip-bad", "--out", p(&t.path().join("b"))],
        &cache,
    ));
    assert!(stdout.contains("1 recordings, 1 subjects, 1 skipped"), "{stdout}");
    assert!(stdout.contains("syn001.edf"), "{stdout}");
}

#[test]
fn exit_codes_separate_usage_data_and_config_errors() {
    let t = tempfile::tempdir().unwrap();
    let cache = t.path().join("cache");

    let empty = t.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = iitnet(&["ingest", "--data", p(&empty), "--out", p(&t.path().join("o"))], &cache);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no recordings found"), "{}", stderr(&out));

    let data = t.path().join("d");
    synth(t.path(), &data, 4, 20, 1, false);
    let out = iitnet(&["experiment", "--data", p(&data), "-L", "0", "--out", p(&t.path().join("x"))], &cache);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("outside 1..=10"), "{}", stderr(&out));

    let out = iitnet(&["experiment", "--bogus"], &cache);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(iitnet(&["--help"], &cache).status.code(), Some(0));

    // a cache directory fixes the rate
    let out = iitnet(&["ingest", "--data", p(&data), "--rate", "20", "--out", p(&t.path().join("y"))], &cache);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("10 Hz"), "{}", stderr(&out));
}

#[test]
fn sweep_writes_one_curve_row_per_length_and_baselines_share_the_summary_schema() {
    let t = tempfile::tempdir().unwrap();
    let cache = t.path().join("cache");
    let data = t.path().join("d");
    synth(t.path(), &data, 4, 20, 2, false);

    let run = |model: &str, lens: &str, out: &Path| {
        let mut args = vec!["experiment", "--data", p(&data), "--model", model, "-L", lens, "--out", p(out)];
        args.extend(QUICK);
        ok(&iitnet(&args, &cache))
    };
    let a = t.path().join("iitnet");
    run("iitnet", "1,2", &a);
    let tsv = fs::read_to_string(a.join("curve.tsv")).unwrap();
    let rows: Vec<&str> = tsv.lines().collect();
    assert_eq!(rows[0], "seq_len\taccuracy\tmf1\tkappa");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("1\t") && rows[2].starts_with("2\t"));
    for l in ["L01", "L02"] {
        let agg = &json(&a.join(l).join("aggregate.json"))["aggregate"];
        assert_eq!(agg["n_epochs"].as_u64(), Some(80), "every subject is tested exactly once");
        for fold in ["fold-00", "fold-01"] {
            assert!(a.join(l).join(fold).join("model.ckpt").is_file());
        }
    }
    assert!(fs::read_to_string(a.join("curve.svg")).unwrap().starts_with("<svg"));

    let b = t.path().join("dsn");
    run("e2e-dsn", "2", &b);
    let head = |dir: &Path| -> Vec<String> {
        let text = fs::read_to_string(dir.join("summary.txt")).unwrap();
        text.lines().next().unwrap().split_whitespace().map(str::to_owned).collect()
    };
    assert_eq!(head(&a), head(&b));
    let (ra, rb) = (
        json(&a.join("L02/aggregate.json"))["aggregate"].clone(),
        json(&b.join("L02/aggregate.json"))["aggregate"].clone(),
    );
    let keys = |v: &Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&ra), keys(&rb));
    assert_eq!(rb["model"], "e2e-dsn");
}

#[test]
fn train_evaluate_hypnogram_and_rerun_agree() {
    let t = tempfile::tempdir().unwrap();
    let cache = t.path().join("cache");
    let data = t.path().join("d");
    synth(t.path(), &data, 4, 30, 4, false);
    let run = t.path().join("train");
    let mut args = vec!["train", "--data", p(&data), "-L", "3", "--out", p(&run)];
    args.extend(QUICK);
    let stdout = ok(&iitnet(&args, &cache));
    assert!(stdout.contains("checkpoint"), "{stdout}");
    let ckpt = run.join("model.ckpt");
    assert!(ckpt.is_file());
    assert_eq!(fs::read_to_string(run.join("history.jsonl")).unwrap().lines().count(), 1);

    // a fresh single-night dataset scored two independent ways
    let night_dir = t.path().join("night");
    synth(t.path(), &night_dir, 1, 45, 99, false);
    let eval_out = t.path().join("eval");
    ok(&iitnet(
        &["evaluate", "--checkpoint", p(&ckpt), "--data", p(&night_dir), "--out", p(&eval_out)],
        &cache,
    ));
    let metrics = json(&eval_out.join("metrics.json"));
    assert_eq!(metrics["n_epochs"].as_u64(), Some(45));
    assert_eq!(metrics["seq_len"].as_u64(), Some(3));

    let file = iitc_files(&night_dir).pop().unwrap();
    let hyp = t.path().join("hyp");
    let stdout = ok(&iitnet(
        &["hypnogram", "--checkpoint", p(&ckpt), "--recording", p(&file), "--out", p(&hyp)],
        &cache,
    ));
    let line = stdout.lines().find(|l| l.starts_with("agreement")).expect(&stdout);
    let agreement: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    let accuracy = metrics["accuracy"].as_f64().unwrap();
    assert!((agreement - accuracy).abs() < 1e-6, "{agreement} vs {accuracy}");
    let tsv = fs::read_to_string(hyp.join("stages.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 46);
    let svg = fs::read_to_string(hyp.join("hypnogram.svg")).unwrap();
    assert!(svg.contains("Expert") && svg.contains("Predicted"));

    let again = t.path().join("eval-again");
    ok(&iitnet(&["rerun", p(&eval_out.join("manifest.json")), "--out", p(&again)], &cache));
    assert_eq!(
        fs::read(eval_out.join("metrics.json")).unwrap(),
        fs::read(again.join("metrics.json")).unwrap()
    );
    let manifest = json(&again.join("manifest.json"));
    assert_eq!(manifest["command"], "evaluate");
}

#[test]
fn predict_on_an_unlabelled_edf_and_rate_mismatch() {
    let t = tempfile::tempdir().unwrap();
    let cache = t.path().join("cache");
    let data = t.path().join("d");
    synth(t.path(), &data, 4, 20, 6, false);
    let run = t.path().join("train");
    let mut args = vec!["train", "--data", p(&data), "-L", "2", "--out", p(&run)];
    args.extend(QUICK);
    ok(&iitnet(&args, &cache));
    let ckpt = run.join("model.ckpt");

    let edf = t.path().join("edf");
    synth(t.path(), &edf, 1, 12, 8, true);
    fs::remove_file(edf.join("syn000.stages.txt")).unwrap();
    let out = t.path().join("pred");
    let stdout = ok(&iitnet(
        &["predict", "--checkpoint", p(&ckpt), "--recording", p(&edf.join("syn000.edf")), "--out", p(&out)],
        &cache,
    ));
    assert!(!stdout.contains("agreement"));
    assert_eq!(fs::read_to_string(out.join("stages.tsv")).unwrap().lines().count(), 13);

    let fast = t.path().join("fast");
    ok(&iitnet(
        &["synth", "--subjects", "1", "--epochs", "4", "--rate", "20", "--edf", "--out", p(&fast)],
        &cache,
    ));
    let rec = fast.join("syn000.edf");
    let out = iitnet(
        &["predict", "--checkpoint", p(&ckpt), "--recording", p(&rec), "--out", p(&t.path().join("m"))],
        &cache,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--resample"), "{}", stderr(&out));
    ok(&iitnet(
        &["predict", "--checkpoint", p(&ckpt), "--recording", p(&rec), "--resample", "--out", p(&t.path().join("r"))],
        &cache,
    ));
}
