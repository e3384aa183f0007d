mod common;

use std::cell::Cell;

use common::{oracle_metrics, rel_err, toy_nights, toy_nights_iid, toy_spec, toy_train_config};
use iitnet::evaluation::{
    build_protocol_plan, build_split_plan, compute_metrics, default_factory, render_confusion, render_summary,
    run_cross_validation, CvConfig, Fold, MetricsReport, Protocol, SplitPlan,
};
use iitnet::ingest::{DatasetKind, Padding};
use iitnet::stage::ConfusionMatrix;
use iitnet::Error;
use proptest::prelude::*;

fn counts_strategy() -> impl Strategy<Value = [[u64; 5]; 5]> {
    prop::array::uniform5(prop::array::uniform5(0u64..8)).prop_filter("non-empty", |c| c.iter().flatten().sum::<u64>() > 0)
}

fn subjects(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("subj{i:03}")).collect()
}

proptest! {
    #[test]
    fn metrics_match_pairwise_oracle(c in counts_strategy()) {
        let r = compute_metrics(&ConfusionMatrix::from_counts(c)).unwrap();
        let o = oracle_metrics(&c);
        for k in 0..5 {
            prop_assert!(rel_err(r.per_class[k].precision, o.precision[k]) <= 1e-12);
            prop_assert!(rel_err(r.per_class[k].recall, o.recall[k]) <= 1e-12);
            prop_assert!(rel_err(r.per_class[k].f1, o.f1[k]) <= 1e-12);
        }
        prop_assert!(rel_err(r.accuracy, o.accuracy) <= 1e-12);
        prop_assert!(rel_err(r.mf1, o.mf1) <= 1e-12);
        prop_assert!(rel_err(r.kappa, o.kappa) <= 1e-12);
    }

    #[test]
    fn kappa_bounds(c in counts_strategy()) {
        let r = compute_metrics(&ConfusionMatrix::from_counts(c)).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r.kappa));
        if r.chance_agreement > 0.0 && r.accuracy < 1.0 {
            prop_assert!(r.kappa <= r.accuracy);
        }
        let off_diagonal: u64 = (0..5).flat_map(|i| (0..5).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| c[i][j]).sum();
        prop_assert_eq!(r.kappa == 1.0, off_diagonal == 0);
        let mean = r.per_class.iter().map(|x| x.f1).sum::<f64>() / 5.0;
        prop_assert_eq!(r.mf1, mean);
    }

    #[test]
    fn plans_are_subject_disjoint(seed in any::<u64>(), n in 6usize..40, k in 2usize..5) {
        let subs = subjects(n);
        for protocol in [Protocol::KFold { folds: k, val: 1 }, Protocol::Shhs] {
            let plan = build_protocol_plan(protocol, &subs, seed).unwrap();
            plan.validate(&subs).unwrap();
            prop_assert_eq!(&plan, &build_protocol_plan(protocol, &subs, seed).unwrap());
            for f in &plan.folds {
                prop_assert_eq!(f.train.len() + f.val.len() + f.test.len(), n);
            }
        }
    }

    #[test]
    fn named_protocols_are_disjoint_for_any_seed(seed in any::<u64>()) {
        let p = build_split_plan(DatasetKind::SleepEdf, &subjects(20), seed).unwrap();
        p.validate(&subjects(20)).unwrap();
        let m = build_split_plan(DatasetKind::Mass, &subjects(62), seed).unwrap();
        m.validate(&subjects(62)).unwrap();
    }
}

#[test]
fn subject_order_does_not_change_the_plan() {
    let mut subs = subjects(20);
    let a = build_split_plan(DatasetKind::SleepEdf, &subs, 4).unwrap();
    subs.reverse();
    assert_eq!(a, build_split_plan(DatasetKind::SleepEdf, &subs, 4).unwrap());
    assert_ne!(a, build_split_plan(DatasetKind::SleepEdf, &subs, 5).unwrap());
}

#[test]
fn report_json_round_trips() {
    let mut c = [[1u64; 5]; 5];
    c[3][3] = 20;
    let r = compute_metrics(&ConfusionMatrix::from_counts(c))
        .unwrap()
        .with_context(4, Some(DatasetKind::SleepEdf), None);
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"orientation\":\"rows=predicted, columns=true\""));
    let back: MetricsReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
}

#[test]
fn rendering_matches_golden_files() {
    let c = [
        [50, 3, 1, 0, 2],
        [4, 20, 6, 0, 5],
        [1, 7, 120, 9, 3],
        [0, 0, 8, 40, 0],
        [2, 6, 4, 0, 60],
    ];
    let r = compute_metrics(&ConfusionMatrix::from_counts(c)).unwrap();
    let summary = render_summary(&[("iitnet L=4".to_string(), &r)]);
    assert_eq!(summary, include_str!("golden/summary.txt"));
    assert_eq!(render_confusion(&r), include_str!("golden/confusion.txt"));
}

fn cv_config(l: usize) -> CvConfig {
    let mut train = toy_train_config(11);
    train.max_passes = 8;
    train.patience = 3;
    CvConfig {
        model: toy_spec(l, 0.5),
        train,
        padding: Padding::RepeatFirst,
        dataset_kind: Some(DatasetKind::Generic),
        out_dir: None,
    }
}

#[test]
fn two_fold_cross_validation_learns_band_labels() {
    // i.i.d. stages keep all five classes in every subject
    let nights = toy_nights_iid(6, 100, 0.2, 21);
    let subs: Vec<String> = nights.iter().map(|n| n.subject_id.clone()).collect();
    let plan = build_protocol_plan(Protocol::KFold { folds: 2, val: 1 }, &subs, 0).unwrap();
    let mut cfg = cv_config(1);
    cfg.train.max_passes = 20;
    cfg.train.patience = 5;
    cfg.train.adam.lr = 3e-3;
    let mut factory = default_factory(cfg.model.clone(), 1);
    let report = run_cross_validation(&plan, &nights, &mut factory, &cfg).unwrap();
    assert_eq!(report.folds.len(), 2);
    let mut pooled = ConfusionMatrix::new();
    for f in &report.folds {
        pooled.merge(&f.metrics.confusion);
    }
    assert_eq!(report.aggregate.confusion, pooled);
    assert_eq!(report.aggregate.n_epochs, 600);
    assert!(report.aggregate.accuracy >= 0.95, "accuracy {}", report.aggregate.accuracy);
}

#[test]
fn leaked_plan_is_rejected_before_training() {
    let nights = toy_nights(3, 10, 0.2, 1);
    let plan = SplitPlan {
        protocol: Protocol::Shhs,
        seed: 0,
        folds: vec![Fold {
            id: 0,
            train: vec!["syn000".into(), "syn002".into()],
            val: vec!["syn001".into()],
            test: vec!["syn002".into()],
        }],
    };
    let calls = Cell::new(0);
    let cfg = cv_config(1);
    let mut inner = default_factory(cfg.model.clone(), 0);
    let mut factory = |f| {
        calls.set(calls.get() + 1);
        inner(f)
    };
    let err = run_cross_validation(&plan, &nights, &mut factory, &cfg).unwrap_err();
    assert!(matches!(err, Error::Split(_)), "{err}");
    assert_eq!(calls.get(), 0);
}

#[test]
fn single_fold_aggregate_equals_the_fold_and_failures_keep_partial_results() {
    let nights = toy_nights(4, 30, 0.2, 2);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = cv_config(2);
    cfg.train.max_passes = 2;
    cfg.out_dir = Some(dir.path().to_path_buf());
    let fold = |id: usize, test: &str| Fold {
        id,
        train: vec!["syn000".into(), "syn001".into()],
        val: vec!["syn002".into()],
        test: vec![test.into()],
    };
    let single = SplitPlan {
        protocol: Protocol::Shhs,
        seed: 0,
        folds: vec![fold(0, "syn003")],
    };
    let mut factory = default_factory(cfg.model.clone(), 0);
    let r = run_cross_validation(&single, &nights, &mut factory, &cfg).unwrap();
    assert_eq!(r.aggregate, r.folds[0].metrics);
    assert!(dir.path().join("fold-00/report.json").exists());
    assert!(dir.path().join("fold-00/model.ckpt").exists());
    assert!(dir.path().join("aggregate.json").exists());

    let two = SplitPlan {
        protocol: Protocol::Shhs,
        seed: 0,
        folds: vec![fold(0, "syn003"), fold(1, "syn003")],
    };
    let dir2 = tempfile::tempdir().unwrap();
    cfg.out_dir = Some(dir2.path().to_path_buf());
    let mut inner = default_factory(cfg.model.clone(), 0);
    let mut failing = |f: usize| {
        if f == 1 {
            Err(Error::Training("boom".into()))
        } else {
            inner(f)
        }
    };
    let err = run_cross_validation(&two, &nights, &mut failing, &cfg).unwrap_err();
    assert!(matches!(err, Error::Fold { fold: 1, .. }), "{err}");
    assert!(dir2.path().join("fold-00/report.json").exists());
    assert!(!dir2.path().join("aggregate.json").exists());
}
