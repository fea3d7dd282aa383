use faultloc_core::tune::{
    optimize, optimize_batched, param_importance, suggest, BestSummary, ParamKind, ParamSpec, Point, SearchSpace,
    TpeConfig, TrialRecord, TrialStatus, TuneError, TuneHistory,
};
use proptest::prelude::*;

fn real(name: &str, low: f64, high: f64) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        kind: ParamKind::RealUniform,
        low,
        high,
        step: None,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn best_of(space: &SearchSpace, cfg: &TpeConfig, f: impl Fn(&Point) -> f64) -> f64 {
    let (best, _) = optimize(|p| Ok(f(p)), space, 100, cfg).unwrap();
    best.objective.unwrap()
}

fn tpe_vs_random(space: &SearchSpace, f: impl Fn(&Point) -> f64 + Copy) -> (f64, f64) {
    let tpe: Vec<f64> = (0..20)
        .map(|r| {
            best_of(
                space,
                &TpeConfig {
                    seed: r,
                    ..TpeConfig::default()
                },
                f,
            )
        })
        .collect();
    let rnd: Vec<f64> = (0..20).map(|r| best_of(space, &TpeConfig::random(r), f)).collect();
    let (tpe, rnd) = (median(tpe), median(rnd));
    eprintln!("median best: tpe {tpe:.3e} random {rnd:.3e}");
    (tpe, rnd)
}

#[test]
fn tpe_beats_random_on_a_quadratic() {
    let space = SearchSpace {
        params: vec![real("x", -5.0, 5.0)],
    };
    let (tpe, rnd) = tpe_vs_random(&space, |p| (p["x"] - 1.3).powi(2));
    assert!(tpe <= rnd, "tpe {tpe} random {rnd}");
}

#[test]
fn tpe_beats_random_on_a_separable_objective() {
    let space = SearchSpace {
        params: vec![real("x", -5.0, 5.0), real("y", -5.0, 5.0)],
    };
    let (tpe, rnd) = tpe_vs_random(&space, |p| (p["x"] - 1.0).powi(2) + (p["y"] + 2.0).powi(2));
    assert!(tpe <= rnd, "tpe {tpe} random {rnd}");
}

#[test]
fn suggestions_concentrate_on_the_lr_optimum() {
    let space = SearchSpace::grn();
    let f = |p: &Point| (p["lr"] - 0.005).powi(2);
    let cfg = TpeConfig {
        seed: 3,
        ..TpeConfig::default()
    };
    let (_, history) = optimize(|p| Ok(f(p)), &space, 200, &TpeConfig::random(3)).unwrap();
    let history = TuneHistory {
        gamma: cfg.gamma,
        ..history
    };
    let inside = (200..250u64)
        .map(|id| suggest(&history, &space, &cfg, id).unwrap()["lr"])
        .filter(|lr| (0.003..=0.008).contains(lr))
        .count();
    assert!(inside >= 40, "{inside} of 50");
}

#[test]
fn history_is_deterministic() {
    let space = SearchSpace::grn();
    let f = |p: &Point| Ok(p["dropout"] + p["lr"].ln().abs() * 0.01 + p["hidden_dim"] / 1e4);
    let cfg = TpeConfig {
        seed: 11,
        ..TpeConfig::default()
    };
    let (_, a) = optimize(f, &space, 40, &cfg).unwrap();
    let (_, b) = optimize(f, &space, 40, &cfg).unwrap();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    let (_, c) = optimize_batched(f, &space, 40, &cfg, 4).unwrap();
    let (_, d) = optimize_batched(f, &space, 40, &cfg, 4).unwrap();
    assert_eq!(c.to_jsonl(), d.to_jsonl());
    let (_, e) = optimize_batched(f, &space, 40, &cfg, 1).unwrap();
    assert_eq!(a.to_jsonl(), e.to_jsonl());
}

#[test]
fn failed_trials_are_recorded_and_skipped() {
    let space = SearchSpace {
        params: vec![real("x", 0.0, 1.0)],
    };
    let (best, h) = optimize(
        |p| {
            if p["x"] < 0.5 {
                Err("diverged".into())
            } else {
                Ok(p["x"])
            }
        },
        &space,
        30,
        &TpeConfig::default(),
    )
    .unwrap();
    assert!(h
        .trials
        .iter()
        .any(|t| t.status == TrialStatus::Failed && t.objective.is_none()));
    assert!(best.objective.unwrap() >= 0.5);
    let nan = optimize(|_| Ok(f64::NAN), &space, 2, &TpeConfig::default());
    assert_eq!(nan.unwrap_err(), TuneError::AllTrialsFailed(2));
}

#[test]
fn importance_single_active_parameter() {
    let space = SearchSpace::grn();
    let (_, h) = optimize(|p| Ok(p["num_blocks"]), &space, 60, &TpeConfig::random(5)).unwrap();
    let imp = param_importance(&h, &space).unwrap();
    assert!(imp["num_blocks"] > 0.9, "{imp:?}");
    assert!((imp.values().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn importance_of_a_constant_objective_is_uniform() {
    let space = SearchSpace::grn();
    let (_, h) = optimize(|_| Ok(1.0), &space, 25, &TpeConfig::default()).unwrap();
    let imp = param_importance(&h, &space).unwrap();
    assert!(imp.values().all(|v| *v == 0.25));
}

#[test]
fn importance_needs_twenty_trials() {
    let space = SearchSpace::grn();
    let (best, h) = optimize(|p| Ok(p["lr"]), &space, 19, &TpeConfig::default()).unwrap();
    assert_eq!(
        param_importance(&h, &space),
        Err(TuneError::InsufficientTrials { needed: 20, got: 19 })
    );
    let summary = BestSummary::new(&best, &h, &space);
    assert!(summary.importance.is_none());
}

#[test]
fn jsonl_round_trip_and_validation() {
    let space = SearchSpace::grn();
    let cfg = TpeConfig::default();
    let (_, h) = optimize(|p| Ok(p["dropout"]), &space, 12, &cfg).unwrap();
    let back = TuneHistory::from_jsonl(&h.to_jsonl(), &cfg).unwrap();
    assert_eq!(back, h);
    let mut bad = h.clone();
    bad.trials.swap(0, 1);
    assert!(TuneHistory::from_jsonl(&bad.to_jsonl(), &cfg).is_err());
    let broken = r#"{"trial_id":0,"point":{},"objective":null,"status":"complete"}"#;
    assert!(TuneHistory::from_jsonl(broken, &cfg).is_err());
}

fn arb_history() -> impl Strategy<Value = Vec<(f64, f64, f64, f64, Option<f64>)>> {
    prop::collection::vec(
        (
            0.0..1.0f64,
            0.0..1.0f64,
            0.0..1.0f64,
            0.0..1.0f64,
            prop::option::weighted(0.9, -10.0..10.0f64),
        ),
        0..40,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn suggestions_stay_in_bounds(raw in arb_history(), id in 0u64..1000) {
        let space = SearchSpace::grn();
        let cfg = TpeConfig::default();
        let mut h = TuneHistory::new(&cfg);
        for (i, (a, b, c, d, obj)) in raw.into_iter().enumerate() {
            let point: Point = [
                ("hidden_dim".to_string(), 64.0 * (1.0 + (a * 15.0).round())),
                ("num_blocks".to_string(), 2.0 + (b * 8.0).round()),
                ("dropout".to_string(), 0.1 + 0.5 * c),
                ("lr".to_string(), 1e-4 * 100f64.powf(d)),
            ]
            .into_iter()
            .collect();
            h.trials.push(TrialRecord {
                trial_id: i as u64,
                point,
                objective: obj,
                status: if obj.is_some() { TrialStatus::Complete } else { TrialStatus::Failed },
            });
        }
        let p = suggest(&h, &space, &cfg, id).unwrap();
        prop_assert!(space.contains(&p), "{:?}", p);
        prop_assert_eq!(&p, &suggest(&h, &space, &cfg, id).unwrap());
    }
}
