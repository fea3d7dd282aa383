//! Exit-gate suite: every criterion runs at its stated tolerance and prints one
//! PASS/FAIL line. Runs without the libtest harness so the lines always show.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use faultloc_core::dataset::{Dataset, Split};
use faultloc_core::eval::{cdf_at, ErrorRecord, FaultGroup, ALL_GROUPS};
use faultloc_core::features::{mutual_information, select_features, SelectionThresholds};
use faultloc_core::grn::{adamw_step, adamw_update, GrnHyperparams, GrnParams, OptState, TrainConfig};
use faultloc_core::locators::{locate, LocatorFailure, LocatorMethod};
use faultloc_core::phasor::{from_sequence, to_sequence, FaultLoop, LineParams, Phasor, ThreePhaseSet, Unit};
use faultloc_core::pipeline::{
    add_estimates, baseline_records, corrected_records, feature_stage, simulate, stability, FeatureStage,
    PipelineConfig, StabilityOutcome,
};
use faultloc_core::sim::{
    nodal_oracle, record_deviation, solve_fault, FaultScenario, FeederConfig, NetworkConfig, RemoteInfeed,
};
use faultloc_core::tune::{optimize, ParamKind, ParamSpec, Point, SearchSpace, TpeConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
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

fn fortescue_round_trip() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut p = || Phasor::from_polar(rng.random_range(1e-3..1e4), rng.random_range(-3.2..3.2));
        let x = ThreePhaseSet::new(p(), p(), p(), Unit::Volt);
        let y = from_sequence(&to_sequence(&x));
        let scale = x.phases().iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in x.phases().iter().zip(y.phases()) {
            worst = worst.max((a - b).norm() / scale);
        }
    }
    let (fast, time) = within(t, Duration::from_secs(1));
    outcome(worst < 1e-12 && fast, format!("max relative error {worst:.2e}, {time}"))
}

fn ideal_locators() -> Outcome {
    let t = Instant::now();
    let line = LineParams::new(Phasor::new(1.5, 4.2), Phasor::new(4.5, 13.0), 12.0).unwrap();
    let net = NetworkConfig {
        lines: vec![FeederConfig {
            line_id: "F".into(),
            line,
            source_z1: Phasor::new(0.25, 2.4),
            source_z0: Phasor::new(0.4, 2.0),
            shunt_b1_us_per_km: 0.0,
            shunt_b0_us_per_km: 0.0,
        }],
        nominal_kv: 34.5,
        base_mva: 100.0,
        remote_infeed: RemoteInfeed::disabled(),
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut pass = true;
    for ft in FaultLoop::ALL {
        for pct in [0.0, 25.0, 50.0, 75.0, 100.0] {
            let d = pct / 100.0 * line.length_km;
            let sc = FaultScenario {
                scenario_id: "ideal".into(),
                line_id: "F".into(),
                fault_type: ft,
                distance_km: d,
                r_fault_ohm: 0.0,
                inception_angle_deg: 0.0,
                generation_pu: 0.0,
            };
            let rec = nodal_oracle(&net, &sc).unwrap();
            for m in LocatorMethod::ALL {
                let e = locate(m, &rec.phasors, ft, &line);
                if !m.applies_to(ft) {
                    pass &= e.failure == Some(LocatorFailure::NotApplicable);
                    continue;
                }
                checked += 1;
                if !e.valid {
                    pass = false;
                    continue;
                }
                worst = worst.max(100.0 * (e.d_est_km - d).abs() / line.length_km);
            }
        }
    }
    let (fast, time) = within(t, Duration::from_secs(1));
    outcome(
        pass && worst < 0.1 && fast,
        format!("{checked} method/loop/location cases, max error {worst:.2e}% of line, {time}"),
    )
}

fn solver_cross_validation() -> Outcome {
    let t = Instant::now();
    let desk = NetworkConfig::desk_default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for i in 0..500 {
        let mut net = desk.clone();
        // Every fourth case without the converter, every third with the
        // remote zero-sequence path open to the grounding transformer.
        net.remote_infeed.enabled = i % 4 != 0;
        net.remote_infeed.zero_seq_blocked = i % 3 != 0;
        let feeder = &net.lines[i % net.lines.len()];
        let sc = FaultScenario {
            scenario_id: format!("x{i}"),
            line_id: feeder.line_id.clone(),
            fault_type: FaultLoop::ALL[i % 10],
            distance_km: rng.random_range(0.0..=1.0) * feeder.line.length_km,
            r_fault_ohm: rng.random_range(0.0..100.0),
            inception_angle_deg: rng.random_range(0.0..360.0),
            generation_pu: rng.random_range(0.0..=1.0),
        };
        match (solve_fault(&net, &sc), nodal_oracle(&net, &sc)) {
            (Ok(a), Ok(b)) => worst = worst.max(record_deviation(&a.phasors, &b.phasors)),
            _ => failures += 1,
        }
    }
    let (fast, time) = within(t, Duration::from_secs(10));
    outcome(
        failures == 0 && worst < 1e-8 && fast,
        format!("500 scenarios, {failures} solver failures, max relative deviation {worst:.2e}, {time}"),
    )
}

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let hp = GrnHyperparams {
        hidden_dim: 8,
        num_blocks: 2,
        dropout: 0.2,
        lr: 1e-3,
    };
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let p = GrnParams::init(&hp, 5, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = Array2::from_shape_fn((16, 5), |_| rng.random_range(-2.0..2.0));
        worst = worst.max(common::gradient_check(&p, &x, seed, 1e-6, 1e-7));
    }
    let (fast, time) = within(t, Duration::from_secs(30));
    outcome(
        worst < 1e-4 && fast,
        format!("5 seeds, max relative error {worst:.2e}, {time}"),
    )
}

fn adamw_conformance() -> Outcome {
    // One scalar step: θ = 1, g = 0.5, η = 0.1, λ = 0.01, ε = 1e-8.
    // m = 0.05, v = 2.5e-4, m̂ = 0.5, v̂ = 0.25.
    let mut theta = vec![1.0];
    let mut st = OptState::for_sizes(&[1], 0.01, 1e-8);
    adamw_update(vec![(&mut theta[..], true)], &[&[0.5]], &mut st, 0.1).unwrap();
    let hand = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0);
    let step_err = (theta[0] - hand).abs();

    let (lr, wd) = (0.01, 0.3);
    let hp = GrnHyperparams {
        hidden_dim: 8,
        num_blocks: 2,
        dropout: 0.0,
        lr,
    };
    let mut p = GrnParams::init(&hp, 5, 3).unwrap();
    let before = p.clone();
    let x = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64 * 0.1);
    let (_, cache) = p.forward_train(x.view(), 0).unwrap();
    let zero = p.backward(&cache, &Array1::zeros(4)).unwrap();
    let mut st = OptState::new(&p, wd, 1e-8);
    adamw_step(&mut p, &zero, &mut st, lr).unwrap();
    let mut after = p.clone();
    let mut original = before.clone();
    let exact = after
        .tensors_mut()
        .into_iter()
        .zip(original.tensors_mut())
        .all(|((a, decay), (b, _))| {
            let factor = if decay { 1.0 - lr * wd } else { 1.0 };
            a.iter().zip(b.iter()).all(|(a, b)| *a == b * factor)
        });
    outcome(
        step_err < 1e-10 && exact,
        format!("scalar step error {step_err:.1e}, zero-gradient step exact decay: {exact}"),
    )
}

fn ksg_accuracy() -> Outcome {
    let t = Instant::now();
    let exact = -0.5 * (1.0f64 - 0.8 * 0.8).ln();
    let (x, y) = common::gaussian_pair(5000, 0.8, 7);
    let mi = mutual_information(&x, &y, 3).unwrap();
    let (u, v) = common::gaussian_pair(5000, 0.0, 8);
    let indep = mutual_information(&u, &v, 3).unwrap();
    let (fast, time) = within(t, Duration::from_secs(30));
    outcome(
        (mi - 0.5108).abs() <= 0.05 && indep < 0.05 && fast,
        format!("rho 0.8: {mi:.4} nats (exact {exact:.4}); independent: {indep:.4} nats, {time}"),
    )
}

fn planted_cliques() -> Outcome {
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut normal = || -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let axpy =
        |a: f64, x: &[f64], b: f64, y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(x, y)| a * x + b * y).collect() };
    let y = normal();
    let a1 = axpy(1.0, &y, 0.3, &normal());
    let a2 = axpy(1.0, &a1, 0.3, &normal());
    let a3 = axpy(3.0, &a1, 0.6, &normal());
    let b1 = axpy(0.3, &y, 1.0, &normal());
    let b2 = axpy(1.0, &b1, 0.1, &normal());
    let abs_y: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    let c1 = axpy(1.0, &abs_y, 0.2, &normal());
    let c2 = axpy(-2.0, &c1, 0.05, &normal());
    let c3 = axpy(1.0, &c1, 0.1, &normal());
    let d1 = axpy(1.0, &y, 0.5, &normal());
    let d2 = axpy(1.0, &d1, 0.4, &normal());
    let names: Vec<String> = ["a1", "a2", "a3", "b1", "b2", "c1", "c2", "c3", "d1", "d2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let cols = vec![a1, a2, a3, b1, b2, c1, c2, c3, d1, d2];
    let r = select_features(&names, &cols, &y, SelectionThresholds::default()).unwrap();

    let members: Vec<Vec<&str>> = r
        .correlation_cliques
        .iter()
        .map(|c| c.members.iter().map(String::as_str).collect())
        .collect();
    let planted = members == [vec!["a1", "a2", "a3"], vec!["b1", "b2"], vec!["c1", "c2", "c3"]];
    let argmax = |c: &[String]| {
        c.iter()
            .max_by(|p, q| r.mi_scores[*p].total_cmp(&r.mi_scores[*q]))
            .cloned()
            .unwrap()
    };
    let reps_ok = r
        .correlation_cliques
        .iter()
        .all(|c| c.representative == argmax(&c.members));
    let mut expected: Vec<String> = r
        .correlation_cliques
        .iter()
        .map(|c| c.representative.clone())
        .chain(["d1".to_string(), "d2".to_string()])
        .filter(|n| r.mi_scores[n] >= 0.1)
        .collect();
    expected.sort_by_key(|n| names.iter().position(|m| m == n));
    let corr_rule = r.retained.contains(&"d1".into()) && r.retained.contains(&"d2".into());
    let mi_rule = r.dropped_low_mi.len() == 1 && r.dropped_low_mi[0].starts_with('b');
    outcome(
        planted && reps_ok && r.retained == expected && corr_rule && mi_rule,
        format!(
            "cliques {members:?}, retained {:?}, dropped below MI 0.1 {:?}",
            r.retained, r.dropped_low_mi
        ),
    )
}

fn tpe_vs_random() -> Outcome {
    let t = Instant::now();
    let real = |name: &str| ParamSpec {
        name: name.into(),
        kind: ParamKind::RealUniform,
        low: -5.0,
        high: 5.0,
        step: None,
    };
    let run = |space: &SearchSpace, f: &dyn Fn(&Point) -> f64| {
        let best = |cfg: TpeConfig| optimize(|p| Ok(f(p)), space, 100, &cfg).unwrap().0.objective.unwrap();
        let tpe = median(
            (0..20)
                .map(|r| {
                    best(TpeConfig {
                        seed: r,
                        ..TpeConfig::default()
                    })
                })
                .collect(),
        );
        let rnd = median((0..20).map(|r| best(TpeConfig::random(r))).collect());
        (tpe, rnd)
    };
    let one = SearchSpace {
        params: vec![real("x")],
    };
    let two = SearchSpace {
        params: vec![real("x"), real("y")],
    };
    let (t1, r1) = run(&one, &|p| (p["x"] - 1.3).powi(2));
    let (t2, r2) = run(&two, &|p| (p["x"] - 1.0).powi(2) + (p["y"] + 2.0).powi(2));
    let (fast, time) = within(t, Duration::from_secs(120));
    outcome(
        t1 <= r1 && t2 <= r2 && fast,
        format!("median best 1D: tpe {t1:.2e} random {r1:.2e}; 2D: tpe {t2:.2e} random {r2:.2e}; {time}"),
    )
}

struct Desk {
    net: NetworkConfig,
    train: Dataset,
    test: Dataset,
}

fn desk_data() -> Desk {
    let cfg = PipelineConfig::default();
    let net = cfg.network().unwrap();
    let sim = simulate(&net, &cfg.grids().unwrap()).unwrap();
    let (mut train, mut test) = (sim.train, sim.test);
    add_estimates(&mut train, &net, &LocatorMethod::ALL).unwrap();
    add_estimates(&mut test, &net, &LocatorMethod::ALL).unwrap();
    Desk { net, train, test }
}

fn run_stability(desk: &Desk, stage: &FeatureStage, seeds: &[u64]) -> StabilityOutcome {
    let hp = GrnHyperparams {
        hidden_dim: 192,
        num_blocks: 2,
        dropout: 0.1298,
        lr: 0.00828,
    };
    stability(
        &stage.prepared,
        &stage.scaler,
        stage.locator,
        &desk.test,
        &hp,
        &TrainConfig::default(),
        seeds,
    )
    .unwrap()
}

/// Median-across-seeds group errors against the matched baseline.
fn correction_property(out: &StabilityOutcome, reduction: f64, per_group: bool) -> (bool, String) {
    let groups = &out.report.distribution.groups;
    let base = &out.report.baseline;
    let mut pass = true;
    let mut parts = Vec::new();
    for g in FaultGroup::ALL.iter().map(|g| g.name()).chain([ALL_GROUPS]) {
        let (Some(d), Some(b)) = (groups.get(g), base.get(g)) else {
            continue;
        };
        let m = d.summary.median;
        if g == ALL_GROUPS {
            pass &= m <= (1.0 - reduction) * b;
        } else if per_group {
            pass &= m <= *b;
        }
        parts.push(format!("{g} {b:.3}->{m:.3}"));
    }
    (pass, parts.join(", "))
}

fn end_to_end(desk: &Desk, started: Instant, locator: LocatorMethod, per_group: bool) -> Outcome {
    let stage = feature_stage(
        &desk.train,
        &desk.test,
        &desk.net,
        locator,
        SelectionThresholds::default(),
    )
    .unwrap();
    let seeds: Vec<u64> = (1..=5).collect();
    let out = run_stability(desk, &stage, &seeds);
    let (pass, detail) = correction_property(&out, 0.5, per_group);
    let (fast, time) = within(started, Duration::from_secs(600));
    outcome(
        pass && fast,
        format!(
            "{} retained features, median of {} seeds (% of line): {detail}; {time}",
            stage.selection.retained.len(),
            seeds.len()
        ),
    )
}

fn report_bytes(out: &StabilityOutcome) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(&out.report).unwrap();
    b.extend(serde_json::to_vec_pretty(&out.median_checkpoint).unwrap());
    b
}

fn stability_protocol(desk: &Desk, stage: &FeatureStage) -> (Outcome, StabilityOutcome) {
    let seeds: Vec<u64> = (1..=50).collect();
    let t = Instant::now();
    let first = run_stability(desk, stage, &seeds);
    let (fast, time) = within(t, Duration::from_secs(1800));
    let second = run_stability(desk, stage, &seeds);
    let identical = report_bytes(&first) == report_bytes(&second);
    let groups = &first.report.distribution.groups;
    let finite = groups.values().all(|g| {
        let s = &g.summary;
        g.values.len() == seeds.len()
            && g.values.iter().all(|v| v.is_finite())
            && [
                s.mean,
                s.median,
                s.q1,
                s.q3,
                s.min,
                s.max,
                s.iqr,
                s.whisker_low,
                s.whisker_high,
            ]
            .iter()
            .all(|v| v.is_finite())
    });
    let iqr: Vec<String> = groups
        .iter()
        .map(|(g, d)| format!("{g} {:.3}", d.summary.iqr))
        .collect();
    (
        outcome(
            finite && identical && fast,
            format!(
                "{} groups finite: {finite}; IQR {}; byte-identical rerun: {identical}; first run {time}",
                groups.len(),
                iqr.join(", ")
            ),
        ),
        first,
    )
}

fn cdf_dominance(desk: &Desk, stage: &FeatureStage, out: &StabilityOutcome) -> Outcome {
    let corrected = corrected_records(&out.median_checkpoint, &stage.prepared, &desk.test).unwrap();
    let ids: std::collections::HashSet<&str> = corrected.iter().map(|r| r.scenario_id.as_str()).collect();
    let base: Vec<ErrorRecord> = baseline_records(&desk.test, Split::Test, &["MM".to_string()])
        .unwrap()
        .into_iter()
        .filter(|r| ids.contains(r.scenario_id.as_str()))
        .collect();
    let errs = |r: &[ErrorRecord]| r.iter().map(|r| r.error_pct).collect::<Vec<_>>();
    let (c, b) = (errs(&corrected), errs(&base));
    let mut pass = c.len() == b.len();
    let mut parts = Vec::new();
    for th in [0.5, 1.0, 2.0, 5.0] {
        let (fc, fb) = (cdf_at(&c, th), cdf_at(&b, th));
        pass &= fc >= fb;
        parts.push(format!("{th}%: {fc:.3} vs {fb:.3}"));
    }
    outcome(
        pass,
        format!(
            "median seed {}, {} rows, GRN-MM vs MM: {}",
            out.report.distribution.median_seed,
            c.len(),
            parts.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let mut results: BTreeMap<u32, (&str, Outcome)> = BTreeMap::new();
    let mut record = |n: u32, name: &'static str, o: Outcome| {
        println!(
            "criterion {n:>2} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.insert(n, (name, o));
    };

    record(1, "Fortescue round-trip", fortescue_round_trip());
    record(2, "ideal-case locator exactness", ideal_locators());
    record(3, "solver cross-validation", solver_cross_validation());
    record(4, "gradient check", gradient_check());
    record(5, "AdamW conformance", adamw_conformance());
    record(6, "KSG mutual information", ksg_accuracy());
    record(7, "planted-clique selection", planted_cliques());
    record(8, "TPE vs random search", tpe_vs_random());

    let started = Instant::now();
    let desk = desk_data();
    println!(
        "desk dataset: {} train rows, {} test rows ({:.1}s)",
        desk.train.rows.len(),
        desk.test.rows.len(),
        started.elapsed().as_secs_f64()
    );
    record(
        9,
        "end-to-end correction, MM",
        end_to_end(&desk, started, LocatorMethod::MM, true),
    );
    let started = Instant::now();
    record(
        10,
        "end-to-end correction, TAKS",
        end_to_end(&desk, started, LocatorMethod::TAKS, false),
    );

    let stage = feature_stage(
        &desk.train,
        &desk.test,
        &desk.net,
        LocatorMethod::MM,
        SelectionThresholds::default(),
    )
    .unwrap();
    let (o, stab) = stability_protocol(&desk, &stage);
    record(11, "stability protocol, 50 seeds", o);
    record(12, "CDF dominance", cdf_dominance(&desk, &stage, &stab));

    let failed: Vec<u32> = results.iter().filter(|(_, (_, o))| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {} of {} criteria pass",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
