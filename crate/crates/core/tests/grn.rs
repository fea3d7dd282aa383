mod common;

use faultloc_core::features::{FeatureVector, Scaler, FEATURE_NAMES};
use faultloc_core::grn::{
    adamw_step, adamw_update, mae, predict_corrected, train, Checkpoint, GrnHyperparams, GrnParams, OptState,
    TrainConfig,
};
use faultloc_core::phasor::FaultLoop;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(dropout: f64) -> GrnHyperparams {
    GrnHyperparams {
        hidden_dim: 8,
        num_blocks: 2,
        dropout,
        lr: 1e-3,
    }
}

fn random_x(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0))
}

#[test]
fn backward_matches_central_differences() {
    for seed in 0..5 {
        let p = GrnParams::init(&small(0.2), 5, seed).unwrap();
        let x = random_x(16, 5, 100 + seed);
        let err = common::gradient_check(&p, &x, seed, 1e-6, 1e-7);
        assert!(err < 1e-4, "seed {seed}: max relative error {err:e}");
    }
}

#[test]
fn backward_is_deterministic_for_a_fixed_dropout_seed() {
    let p = GrnParams::init(&small(0.4), 5, 1).unwrap();
    let x = random_x(10, 5, 2);
    let g = |s| {
        let (pred, cache) = p.forward_train(x.view(), s).unwrap();
        p.backward(&cache, &pred).unwrap()
    };
    assert_eq!(g(7), g(7));
    assert_ne!(g(7), g(8));
}

#[test]
fn adamw_single_scalar_step_by_hand() {
    let eps = 1e-8;
    let mut theta = vec![1.0];
    let mut st = OptState::for_sizes(&[1], 0.0, eps);
    adamw_update(vec![(&mut theta[..], true)], &[&[1.0]], &mut st, 0.1).unwrap();
    // m̂ = v̂ = 1 after one bias-corrected step.
    let expected = 1.0 - 0.1 * (1.0 / (1.0 + eps));
    assert!((theta[0] - expected).abs() < 1e-10);
    assert_eq!(st.t, 1);
}

#[test]
fn adamw_with_zero_gradient_is_pure_decay() {
    let (lr, wd) = (0.01, 0.3);
    let mut p = GrnParams::init(&small(0.0), 5, 3).unwrap();
    let before = p.clone();
    let zero = {
        let x = random_x(4, 5, 0);
        let (_, cache) = p.forward_train(x.view(), 0).unwrap();
        p.backward(&cache, &ndarray::Array1::zeros(4)).unwrap()
    };
    let mut st = OptState::new(&p, wd, 1e-8);
    adamw_step(&mut p, &zero, &mut st, lr).unwrap();
    for ((w1, w0), expect_decay) in p
        .clone()
        .tensors_mut()
        .into_iter()
        .zip(before.clone().tensors_mut())
        .map(|((a, d), (b, _))| ((a.to_vec(), b.to_vec()), d))
    {
        for (a, b) in w1.iter().zip(&w0) {
            let expected = if expect_decay { b * (1.0 - lr * wd) } else { *b };
            assert_eq!(*a, expected);
        }
    }
}

#[test]
fn learns_a_linear_target() {
    let x = random_x(2000, 2, 11);
    let y: Vec<f64> = x.rows().into_iter().map(|r| 3.0 * r[0] - 2.0 * r[1]).collect();
    let sd = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
    let y: Vec<f64> = y.iter().map(|v| v / sd).collect();
    let hp = GrnHyperparams {
        hidden_dim: 32,
        num_blocks: 2,
        dropout: 0.0,
        lr: 3e-3,
    };
    let cfg = TrainConfig {
        max_epochs: 100,
        patience: 20,
        ..TrainConfig::default()
    };
    let out = train(&hp, x.view(), &y, &cfg).unwrap();
    assert!(out.best_val_mae < 0.05, "validation MAE {}", out.best_val_mae);
}

#[test]
fn constant_target_is_fitted() {
    let x = random_x(300, 3, 4);
    let y = vec![0.7; 300];
    let hp = GrnHyperparams {
        hidden_dim: 16,
        num_blocks: 2,
        dropout: 0.1,
        lr: 3e-3,
    };
    let cfg = TrainConfig {
        max_epochs: 60,
        patience: 20,
        ..TrainConfig::default()
    };
    let out = train(&hp, x.view(), &y, &cfg).unwrap();
    let pred = out.params.predict(x.view()).unwrap();
    assert!(mae(&pred, &y) < 0.05, "MAE {}", mae(&pred, &y));
}

#[test]
fn training_is_seed_deterministic() {
    let x = random_x(200, 4, 5);
    let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] * r[1] + r[2]).collect();
    let cfg = TrainConfig {
        max_epochs: 8,
        patience: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let a = train(&small(0.3), x.view(), &y, &cfg).unwrap();
    let b = train(&small(0.3), x.view(), &y, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
}

fn identity_scaler(names: &[&str], target_mean: f64) -> Scaler {
    Scaler {
        features: names.iter().map(|s| s.to_string()).collect(),
        mean: vec![0.0; names.len()],
        std: vec![1.0; names.len()],
        target_mean,
        target_std: 2.0,
        fitted: true,
    }
}

/// A network whose output is exactly zero.
fn silent(input_dim: usize) -> GrnParams {
    let mut p = GrnParams::init(&small(0.0), input_dim, 0).unwrap();
    p.w_out.fill(0.0);
    p.b_out.fill(0.0);
    p
}

fn vector(d_est: f64, d_true: f64) -> FeatureVector {
    FeatureVector {
        scenario_id: "x".into(),
        fault_type: FaultLoop::BC,
        values: (0..FEATURE_NAMES.len()).map(|i| i as f64 * 0.01).collect(),
        target_correction_km: d_true - d_est,
    }
}

#[test]
fn zero_output_adds_the_target_mean() {
    let scaler = identity_scaler(&["ia_mag", "d"], 0.4);
    let p = silent(12);
    let d = predict_corrected(&p, &scaler, &vector(5.0, 5.0), 5.0, 12.0).unwrap();
    assert_eq!(d, 5.4);
    let low = predict_corrected(
        &p,
        &identity_scaler(&["ia_mag", "d"], -9.0),
        &vector(5.0, 0.0),
        5.0,
        12.0,
    )
    .unwrap();
    assert_eq!(low, 0.0);
    let high = predict_corrected(
        &p,
        &identity_scaler(&["ia_mag", "d"], 9.0),
        &vector(5.0, 0.0),
        5.0,
        12.0,
    )
    .unwrap();
    assert_eq!(high, 12.0);
}

#[test]
fn unfitted_scaler_is_refused() {
    let p = silent(12);
    let err = predict_corrected(&p, &Scaler::default(), &vector(1.0, 1.0), 1.0, 2.0);
    assert!(err.is_err());
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let x = random_x(120, 12, 8);
    let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] - r[3]).collect();
    let cfg = TrainConfig {
        max_epochs: 5,
        patience: 2,
        ..TrainConfig::default()
    };
    let out = train(&small(0.1), x.view(), &y, &cfg).unwrap();
    let ck = Checkpoint::new("MM", small(0.1), cfg, identity_scaler(&["ia_mag", "d"], 0.1), &out);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(
        back.params.predict(x.view()).unwrap(),
        out.params.predict(x.view()).unwrap()
    );
    let fv = vector(3.0, 4.0);
    assert_eq!(
        back.predict_corrected(&fv, 3.0, 10.0).unwrap(),
        ck.predict_corrected(&fv, 3.0, 10.0).unwrap()
    );
}
