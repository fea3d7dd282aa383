//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use faultloc_core::grn::GrnParams;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest relative gap between the analytic gradient of `L = Σ cᵢ·predᵢ`
/// and central differences with step `h`. Entries where both sides are below
/// `floor` are compared absolutely, since their relative error is pure
/// cancellation noise.
pub fn gradient_check(params: &GrnParams, x: &Array2<f64>, seed: u64, h: f64, floor: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ef);
    let c: Array1<f64> = Array1::from_shape_fn(x.nrows(), |_| rng.random_range(-1.0..1.0));
    let loss = |p: &GrnParams| p.forward_train(x.view(), seed).unwrap().0.dot(&c);
    let (_, cache) = params.forward_train(x.view(), seed).unwrap();
    let grads = params.backward(&cache, &c).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

    let mut worst: f64 = 0.0;
    let n_tensors = analytic.len();
    for k in 0..n_tensors {
        for i in 0..analytic[k].len() {
            let mut plus = params.clone();
            plus.tensors_mut()[k].0[i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[k].0[i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic[k][i];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < floor {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / scale
            };
            worst = worst.max(err);
        }
    }
    worst
}

/// `n` draws from a standard bivariate normal with correlation `rho`.
pub fn gaussian_pair(n: usize, rho: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x.push(a);
        y.push(rho * a + (1.0 - rho * rho).sqrt() * b);
    }
    (x, y)
}
