//! Tree-structured Parzen Estimator search over a small box-bounded space,
//! plus a rank-correlation importance summary.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as NormalDist};
use thiserror::Error;

use crate::io::atomic_write;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuneError {
    #[error("search space is empty")]
    EmptySpace,
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid tuner configuration: {0}")]
    InvalidConfig(String),
    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),
    #[error("need at least {needed} complete trials, have {got}")]
    InsufficientTrials { needed: usize, got: usize },
    #[error("history: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    IntUniform,
    IntStep,
    RealUniform,
    RealLogUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub low: f64,
    pub high: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl ParamSpec {
    fn step(&self) -> f64 {
        match self.kind {
            ParamKind::IntStep => self.step.unwrap_or(1.0),
            _ => 1.0,
        }
    }

    /// Bounds of the coordinate the kernels live in: log for log-uniform,
    /// lattice index (widened by half a cell) for the integer kinds.
    fn internal_bounds(&self) -> (f64, f64) {
        match self.kind {
            ParamKind::RealUniform => (self.low, self.high),
            ParamKind::RealLogUniform => (self.low.ln(), self.high.ln()),
            ParamKind::IntUniform => (self.low - 0.5, self.high + 0.5),
            ParamKind::IntStep => (-0.5, ((self.high - self.low) / self.step()).round() + 0.5),
        }
    }

    fn to_internal(&self, x: f64) -> f64 {
        match self.kind {
            ParamKind::RealUniform | ParamKind::IntUniform => x,
            ParamKind::RealLogUniform => x.ln(),
            ParamKind::IntStep => (x - self.low) / self.step(),
        }
    }

    /// Map an internal coordinate back onto the space, snapping to the lattice.
    fn from_internal(&self, z: f64) -> f64 {
        match self.kind {
            ParamKind::RealUniform => z.clamp(self.low, self.high),
            ParamKind::RealLogUniform => z.exp().clamp(self.low, self.high),
            ParamKind::IntUniform => z.round().clamp(self.low, self.high),
            ParamKind::IntStep => {
                let last = ((self.high - self.low) / self.step()).round();
                self.low + z.round().clamp(0.0, last) * self.step()
            }
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        if !(x >= self.low && x <= self.high) {
            return false;
        }
        match self.kind {
            ParamKind::RealUniform | ParamKind::RealLogUniform => true,
            ParamKind::IntUniform => x.fract() == 0.0,
            ParamKind::IntStep => {
                let k = (x - self.low) / self.step();
                (k - k.round()).abs() < 1e-9
            }
        }
    }

    fn validate(&self) -> Result<(), TuneError> {
        let bad = |m: &str| Err(TuneError::InvalidSpace(format!("{}: {m}", self.name)));
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return bad("bounds must be finite with low < high");
        }
        match self.kind {
            ParamKind::RealLogUniform if self.low <= 0.0 => bad("log-uniform bounds must be positive"),
            ParamKind::IntUniform if self.low.fract() != 0.0 || self.high.fract() != 0.0 => {
                bad("integer bounds must be whole numbers")
            }
            ParamKind::IntStep => {
                let s = match self.step {
                    Some(s) if s > 0.0 && s.is_finite() => s,
                    _ => return bad("int_step needs a positive step"),
                };
                let k = (self.high - self.low) / s;
                if (k - k.round()).abs() > 1e-9 {
                    return bad("step must divide the range");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

pub type Point = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

impl SearchSpace {
    /// Hidden width, depth, dropout and learning rate of the correction model.
    pub fn grn() -> Self {
        let p = |name: &str, kind, low, high, step| ParamSpec {
            name: name.into(),
            kind,
            low,
            high,
            step,
        };
        Self {
            params: vec![
                p("hidden_dim", ParamKind::IntStep, 64.0, 1024.0, Some(64.0)),
                p("num_blocks", ParamKind::IntUniform, 2.0, 10.0, None),
                p("dropout", ParamKind::RealUniform, 0.1, 0.6, None),
                p("lr", ParamKind::RealLogUniform, 1e-4, 1e-2, None),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        if self.params.is_empty() {
            return Err(TuneError::EmptySpace);
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.params {
            p.validate()?;
            if !seen.insert(&p.name) {
                return Err(TuneError::InvalidSpace(format!("duplicate parameter {}", p.name)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, point: &Point) -> bool {
        point.len() == self.params.len()
            && self
                .params
                .iter()
                .all(|p| point.get(&p.name).is_some_and(|&x| p.contains(x)))
    }

    fn sample_uniform(&self, rng: &mut ChaCha8Rng) -> Point {
        self.params
            .iter()
            .map(|p| {
                let (a, b) = p.internal_bounds();
                (p.name.clone(), p.from_internal(rng.random_range(a..b)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub point: Point,
    /// Validation MAE; absent for failed trials.
    pub objective: Option<f64>,
    pub status: TrialStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpeConfig {
    pub seed: u64,
    pub gamma: f64,
    pub n_startup: usize,
    pub n_candidates: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma: 0.25,
            n_startup: 10,
            n_candidates: 24,
        }
    }
}

impl TpeConfig {
    /// Pure random search: every trial is a startup trial.
    pub fn random(seed: u64) -> Self {
        Self {
            seed,
            n_startup: usize::MAX,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(TuneError::InvalidConfig(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if self.n_candidates == 0 {
            return Err(TuneError::InvalidConfig("n_candidates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneHistory {
    pub seed: u64,
    pub gamma: f64,
    pub trials: Vec<TrialRecord>,
}

impl TuneHistory {
    pub fn new(cfg: &TpeConfig) -> Self {
        Self {
            seed: cfg.seed,
            gamma: cfg.gamma,
            trials: Vec::new(),
        }
    }

    fn complete(&self) -> impl Iterator<Item = (&TrialRecord, f64)> {
        self.trials.iter().filter_map(|t| match (t.status, t.objective) {
            (TrialStatus::Complete, Some(v)) => Some((t, v)),
            _ => None,
        })
    }

    pub fn n_complete(&self) -> usize {
        self.complete().count()
    }

    /// Lowest objective; ties go to the earlier trial.
    pub fn best(&self) -> Option<&TrialRecord> {
        self.complete()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.trial_id.cmp(&b.0.trial_id)))
            .map(|(t, _)| t)
    }

    /// Complete trials split at the γ-quantile: (good, bad).
    pub fn split(&self) -> (Vec<&TrialRecord>, Vec<&TrialRecord>) {
        let mut done: Vec<(&TrialRecord, f64)> = self.complete().collect();
        done.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.trial_id.cmp(&b.0.trial_id)));
        let n_good = (self.gamma * done.len() as f64).ceil() as usize;
        let bad = done.split_off(n_good.min(done.len()));
        (
            done.into_iter().map(|t| t.0).collect(),
            bad.into_iter().map(|t| t.0).collect(),
        )
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            out.push_str(&serde_json::to_string(t).expect("trial records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, cfg: &TpeConfig) -> Result<Self, TuneError> {
        let mut h = Self::new(cfg);
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let t: TrialRecord =
                serde_json::from_str(line).map_err(|e| TuneError::Schema(format!("line {}: {e}", i + 1)))?;
            if h.trials.last().is_some_and(|p| p.trial_id >= t.trial_id) {
                return Err(TuneError::Schema(format!("line {}: trial ids must increase", i + 1)));
            }
            if t.status == TrialStatus::Complete && !t.objective.is_some_and(f64::is_finite) {
                return Err(TuneError::Schema(format!(
                    "line {}: complete trial without a finite objective",
                    i + 1
                )));
            }
            h.trials.push(t);
        }
        Ok(h)
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        atomic_write(path, self.to_jsonl().as_bytes())
    }
}

/// Gaussian mixture over one internal coordinate, each component truncated to
/// the parameter bounds, plus a broad prior component.
struct Parzen {
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    weights: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl Parzen {
    fn fit(obs: &[f64], lo: f64, hi: f64) -> Self {
        let range = hi - lo;
        let n = obs.len() as f64;
        // Scott's rule with the spread of the uniform prior as the scale; the
        // sample spread of a tight good set collapses the kernels onto it.
        let bw = 1.06 * range / 12f64.sqrt() * n.max(1.0).powf(-0.2);
        let bw = bw.clamp(0.01 * range, range);
        let mut mus = obs.to_vec();
        let mut sigmas = vec![bw; obs.len()];
        mus.push(0.5 * (lo + hi));
        sigmas.push(range);
        let weights = vec![1.0 / (n + 1.0); obs.len() + 1];
        Self {
            mus,
            sigmas,
            weights,
            lo,
            hi,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.mus.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let dist = Normal::new(self.mus[k], self.sigmas[k]).expect("bandwidth is positive");
        for _ in 0..64 {
            let z = dist.sample(rng);
            if z >= self.lo && z <= self.hi {
                return z;
            }
        }
        self.mus[k].clamp(self.lo, self.hi)
    }

    fn ln_pdf(&self, z: f64) -> f64 {
        let mut p = 0.0;
        for ((mu, sigma), w) in self.mus.iter().zip(&self.sigmas).zip(&self.weights) {
            let d = NormalDist::new(*mu, *sigma).expect("bandwidth is positive");
            let mass = d.cdf(self.hi) - d.cdf(self.lo);
            p += w * d.pdf(z) / mass.max(1e-300);
        }
        p.max(1e-300).ln()
    }
}

fn trial_rng(seed: u64, trial_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ trial_id.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Next point for trial `trial_id` given the history so far.
pub fn suggest(history: &TuneHistory, space: &SearchSpace, cfg: &TpeConfig, trial_id: u64) -> Result<Point, TuneError> {
    space.validate()?;
    cfg.validate()?;
    let mut rng = trial_rng(cfg.seed, trial_id);
    let n_done = history.n_complete();
    if n_done < cfg.n_startup.max(2) {
        return Ok(space.sample_uniform(&mut rng));
    }
    let (good, bad) = history.split();
    let values = |set: &[&TrialRecord], p: &ParamSpec| -> Vec<f64> {
        set.iter()
            .filter_map(|t| t.point.get(&p.name))
            .map(|&x| p.to_internal(x))
            .collect()
    };
    let models: Vec<(Parzen, Parzen)> = space
        .params
        .iter()
        .map(|p| {
            let (lo, hi) = p.internal_bounds();
            (
                Parzen::fit(&values(&good, p), lo, hi),
                Parzen::fit(&values(&bad, p), lo, hi),
            )
        })
        .collect();

    let mut best: Option<(f64, Point)> = None;
    for _ in 0..cfg.n_candidates {
        let mut score = 0.0;
        let mut point = Point::new();
        for (p, (l, g)) in space.params.iter().zip(&models) {
            let x = p.from_internal(l.sample(&mut rng));
            let z = p.to_internal(x);
            score += l.ln_pdf(z) - g.ln_pdf(z);
            point.insert(p.name.clone(), x);
        }
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, point));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

fn record(trial_id: u64, point: Point, result: Result<f64, String>) -> TrialRecord {
    match result {
        Ok(v) if v.is_finite() => TrialRecord {
            trial_id,
            point,
            objective: Some(v),
            status: TrialStatus::Complete,
        },
        _ => TrialRecord {
            trial_id,
            point,
            objective: None,
            status: TrialStatus::Failed,
        },
    }
}

/// Sequential suggest → evaluate → record loop. Errors and non-finite values
/// from the objective mark the trial failed.
pub fn optimize<F>(
    mut objective: F,
    space: &SearchSpace,
    n_trials: usize,
    cfg: &TpeConfig,
) -> Result<(TrialRecord, TuneHistory), TuneError>
where
    F: FnMut(&Point) -> Result<f64, String>,
{
    if n_trials == 0 {
        return Err(TuneError::InvalidConfig("n_trials must be at least 1".into()));
    }
    let mut history = TuneHistory::new(cfg);
    for id in 0..n_trials as u64 {
        let point = suggest(&history, space, cfg, id)?;
        let result = objective(&point);
        history.trials.push(record(id, point, result));
    }
    finish(history)
}

/// Batched variant: `batch` trials are suggested from the same history
/// snapshot and evaluated in parallel, then recorded in trial-id order.
pub fn optimize_batched<F>(
    objective: F,
    space: &SearchSpace,
    n_trials: usize,
    cfg: &TpeConfig,
    batch: usize,
) -> Result<(TrialRecord, TuneHistory), TuneError>
where
    F: Fn(&Point) -> Result<f64, String> + Sync,
{
    if n_trials == 0 || batch == 0 {
        return Err(TuneError::InvalidConfig("n_trials and batch must be at least 1".into()));
    }
    let mut history = TuneHistory::new(cfg);
    let mut next = 0u64;
    while (next as usize) < n_trials {
        let ids: Vec<u64> = (next..(next + batch as u64).min(n_trials as u64)).collect();
        let points = ids
            .iter()
            .map(|&id| suggest(&history, space, cfg, id))
            .collect::<Result<Vec<_>, _>>()?;
        let results: Vec<Result<f64, String>> = points.par_iter().map(&objective).collect();
        for ((id, point), result) in ids.iter().zip(points).zip(results) {
            history.trials.push(record(*id, point, result));
        }
        next += ids.len() as u64;
    }
    finish(history)
}

fn finish(history: TuneHistory) -> Result<(TrialRecord, TuneHistory), TuneError> {
    match history.best() {
        Some(b) => Ok((b.clone(), history)),
        None => Err(TuneError::AllTrialsFailed(history.trials.len())),
    }
}

pub const MIN_IMPORTANCE_TRIALS: usize = 20;

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Squared Spearman correlation of each parameter with the objective,
/// normalized to sum to one; uniform when nothing correlates.
pub fn param_importance(history: &TuneHistory, space: &SearchSpace) -> Result<BTreeMap<String, f64>, TuneError> {
    let done: Vec<(&TrialRecord, f64)> = history.complete().collect();
    if done.len() < MIN_IMPORTANCE_TRIALS {
        return Err(TuneError::InsufficientTrials {
            needed: MIN_IMPORTANCE_TRIALS,
            got: done.len(),
        });
    }
    let y: Vec<f64> = done.iter().map(|d| d.1).collect();
    let raw: Vec<(String, f64)> = space
        .params
        .iter()
        .map(|p| {
            let x: Vec<f64> = done
                .iter()
                .map(|d| d.0.point.get(&p.name).copied().unwrap_or(f64::NAN))
                .collect();
            (p.name.clone(), spearman(&x, &y).powi(2))
        })
        .collect();
    let total: f64 = raw.iter().map(|r| r.1).sum();
    let n = raw.len() as f64;
    Ok(raw
        .into_iter()
        .map(|(k, v)| (k, if total > 0.0 { v / total } else { 1.0 / n }))
        .collect())
}

pub const IMPORTANCE_METHOD: &str = "normalized squared Spearman rank correlation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSummary {
    pub trial_id: u64,
    pub point: Point,
    pub objective: f64,
    pub n_trials: usize,
    pub n_failed: usize,
    /// Absent when too few trials completed.
    pub importance: Option<BTreeMap<String, f64>>,
    pub importance_method: String,
}

impl BestSummary {
    pub fn new(best: &TrialRecord, history: &TuneHistory, space: &SearchSpace) -> Self {
        Self {
            trial_id: best.trial_id,
            point: best.point.clone(),
            objective: best.objective.unwrap_or(f64::NAN),
            n_trials: history.trials.len(),
            n_failed: history.trials.len() - history.n_complete(),
            importance: param_importance(history, space).ok(),
            importance_method: IMPORTANCE_METHOD.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cold_start_is_uniform_and_on_lattice() {
        let space = SearchSpace::grn();
        let h = TuneHistory::new(&TpeConfig::default());
        for id in 0..50 {
            let p = suggest(&h, &space, &TpeConfig::default(), id).unwrap();
            assert!(space.contains(&p), "{p:?}");
            assert_eq!(p["hidden_dim"] % 64.0, 0.0);
        }
    }

    #[test]
    fn split_sizes_follow_gamma() {
        let cfg = TpeConfig::default();
        let mut h = TuneHistory::new(&cfg);
        for i in 0..10 {
            h.trials.push(record(i, Point::new(), Ok(i as f64)));
        }
        h.trials.push(record(10, Point::new(), Err("boom".into())));
        let (good, bad) = h.split();
        assert_eq!(good.len(), 3);
        assert_eq!(bad.len(), 7);
        assert_eq!(good[0].trial_id, 0);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_hand_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[9.0, 4.0, 1.0]), -1.0);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn invalid_spaces() {
        let mut s = SearchSpace::grn();
        s.params[0].step = Some(100.0);
        assert!(matches!(s.validate(), Err(TuneError::InvalidSpace(_))));
        assert_eq!(SearchSpace { params: vec![] }.validate(), Err(TuneError::EmptySpace));
        let mut s = SearchSpace::grn();
        s.params[3].low = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn single_trial_is_best() {
        let space = SearchSpace::grn();
        let (best, h) = optimize(|p| Ok(p["dropout"]), &space, 1, &TpeConfig::default()).unwrap();
        assert_eq!(h.trials.len(), 1);
        assert_eq!(best, h.trials[0]);
    }

    #[test]
    fn all_failed() {
        let space = SearchSpace::grn();
        let r = optimize(|_| Err("nope".into()), &space, 3, &TpeConfig::default());
        assert_eq!(r.unwrap_err(), TuneError::AllTrialsFailed(3));
    }
}
