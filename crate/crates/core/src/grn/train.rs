use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{mae_loss, GrnHyperparams, GrnParams};
use super::optim::{adamw_step, OptState};
use super::GrnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            batch_size: 64,
            patience: 30,
            seed: 0,
            val_fraction: 0.2,
            weight_decay: 1e-4,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GrnError> {
        let bad = |m: &str| Err(GrnError::InvalidConfig(m.into()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return bad("need 0 < max_epochs and patience < max_epochs");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.eps > 0.0) {
            return bad("weight_decay must be ≥ 0 and eps > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the lowest validation MAE.
    pub params: GrnParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

/// Train/validation row split used by [`train`].
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    (idx[n_val..].to_vec(), val)
}

fn rows(x: &ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

pub fn mae(pred: &Array1<f64>, y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / y.len() as f64
}

/// Mini-batch AdamW on the MAE with early stopping on a held-out fraction.
/// Deterministic in (data, hyperparameters, config).
pub fn train(hp: &GrnHyperparams, x: ArrayView2<f64>, y: &[f64], cfg: &TrainConfig) -> Result<TrainOutcome, GrnError> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(GrnError::ShapeMismatch(format!(
            "{} feature rows, {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() < 4 {
        return Err(GrnError::EmptyDataset);
    }
    let (mut train_idx, val_idx) = split_indices(x.nrows(), cfg.val_fraction, cfg.seed);
    if train_idx.len() < 2 {
        return Err(GrnError::EmptyDataset);
    }
    let x_val = rows(&x, &val_idx);
    let y_val: Vec<f64> = val_idx.iter().map(|&i| y[i]).collect();

    let mut params = GrnParams::init(hp, x.ncols(), cfg.seed)?;
    let mut opt = OptState::new(&params, cfg.weight_decay, cfg.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut best = (params.clone(), f64::INFINITY, 0);
    let mut history = Vec::new();

    for epoch in 0..cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut bounds: Vec<(usize, usize)> = (0..train_idx.len())
            .step_by(cfg.batch_size)
            .map(|s| (s, (s + cfg.batch_size).min(train_idx.len())))
            .collect();
        // Batch norm needs two rows; fold a lone trailing row into its neighbor.
        if bounds.len() > 1 && bounds[bounds.len() - 1].1 - bounds[bounds.len() - 1].0 < 2 {
            let last = bounds.pop().unwrap();
            bounds.last_mut().unwrap().1 = last.1;
        }
        let mut total = 0.0;
        for (b, &(s, e)) in bounds.iter().enumerate() {
            let batch = &train_idx[s..e];
            let xb = rows(&x, batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let dropout_seed = cfg
                .seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(((epoch as u64) << 24) | b as u64);
            let (pred, cache) = params.forward_train(xb.view(), dropout_seed)?;
            let (loss, grad) = mae_loss(pred.as_slice().unwrap(), &yb);
            if !loss.is_finite() {
                return Err(GrnError::Diverged {
                    epoch,
                    detail: format!("batch {b} loss is {loss}"),
                });
            }
            total += loss * batch.len() as f64;
            let grads = params.backward(&cache, &Array1::from(grad))?;
            params.update_running_stats(&cache);
            adamw_step(&mut params, &grads, &mut opt, hp.lr)?;
        }
        let val_mae = mae(&params.predict(x_val.view())?, &y_val);
        if !val_mae.is_finite() {
            return Err(GrnError::Diverged {
                epoch,
                detail: format!("validation MAE is {val_mae}"),
            });
        }
        history.push(EpochStats {
            epoch,
            train_mae: total / train_idx.len() as f64,
            val_mae,
        });
        if val_mae < best.1 {
            best = (params.clone(), val_mae, epoch);
        } else if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    let (params, best_val_mae, best_epoch) = best;
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
        best_val_mae,
    })
}
