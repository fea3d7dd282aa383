//! Gated residual network regressor with hand-written gradients.

mod model;
mod optim;
mod train;

pub use model::{
    mae_loss, BatchNorm, Block, BlockGrads, ForwardCache, GrnGrads, GrnHyperparams, GrnParams, BN_EPS, BN_MOMENTUM,
};
pub use optim::{adamw_step, adamw_update, OptState, BETA1, BETA2};
pub use train::{mae, split_indices, train, EpochStats, TrainConfig, TrainOutcome};

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{model_input, one_hot_names, FeatureError, FeatureVector, Scaler};
use crate::io::write_json;

#[derive(Debug, Error)]
pub enum GrnError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("train-mode batch needs at least 2 rows, got {got}")]
    BatchTooSmall { got: usize },
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("not enough rows to train")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to turn a catalog vector into a corrected distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Locator whose estimate the model corrects.
    pub locator: String,
    pub hyperparams: GrnHyperparams,
    pub train_config: TrainConfig,
    pub scaler: Scaler,
    /// One-hot column order appended after the scaled features.
    pub categories: Vec<String>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub params: GrnParams,
}

impl Checkpoint {
    pub fn new(
        locator: &str,
        hyperparams: GrnHyperparams,
        train_config: TrainConfig,
        scaler: Scaler,
        outcome: &TrainOutcome,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            locator: locator.to_string(),
            hyperparams,
            train_config,
            scaler,
            categories: one_hot_names(),
            best_epoch: outcome.best_epoch,
            best_val_mae: outcome.best_val_mae,
            params: outcome.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), GrnError> {
        write_json(path, self).map_err(|e| GrnError::Checkpoint {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, GrnError> {
        let err = |detail: String| GrnError::Checkpoint {
            path: path.display().to_string(),
            detail,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {}", ck.version)));
        }
        if ck.categories != one_hot_names() {
            return Err(err("category order differs from this build".into()));
        }
        if ck.params.input_dim != ck.scaler.features.len() + ck.categories.len() {
            return Err(err("input width does not match the scaler".into()));
        }
        if !ck.params.is_finite() {
            return Err(err("non-finite parameters".into()));
        }
        Ok(ck)
    }

    pub fn predict_corrected(&self, fv: &FeatureVector, d_est: f64, d_max: f64) -> Result<f64, GrnError> {
        predict_corrected(&self.params, &self.scaler, fv, d_est, d_max)
    }
}

/// `clamp(d_est + ĉ, 0, d_max)` where `ĉ` is the de-standardized model output.
pub fn predict_corrected(
    params: &GrnParams,
    scaler: &Scaler,
    fv: &FeatureVector,
    d_est: f64,
    d_max: f64,
) -> Result<f64, GrnError> {
    let x = model_input(scaler, fv)?;
    let x = Array2::from_shape_vec((1, x.len()), x).expect("row shape");
    let z = params.predict(x.view())?[0];
    let c = scaler.unscale_target(z)?;
    Ok((d_est + c).clamp(0.0, d_max))
}

/// Batch version over already-prepared model inputs; returns corrections in km.
pub fn predict_corrections(params: &GrnParams, scaler: &Scaler, x: &Array2<f64>) -> Result<Vec<f64>, GrnError> {
    params
        .predict(x.view())?
        .iter()
        .map(|z| scaler.unscale_target(*z).map_err(GrnError::from))
        .collect()
}
