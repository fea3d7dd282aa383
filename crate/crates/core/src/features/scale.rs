use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Z-score statistics for the retained features and the target, fitted on
/// training rows only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub features: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    pub fitted: bool,
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl Scaler {
    /// `rows[i][j]` is feature `names[j]` of training row `i`.
    pub fn fit(names: &[String], rows: &[Vec<f64>], target: &[f64]) -> Result<Self, FeatureError> {
        if rows.is_empty() || rows.len() != target.len() {
            return Err(FeatureError::LengthMismatch {
                left: rows.len(),
                right: target.len(),
            });
        }
        let mut mean = Vec::with_capacity(names.len());
        let mut std = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let (m, s) = moments(&col);
            if !(s > 0.0) {
                return Err(FeatureError::ZeroVariance(name.clone()));
            }
            mean.push(m);
            std.push(s);
        }
        let (target_mean, target_std) = moments(target);
        if !(target_std > 0.0) {
            return Err(FeatureError::ZeroVariance("target".into()));
        }
        Ok(Self {
            features: names.to_vec(),
            mean,
            std,
            target_mean,
            target_std,
            fitted: true,
        })
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if !self.fitted {
            return Err(FeatureError::NotFitted);
        }
        if row.len() != self.mean.len() {
            return Err(FeatureError::LengthMismatch {
                left: row.len(),
                right: self.mean.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }

    pub fn scale_target(&self, c: f64) -> Result<f64, FeatureError> {
        if !self.fitted {
            return Err(FeatureError::NotFitted);
        }
        Ok((c - self.target_mean) / self.target_std)
    }

    pub fn unscale_target(&self, z: f64) -> Result<f64, FeatureError> {
        if !self.fitted {
            return Err(FeatureError::NotFitted);
        }
        Ok(z * self.target_std + self.target_mean)
    }
}
