//! Feature catalog extraction, MI/correlation selection, and standardization.

mod catalog;
mod mi;
mod scale;
mod select;

pub use catalog::{extract_features, feature_index, one_hot, one_hot_names, FeatureVector, FEATURE_NAMES, N_FEATURES};
pub use mi::{mutual_information, mutual_information_seeded, DEFAULT_K};
pub use scale::Scaler;
pub use select::{pearson, select_features, Clique, SelectionReport, SelectionThresholds};

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{Dataset, Split};
use crate::io::{atomic_write, fmt_f64};
use crate::locators::{locate, LocatorMethod};
use crate::phasor::FaultLoop;
use crate::sim::NetworkConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("invalid distance estimate: {0}")]
    InvalidEstimate(String),
    #[error("non-finite feature {feature} in scenario {scenario_id}")]
    NonFinite { scenario_id: String, feature: String },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("feature {0} has zero variance on the training split")]
    ZeroVariance(String),
    #[error("scaler used before fitting")]
    NotFitted,
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("feature file: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedRow {
    pub scenario_id: String,
    pub reason: String,
}

/// Extracted features for one dataset row plus the quantities needed to
/// evaluate a correction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub split: Split,
    pub features: FeatureVector,
    pub d_true_km: f64,
    pub d_est_km: f64,
    pub d_max_km: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
    pub excluded: Vec<ExcludedRow>,
}

impl FeatureTable {
    /// Locate every row with `method` and extract its catalog. Rows whose
    /// estimate or features fail are excluded with a reason.
    pub fn build(ds: &Dataset, net: &NetworkConfig, method: LocatorMethod) -> Self {
        let mut table = Self::default();
        for row in &ds.rows {
            let sc = &row.record.scenario;
            let exclude = |reason: String| ExcludedRow {
                scenario_id: sc.scenario_id.clone(),
                reason,
            };
            let Some(feeder) = net.feeder(&sc.line_id) else {
                table.excluded.push(exclude(format!("unknown line {}", sc.line_id)));
                continue;
            };
            let est = locate(method, &row.record.phasors, sc.fault_type, &feeder.line);
            match extract_features(&row.record, sc.fault_type, &feeder.line, &est) {
                Ok(features) => table.rows.push(FeatureRow {
                    split: row.split,
                    features,
                    d_true_km: sc.distance_km,
                    d_est_km: est.d_est_km,
                    d_max_km: row.d_max_km,
                }),
                Err(e) => table.excluded.push(exclude(e.to_string())),
            }
        }
        table
    }

    pub fn split(&self, split: Split) -> Vec<&FeatureRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    /// Catalog columns and targets of one split.
    pub fn columns(&self, split: Split) -> (Vec<Vec<f64>>, Vec<f64>) {
        let rows = self.split(split);
        let cols = (0..N_FEATURES)
            .map(|j| rows.iter().map(|r| r.features.values[j]).collect())
            .collect();
        let target = rows.iter().map(|r| r.features.target_correction_km).collect();
        (cols, target)
    }
}

pub fn catalog_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Run selection on the training split of `table`.
pub fn select_from_table(
    table: &FeatureTable,
    thresholds: SelectionThresholds,
) -> Result<SelectionReport, FeatureError> {
    let (cols, target) = table.columns(Split::Train);
    select_features(&catalog_names(), &cols, &target, thresholds)
}

/// Model-ready row: standardized retained features followed by the one-hot block.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRow {
    pub scenario_id: String,
    pub split: Split,
    pub fault_type: FaultLoop,
    pub x: Vec<f64>,
    pub target_correction_km: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    /// Retained feature names followed by the one-hot names.
    pub columns: Vec<String>,
    pub rows: Vec<PreparedRow>,
}

fn retained_indices(retained: &[String]) -> Result<Vec<usize>, FeatureError> {
    retained
        .iter()
        .map(|n| feature_index(n).ok_or_else(|| FeatureError::UnknownFeature(n.clone())))
        .collect()
}

/// Fit the scaler on the retained columns of the training split.
pub fn fit_scaler(table: &FeatureTable, retained: &[String]) -> Result<Scaler, FeatureError> {
    let idx = retained_indices(retained)?;
    let train = table.split(Split::Train);
    let rows: Vec<Vec<f64>> = train
        .iter()
        .map(|r| idx.iter().map(|&j| r.features.values[j]).collect())
        .collect();
    let target: Vec<f64> = train.iter().map(|r| r.features.target_correction_km).collect();
    Scaler::fit(retained, &rows, &target)
}

/// Standardized model input for one catalog vector.
pub fn model_input(scaler: &Scaler, fv: &FeatureVector) -> Result<Vec<f64>, FeatureError> {
    let idx = retained_indices(&scaler.features)?;
    let raw: Vec<f64> = idx.iter().map(|&j| fv.values[j]).collect();
    let mut x = scaler.transform(&raw)?;
    x.extend(one_hot(fv.fault_type));
    Ok(x)
}

pub fn prepare(table: &FeatureTable, scaler: &Scaler) -> Result<PreparedData, FeatureError> {
    let mut columns = scaler.features.clone();
    columns.extend(one_hot_names());
    let rows = table
        .rows
        .iter()
        .map(|r| {
            Ok(PreparedRow {
                scenario_id: r.features.scenario_id.clone(),
                split: r.split,
                fault_type: r.features.fault_type,
                x: model_input(scaler, &r.features)?,
                target_correction_km: r.features.target_correction_km,
            })
        })
        .collect::<Result<_, FeatureError>>()?;
    Ok(PreparedData { columns, rows })
}

impl PreparedData {
    pub fn split(&self, split: Split) -> Vec<&PreparedRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    pub fn to_csv_string(&self) -> Result<String, FeatureError> {
        let schema = |e: csv::Error| FeatureError::Schema(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.columns.clone();
        header.extend(["target_correction_km", "scenario_id", "split"].map(String::from));
        w.write_record(&header).map_err(schema)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.x.iter().map(|v| fmt_f64(*v)).collect();
            rec.push(fmt_f64(r.target_correction_km));
            rec.push(r.scenario_id.clone());
            rec.push(r.split.name().into());
            w.write_record(&rec).map_err(schema)?;
        }
        let bytes = w.into_inner().map_err(|e| FeatureError::Schema(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), FeatureError> {
        let text = self.to_csv_string()?;
        atomic_write(path, text.as_bytes()).map_err(|e| FeatureError::Schema(e.to_string()))
    }

    pub fn from_csv_str(text: &str) -> Result<Self, FeatureError> {
        let schema = |m: String| FeatureError::Schema(m);
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| schema(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let n = header.len();
        if n < 13 || header[n - 3..] != ["target_correction_km", "scenario_id", "split"] {
            return Err(schema("missing trailing target/scenario/split columns".into()));
        }
        let columns = header[..n - 3].to_vec();
        let onehots = one_hot_names();
        if columns[columns.len() - 10..] != onehots[..] {
            return Err(schema("one-hot block missing or out of order".into()));
        }
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| schema(e.to_string()))?;
            let num = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| schema(format!("row {}: column {} is not a number", line + 1, header[i])))
            };
            let x: Vec<f64> = (0..columns.len()).map(num).collect::<Result<_, _>>()?;
            let hot = &x[columns.len() - 10..];
            let k = hot
                .iter()
                .position(|v| *v == 1.0)
                .filter(|_| hot.iter().sum::<f64>() == 1.0)
                .ok_or_else(|| schema(format!("row {}: malformed one-hot block", line + 1)))?;
            let split = match &rec[n - 1] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(schema(format!("row {}: unknown split {other}", line + 1))),
            };
            rows.push(PreparedRow {
                scenario_id: rec[n - 2].to_string(),
                split,
                fault_type: FaultLoop::ALL[k],
                target_correction_km: num(n - 3)?,
                x,
            });
        }
        Ok(Self { columns, rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self, FeatureError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| FeatureError::Schema(format!("{}: {e}", path.display())))?;
        Self::from_csv_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_layout() {
        assert_eq!(
            one_hot(FaultLoop::AG),
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(one_hot(FaultLoop::ABC)[9], 1.0);
        for l in FaultLoop::ALL {
            assert_eq!(one_hot(l).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn catalog_names_are_unique() {
        let mut names = catalog_names();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), N_FEATURES);
    }
}
