//! Scenario dataset and its CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{atomic_write, fmt_f64};
use crate::phasor::{FaultLoop, Phasor, RelayPhasors, ThreePhaseSet, Unit};
use crate::sim::{FaultScenario, MeasurementRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub split: Split,
    pub record: MeasurementRecord,
    pub d_max_km: f64,
    /// Per-method distance estimates in column order; `None` marks an invalid estimate.
    pub estimates: Vec<(String, Option<f64>)>,
}

impl DatasetRow {
    pub fn estimate(&self, method: &str) -> Option<Option<f64>> {
        self.estimates.iter().find(|(m, _)| m == method).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
}

const META: [&str; 9] = [
    "scenario_id",
    "split",
    "line_id",
    "fault_type",
    "d_true_km",
    "d_max_km",
    "r_fault_ohm",
    "angle_deg",
    "gen_pu",
];
const ESTIMATE_PREFIX: &str = "d_est_";

fn phasor_columns() -> Vec<String> {
    let mut cols = Vec::with_capacity(24);
    for stage in ["pre", "fault"] {
        for q in ["va", "vb", "vc", "ia", "ib", "ic"] {
            for part in ["re", "im"] {
                cols.push(format!("{q}_{stage}_{part}"));
            }
        }
    }
    cols
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&DatasetRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = META.iter().map(|s| s.to_string()).collect();
        h.extend(phasor_columns());
        if let Some(first) = self.rows.first() {
            h.extend(first.estimates.iter().map(|(m, _)| format!("{ESTIMATE_PREFIX}{m}")));
        }
        h
    }

    pub fn to_csv_string(&self) -> Result<String, DatasetError> {
        let header = self.header();
        let n_est = header.len() - META.len() - 24;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header)?;
        for row in &self.rows {
            if row.estimates.len() != n_est {
                return Err(DatasetError::Schema(format!(
                    "row {} has {} estimate columns, expected {n_est}",
                    row.record.scenario.scenario_id,
                    row.estimates.len()
                )));
            }
            let sc = &row.record.scenario;
            let mut rec = vec![
                sc.scenario_id.clone(),
                row.split.name().to_string(),
                sc.line_id.clone(),
                sc.fault_type.name().to_string(),
                fmt_f64(sc.distance_km),
                fmt_f64(row.d_max_km),
                fmt_f64(sc.r_fault_ohm),
                fmt_f64(sc.inception_angle_deg),
                fmt_f64(sc.generation_pu),
            ];
            let p = &row.record.phasors;
            for (v, i) in [(&p.v_pre, &p.i_pre), (&p.v_fault, &p.i_fault)] {
                for x in v.phases().into_iter().chain(i.phases()) {
                    rec.push(fmt_f64(x.re));
                    rec.push(fmt_f64(x.im));
                }
            }
            for (_, e) in &row.estimates {
                rec.push(e.map(fmt_f64).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| DatasetError::Schema(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DatasetError> {
        let text = self.to_csv_string()?;
        atomic_write(path, text.as_bytes()).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_csv_str(text: &str) -> Result<Self, DatasetError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let expected: Vec<String> = META.iter().map(|s| s.to_string()).chain(phasor_columns()).collect();
        if header.len() < expected.len() || header[..expected.len()] != expected[..] {
            return Err(DatasetError::Schema(
                "header does not match the dataset column layout".into(),
            ));
        }
        let methods: Vec<String> = header[expected.len()..]
            .iter()
            .map(|h| {
                h.strip_prefix(ESTIMATE_PREFIX)
                    .map(str::to_string)
                    .ok_or_else(|| DatasetError::Schema(format!("unexpected column {h}")))
            })
            .collect::<Result<_, _>>()?;

        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let ctx = |what: &str| DatasetError::Schema(format!("data row {}: {what}", line + 1));
            let num = |i: usize| -> Result<f64, DatasetError> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| ctx(&format!("column {} is not a number", header[i])))
            };
            let split = match &rec[1] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(ctx(&format!("unknown split {other}"))),
            };
            let fault_type: FaultLoop = rec[3]
                .parse()
                .map_err(|_| ctx(&format!("unknown fault type {}", &rec[3])))?;
            let mut vals = [0.0; 24];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = num(META.len() + k)?;
            }
            let set = |off: usize, unit| {
                let p = |j: usize| Phasor::new(vals[off + 2 * j], vals[off + 2 * j + 1]);
                ThreePhaseSet::new(p(0), p(1), p(2), unit)
            };
            let phasors = RelayPhasors {
                v_pre: set(0, Unit::Volt),
                i_pre: set(6, Unit::Ampere),
                v_fault: set(12, Unit::Volt),
                i_fault: set(18, Unit::Ampere),
            };
            let mut estimates = Vec::with_capacity(methods.len());
            for (k, m) in methods.iter().enumerate() {
                let i = expected.len() + k;
                let v = if rec[i].trim().is_empty() { None } else { Some(num(i)?) };
                estimates.push((m.clone(), v));
            }
            rows.push(DatasetRow {
                split,
                record: MeasurementRecord {
                    scenario: FaultScenario {
                        scenario_id: rec[0].to_string(),
                        line_id: rec[2].to_string(),
                        fault_type,
                        distance_km: num(4)?,
                        r_fault_ohm: num(6)?,
                        inception_angle_deg: num(7)?,
                        generation_pu: num(8)?,
                    },
                    phasors,
                },
                d_max_km: num(5)?,
                estimates,
            });
        }
        Ok(Self { rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_str(&text)
    }
}
