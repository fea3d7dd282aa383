use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve_fault, FaultScenario, NetworkConfig, SimError};
use crate::dataset::{Dataset, DatasetRow, Split};
use crate::phasor::FaultLoop;

/// Fault positions, either as fractions of each line's length or in km.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locations {
    Fractions(Vec<f64>),
    Km(Vec<f64>),
}

impl Locations {
    fn len(&self) -> usize {
        match self {
            Self::Fractions(v) | Self::Km(v) => v.len(),
        }
    }

    /// Absolute positions on a line of the given length.
    pub fn resolve(&self, length_km: f64) -> Vec<f64> {
        match self {
            Self::Fractions(v) => v.iter().map(|f| f * length_km).collect(),
            Self::Km(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub split_tag: Split,
    pub line_ids: Vec<String>,
    pub fault_types: Vec<FaultLoop>,
    pub locations: Locations,
    pub resistances_ohm: Vec<f64>,
    pub angles_deg: Vec<f64>,
    pub generation_levels_pu: Vec<f64>,
}

impl ScenarioGrid {
    pub fn size(&self) -> usize {
        self.line_ids.len()
            * self.fault_types.len()
            * self.locations.len()
            * self.resistances_ohm.len()
            * self.angles_deg.len()
            * self.generation_levels_pu.len()
    }

    /// Enumerate scenarios in (line, fault type, location, resistance, angle,
    /// generation) order. Unknown lines are reported per row by the solver.
    pub fn scenarios(&self, net: &NetworkConfig) -> Vec<FaultScenario> {
        let mut out = Vec::with_capacity(self.size());
        for line_id in &self.line_ids {
            // An unknown line still enumerates so it surfaces in the skipped report.
            let length = net.feeder(line_id).map_or(f64::NAN, |f| f.line.length_km);
            let positions = match (&self.locations, length.is_nan()) {
                (Locations::Fractions(v), true) => v.clone(),
                (loc, _) => loc.resolve(length),
            };
            for &fault_type in &self.fault_types {
                for &distance_km in &positions {
                    for &r_fault_ohm in &self.resistances_ohm {
                        for &inception_angle_deg in &self.angles_deg {
                            for &generation_pu in &self.generation_levels_pu {
                                out.push(FaultScenario {
                                    scenario_id: format!("{}-{:05}", self.split_tag.name(), out.len() + 1),
                                    line_id: line_id.clone(),
                                    fault_type,
                                    distance_km,
                                    r_fault_ohm,
                                    inception_angle_deg,
                                    generation_pu,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Train and test grids as stored in a grid JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPair {
    pub train: ScenarioGrid,
    pub test: ScenarioGrid,
}

impl GridPair {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let pair: Self = serde_json::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if pair.train.split_tag != Split::Train || pair.test.split_tag != Split::Test {
            return Err(SimError::InvalidConfig("grid split tags must be train and test".into()));
        }
        Ok(pair)
    }
}

/// The bundled train/test grids.
pub fn default_grids() -> (ScenarioGrid, ScenarioGrid) {
    let pair = GridPair::from_json(include_str!("../../configs/grids.json")).expect("bundled grid config is valid");
    (pair.train, pair.test)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRow {
    pub scenario_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    pub skipped: Vec<SkippedRow>,
}

/// Solve every grid point. Rows that fail are listed in `skipped`, never dropped silently.
pub fn generate_dataset(net: &NetworkConfig, grid: &ScenarioGrid) -> Result<GeneratedDataset, SimError> {
    net.validate()?;
    if grid.size() == 0 {
        return Err(SimError::EmptyGrid);
    }
    let scenarios = grid.scenarios(net);
    let solved: Vec<_> = scenarios.par_iter().map(|sc| solve_fault(net, sc)).collect();
    let mut rows = Vec::with_capacity(solved.len());
    let mut skipped = Vec::new();
    for (sc, res) in scenarios.iter().zip(solved) {
        match res {
            Ok(record) => {
                let d_max_km = net
                    .feeder(&sc.line_id)
                    .map(|f| f.line.length_km)
                    .expect("solved scenario has a line");
                rows.push(DatasetRow {
                    split: grid.split_tag,
                    record,
                    d_max_km,
                    estimates: Vec::new(),
                });
            }
            Err(e) => skipped.push(SkippedRow {
                scenario_id: sc.scenario_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(GeneratedDataset {
        dataset: Dataset { rows },
        skipped,
    })
}

/// Train and test grids must not share a fault position on any common line.
pub fn check_disjoint_locations(
    net: &NetworkConfig,
    train: &ScenarioGrid,
    test: &ScenarioGrid,
) -> Result<(), SimError> {
    for line_id in &train.line_ids {
        if !test.line_ids.contains(line_id) {
            continue;
        }
        let Some(feeder) = net.feeder(line_id) else {
            continue;
        };
        let len = feeder.line.length_km;
        let test_km = test.locations.resolve(len);
        for a in train.locations.resolve(len) {
            if test_km.iter().any(|b| (a - b).abs() <= 1e-9 * len.max(1.0)) {
                return Err(SimError::OverlappingSplits {
                    line_id: line_id.clone(),
                    location_km: a,
                });
            }
        }
    }
    Ok(())
}
