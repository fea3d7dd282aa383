//! Phasor-domain short-circuit simulator for a radial collector feeder.
//!
//! Each feeder is modelled per sequence as a grid source behind `Zs` at the
//! relay bus, a homogeneous π-section line split at the fault point, and an
//! inverter-based remote infeed at the far bus. Two independent solution
//! paths exist: [`solve_fault`] (series/parallel sequence connection with
//! Norton reductions) and [`nodal_oracle`] (nodal admittance matrices plus a
//! phase-domain fault constraint solve).

mod grid;
mod network;
mod nodal;
mod solver;

pub use grid::{
    check_disjoint_locations, default_grids, generate_dataset, GeneratedDataset, GridPair, Locations, ScenarioGrid,
    SkippedRow,
};
pub use network::{FeederConfig, NetworkConfig, RemoteInfeed};
pub use nodal::nodal_oracle;
pub use solver::solve_fault;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phasor::{FaultLoop, RelayPhasors};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("invalid scenario {scenario_id}: {reason}")]
    InvalidScenario { scenario_id: String, reason: String },
    #[error("singular network: {0}")]
    SingularNetwork(String),
    #[error("scenario grid is empty")]
    EmptyGrid,
    #[error("train and test grids share location {location_km} km on line {line_id}")]
    OverlappingSplits { line_id: String, location_km: f64 },
}

/// Ground-truth parameters of one simulated fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub scenario_id: String,
    pub line_id: String,
    pub fault_type: FaultLoop,
    pub distance_km: f64,
    pub r_fault_ohm: f64,
    /// Carried as metadata only; a steady-state phasor solve has no point-on-wave.
    pub inception_angle_deg: f64,
    pub generation_pu: f64,
}

/// Relay-point phasors produced by one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub scenario: FaultScenario,
    pub phasors: RelayPhasors,
}

/// Largest elementwise deviation between two records, relative to the
/// largest voltage (for voltages) or current (for currents) magnitude found
/// in either record.
pub fn record_deviation(a: &RelayPhasors, b: &RelayPhasors) -> f64 {
    let volts = |r: &RelayPhasors| [r.v_pre, r.v_fault];
    let amps = |r: &RelayPhasors| [r.i_pre, r.i_fault];
    let mut worst: f64 = 0.0;
    for (x, y) in [(volts(a), volts(b)), (amps(a), amps(b))] {
        let scale = x
            .iter()
            .chain(y.iter())
            .flat_map(|s| s.phases())
            .map(|p| p.norm())
            .fold(0.0, f64::max);
        if scale == 0.0 {
            continue;
        }
        for (s, t) in x.iter().zip(y.iter()) {
            for (p, q) in s.phases().iter().zip(t.phases()) {
                worst = worst.max((p - q).norm() / scale);
            }
        }
    }
    worst
}
