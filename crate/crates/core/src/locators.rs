//! One-terminal fault-distance estimators.
//!
//! All methods share the polarized reactance form
//! `d = L·Im(v_loop·conj(p)) / Im(z1·i_loop·conj(p))` for some polarizing
//! current `p`, except IMPE which compares magnitudes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::phasor::{
    ab_polarizer, alpha, loop_quantities, pre_fault_loop_quantities, FaultLoop, LineParams, LoopFamily, Phasor,
    PhasorError, RelayPhasors, DEFAULT_MIN_LOOP_CURRENT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LocatorMethod {
    MM,
    IMPE,
    REAC,
    TAKS,
    TAKN,
    TAKZ,
}

impl LocatorMethod {
    /// Comparison-table row order.
    pub const ALL: [LocatorMethod; 6] = [
        LocatorMethod::IMPE,
        LocatorMethod::REAC,
        LocatorMethod::TAKS,
        LocatorMethod::TAKN,
        LocatorMethod::TAKZ,
        LocatorMethod::MM,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::MM => "MM",
            Self::IMPE => "IMPE",
            Self::REAC => "REAC",
            Self::TAKS => "TAKS",
            Self::TAKN => "TAKN",
            Self::TAKZ => "TAKZ",
        }
    }

    /// Whether the method has a polarizing quantity for this loop.
    pub fn applies_to(self, fault_loop: FaultLoop) -> bool {
        match self {
            Self::TAKZ => fault_loop.is_ground(),
            Self::TAKN => fault_loop.family() != LoopFamily::ThreePhase,
            _ => true,
        }
    }
}

impl fmt::Display for LocatorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LocatorMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        Self::ALL
            .into_iter()
            .find(|m| m.name() == up)
            .ok_or_else(|| format!("unknown locator method '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocatorFailure {
    NotApplicable,
    ZeroDenominator,
    ZeroLoopCurrent,
    InvalidLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    /// Estimated distance; 0 when `valid` is false.
    pub d_est_km: f64,
    pub method: LocatorMethod,
    pub fault_loop: FaultLoop,
    pub valid: bool,
    pub diagnostic: String,
    pub failure: Option<LocatorFailure>,
}

impl DistanceEstimate {
    fn ok(method: LocatorMethod, fault_loop: FaultLoop, d: f64) -> Self {
        Self {
            d_est_km: d,
            method,
            fault_loop,
            valid: true,
            diagnostic: String::new(),
            failure: None,
        }
    }

    fn fail(method: LocatorMethod, fault_loop: FaultLoop, failure: LocatorFailure, diagnostic: String) -> Self {
        Self {
            d_est_km: 0.0,
            method,
            fault_loop,
            valid: false,
            diagnostic,
            failure: Some(failure),
        }
    }

    pub fn value(&self) -> Option<f64> {
        self.valid.then_some(self.d_est_km)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocatorOptions {
    /// Smallest accepted `|i_loop|`, in the record's current unit.
    pub min_loop_current: f64,
    /// Smallest accepted normalized denominator, `|Im(z·i·conj(p))| / (|z||i||p|)`.
    pub min_denominator: f64,
}

impl Default for LocatorOptions {
    fn default() -> Self {
        Self {
            min_loop_current: DEFAULT_MIN_LOOP_CURRENT,
            min_denominator: 1e-12,
        }
    }
}

/// Multi-Method estimate: the loop's own Table-style polarizer `i_f`.
pub fn multi_method(rec: &RelayPhasors, fault_loop: FaultLoop, line: &LineParams) -> DistanceEstimate {
    locate(LocatorMethod::MM, rec, fault_loop, line)
}

pub fn locate(method: LocatorMethod, rec: &RelayPhasors, fault_loop: FaultLoop, line: &LineParams) -> DistanceEstimate {
    locate_with(method, rec, fault_loop, line, &LocatorOptions::default())
}

pub fn locate_with(
    method: LocatorMethod,
    rec: &RelayPhasors,
    fault_loop: FaultLoop,
    line: &LineParams,
    opts: &LocatorOptions,
) -> DistanceEstimate {
    let fail = |f, msg: String| DistanceEstimate::fail(method, fault_loop, f, msg);
    if let Err(e) = line.validate() {
        return fail(LocatorFailure::InvalidLine, e.to_string());
    }
    if !method.applies_to(fault_loop) {
        return fail(
            LocatorFailure::NotApplicable,
            format!("{method} has no polarizing quantity for a {fault_loop} loop"),
        );
    }
    if !rec.is_finite() {
        return fail(LocatorFailure::ZeroLoopCurrent, "non-finite phasors".into());
    }
    let q = match loop_quantities(rec, fault_loop, line, opts.min_loop_current) {
        Ok(q) => q,
        Err(e @ PhasorError::ZeroLoopCurrent { .. }) => return fail(LocatorFailure::ZeroLoopCurrent, e.to_string()),
        Err(e) => return fail(LocatorFailure::InvalidLine, e.to_string()),
    };
    let len = line.length_km;
    let z1 = line.z1;

    let polarizer = match method {
        LocatorMethod::IMPE => {
            let d = len * (q.v_loop / q.i_loop).norm() / z1.norm();
            return finish(method, fault_loop, d);
        }
        LocatorMethod::REAC => q.i_loop,
        LocatorMethod::MM => q.i_f,
        LocatorMethod::TAKS => {
            let pre = match pre_fault_loop_quantities(rec, fault_loop, line) {
                Ok(p) => p,
                Err(e) => return fail(LocatorFailure::InvalidLine, e.to_string()),
            };
            q.i_loop - pre.i_loop
        }
        LocatorMethod::TAKN => negative_sequence_polarizer(rec, fault_loop),
        LocatorMethod::TAKZ => rec.i_fault.to_sequence().zero,
    };

    let scale = z1.norm() * q.i_loop.norm() * polarizer.norm();
    if !(polarizer.norm() > 1e-9 * q.i_loop.norm()) || !(scale > 0.0) {
        return fail(
            LocatorFailure::ZeroDenominator,
            format!("{method} polarizing current is zero"),
        );
    }
    let num = (q.v_loop * polarizer.conj()).im;
    let den = (z1 * q.i_loop * polarizer.conj()).im;
    if !(den.abs() / scale >= opts.min_denominator) {
        return fail(
            LocatorFailure::ZeroDenominator,
            format!("{method} denominator {den:e} below guard"),
        );
    }
    finish(method, fault_loop, len * num / den)
}

fn finish(method: LocatorMethod, fault_loop: FaultLoop, d: f64) -> DistanceEstimate {
    if d.is_finite() {
        DistanceEstimate::ok(method, fault_loop, d)
    } else {
        DistanceEstimate::fail(
            method,
            fault_loop,
            LocatorFailure::ZeroDenominator,
            "non-finite estimate".into(),
        )
    }
}

/// Negative-sequence polarizer rotated onto the loop's fault-path current:
/// raw `İ2` for phase-ground loops, `İ2·e^{−j30°}` for phase-phase and
/// `α²·İ2` for phase-phase-ground, all in the loop's A-referenced frame.
fn negative_sequence_polarizer(rec: &RelayPhasors, fault_loop: FaultLoop) -> Phasor {
    let i2 = rec.i_fault.relabel(fault_loop.rotation()).to_sequence().neg;
    match fault_loop.family() {
        LoopFamily::PhaseGround => i2,
        LoopFamily::PhasePhase => ab_polarizer(i2),
        LoopFamily::PhasePhaseGround => alpha() * alpha() * i2,
        LoopFamily::ThreePhase => Phasor::new(0.0, 0.0),
    }
}
