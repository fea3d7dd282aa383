use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{FaultScenario, SimError};
use crate::phasor::{serde_phasor, LineParams, Phasor};

fn default_max_current_pu() -> f64 {
    1.2
}
fn default_pf() -> f64 {
    1.0
}
fn default_neg_seq_fraction() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}
fn default_rated_mva() -> f64 {
    20.0
}
fn default_grounding_z0() -> Phasor {
    Phasor::new(0.5, 6.0)
}

/// Converter-interfaced generation at the remote end of every feeder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteInfeed {
    pub enabled: bool,
    /// Fault-current limit of the online converters, per unit of their rating.
    #[serde(default = "default_max_current_pu")]
    pub max_current_pu: f64,
    /// Power factor of the fault-time positive-sequence current (lagging).
    #[serde(default = "default_pf")]
    pub pf: f64,
    /// Negative-sequence current per unit of remote negative-sequence voltage,
    /// as a fraction of the online current limit.
    #[serde(default = "default_neg_seq_fraction")]
    pub neg_seq_fraction: f64,
    /// Delta interface transformer: no zero-sequence path at the remote bus.
    #[serde(default = "default_true")]
    pub zero_seq_blocked: bool,
    /// Converter rating per feeder.
    #[serde(default = "default_rated_mva")]
    pub rated_mva: f64,
    /// Remote zero-sequence grounding impedance, used when not blocked.
    #[serde(default = "default_grounding_z0", with = "serde_phasor")]
    pub grounding_z0: Phasor,
}

impl RemoteInfeed {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            max_current_pu: default_max_current_pu(),
            pf: default_pf(),
            neg_seq_fraction: default_neg_seq_fraction(),
            zero_seq_blocked: true,
            rated_mva: default_rated_mva(),
            grounding_z0: default_grounding_z0(),
        }
    }
}

/// One radial feeder monitored by a relay at its bus end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederConfig {
    pub line_id: String,
    #[serde(flatten)]
    pub line: LineParams,
    #[serde(with = "serde_phasor")]
    pub source_z1: Phasor,
    #[serde(with = "serde_phasor")]
    pub source_z0: Phasor,
    /// Positive/negative-sequence shunt susceptance, µS per km.
    #[serde(default)]
    pub shunt_b1_us_per_km: f64,
    /// Zero-sequence shunt susceptance, µS per km.
    #[serde(default)]
    pub shunt_b0_us_per_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub lines: Vec<FeederConfig>,
    pub nominal_kv: f64,
    pub base_mva: f64,
    pub remote_infeed: RemoteInfeed,
}

impl NetworkConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let net: Self = serde_json::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        net.validate()?;
        Ok(net)
    }

    /// The shipped desk-scale network.
    pub fn desk_default() -> Self {
        Self::from_json(include_str!("../../configs/network.json")).expect("bundled network config is valid")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.lines.is_empty() {
            return bad("at least one line is required".into());
        }
        if !(self.nominal_kv > 0.0) {
            return bad(format!("nominal_kv must be positive, got {}", self.nominal_kv));
        }
        if !(self.base_mva > 0.0) {
            return bad(format!("base_mva must be positive, got {}", self.base_mva));
        }
        let ibr = &self.remote_infeed;
        if !(ibr.max_current_pu >= 0.0) {
            return bad("max_current_pu must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&ibr.pf) {
            return bad(format!("pf must lie in [0, 1], got {}", ibr.pf));
        }
        if !(ibr.neg_seq_fraction >= 0.0) {
            return bad("neg_seq_fraction must be non-negative".into());
        }
        if !(ibr.rated_mva >= 0.0) {
            return bad("rated_mva must be non-negative".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.lines {
            if !seen.insert(f.line_id.as_str()) {
                return bad(format!("duplicate line_id {}", f.line_id));
            }
            f.line
                .validate()
                .map_err(|e| SimError::InvalidConfig(format!("line {}: {e}", f.line_id)))?;
            if !f.source_z1.is_finite() || !f.source_z0.is_finite() {
                return bad(format!("line {}: source impedance not finite", f.line_id));
            }
        }
        Ok(())
    }

    pub fn feeder(&self, line_id: &str) -> Option<&FeederConfig> {
        self.lines.iter().find(|f| f.line_id == line_id)
    }

    /// Phase-to-neutral nominal voltage in volts.
    pub fn phase_voltage(&self) -> f64 {
        self.nominal_kv * 1e3 / 3f64.sqrt()
    }

    pub fn base_current(&self) -> f64 {
        self.base_mva * 1e6 / (3f64.sqrt() * self.nominal_kv * 1e3)
    }

    pub fn rated_current(&self) -> f64 {
        self.remote_infeed.rated_mva * 1e6 / (3f64.sqrt() * self.nominal_kv * 1e3)
    }

    pub(crate) fn feeder_for<'a>(&'a self, sc: &FaultScenario) -> Result<&'a FeederConfig, SimError> {
        let invalid = |reason: String| SimError::InvalidScenario {
            scenario_id: sc.scenario_id.clone(),
            reason,
        };
        let feeder = self
            .feeder(&sc.line_id)
            .ok_or_else(|| invalid(format!("unknown line {}", sc.line_id)))?;
        let len = feeder.line.length_km;
        if !(sc.distance_km >= 0.0 && sc.distance_km <= len) {
            return Err(invalid(format!("distance {} km outside [0, {len}]", sc.distance_km)));
        }
        if !(sc.r_fault_ohm >= 0.0) {
            return Err(invalid(format!("negative fault resistance {}", sc.r_fault_ohm)));
        }
        if !(0.0..=1.0).contains(&sc.generation_pu) {
            return Err(invalid(format!("generation {} outside [0, 1]", sc.generation_pu)));
        }
        Ok(feeder)
    }
}

/// Which sequence network an element set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Seq {
    Zero,
    Pos,
    Neg,
}

/// Element values of one sequence network for one scenario.
///
/// Topology: source `emf` behind `zs` at the relay bus R; section R–F with
/// series `za` and half-shunts `ya_half`; section F–W with `zb`, `yb_half`;
/// Norton injection (`i_rem`, `y_rem`) at the remote bus W.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SeqElements {
    pub emf: Phasor,
    pub zs: Phasor,
    pub za: Phasor,
    pub ya_half: Phasor,
    pub zb: Phasor,
    pub yb_half: Phasor,
    pub i_rem: Phasor,
    pub y_rem: Phasor,
}

/// Remote infeed state for one solve. `i_pos` is the positive-sequence
/// converter current; the fault state also enables the negative-sequence
/// response.
#[derive(Debug, Clone, Copy)]
pub(crate) enum InfeedState {
    PreFault { i_pos: Phasor },
    Fault { i_pos: Phasor },
}

/// Converter current magnitudes (pre-fault, fault) and fault-time lag angle.
pub(crate) fn injection_setpoints(net: &NetworkConfig, generation_pu: f64) -> (f64, f64, f64) {
    let ibr = &net.remote_infeed;
    if !ibr.enabled {
        return (0.0, 0.0, 0.0);
    }
    let pre = generation_pu * net.rated_current();
    (pre, pre * ibr.max_current_pu, ibr.pf.acos())
}

/// Current of magnitude `mag` lagging the remote voltage by `lag`, where the
/// remote voltage itself responds to the injection as `v_w = a + b·i`.
///
/// Writing `v_w = r·u` with `|u| = 1`, consistency needs `a = u·(r − c)` with
/// `c = b·mag·e^{−j·lag}`, so `r = Re c + √(|a|² − (Im c)²)`. When no positive
/// root exists the converter falls back to the angle of `a`.
pub(crate) fn synchronized_injection(a: Phasor, b: Phasor, mag: f64, lag: f64) -> Phasor {
    if mag == 0.0 {
        return Phasor::new(0.0, 0.0);
    }
    let c = b * Phasor::from_polar(mag, -lag);
    let disc = a.norm_sqr() - c.im * c.im;
    let u = if disc >= 0.0 && c.re + disc.sqrt() > 0.0 {
        a / (c.re + disc.sqrt() - c)
    } else if a.norm() > 0.0 {
        a / a.norm()
    } else {
        Phasor::new(1.0, 0.0)
    };
    u / u.norm() * Phasor::from_polar(mag, -lag)
}

pub(crate) fn sequence_elements(
    net: &NetworkConfig,
    feeder: &FaultScenarioFeeder,
    seq: Seq,
    state: InfeedState,
) -> SeqElements {
    let line = &feeder.feeder.line;
    let d = feeder.distance_km;
    let len = line.length_km;
    let (z_per_km, b_us) = match seq {
        Seq::Zero => (line.z0_per_km(), feeder.feeder.shunt_b0_us_per_km),
        _ => (line.z1_per_km(), feeder.feeder.shunt_b1_us_per_km),
    };
    let y_per_km = Phasor::new(0.0, b_us * 1e-6);
    let zs = match seq {
        Seq::Zero => feeder.feeder.source_z0,
        _ => feeder.feeder.source_z1,
    };
    let emf = match seq {
        Seq::Pos => Phasor::new(net.phase_voltage(), 0.0),
        _ => Phasor::new(0.0, 0.0),
    };

    let ibr = &net.remote_infeed;
    let zero = Phasor::new(0.0, 0.0);
    let online = if ibr.enabled { feeder.generation_pu } else { 0.0 };
    let (i_rem, y_rem) = if !ibr.enabled {
        (zero, zero)
    } else {
        match (seq, state) {
            (Seq::Pos, InfeedState::PreFault { i_pos } | InfeedState::Fault { i_pos }) => (i_pos, zero),
            (Seq::Neg, InfeedState::PreFault { .. }) => (zero, zero),
            (Seq::Neg, InfeedState::Fault { .. }) => {
                // Inductive response to remote negative-sequence voltage.
                let g = ibr.neg_seq_fraction * online * ibr.max_current_pu * net.rated_current() / net.phase_voltage();
                (zero, Phasor::from_polar(g, -PI / 2.0))
            }
            (Seq::Zero, _) => {
                if ibr.zero_seq_blocked {
                    (zero, zero)
                } else {
                    (zero, 1.0 / ibr.grounding_z0)
                }
            }
        }
    };

    SeqElements {
        emf,
        zs,
        za: z_per_km * d,
        ya_half: y_per_km * (d / 2.0),
        zb: z_per_km * (len - d),
        yb_half: y_per_km * ((len - d) / 2.0),
        i_rem,
        y_rem,
    }
}

/// A validated (feeder, fault distance, generation) triple.
pub(crate) struct FaultScenarioFeeder<'a> {
    pub feeder: &'a FeederConfig,
    pub distance_km: f64,
    pub generation_pu: f64,
}
