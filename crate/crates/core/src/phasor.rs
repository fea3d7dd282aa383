//! Phasor algebra, symmetrical components and fault-loop quantities.
//!
//! Conventions: phase sequence ABC, `α = 1∠120°`, positive sequence
//! `(a + α·b + α²·c) / 3`. Angles are radians everywhere in this module.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A complex phasor.
pub type Phasor = Complex64;

/// Serde adapter writing a phasor as `{ "re": .., "im": .. }`.
pub mod serde_phasor {
    use super::Phasor;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct ReIm {
        re: f64,
        im: f64,
    }

    pub fn serialize<S: Serializer>(p: &Phasor, s: S) -> Result<S::Ok, S::Error> {
        ReIm { re: p.re, im: p.im }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Phasor, D::Error> {
        let v = ReIm::deserialize(d)?;
        Ok(Phasor::new(v.re, v.im))
    }
}

/// Default lower bound on `|i_loop|` below which a loop is treated as dead.
pub const DEFAULT_MIN_LOOP_CURRENT: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhasorError {
    #[error("degenerate line: {0}")]
    DegenerateLine(String),
    #[error("loop current magnitude {magnitude:e} below {threshold:e} for {fault_loop} loop")]
    ZeroLoopCurrent {
        fault_loop: FaultLoop,
        magnitude: f64,
        threshold: f64,
    },
    #[error("unknown fault loop '{0}'")]
    UnknownLoop(String),
}

/// The `α = 1∠120°` Fortescue operator.
pub fn alpha() -> Phasor {
    Phasor::from_polar(1.0, 2.0 * PI / 3.0)
}

pub fn from_polar_deg(magnitude: f64, angle_deg: f64) -> Phasor {
    Phasor::from_polar(magnitude, angle_deg.to_radians())
}

/// Magnitude and angle accessors with the angle range pinned to `(-π, π]`.
pub trait PhasorExt {
    fn magnitude(&self) -> f64;
    fn angle(&self) -> f64;
}

impl PhasorExt for Phasor {
    fn magnitude(&self) -> f64 {
        self.norm()
    }

    fn angle(&self) -> f64 {
        let a = self.im.atan2(self.re);
        if a <= -PI {
            PI
        } else {
            a
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Volt,
    Ampere,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreePhaseSet {
    pub a: Phasor,
    pub b: Phasor,
    pub c: Phasor,
    pub unit: Unit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceSet {
    pub zero: Phasor,
    pub pos: Phasor,
    pub neg: Phasor,
    pub unit: Unit,
}

impl ThreePhaseSet {
    pub fn new(a: Phasor, b: Phasor, c: Phasor, unit: Unit) -> Self {
        Self { a, b, c, unit }
    }

    /// Positive-sequence balanced set with phase `a` equal to `a`.
    pub fn balanced(a: Phasor, unit: Unit) -> Self {
        let al = alpha();
        Self::new(a, a * al * al, a * al, unit)
    }

    pub fn zero(unit: Unit) -> Self {
        let z = Phasor::new(0.0, 0.0);
        Self::new(z, z, z, unit)
    }

    pub fn phases(&self) -> [Phasor; 3] {
        [self.a, self.b, self.c]
    }

    pub fn from_phases(p: [Phasor; 3], unit: Unit) -> Self {
        Self::new(p[0], p[1], p[2], unit)
    }

    pub fn to_sequence(&self) -> SequenceSet {
        to_sequence(self)
    }

    /// Relabel phases so that phase index `k` becomes phase `a`:
    /// `k = 1` maps (a, b, c) to (b, c, a).
    pub fn relabel(&self, k: usize) -> Self {
        let p = self.phases();
        Self::from_phases([p[k % 3], p[(k + 1) % 3], p[(k + 2) % 3]], self.unit)
    }

    pub fn scale(&self, s: Phasor) -> Self {
        Self::new(self.a * s, self.b * s, self.c * s, self.unit)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(self.a - other.a, self.b - other.b, self.c - other.c, self.unit)
    }

    pub fn is_finite(&self) -> bool {
        self.phases().iter().all(|p| p.is_finite())
    }
}

impl SequenceSet {
    pub fn to_three_phase(&self) -> ThreePhaseSet {
        from_sequence(self)
    }
}

/// Fortescue transform.
pub fn to_sequence(abc: &ThreePhaseSet) -> SequenceSet {
    let al = alpha();
    let al2 = al * al;
    SequenceSet {
        zero: (abc.a + abc.b + abc.c) / 3.0,
        pos: (abc.a + al * abc.b + al2 * abc.c) / 3.0,
        neg: (abc.a + al2 * abc.b + al * abc.c) / 3.0,
        unit: abc.unit,
    }
}

/// Inverse Fortescue transform.
pub fn from_sequence(seq: &SequenceSet) -> ThreePhaseSet {
    let al = alpha();
    let al2 = al * al;
    ThreePhaseSet {
        a: seq.zero + seq.pos + seq.neg,
        b: seq.zero + al2 * seq.pos + al * seq.neg,
        c: seq.zero + al * seq.pos + al2 * seq.neg,
        unit: seq.unit,
    }
}

/// Homogeneous line section, impedances in ohms for the full length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    #[serde(with = "serde_phasor")]
    pub z1: Phasor,
    #[serde(with = "serde_phasor")]
    pub z0: Phasor,
    pub length_km: f64,
}

impl LineParams {
    pub fn new(z1: Phasor, z0: Phasor, length_km: f64) -> Result<Self, PhasorError> {
        let line = Self { z1, z0, length_km };
        line.validate()?;
        Ok(line)
    }

    pub fn validate(&self) -> Result<(), PhasorError> {
        if !(self.length_km.is_finite() && self.length_km > 0.0) {
            return Err(PhasorError::DegenerateLine(format!(
                "length_km must be positive, got {}",
                self.length_km
            )));
        }
        if !(self.z1.norm() > 0.0) || !self.z1.is_finite() || !self.z0.is_finite() {
            return Err(PhasorError::DegenerateLine(
                "positive-sequence impedance must be finite and nonzero".into(),
            ));
        }
        Ok(())
    }

    pub fn z1_per_km(&self) -> Phasor {
        self.z1 / self.length_km
    }

    pub fn z0_per_km(&self) -> Phasor {
        self.z0 / self.length_km
    }
}

/// `K0 = (Z0 − Z1) / Z1`.
pub fn zero_seq_comp_factor(line: &LineParams) -> Result<Phasor, PhasorError> {
    if !(line.z1.norm() > 0.0) {
        return Err(PhasorError::DegenerateLine("|z1| = 0".into()));
    }
    Ok((line.z0 - line.z1) / line.z1)
}

/// The ten shunt fault types, in one-hot category order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultLoop {
    AG,
    BG,
    CG,
    AB,
    BC,
    CA,
    ABG,
    BCG,
    CAG,
    ABC,
}

/// Family of a fault loop once rotated to reference phase `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopFamily {
    PhaseGround,
    PhasePhase,
    PhasePhaseGround,
    ThreePhase,
}

impl FaultLoop {
    pub const ALL: [FaultLoop; 10] = [
        FaultLoop::AG,
        FaultLoop::BG,
        FaultLoop::CG,
        FaultLoop::AB,
        FaultLoop::BC,
        FaultLoop::CA,
        FaultLoop::ABG,
        FaultLoop::BCG,
        FaultLoop::CAG,
        FaultLoop::ABC,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).unwrap()
    }

    pub fn family(self) -> LoopFamily {
        use FaultLoop::*;
        match self {
            AG | BG | CG => LoopFamily::PhaseGround,
            AB | BC | CA => LoopFamily::PhasePhase,
            ABG | BCG | CAG => LoopFamily::PhasePhaseGround,
            ABC => LoopFamily::ThreePhase,
        }
    }

    pub fn is_ground(self) -> bool {
        matches!(self.family(), LoopFamily::PhaseGround | LoopFamily::PhasePhaseGround)
    }

    /// Number of cyclic relabelings that map this loop onto its A-referenced row.
    pub fn rotation(self) -> usize {
        use FaultLoop::*;
        match self {
            AG | AB | ABG | ABC => 0,
            BG | BC | BCG => 1,
            CG | CA | CAG => 2,
        }
    }

    /// A-referenced counterpart (AG, AB, ABG or ABC).
    pub fn a_referenced(self) -> FaultLoop {
        match self.family() {
            LoopFamily::PhaseGround => FaultLoop::AG,
            LoopFamily::PhasePhase => FaultLoop::AB,
            LoopFamily::PhasePhaseGround => FaultLoop::ABG,
            LoopFamily::ThreePhase => FaultLoop::ABC,
        }
    }

    pub fn name(self) -> &'static str {
        use FaultLoop::*;
        match self {
            AG => "AG",
            BG => "BG",
            CG => "CG",
            AB => "AB",
            BC => "BC",
            CA => "CA",
            ABG => "ABG",
            BCG => "BCG",
            CAG => "CAG",
            ABC => "ABC",
        }
    }
}

impl fmt::Display for FaultLoop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultLoop {
    type Err = PhasorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == up)
            .ok_or_else(|| PhasorError::UnknownLoop(s.to_string()))
    }
}

/// Relay-point snapshot: pre-fault and during-fault voltages and currents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayPhasors {
    pub v_pre: ThreePhaseSet,
    pub i_pre: ThreePhaseSet,
    pub v_fault: ThreePhaseSet,
    pub i_fault: ThreePhaseSet,
}

impl RelayPhasors {
    /// Relabel every set so that phase index `k` becomes phase `a`.
    pub fn relabel(&self, k: usize) -> Self {
        Self {
            v_pre: self.v_pre.relabel(k),
            i_pre: self.i_pre.relabel(k),
            v_fault: self.v_fault.relabel(k),
            i_fault: self.i_fault.relabel(k),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        let s = Phasor::new(s, 0.0);
        Self {
            v_pre: self.v_pre.scale(s),
            i_pre: self.i_pre.scale(s),
            v_fault: self.v_fault.scale(s),
            i_fault: self.i_fault.scale(s),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v_pre.is_finite() && self.i_pre.is_finite() && self.v_fault.is_finite() && self.i_fault.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopQuantities {
    pub v_loop: Phasor,
    pub i_loop: Phasor,
    pub i_f: Phasor,
}

/// Polarizing current of the AB row: the negative-sequence current rotated
/// onto the a-b fault current, `İ2·e^{−j30°}` in ABC rotation.
pub fn ab_polarizer(i2: Phasor) -> Phasor {
    i2 * Phasor::from_polar(1.0, -PI / 6.0)
}

/// Evaluate the loop row on a single (v, i) snapshot without the dead-loop
/// guard. The sets must already be relabeled so the loop is A-referenced.
pub fn a_referenced_row(v: &ThreePhaseSet, i: &ThreePhaseSet, family: LoopFamily, k0: Phasor) -> LoopQuantities {
    let seq = to_sequence(i);
    match family {
        LoopFamily::PhaseGround => LoopQuantities {
            v_loop: v.a,
            i_loop: i.a + k0 * seq.zero,
            i_f: seq.zero,
        },
        LoopFamily::PhasePhase => LoopQuantities {
            v_loop: v.a - v.b,
            i_loop: i.a - i.b,
            i_f: ab_polarizer(seq.neg),
        },
        LoopFamily::PhasePhaseGround => LoopQuantities {
            v_loop: v.a + v.b,
            i_loop: i.a + i.b + 2.0 * k0 * seq.zero,
            i_f: seq.zero,
        },
        LoopFamily::ThreePhase => LoopQuantities {
            v_loop: v.a - v.b,
            i_loop: i.a - i.b,
            i_f: i.a - i.b,
        },
    }
}

/// Loop row for an arbitrary snapshot, rotating non-A loops first.
pub fn loop_row(v: &ThreePhaseSet, i: &ThreePhaseSet, fault_loop: FaultLoop, k0: Phasor) -> LoopQuantities {
    let k = fault_loop.rotation();
    a_referenced_row(&v.relabel(k), &i.relabel(k), fault_loop.family(), k0)
}

/// During-fault loop quantities, with the dead-loop guard.
pub fn loop_quantities(
    rec: &RelayPhasors,
    fault_loop: FaultLoop,
    line: &LineParams,
    min_loop_current: f64,
) -> Result<LoopQuantities, PhasorError> {
    let k0 = zero_seq_comp_factor(line)?;
    let q = loop_row(&rec.v_fault, &rec.i_fault, fault_loop, k0);
    let magnitude = q.i_loop.norm();
    if !(magnitude >= min_loop_current) {
        return Err(PhasorError::ZeroLoopCurrent {
            fault_loop,
            magnitude,
            threshold: min_loop_current,
        });
    }
    Ok(q)
}

/// Pre-fault loop quantities (no guard: an unloaded feeder has zero loop current).
pub fn pre_fault_loop_quantities(
    rec: &RelayPhasors,
    fault_loop: FaultLoop,
    line: &LineParams,
) -> Result<LoopQuantities, PhasorError> {
    let k0 = zero_seq_comp_factor(line)?;
    Ok(loop_row(&rec.v_pre, &rec.i_pre, fault_loop, k0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Phasor, b: Phasor, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn balanced_set_is_pure_positive_sequence() {
        let s = ThreePhaseSet::new(
            from_polar_deg(1.0, 0.0),
            from_polar_deg(1.0, -120.0),
            from_polar_deg(1.0, 120.0),
            Unit::Volt,
        );
        let seq = to_sequence(&s);
        assert!(seq.zero.norm() < 1e-15);
        assert!(seq.neg.norm() < 1e-15);
        assert!(close(seq.pos, Phasor::new(1.0, 0.0), 1e-15));
    }

    #[test]
    fn zero_set_maps_to_zero() {
        let seq = to_sequence(&ThreePhaseSet::zero(Unit::Ampere));
        assert_eq!(seq.zero, Phasor::new(0.0, 0.0));
        assert_eq!(seq.pos, Phasor::new(0.0, 0.0));
        assert_eq!(seq.neg, Phasor::new(0.0, 0.0));
    }

    #[test]
    fn equal_phases_are_pure_zero_sequence() {
        let one = Phasor::new(1.0, 0.0);
        let seq = to_sequence(&ThreePhaseSet::new(one, one, one, Unit::Volt));
        assert!(close(seq.zero, one, 1e-15));
        assert!(seq.pos.norm() < 1e-15 && seq.neg.norm() < 1e-15);
    }

    #[test]
    fn inverse_transform_examples() {
        let z = Phasor::new(0.0, 0.0);
        let one = Phasor::new(1.0, 0.0);
        let bal = from_sequence(&SequenceSet {
            zero: z,
            pos: one,
            neg: z,
            unit: Unit::Volt,
        });
        let expect = ThreePhaseSet::balanced(one, Unit::Volt);
        for (x, y) in bal.phases().iter().zip(expect.phases()) {
            assert!(close(*x, y, 1e-15));
        }
        let zs = from_sequence(&SequenceSet {
            zero: one,
            pos: z,
            neg: z,
            unit: Unit::Volt,
        });
        for p in zs.phases() {
            assert!(close(p, one, 1e-15));
        }
    }

    #[test]
    fn inverse_matches_direct_matrix_multiply() {
        // Oracle: explicit 3x3 matrix [1 1 1; 1 a² a; 1 a a²] applied to (0,1,2).
        let a = alpha();
        let m = [
            [Phasor::new(1.0, 0.0); 3],
            [Phasor::new(1.0, 0.0), a * a, a],
            [Phasor::new(1.0, 0.0), a, a * a],
        ];
        let seq = SequenceSet {
            zero: Phasor::new(0.3, -1.2),
            pos: Phasor::new(2.5, 0.7),
            neg: Phasor::new(-0.4, 0.9),
            unit: Unit::Ampere,
        };
        let v = [seq.zero, seq.pos, seq.neg];
        let abc = from_sequence(&seq);
        for (row, got) in m.iter().zip(abc.phases()) {
            let want: Phasor = row.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
            assert!(close(got, want, 1e-14));
        }
    }

    #[test]
    fn angle_range_is_half_open() {
        assert_eq!(Phasor::new(-1.0, -0.0).angle(), PI);
        assert_eq!(Phasor::new(-1.0, 0.0).angle(), PI);
        assert_eq!(Phasor::new(0.0, 0.0).angle(), 0.0);
    }

    #[test]
    fn k0_examples() {
        let z1 = Phasor::new(1.0, 10.0);
        let homog = LineParams::new(z1, z1, 5.0).unwrap();
        assert_eq!(zero_seq_comp_factor(&homog).unwrap(), Phasor::new(0.0, 0.0));

        let triple = LineParams::new(z1, z1 * 3.0, 5.0).unwrap();
        assert!(close(
            zero_seq_comp_factor(&triple).unwrap(),
            Phasor::new(2.0, 0.0),
            1e-15
        ));

        // (3+25j)/(1+10j) - 1 = ((3+25j)(1-10j))/101 - 1 = (253 - 5j)/101 - 1
        let line = LineParams::new(z1, Phasor::new(3.0, 25.0), 5.0).unwrap();
        let want = Phasor::new(253.0 / 101.0 - 1.0, -5.0 / 101.0);
        assert!(close(zero_seq_comp_factor(&line).unwrap(), want, 1e-15));
    }

    #[test]
    fn degenerate_line_rejected() {
        let zero = Phasor::new(0.0, 0.0);
        assert!(LineParams::new(zero, zero, 1.0).is_err());
        assert!(LineParams::new(Phasor::new(1.0, 1.0), zero, 0.0).is_err());
        let raw = LineParams {
            z1: zero,
            z0: zero,
            length_km: 1.0,
        };
        assert!(matches!(
            zero_seq_comp_factor(&raw),
            Err(PhasorError::DegenerateLine(_))
        ));
    }

    fn sample_record() -> RelayPhasors {
        let v = ThreePhaseSet::new(
            Phasor::new(0.4, 0.1),
            Phasor::new(-0.6, -0.8),
            Phasor::new(-0.5, 0.85),
            Unit::Volt,
        );
        let i = ThreePhaseSet::new(
            Phasor::new(3.0, -4.0),
            Phasor::new(-0.7, -0.2),
            Phasor::new(0.1, 0.6),
            Unit::Ampere,
        );
        RelayPhasors {
            v_pre: ThreePhaseSet::balanced(Phasor::new(1.0, 0.0), Unit::Volt),
            i_pre: ThreePhaseSet::balanced(Phasor::new(0.2, 0.0), Unit::Ampere),
            v_fault: v,
            i_fault: i,
        }
    }

    #[test]
    fn abc_row_uses_loop_current_as_fault_current() {
        let line = LineParams::new(Phasor::new(1.0, 4.0), Phasor::new(3.0, 12.0), 10.0).unwrap();
        let mut rec = sample_record();
        rec.i_fault = ThreePhaseSet::balanced(Phasor::new(5.0, -3.0), Unit::Ampere);
        let q = loop_quantities(&rec, FaultLoop::ABC, &line, DEFAULT_MIN_LOOP_CURRENT).unwrap();
        assert_eq!(q.v_loop, rec.v_fault.a - rec.v_fault.b);
        assert_eq!(q.i_f, q.i_loop);
    }

    #[test]
    fn ag_on_homogeneous_line_is_phase_current() {
        let z = Phasor::new(1.0, 4.0);
        let line = LineParams::new(z, z, 10.0).unwrap();
        let rec = sample_record();
        let q = loop_quantities(&rec, FaultLoop::AG, &line, DEFAULT_MIN_LOOP_CURRENT).unwrap();
        assert_eq!(q.i_loop, rec.i_fault.a);
        assert!(close(q.i_f, to_sequence(&rec.i_fault).zero, 1e-15));
    }

    #[test]
    fn ab_polarizer_is_rotated_negative_sequence() {
        let line = LineParams::new(Phasor::new(1.0, 4.0), Phasor::new(3.0, 12.0), 10.0).unwrap();
        let rec = sample_record();
        let q = loop_quantities(&rec, FaultLoop::AB, &line, DEFAULT_MIN_LOOP_CURRENT).unwrap();
        let i2 = to_sequence(&rec.i_fault).neg;
        let want = i2 * from_polar_deg(1.0, -30.0);
        assert!(close(q.i_f, want, 1e-14));
    }

    #[test]
    fn ab_polarizer_is_in_phase_with_pure_ab_fault_current() {
        // Ia = -Ib = I, Ic = 0: the polarizer must be a positive real multiple of I.
        let i = Phasor::new(2.0, -1.3);
        let set = ThreePhaseSet::new(i, -i, Phasor::new(0.0, 0.0), Unit::Ampere);
        let pol = ab_polarizer(to_sequence(&set).neg);
        let ratio = pol / i;
        assert!(ratio.im.abs() < 1e-14 && ratio.re > 0.0);
    }

    #[test]
    fn dead_loop_is_rejected() {
        let line = LineParams::new(Phasor::new(1.0, 4.0), Phasor::new(3.0, 12.0), 10.0).unwrap();
        let mut rec = sample_record();
        rec.i_fault = ThreePhaseSet::zero(Unit::Ampere);
        let err = loop_quantities(&rec, FaultLoop::BC, &line, DEFAULT_MIN_LOOP_CURRENT).unwrap_err();
        assert!(matches!(
            err,
            PhasorError::ZeroLoopCurrent {
                fault_loop: FaultLoop::BC,
                ..
            }
        ));
    }

    #[test]
    fn fault_loop_parsing_and_order() {
        for (i, l) in FaultLoop::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(l.name().parse::<FaultLoop>().unwrap(), *l);
        }
        assert!("XG".parse::<FaultLoop>().is_err());
        assert_eq!("cag".parse::<FaultLoop>().unwrap(), FaultLoop::CAG);
    }
}
