use super::network::{
    injection_setpoints, sequence_elements, synchronized_injection, FaultScenarioFeeder, InfeedState, NetworkConfig,
    Seq, SeqElements,
};
use super::{FaultScenario, MeasurementRecord, SimError};
use crate::phasor::{alpha, from_sequence, LoopFamily, Phasor, RelayPhasors, SequenceSet, Unit};

/// Norton equivalents seen from the fault point of one sequence network.
struct Reduced {
    el: SeqElements,
    /// Left side after the series section, before the F-end half shunt.
    i_l0: Phasor,
    y_l0: Phasor,
    /// Right side after the series section, before the F-end half shunt.
    i_r0: Phasor,
    y_r0: Phasor,
}

impl Reduced {
    fn new(el: SeqElements) -> Result<Self, SimError> {
        if !(el.zs.norm() > 0.0) {
            return Err(SimError::SingularNetwork("zero source impedance".into()));
        }
        let y_r = 1.0 / el.zs + el.ya_half;
        let den_l = 1.0 + el.za * y_r;
        let y_w = el.y_rem + el.yb_half;
        let den_r = 1.0 + el.zb * y_w;
        if den_l.norm() == 0.0 || den_r.norm() == 0.0 {
            return Err(SimError::SingularNetwork("series resonance in line section".into()));
        }
        Ok(Self {
            el,
            i_l0: el.emf / el.zs / den_l,
            y_l0: y_r / den_l,
            i_r0: el.i_rem / den_r,
            y_r0: y_w / den_r,
        })
    }

    fn y_fault_node(&self) -> Phasor {
        self.y_l0 + self.el.ya_half + self.y_r0 + self.el.yb_half
    }

    /// Thevenin impedance and open-circuit voltage at F.
    fn thevenin(&self) -> Result<(Phasor, Phasor), SimError> {
        let y = self.y_fault_node();
        if y.norm() == 0.0 {
            return Err(SimError::SingularNetwork("fault node has no path to ground".into()));
        }
        Ok((1.0 / y, (self.i_l0 + self.i_r0) / y))
    }

    /// Relay current and voltage, and remote-bus voltage, given V_F.
    fn propagate(&self, v_f: Phasor) -> (Phasor, Phasor, Phasor) {
        let i_left = self.i_l0 - self.y_l0 * v_f;
        let v_r = v_f + self.el.za * i_left;
        let i_right = self.i_r0 - self.y_r0 * v_f;
        let v_w = v_f + self.el.zb * i_right;
        let i_relay = (self.el.emf - v_r) / self.el.zs;
        (v_r, i_relay, v_w)
    }
}

/// Fault-point sequence currents of an A-referenced fault, given the rotated
/// positive-sequence open-circuit voltage and Thevenin impedances.
fn a_referenced_fault_currents(
    family: LoopFamily,
    v1: Phasor,
    z0: Phasor,
    z1: Phasor,
    z2: Phasor,
    rf: f64,
) -> Result<[Phasor; 3], SimError> {
    let a = alpha();
    let a2 = a * a;
    let zero = Phasor::new(0.0, 0.0);
    let rf3 = Phasor::new(3.0 * rf, 0.0);
    let checked = |den: Phasor| {
        if den.norm() == 0.0 || !den.is_finite() {
            Err(SimError::SingularNetwork("zero driving impedance".into()))
        } else {
            Ok(den)
        }
    };
    Ok(match family {
        LoopFamily::PhaseGround => {
            let i = v1 / checked(z1 + z2 + z0 + rf3)?;
            [i, i, i]
        }
        LoopFamily::PhasePhase => {
            let i1 = v1 / checked(z1 + z2 + rf)?;
            [zero, i1, -a2 * i1]
        }
        LoopFamily::PhasePhaseGround => {
            let zg = z0 + rf3;
            let par = checked(z2 + zg)?;
            let i1 = v1 / checked(z1 + z2 * zg / par)?;
            [-a * i1 * z2 / par, i1, -a2 * i1 * zg / par]
        }
        LoopFamily::ThreePhase => [zero, v1 / checked(z1 + rf)?, zero],
    })
}

pub(crate) fn check_finite(sc: &FaultScenario, rec: &RelayPhasors) -> Result<(), SimError> {
    if rec.is_finite() {
        Ok(())
    } else {
        Err(SimError::SingularNetwork(format!(
            "non-finite phasors in scenario {}",
            sc.scenario_id
        )))
    }
}

/// Resolve the converter current for a network whose remote positive-sequence
/// voltage is affine in the injection: probe it at zero and at `mag`.
pub(crate) fn converter_current<F>(mag: f64, lag: f64, mut v_w: F) -> Result<Phasor, SimError>
where
    F: FnMut(Phasor) -> Result<Phasor, SimError>,
{
    if mag == 0.0 {
        return Ok(Phasor::new(0.0, 0.0));
    }
    let a = v_w(Phasor::new(0.0, 0.0))?;
    let b = (v_w(Phasor::new(mag, 0.0))? - a) / mag;
    Ok(synchronized_injection(a, b, mag, lag))
}

struct Faulted {
    v_relay: [Phasor; 3],
    i_relay: [Phasor; 3],
    v_w_pos: Phasor,
}

fn solve_pre(
    net: &NetworkConfig,
    ff: &FaultScenarioFeeder,
    i_pos: Phasor,
) -> Result<(Phasor, Phasor, Phasor), SimError> {
    let pre = Reduced::new(sequence_elements(net, ff, Seq::Pos, InfeedState::PreFault { i_pos }))?;
    let (_, v_f) = pre.thevenin()?;
    Ok(pre.propagate(v_f))
}

fn solve_faulted(
    net: &NetworkConfig,
    ff: &FaultScenarioFeeder,
    sc: &FaultScenario,
    i_pos: Phasor,
) -> Result<Faulted, SimError> {
    let state = InfeedState::Fault { i_pos };
    let nets = [
        Reduced::new(sequence_elements(net, ff, Seq::Zero, state))?,
        Reduced::new(sequence_elements(net, ff, Seq::Pos, state))?,
        Reduced::new(sequence_elements(net, ff, Seq::Neg, state))?,
    ];
    let mut z_th = [Phasor::new(0.0, 0.0); 3];
    let mut v_oc = [Phasor::new(0.0, 0.0); 3];
    for (s, n) in nets.iter().enumerate() {
        let (z, v) = n.thevenin()?;
        z_th[s] = z;
        v_oc[s] = v;
    }

    // Solve in the frame where the faulted loop is A-referenced, then rotate back.
    let k = sc.fault_type.rotation() as i32;
    let a = alpha();
    let rot = |p: i32| a.powi(p.rem_euclid(3));
    let rotated = a_referenced_fault_currents(
        sc.fault_type.family(),
        v_oc[1] * rot(2 * k),
        z_th[0],
        z_th[1],
        z_th[2],
        sc.r_fault_ohm,
    )?;
    let i_f = [rotated[0], rotated[1] * rot(k), rotated[2] * rot(2 * k)];

    let mut out = Faulted {
        v_relay: [Phasor::new(0.0, 0.0); 3],
        i_relay: [Phasor::new(0.0, 0.0); 3],
        v_w_pos: Phasor::new(0.0, 0.0),
    };
    for s in 0..3 {
        let v_f = v_oc[s] - z_th[s] * i_f[s];
        let (v_r, i_r, v_w) = nets[s].propagate(v_f);
        out.v_relay[s] = v_r;
        out.i_relay[s] = i_r;
        if s == 1 {
            out.v_w_pos = v_w;
        }
    }
    Ok(out)
}

/// Relay-point phasors by sequence-network connection at the fault point.
pub fn solve_fault(net: &NetworkConfig, sc: &FaultScenario) -> Result<MeasurementRecord, SimError> {
    let feeder = net.feeder_for(sc)?;
    let ff = FaultScenarioFeeder {
        feeder,
        distance_km: sc.distance_km,
        generation_pu: sc.generation_pu,
    };
    let (mag_pre, mag_fault, lag) = injection_setpoints(net, sc.generation_pu);

    // Pre-fault: positive sequence only, unity power factor at the remote bus.
    let i_pre = converter_current(mag_pre, 0.0, |i| Ok(solve_pre(net, &ff, i)?.2))?;
    let (v_r_pre, i_r_pre, _) = solve_pre(net, &ff, i_pre)?;

    let i_fault = converter_current(mag_fault, lag, |i| Ok(solve_faulted(net, &ff, sc, i)?.v_w_pos))?;
    let f = solve_faulted(net, &ff, sc, i_fault)?;

    let zero = Phasor::new(0.0, 0.0);
    let seq = |s: [Phasor; 3], unit| {
        from_sequence(&SequenceSet {
            zero: s[0],
            pos: s[1],
            neg: s[2],
            unit,
        })
    };
    let phasors = RelayPhasors {
        v_pre: seq([zero, v_r_pre, zero], Unit::Volt),
        i_pre: seq([zero, i_r_pre, zero], Unit::Ampere),
        v_fault: seq(f.v_relay, Unit::Volt),
        i_fault: seq(f.i_relay, Unit::Ampere),
    };
    check_finite(sc, &phasors)?;
    Ok(MeasurementRecord {
        scenario: sc.clone(),
        phasors,
    })
}
