use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::network::{
    injection_setpoints, sequence_elements, FaultScenarioFeeder, InfeedState, NetworkConfig, Seq, SeqElements,
};
use super::solver::check_finite as ensure_finite;
use super::solver::converter_current;
use super::{FaultScenario, MeasurementRecord, SimError};
use crate::phasor::{alpha, FaultLoop, LoopFamily, Phasor, RelayPhasors, ThreePhaseSet, Unit};

/// Bus-impedance form of one sequence network.
struct Nodal {
    el: SeqElements,
    zbus: DMatrix<Phasor>,
    v_oc: DVector<Phasor>,
    r: usize,
    f: usize,
}

impl Nodal {
    fn assemble(el: SeqElements) -> Result<Self, SimError> {
        if !(el.zs.norm() > 0.0) {
            return Err(SimError::SingularNetwork("zero source impedance".into()));
        }
        let zero = Phasor::new(0.0, 0.0);
        // Zero-length sections merge their end nodes.
        let r = 0;
        let f = if el.za == zero { r } else { 1 };
        let w = if el.zb == zero { f } else { f + 1 };
        let n = w + 1;
        let mut y = DMatrix::from_element(n, n, zero);
        let mut inj = DVector::from_element(n, zero);
        let shunt = |y: &mut DMatrix<Phasor>, i: usize, adm: Phasor| y[(i, i)] += adm;
        let series = |y: &mut DMatrix<Phasor>, i: usize, j: usize, z: Phasor| {
            if i != j {
                let adm = 1.0 / z;
                y[(i, i)] += adm;
                y[(j, j)] += adm;
                y[(i, j)] -= adm;
                y[(j, i)] -= adm;
            }
        };
        shunt(&mut y, r, 1.0 / el.zs);
        inj[r] += el.emf / el.zs;
        shunt(&mut y, r, el.ya_half);
        series(&mut y, r, f, el.za);
        shunt(&mut y, f, el.ya_half);
        shunt(&mut y, f, el.yb_half);
        series(&mut y, f, w, el.zb);
        shunt(&mut y, w, el.yb_half);
        shunt(&mut y, w, el.y_rem);
        inj[w] += el.i_rem;

        let zbus = y
            .try_inverse()
            .ok_or_else(|| SimError::SingularNetwork("nodal admittance matrix is singular".into()))?;
        let v_oc = &zbus * &inj;
        Ok(Self { el, zbus, v_oc, r, f })
    }

    fn z_ff(&self) -> Phasor {
        self.zbus[(self.f, self.f)]
    }

    /// Node voltages with current `i_f` drawn out of the fault node.
    fn voltages(&self, i_f: Phasor) -> DVector<Phasor> {
        &self.v_oc - self.zbus.column(self.f) * i_f
    }

    fn relay(&self, v: &DVector<Phasor>) -> (Phasor, Phasor) {
        let v_r = v[self.r];
        (v_r, (self.el.emf - v_r) / self.el.zs)
    }
}

/// Phase-from-sequence matrix: `[a b c]ᵀ = A·[0 1 2]ᵀ`.
fn fortescue() -> Matrix3<Phasor> {
    let one = Phasor::new(1.0, 0.0);
    let a = alpha();
    let a2 = a * a;
    Matrix3::new(one, one, one, one, a2, a, one, a, a2)
}

/// Rows of `C_v·V + C_i·I = 0` describing the fault at F in phase quantities.
fn fault_constraints(kind: FaultLoop, rf: f64) -> (Matrix3<Phasor>, Matrix3<Phasor>) {
    let zero = Phasor::new(0.0, 0.0);
    let one = Phasor::new(1.0, 0.0);
    let rf = Phasor::new(rf, 0.0);
    let mut cv = Matrix3::from_element(zero);
    let mut ci = Matrix3::from_element(zero);
    let k = kind.rotation();
    let (p, q, r) = (k, (k + 1) % 3, (k + 2) % 3);
    match kind.family() {
        LoopFamily::PhaseGround => {
            ci[(0, q)] = one;
            ci[(1, r)] = one;
            cv[(2, p)] = one;
            ci[(2, p)] = -rf;
        }
        LoopFamily::PhasePhase => {
            ci[(0, r)] = one;
            ci[(1, p)] = one;
            ci[(1, q)] = one;
            cv[(2, p)] = one;
            cv[(2, q)] = -one;
            ci[(2, p)] = -rf;
        }
        LoopFamily::PhasePhaseGround => {
            ci[(0, r)] = one;
            cv[(1, p)] = one;
            cv[(1, q)] = -one;
            cv[(2, p)] = one;
            ci[(2, p)] = -rf;
            ci[(2, q)] = -rf;
        }
        LoopFamily::ThreePhase => {
            for j in 0..3 {
                ci[(0, j)] = one;
            }
            for (row, (x, y)) in [(0usize, 1usize), (1, 2)].into_iter().enumerate() {
                cv[(row + 1, x)] = one;
                ci[(row + 1, x)] = -rf;
                cv[(row + 1, y)] = -one;
                ci[(row + 1, y)] = rf;
            }
        }
    }
    (cv, ci)
}

fn phases(v: Vector3<Phasor>, unit: Unit) -> ThreePhaseSet {
    ThreePhaseSet::new(v[0], v[1], v[2], unit)
}

struct Solved {
    v_relay: Vector3<Phasor>,
    i_relay: Vector3<Phasor>,
    v_w_pos: Phasor,
}

fn faulted(
    net: &NetworkConfig,
    ff: &FaultScenarioFeeder,
    sc: &FaultScenario,
    i_pos: Phasor,
) -> Result<Solved, SimError> {
    let a_mat = fortescue();
    let a_inv = a_mat
        .try_inverse()
        .ok_or_else(|| SimError::SingularNetwork("Fortescue matrix".into()))?;
    let state = InfeedState::Fault { i_pos };
    let nets = [
        Nodal::assemble(sequence_elements(net, ff, Seq::Zero, state))?,
        Nodal::assemble(sequence_elements(net, ff, Seq::Pos, state))?,
        Nodal::assemble(sequence_elements(net, ff, Seq::Neg, state))?,
    ];
    let z_seq = Matrix3::from_diagonal(&Vector3::new(nets[0].z_ff(), nets[1].z_ff(), nets[2].z_ff()));
    let voc_seq = Vector3::new(
        nets[0].v_oc[nets[0].f],
        nets[1].v_oc[nets[1].f],
        nets[2].v_oc[nets[2].f],
    );
    let z_abc = a_mat * z_seq * a_inv;
    let voc_abc = a_mat * voc_seq;

    let (cv, ci) = fault_constraints(sc.fault_type, sc.r_fault_ohm);
    let lhs = ci - cv * z_abc;
    let rhs = -(cv * voc_abc);
    let i_abc = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| SimError::SingularNetwork("fault constraint system is singular".into()))?;
    let i_seq = a_inv * i_abc;

    let mut out = Solved {
        v_relay: Vector3::from_element(Phasor::new(0.0, 0.0)),
        i_relay: Vector3::from_element(Phasor::new(0.0, 0.0)),
        v_w_pos: Phasor::new(0.0, 0.0),
    };
    for s in 0..3 {
        let v = nets[s].voltages(i_seq[s]);
        let (v_r, i_r) = nets[s].relay(&v);
        out.v_relay[s] = v_r;
        out.i_relay[s] = i_r;
        if s == 1 {
            out.v_w_pos = v[v.len() - 1];
        }
    }
    Ok(out)
}

/// Brute-force verification path: full nodal solve per sequence and a
/// phase-domain fault constraint system.
pub fn nodal_oracle(net: &NetworkConfig, sc: &FaultScenario) -> Result<MeasurementRecord, SimError> {
    let feeder = net.feeder_for(sc)?;
    let ff = FaultScenarioFeeder {
        feeder,
        distance_km: sc.distance_km,
        generation_pu: sc.generation_pu,
    };
    let a_mat = fortescue();
    let (mag_pre, mag_fault, lag) = injection_setpoints(net, sc.generation_pu);

    let pre = |i_pos| Nodal::assemble(sequence_elements(net, &ff, Seq::Pos, InfeedState::PreFault { i_pos }));
    let i_pre = converter_current(mag_pre, 0.0, |i| {
        let n = pre(i)?;
        Ok(n.v_oc[n.v_oc.len() - 1])
    })?;
    let pre = pre(i_pre)?;
    let (v_r_pre, i_r_pre) = pre.relay(&pre.v_oc);

    let i_fault = converter_current(mag_fault, lag, |i| Ok(faulted(net, &ff, sc, i)?.v_w_pos))?;
    let f = faulted(net, &ff, sc, i_fault)?;

    let zero = Phasor::new(0.0, 0.0);
    let phasors = RelayPhasors {
        v_pre: phases(a_mat * Vector3::new(zero, v_r_pre, zero), Unit::Volt),
        i_pre: phases(a_mat * Vector3::new(zero, i_r_pre, zero), Unit::Ampere),
        v_fault: phases(a_mat * f.v_relay, Unit::Volt),
        i_fault: phases(a_mat * f.i_relay, Unit::Ampere),
    };
    ensure_finite(sc, &phasors)?;
    Ok(MeasurementRecord {
        scenario: sc.clone(),
        phasors,
    })
}
