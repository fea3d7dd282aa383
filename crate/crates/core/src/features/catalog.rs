use crate::locators::DistanceEstimate;
use crate::phasor::{loop_row, zero_seq_comp_factor, FaultLoop, LineParams, Phasor, PhasorExt, ThreePhaseSet};
use crate::sim::MeasurementRecord;

use super::FeatureError;

/// Every extractable feature, in catalog order. Ties in selection are broken
/// by position in this list.
pub const FEATURE_NAMES: [&str; 70] = [
    // Phase magnitudes and angles.
    "ia_mag",
    "ib_mag",
    "ic_mag",
    "va_mag",
    "vb_mag",
    "vc_mag",
    "cos_ia",
    "cos_ib",
    "cos_ic",
    "cos_va",
    "cos_vb",
    "cos_vc",
    "sin_ia",
    "sin_ib",
    "sin_ic",
    "sin_va",
    "sin_vb",
    "sin_vc",
    // Symmetrical components.
    "i0_mag",
    "i1_mag",
    "i2_mag",
    "v0_mag",
    "v1_mag",
    "v2_mag",
    "d_i0",
    "d_i1",
    "d_i2",
    "d_v0",
    "d_v1",
    "d_v2",
    "i1_pre_mag",
    "v1_pre_mag",
    "cos_i0",
    "cos_i1",
    "cos_i2",
    "cos_v0",
    "cos_v1",
    "cos_v2",
    "sin_i0",
    "sin_i1",
    "sin_i2",
    "sin_v0",
    "sin_v1",
    "sin_v2",
    // Loop and fault quantities.
    "if_mag",
    "vloop_mag",
    "iloop_mag",
    "iloop_pre_mag",
    "vloop_pre_mag",
    "sin_vloop_pre",
    "cos_vloop_pre",
    "sin_iloop_pre",
    "cos_iloop_pre",
    "cos_iloop",
    "cos_vloop",
    "sin_iloop",
    "sin_vloop",
    // Estimate and line.
    "d",
    "d_max",
    "z1_mag",
    "z1_re",
    "z1_im",
    // Phase deltas and polarizer angle.
    "d_ia",
    "d_ib",
    "d_ic",
    "d_va",
    "d_vb",
    "d_vc",
    "cos_if",
    "sin_if",
];

pub const N_FEATURES: usize = FEATURE_NAMES.len();

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub scenario_id: String,
    pub fault_type: FaultLoop,
    /// Values in [`FEATURE_NAMES`] order.
    pub values: Vec<f64>,
    /// `d_true − d_est` in km.
    pub target_correction_km: f64,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.values[i])
    }
}

/// (cos, sin) of a phasor angle; phasors indistinguishable from zero relative
/// to `scale` read as angle 0 so noise never becomes a feature.
fn trig(p: Phasor, scale: f64) -> (f64, f64) {
    if p.norm() <= 1e-9 * scale {
        (1.0, 0.0)
    } else {
        let a = p.angle();
        (a.cos(), a.sin())
    }
}

fn set_scale(sets: &[&ThreePhaseSet]) -> f64 {
    sets.iter()
        .flat_map(|s| s.phases())
        .map(|p| p.norm())
        .fold(0.0, f64::max)
}

/// Extract the catalog for one record in the faulted loop's frame: phases are
/// relabelled so the loop reads A-referenced, and every angle is measured from
/// the pre-fault positive-sequence voltage.
pub fn extract_features(
    rec: &MeasurementRecord,
    fault_loop: FaultLoop,
    line: &LineParams,
    d_est: &DistanceEstimate,
) -> Result<FeatureVector, FeatureError> {
    if !d_est.valid {
        return Err(FeatureError::InvalidEstimate(format!(
            "{}: {}",
            rec.scenario.scenario_id, d_est.diagnostic
        )));
    }
    let k0 = zero_seq_comp_factor(line).map_err(|e| FeatureError::InvalidEstimate(e.to_string()))?;
    let p = rec.phasors.relabel(fault_loop.rotation());
    let v1_pre = p.v_pre.to_sequence().pos;
    let reference = if v1_pre.norm() > 0.0 {
        Phasor::from_polar(1.0, -v1_pre.angle())
    } else {
        Phasor::new(1.0, 0.0)
    };
    let turn = |s: &ThreePhaseSet| s.scale(reference);
    let (v_pre, i_pre, v, i) = (turn(&p.v_pre), turn(&p.i_pre), turn(&p.v_fault), turn(&p.i_fault));
    let v_scale = set_scale(&[&v_pre, &v]);
    let i_scale = set_scale(&[&i_pre, &i]);

    let vs = v.to_sequence();
    let is = i.to_sequence();
    let vs_pre = v_pre.to_sequence();
    let is_pre = i_pre.to_sequence();
    let q = loop_row(&v, &i, fault_loop.a_referenced(), k0);
    let q_pre = loop_row(&v_pre, &i_pre, fault_loop.a_referenced(), k0);

    let mut out = Vec::with_capacity(N_FEATURES);
    let ip = i.phases();
    let vp = v.phases();
    out.extend(ip.iter().chain(vp.iter()).map(|x| x.norm()));
    let trig_phase: Vec<(f64, f64)> = ip
        .iter()
        .map(|x| trig(*x, i_scale))
        .chain(vp.iter().map(|x| trig(*x, v_scale)))
        .collect();
    out.extend(trig_phase.iter().map(|t| t.0));
    out.extend(trig_phase.iter().map(|t| t.1));

    let iseq = [is.zero, is.pos, is.neg];
    let vseq = [vs.zero, vs.pos, vs.neg];
    let iseq_pre = [is_pre.zero, is_pre.pos, is_pre.neg];
    let vseq_pre = [vs_pre.zero, vs_pre.pos, vs_pre.neg];
    out.extend(iseq.iter().chain(vseq.iter()).map(|x| x.norm()));
    out.extend((0..3).map(|s| (iseq[s] - iseq_pre[s]).norm()));
    out.extend((0..3).map(|s| (vseq[s] - vseq_pre[s]).norm()));
    out.push(is_pre.pos.norm());
    out.push(vs_pre.pos.norm());
    let trig_seq: Vec<(f64, f64)> = iseq
        .iter()
        .map(|x| trig(*x, i_scale))
        .chain(vseq.iter().map(|x| trig(*x, v_scale)))
        .collect();
    out.extend(trig_seq.iter().map(|t| t.0));
    out.extend(trig_seq.iter().map(|t| t.1));

    out.push(q.i_f.norm());
    out.push(q.v_loop.norm());
    out.push(q.i_loop.norm());
    out.push(q_pre.i_loop.norm());
    out.push(q_pre.v_loop.norm());
    let vl_pre = trig(q_pre.v_loop, v_scale);
    let il_pre = trig(q_pre.i_loop, i_scale);
    let il = trig(q.i_loop, i_scale);
    let vl = trig(q.v_loop, v_scale);
    out.extend([vl_pre.1, vl_pre.0, il_pre.1, il_pre.0, il.0, vl.0, il.1, vl.1]);

    out.extend([d_est.d_est_km, line.length_km, line.z1.norm(), line.z1.re, line.z1.im]);

    let ip_pre = i_pre.phases();
    let vp_pre = v_pre.phases();
    out.extend((0..3).map(|k| (ip[k] - ip_pre[k]).norm()));
    out.extend((0..3).map(|k| (vp[k] - vp_pre[k]).norm()));
    let fi = trig(q.i_f, i_scale);
    out.extend([fi.0, fi.1]);
    debug_assert_eq!(out.len(), N_FEATURES);

    if let Some(bad) = out.iter().position(|x| !x.is_finite()) {
        return Err(FeatureError::NonFinite {
            scenario_id: rec.scenario.scenario_id.clone(),
            feature: FEATURE_NAMES[bad].to_string(),
        });
    }
    Ok(FeatureVector {
        scenario_id: rec.scenario.scenario_id.clone(),
        fault_type: rec.scenario.fault_type,
        values: out,
        target_correction_km: rec.scenario.distance_km - d_est.d_est_km,
    })
}

/// Fixed one-hot encoding in [`FaultLoop::ALL`] order.
pub fn one_hot(fault_type: FaultLoop) -> [f64; 10] {
    let mut v = [0.0; 10];
    v[fault_type.index()] = 1.0;
    v
}

pub fn one_hot_names() -> Vec<String> {
    FaultLoop::ALL.iter().map(|l| format!("is_{}", l.name())).collect()
}
