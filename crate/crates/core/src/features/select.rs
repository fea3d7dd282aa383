use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mi::{mutual_information_seeded, DEFAULT_K};
use super::FeatureError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub corr: f64,
    pub mi: f64,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        Self { corr: 0.95, mi: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clique {
    pub members: Vec<String>,
    pub representative: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub mi_scores: BTreeMap<String, f64>,
    pub correlation_cliques: Vec<Clique>,
    /// Kept features in catalog order.
    pub retained: Vec<String>,
    pub dropped_low_mi: Vec<String>,
    /// Zero-variance columns, removed before scoring.
    pub dropped_degenerate: Vec<String>,
    pub thresholds: SelectionThresholds,
    pub k: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = i;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// MI ranking, correlation-clique pruning and low-MI cut over the training
/// columns. `columns[j]` holds every training value of `names[j]`; names are
/// assumed to be in catalog order, which breaks MI ties.
pub fn select_features(
    names: &[String],
    columns: &[Vec<f64>],
    target: &[f64],
    thresholds: SelectionThresholds,
) -> Result<SelectionReport, FeatureError> {
    if names.len() != columns.len() {
        return Err(FeatureError::LengthMismatch {
            left: names.len(),
            right: columns.len(),
        });
    }
    let n = target.len();
    if n < 2 * names.len().max(1) {
        return Err(FeatureError::InsufficientSamples {
            needed: 2 * names.len().max(1),
            got: n,
        });
    }
    for c in columns {
        if c.len() != n {
            return Err(FeatureError::LengthMismatch {
                left: n,
                right: c.len(),
            });
        }
    }

    let degenerate: Vec<bool> = columns.iter().map(|c| c.iter().all(|v| *v == c[0])).collect();
    let live: Vec<usize> = (0..names.len()).filter(|&j| !degenerate[j]).collect();

    let mi: Vec<f64> = live
        .par_iter()
        .map(|&j| mutual_information_seeded(&columns[j], target, DEFAULT_K, j as u64))
        .collect::<Result<_, _>>()?;

    let m = live.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect();
    let linked: Vec<bool> = pairs
        .par_iter()
        .map(|&(a, b)| pearson(&columns[live[a]], &columns[live[b]]).abs() > thresholds.corr)
        .collect();
    let mut parent: Vec<usize> = (0..m).collect();
    for (&(a, b), &l) in pairs.iter().zip(&linked) {
        if l {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for a in 0..m {
        let r = find(&mut parent, a);
        groups.entry(r).or_default().push(a);
    }

    let mut cliques = Vec::new();
    let mut survivors = Vec::new();
    for members in groups.values() {
        // Highest MI wins; members are in catalog order so the first max wins ties.
        let mut best = members[0];
        for &a in &members[1..] {
            if mi[a] > mi[best] {
                best = a;
            }
        }
        survivors.push(best);
        if members.len() > 1 {
            cliques.push(Clique {
                members: members.iter().map(|&a| names[live[a]].clone()).collect(),
                representative: names[live[best]].clone(),
            });
        }
    }
    survivors.sort_unstable();

    let mut retained = Vec::new();
    let mut dropped_low_mi = Vec::new();
    for a in survivors {
        if mi[a] < thresholds.mi {
            dropped_low_mi.push(names[live[a]].clone());
        } else {
            retained.push(names[live[a]].clone());
        }
    }
    Ok(SelectionReport {
        mi_scores: live.iter().zip(&mi).map(|(&j, &s)| (names[j].clone(), s)).collect(),
        correlation_cliques: cliques,
        retained,
        dropped_low_mi,
        dropped_degenerate: (0..names.len())
            .filter(|&j| degenerate[j])
            .map(|j| names[j].clone())
            .collect(),
        thresholds,
        k: DEFAULT_K,
    })
}
