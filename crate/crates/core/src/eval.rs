//! Location error metric, per-group aggregation, run distributions and CDFs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::fmt_f64;
use crate::phasor::{FaultLoop, LoopFamily};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("line length must be positive, got {0}")]
    DegenerateLine(f64),
    #[error("no values to summarize")]
    EmptyInput,
    #[error("need at least {needed} seeds, got {got}")]
    TooFewSeeds { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultGroup {
    PG,
    PPG,
    PP,
    PPP,
}

impl FaultGroup {
    /// Column order of the comparison table.
    pub const ALL: [FaultGroup; 4] = [FaultGroup::PG, FaultGroup::PPG, FaultGroup::PP, FaultGroup::PPP];

    pub fn of(fault_type: FaultLoop) -> Self {
        match fault_type.family() {
            LoopFamily::PhaseGround => Self::PG,
            LoopFamily::PhasePhase => Self::PP,
            LoopFamily::PhasePhaseGround => Self::PPG,
            LoopFamily::ThreePhase => Self::PPP,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PG => "PG",
            Self::PPG => "PPG",
            Self::PP => "PP",
            Self::PPP => "PPP",
        }
    }
}

impl fmt::Display for FaultGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Aggregate label over every group.
pub const ALL_GROUPS: &str = "ALL";

/// Group labels in report order: the four groups, then `ALL`.
pub fn group_labels() -> Vec<String> {
    FaultGroup::ALL
        .iter()
        .map(|g| g.name().to_string())
        .chain([ALL_GROUPS.to_string()])
        .collect()
}

/// `|d_est − d_true| / d_max · 100`.
pub fn location_error(d_est: f64, d_true: f64, d_max: f64) -> Result<f64, EvalError> {
    if !(d_max > 0.0) {
        return Err(EvalError::DegenerateLine(d_max));
    }
    Ok(((d_est - d_true) / d_max).abs() * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub scenario_id: String,
    pub method: String,
    pub error_pct: f64,
    pub fault_group: FaultGroup,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Five-number summary plus Tukey whiskers (most extreme data within 1.5·IQR).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub iqr: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence).collect();
    Ok(Summary {
        n: s.len(),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        median,
        q1,
        q3,
        min: s[0],
        max: s[s.len() - 1],
        iqr,
        whisker_low: inside.first().copied().unwrap_or(median),
        whisker_high: inside.last().copied().unwrap_or(median),
        outliers: s.len() - inside.len(),
    })
}

/// Mean error per group and overall. Groups with no rows are absent.
pub fn group_means(records: &[ErrorRecord]) -> BTreeMap<String, (f64, usize)> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        for key in [r.fault_group.name(), ALL_GROUPS] {
            let e = acc.entry(key.to_string()).or_insert((0.0, 0));
            e.0 += r.error_pct;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, (s / n as f64, n))).collect()
}

/// Right-continuous step points `(x, F(x))`, one per distinct value.
pub fn empirical_cdf(errors: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in s.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = f,
            _ => out.push((*v, f)),
        }
    }
    out.last_mut().unwrap().1 = 1.0;
    Ok(out)
}

/// Fraction of errors at or below `threshold`.
pub fn cdf_at(errors: &[f64], threshold: f64) -> f64 {
    errors.iter().filter(|e| **e <= threshold).count() as f64 / errors.len() as f64
}

pub fn cdf_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("error_pct,cdf\n");
    for (x, f) in points {
        s.push_str(&format!("{},{}\n", fmt_f64(*x), fmt_f64(*f)));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean_pct: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    /// PG, PPG, PP, PPP, ALL.
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Mean error per (method, group), methods in the given order. Groups a
/// method never produced an estimate for stay blank.
pub fn compare_methods(records: &[ErrorRecord], methods: &[String]) -> ComparisonTable {
    let rows = methods
        .iter()
        .map(|m| {
            let own: Vec<ErrorRecord> = records.iter().filter(|r| &r.method == m).cloned().collect();
            let means = group_means(&own);
            let cells = group_labels()
                .iter()
                .map(|g| match means.get(g) {
                    Some(&(mean, count)) => Cell {
                        mean_pct: Some(mean),
                        count,
                    },
                    None => Cell {
                        mean_pct: None,
                        count: 0,
                    },
                })
                .collect();
            ComparisonRow {
                method: m.clone(),
                cells,
            }
        })
        .collect();
    ComparisonTable { rows }
}

impl ComparisonTable {
    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let labels = group_labels();
        let mut s = format!("method,{}\n", labels.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r
                .cells
                .iter()
                .map(|c| c.mean_pct.map(fmt_f64).unwrap_or_default())
                .collect();
            s.push_str(&format!("{},{}\n", r.method, cells.join(",")));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDistribution {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub summary: Summary,
}

/// Per-seed aggregate errors by group, merged in ascending seed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDistribution {
    pub groups: BTreeMap<String, GroupDistribution>,
    /// Seed of the run whose overall error is the median order statistic.
    pub median_seed: u64,
}

/// Index of the median run: the middle order statistic, or the lower middle
/// for an even count. Ties resolve to the earlier index.
pub fn median_index(values: &[f64]) -> usize {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order[(values.len() - 1) / 2]
}

/// `runs[i]` holds the group means of seed `seeds[i]`.
pub fn run_distribution(seeds: &[u64], runs: &[BTreeMap<String, f64>]) -> Result<RunDistribution, EvalError> {
    if seeds.len() < 2 {
        return Err(EvalError::TooFewSeeds {
            needed: 2,
            got: seeds.len(),
        });
    }
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.sort_by_key(|&i| (seeds[i], i));
    let mut groups = BTreeMap::new();
    for g in group_labels() {
        let (s, v): (Vec<u64>, Vec<f64>) = order
            .iter()
            .filter_map(|&i| runs[i].get(&g).map(|v| (seeds[i], *v)))
            .unzip();
        if v.is_empty() {
            continue;
        }
        let summary = summarize(&v)?;
        groups.insert(
            g,
            GroupDistribution {
                seeds: s,
                values: v,
                summary,
            },
        );
    }
    let overall = groups.get(ALL_GROUPS).ok_or(EvalError::EmptyInput)?;
    let median_seed = overall.seeds[median_index(&overall.values)];
    Ok(RunDistribution { groups, median_seed })
}
