//! Stage functions wiring simulation, location, features, training and
//! evaluation together. The CLI and the acceptance suite both drive these.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, Split};
use crate::eval::{
    compare_methods, group_means, location_error, run_distribution, ComparisonTable, ErrorRecord, EvalError,
    FaultGroup, RunDistribution,
};
use crate::features::{
    fit_scaler, prepare, select_from_table, FeatureError, FeatureTable, PreparedData, Scaler, SelectionReport,
    SelectionThresholds,
};
use crate::grn::{mae, train, Checkpoint, GrnError, GrnHyperparams, TrainConfig, TrainOutcome};
use crate::locators::{locate, LocatorMethod};
use crate::sim::{
    check_disjoint_locations, default_grids, generate_dataset, GridPair, NetworkConfig, SimError, SkippedRow,
};
use crate::tune::{optimize_batched, Point, SearchSpace, TpeConfig, TrialRecord, TuneError, TuneHistory};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Grn(#[from] GrnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error("seed {seed}: {source}")]
    Seed { seed: u64, source: GrnError },
}

/// Prefix of corrected-method labels, e.g. `GRN-MM`.
pub const GRN_PREFIX: &str = "GRN-";

pub struct Simulated {
    pub train: Dataset,
    pub test: Dataset,
    pub skipped: Vec<SkippedRow>,
}

pub fn simulate(net: &NetworkConfig, grids: &GridPair) -> Result<Simulated, PipelineError> {
    check_disjoint_locations(net, &grids.train, &grids.test)?;
    let train = generate_dataset(net, &grids.train)?;
    let test = generate_dataset(net, &grids.test)?;
    let mut skipped = train.skipped;
    skipped.extend(test.skipped);
    Ok(Simulated {
        train: train.dataset,
        test: test.dataset,
        skipped,
    })
}

/// Replace the estimate columns of every row with the given methods, in order.
pub fn add_estimates(ds: &mut Dataset, net: &NetworkConfig, methods: &[LocatorMethod]) -> Result<(), PipelineError> {
    ds.rows.par_iter_mut().try_for_each(|row| {
        let sc = &row.record.scenario;
        let feeder = net
            .feeder(&sc.line_id)
            .ok_or_else(|| PipelineError::Data(format!("{}: unknown line {}", sc.scenario_id, sc.line_id)))?;
        row.estimates = methods
            .iter()
            .map(|m| {
                let est = locate(*m, &row.record.phasors, sc.fault_type, &feeder.line);
                (m.name().to_string(), est.value())
            })
            .collect();
        Ok(())
    })
}

/// Features, selection report, training-split scaler and model inputs.
pub struct FeatureStage {
    pub locator: LocatorMethod,
    pub table: FeatureTable,
    pub selection: SelectionReport,
    pub scaler: Scaler,
    pub prepared: PreparedData,
}

pub fn feature_stage(
    train: &Dataset,
    test: &Dataset,
    net: &NetworkConfig,
    locator: LocatorMethod,
    thresholds: SelectionThresholds,
) -> Result<FeatureStage, PipelineError> {
    let mut both = train.clone();
    both.rows.extend(test.rows.iter().cloned());
    let table = FeatureTable::build(&both, net, locator);
    let selection = select_from_table(&table, thresholds)?;
    if selection.retained.is_empty() {
        return Err(PipelineError::Data("feature selection retained nothing".into()));
    }
    let scaler = fit_scaler(&table, &selection.retained)?;
    let prepared = prepare(&table, &scaler)?;
    Ok(FeatureStage {
        locator,
        table,
        selection,
        scaler,
        prepared,
    })
}

/// Model inputs and standardized targets of one split.
pub fn design_matrix(
    prepared: &PreparedData,
    scaler: &Scaler,
    split: Split,
) -> Result<(Array2<f64>, Vec<f64>), PipelineError> {
    let rows = prepared.split(split);
    if rows.is_empty() {
        return Err(PipelineError::Data(format!("no {} rows", split.name())));
    }
    let width = prepared.columns.len();
    let mut x = Array2::zeros((rows.len(), width));
    let mut y = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&r.x[..]));
        y.push(scaler.scale_target(r.target_correction_km)?);
    }
    Ok((x, y))
}

pub fn train_model(
    prepared: &PreparedData,
    scaler: &Scaler,
    hp: &GrnHyperparams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, PipelineError> {
    let (x, y) = design_matrix(prepared, scaler, Split::Train)?;
    Ok(train(hp, x.view(), &y, cfg)?)
}

/// Per-row errors of the stored estimate columns on one split.
pub fn baseline_records(ds: &Dataset, split: Split, methods: &[String]) -> Result<Vec<ErrorRecord>, PipelineError> {
    let mut out = Vec::new();
    for row in ds.split(split) {
        let sc = &row.record.scenario;
        for m in methods {
            let est = row
                .estimate(m)
                .ok_or_else(|| PipelineError::Data(format!("dataset has no d_est_{m} column")))?;
            if let Some(d) = est {
                out.push(ErrorRecord {
                    scenario_id: sc.scenario_id.clone(),
                    method: m.clone(),
                    error_pct: location_error(d, sc.distance_km, row.d_max_km)?,
                    fault_group: FaultGroup::of(sc.fault_type),
                });
            }
        }
    }
    Ok(out)
}

/// Corrected estimates for the test rows of `prepared`, joined to `ds` by
/// scenario id for the true distance, the base estimate and the line length.
pub fn corrected_records(
    ck: &Checkpoint,
    prepared: &PreparedData,
    ds: &Dataset,
) -> Result<Vec<ErrorRecord>, PipelineError> {
    let rows = prepared.split(Split::Test);
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    if prepared.columns.len() != ck.params.input_dim {
        return Err(PipelineError::Data(format!(
            "feature file has {} model columns, checkpoint expects {}",
            prepared.columns.len(),
            ck.params.input_dim
        )));
    }
    let by_id: HashMap<&str, _> = ds
        .rows
        .iter()
        .map(|r| (r.record.scenario.scenario_id.as_str(), r))
        .collect();
    let mut x = Array2::zeros((rows.len(), prepared.columns.len()));
    for (i, r) in rows.iter().enumerate() {
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&r.x[..]));
    }
    let z = ck.params.predict(x.view()).map_err(PipelineError::Grn)?;
    let method = format!("{GRN_PREFIX}{}", ck.locator);
    rows.iter()
        .zip(z.iter())
        .map(|(r, z)| {
            let row = by_id
                .get(r.scenario_id.as_str())
                .ok_or_else(|| PipelineError::Data(format!("scenario {} missing from dataset", r.scenario_id)))?;
            let d_est = row
                .estimate(&ck.locator)
                .flatten()
                .ok_or_else(|| PipelineError::Data(format!("{}: no valid {} estimate", r.scenario_id, ck.locator)))?;
            let c = ck.scaler.unscale_target(*z)?;
            let d = (d_est + c).clamp(0.0, row.d_max_km);
            Ok(ErrorRecord {
                scenario_id: r.scenario_id.clone(),
                method: method.clone(),
                error_pct: location_error(d, row.record.scenario.distance_km, row.d_max_km)?,
                fault_group: FaultGroup::of(row.record.scenario.fault_type),
            })
        })
        .collect()
}

/// Comparison table over the baseline methods plus any corrected records.
pub fn comparison(
    ds: &Dataset,
    methods: &[String],
    corrected: &[ErrorRecord],
) -> Result<(ComparisonTable, Vec<ErrorRecord>), PipelineError> {
    let mut records = baseline_records(ds, Split::Test, methods)?;
    let mut order = methods.to_vec();
    if let Some(first) = corrected.first() {
        order.push(first.method.clone());
    }
    records.extend(corrected.iter().cloned());
    Ok((compare_methods(&records, &order), records))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub locator: String,
    pub distribution: RunDistribution,
    /// Group means of the uncorrected locator on the same test rows.
    pub baseline: BTreeMap<String, f64>,
}

pub struct StabilityOutcome {
    pub report: StabilityReport,
    pub median_checkpoint: Checkpoint,
}

/// Baseline group means restricted to the rows the model is evaluated on.
pub fn matched_baseline(
    stage_rows: &PreparedData,
    ds: &Dataset,
    locator: &str,
) -> Result<BTreeMap<String, f64>, PipelineError> {
    let keep: std::collections::HashSet<&str> = stage_rows
        .split(Split::Test)
        .iter()
        .map(|r| r.scenario_id.as_str())
        .collect();
    let recs: Vec<ErrorRecord> = baseline_records(ds, Split::Test, &[locator.to_string()])?
        .into_iter()
        .filter(|r| keep.contains(r.scenario_id.as_str()))
        .collect();
    Ok(group_means(&recs).into_iter().map(|(k, (m, _))| (k, m)).collect())
}

/// Train one model per seed on identical data and aggregate test errors.
pub fn stability(
    prepared: &PreparedData,
    scaler: &Scaler,
    locator: LocatorMethod,
    test: &Dataset,
    hp: &GrnHyperparams,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<StabilityOutcome, PipelineError> {
    let locator = locator.name();
    let runs: Vec<(Checkpoint, BTreeMap<String, f64>)> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..*cfg };
            let out = train_model(prepared, scaler, hp, &cfg).map_err(|e| match e {
                PipelineError::Grn(source) => PipelineError::Seed { seed, source },
                other => other,
            })?;
            let ck = Checkpoint::new(locator, *hp, cfg, scaler.clone(), &out);
            let recs = corrected_records(&ck, prepared, test)?;
            let means = group_means(&recs).into_iter().map(|(k, (m, _))| (k, m)).collect();
            Ok((ck, means))
        })
        .collect::<Result<_, PipelineError>>()?;
    let means: Vec<BTreeMap<String, f64>> = runs.iter().map(|r| r.1.clone()).collect();
    let distribution = run_distribution(seeds, &means)?;
    let idx = seeds
        .iter()
        .position(|s| *s == distribution.median_seed)
        .expect("median seed comes from the list");
    Ok(StabilityOutcome {
        report: StabilityReport {
            locator: locator.to_string(),
            distribution,
            baseline: matched_baseline(prepared, test, locator)?,
        },
        median_checkpoint: runs[idx].0.clone(),
    })
}

/// Tuner settings carried in the pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneSettings {
    pub n_trials: usize,
    pub folds: usize,
    /// Trials suggested from one history snapshot and evaluated together.
    pub parallel_trials: usize,
    pub tpe: TpeConfig,
    /// Replaces the default search space when present.
    pub space: Option<SearchSpace>,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self {
            n_trials: 50,
            folds: 3,
            parallel_trials: 1,
            tpe: TpeConfig::default(),
            space: None,
        }
    }
}

impl TuneSettings {
    pub fn space(&self) -> SearchSpace {
        self.space.clone().unwrap_or_else(SearchSpace::grn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Bundled desk network when absent.
    pub network_json: Option<PathBuf>,
    /// Bundled train/test grids when absent.
    pub grid_json: Option<PathBuf>,
    pub workdir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            network_json: None,
            grid_json: None,
            workdir: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub locator: LocatorMethod,
    /// Estimate columns written by `estimate` and compared by `evaluate`.
    pub methods: Vec<LocatorMethod>,
    pub selection: SelectionThresholds,
    pub hyperparams: GrnHyperparams,
    pub train: TrainConfig,
    pub tune: TuneSettings,
    pub seeds: Vec<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            locator: LocatorMethod::MM,
            methods: LocatorMethod::ALL.to_vec(),
            selection: SelectionThresholds::default(),
            hyperparams: GrnHyperparams::tuned(),
            train: TrainConfig::default(),
            tune: TuneSettings::default(),
            seeds: (1..=50).collect(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if !self.methods.contains(&self.locator) {
            return bad(format!(
                "locator {} is not among the estimated methods",
                self.locator.name()
            ));
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        self.hyperparams
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.tune.space().validate()?;
        self.tune.tpe.validate()?;
        if self.tune.folds < 2 {
            return bad("tune.folds must be at least 2".into());
        }
        if self.tune.n_trials == 0 || self.tune.parallel_trials == 0 {
            return bad("tune.n_trials and tune.parallel_trials must be positive".into());
        }
        Ok(())
    }

    /// The configured network, or the bundled desk network.
    pub fn network(&self) -> Result<NetworkConfig, PipelineError> {
        match &self.paths.network_json {
            Some(p) => Ok(NetworkConfig::from_json(&read_text(p)?)?),
            None => Ok(NetworkConfig::desk_default()),
        }
    }

    pub fn grids(&self) -> Result<GridPair, PipelineError> {
        match &self.paths.grid_json {
            Some(p) => Ok(GridPair::from_json(&read_text(p)?)?),
            None => {
                let (train, test) = default_grids();
                Ok(GridPair { train, test })
            }
        }
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn hyperparams_from_point(p: &Point) -> Result<GrnHyperparams, PipelineError> {
    let get = |k: &str| {
        p.get(k)
            .copied()
            .ok_or_else(|| PipelineError::Config(format!("search space has no {k} parameter")))
    };
    Ok(GrnHyperparams {
        hidden_dim: get("hidden_dim")? as usize,
        num_blocks: get("num_blocks")? as usize,
        dropout: get("dropout")?,
        lr: get("lr")?,
    })
}

/// Mean held-out MAE (standardized target units) over `folds` folds of the
/// training split.
pub fn cv_objective(
    prepared: &PreparedData,
    scaler: &Scaler,
    hp: &GrnHyperparams,
    cfg: &TrainConfig,
    folds: usize,
) -> Result<f64, PipelineError> {
    let (x, y) = design_matrix(prepared, scaler, Split::Train)?;
    let n = y.len();
    if folds < 2 || n < 2 * folds {
        return Err(PipelineError::Data(format!("{n} rows cannot form {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf01d));
    let mut total = 0.0;
    for k in 0..folds {
        let (held, kept): (Vec<(usize, usize)>, Vec<(usize, usize)>) =
            order.iter().copied().enumerate().partition(|(pos, _)| pos % folds == k);
        let held: Vec<usize> = held.into_iter().map(|p| p.1).collect();
        let kept: Vec<usize> = kept.into_iter().map(|p| p.1).collect();
        let out = train(hp, x.select(Axis(0), &kept).view(), &pick(&y, &kept), cfg)?;
        let pred = out.params.predict(x.select(Axis(0), &held).view())?;
        total += mae(&pred, &pick(&y, &held));
    }
    Ok(total / folds as f64)
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

pub struct TuneOutcome {
    pub best: TrialRecord,
    pub history: TuneHistory,
    pub space: SearchSpace,
}

/// TPE search with the cross-validated training loss as the objective.
pub fn tune(
    prepared: &PreparedData,
    scaler: &Scaler,
    cfg: &TrainConfig,
    settings: &TuneSettings,
) -> Result<TuneOutcome, PipelineError> {
    let space = settings.space();
    let objective = |p: &Point| -> Result<f64, String> {
        let hp = hyperparams_from_point(p).map_err(|e| e.to_string())?;
        cv_objective(prepared, scaler, &hp, cfg, settings.folds).map_err(|e| e.to_string())
    };
    let (best, history) = optimize_batched(
        objective,
        &space,
        settings.n_trials,
        &settings.tpe,
        settings.parallel_trials,
    )?;
    Ok(TuneOutcome { best, history, space })
}
