use std::path::{Path, PathBuf};

use faultloc_core::dataset::Dataset;
use faultloc_core::eval::{cdf_csv, empirical_cdf, ErrorRecord};
use faultloc_core::features::{FeatureTable, PreparedData, Scaler};
use faultloc_core::grn::Checkpoint;
use faultloc_core::io::{atomic_write, write_json};
use faultloc_core::locators::LocatorMethod;
use faultloc_core::pipeline::{
    add_estimates, comparison, corrected_records, feature_stage, simulate, stability, train_model, tune,
    PipelineConfig, GRN_PREFIX,
};
use faultloc_core::tune::BestSummary;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::failure::{Failure, Kind};
use crate::{Cli, Command};

pub const TRAIN_CSV: &str = "train.csv";
pub const TEST_CSV: &str = "test.csv";
pub const SKIPPED_JSON: &str = "skipped.json";
pub const FEATURES_CSV: &str = "features.csv";
pub const SELECTION_JSON: &str = "selection.json";
pub const SCALER_JSON: &str = "scaler.json";
pub const EXCLUDED_JSON: &str = "excluded.json";
pub const FEATURES_META: &str = "features_meta.json";
pub const CHECKPOINT_JSON: &str = "checkpoint.json";
pub const HISTORY_JSON: &str = "train_history.json";
pub const TUNE_HISTORY: &str = "tune_history.jsonl";
pub const TUNE_BEST: &str = "tune_best.json";
pub const STABILITY_JSON: &str = "stability.json";
pub const MEDIAN_CHECKPOINT: &str = "checkpoint_median.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const ERRORS_CSV: &str = "errors.csv";

/// Config file (or defaults) with command-line flags applied on top.
fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::io(p, e))?;
            PipelineConfig::from_json(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(w) = &cli.workdir {
        cfg.paths.workdir = w.clone();
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
        cfg.tune.tpe.seed = s;
    }
    if let Some(l) = &cli.locator {
        let m: LocatorMethod = l
            .parse()
            .map_err(|_| Failure::new(Kind::Config, format!("unknown locator {l}")))?;
        cfg.locator = m;
        if !cfg.methods.contains(&m) {
            cfg.methods.push(m);
        }
    }
    if let Some(t) = cli.trials {
        cfg.tune.n_trials = t;
    }
    if let Some(s) = &cli.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `1-50`, `3,7,11`, or a mix such as `1-3,10`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::new(Kind::Config, format!("bad seed list {text:?}"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (
                    a.trim().parse().map_err(|_| bad())?,
                    b.trim().parse().map_err(|_| bad())?,
                );
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

fn threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("FAULTLOC_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        Failure::new(
            Kind::Config,
            format!("FAULTLOC_THREADS must be a positive integer, got {v:?}"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::new(Kind::Config, e.to_string()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::new(Kind::Data, format!("{}: {e}", path.display())))
}

fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), Failure> {
    write_json(path, value).map_err(|e| Failure::io(path, e))
}

fn save_text(path: &Path, text: &str) -> Result<(), Failure> {
    atomic_write(path, text.as_bytes()).map_err(|e| Failure::io(path, e))
}

fn need(path: &Path, hint: &str) -> Result<PathBuf, Failure> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(Failure::io(path, format!("not found (run `faultloc {hint}` first)")))
    }
}

struct Work<'a> {
    dir: &'a Path,
}

impl Work<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn datasets(&self) -> Result<(Dataset, Dataset), Failure> {
        let train = Dataset::read_csv(&need(&self.path(TRAIN_CSV), "simulate")?)?;
        let test = Dataset::read_csv(&need(&self.path(TEST_CSV), "simulate")?)?;
        Ok((train, test))
    }

    fn features(&self) -> Result<(PreparedData, Scaler), Failure> {
        let prepared = PreparedData::read_csv(&need(&self.path(FEATURES_CSV), "features")?)?;
        let scaler: Scaler = read_json(&need(&self.path(SCALER_JSON), "features")?)?;
        if prepared.columns.len() < scaler.features.len()
            || prepared.columns[..scaler.features.len()] != scaler.features[..]
        {
            return Err(Failure::new(
                Kind::Data,
                "feature file and scaler disagree on the retained columns",
            ));
        }
        Ok((prepared, scaler))
    }

    fn checkpoint(&self, explicit: Option<&Path>) -> Result<Option<Checkpoint>, Failure> {
        let path = match explicit {
            Some(p) => need(p, "train")?,
            None if self.path(CHECKPOINT_JSON).exists() => self.path(CHECKPOINT_JSON),
            None => return Ok(None),
        };
        Ok(Some(Checkpoint::load(&path)?))
    }
}

pub fn run(cli: &Cli) -> Result<Value, Failure> {
    let cfg = load_config(cli)?;
    threads()?;
    let work = Work {
        dir: &cfg.paths.workdir,
    };
    std::fs::create_dir_all(work.dir).map_err(|e| Failure::io(work.dir, e))?;
    match &cli.command {
        Command::Simulate => cmd_simulate(&cfg, &work),
        Command::Estimate => cmd_estimate(&cfg, &work),
        Command::Features => cmd_features(&cfg, &work),
        Command::Train => cmd_train(&cfg, &work),
        Command::Tune => cmd_tune(&cfg, &work),
        Command::Stability => cmd_stability(&cfg, &work),
        Command::Evaluate { checkpoint } => cmd_evaluate(&cfg, &work, checkpoint.as_deref()),
        Command::Correct {
            checkpoint,
            input,
            scenario_id,
        } => cmd_correct(&cfg, &work, checkpoint.as_deref(), input, scenario_id.as_deref()),
    }
}

fn cmd_simulate(cfg: &PipelineConfig, work: &Work) -> Result<Value, Failure> {
    let net = cfg.network()?;
    let grids = cfg.grids()?;
    let sim = simulate(&net, &grids)?;
    sim.train.write_csv(&work.path(TRAIN_CSV))?;
    sim.test.write_csv(&work.path(TEST_CSV))?;
    save_json(&work.path(SKIPPED_JSON), &sim.skipped)?;
    Ok(json!({
        "command": "simulate",
        "train_rows": sim.train.rows.len(),
        "test_rows": sim.test.rows.len(),
        "skipped": sim.skipped.len(),
    }))
}

fn cmd_estimate(cfg: &PipelineConfig, work: &Work) -> Result<Value, Failure> {
    let net = cfg.network()?;
    let (mut train, mut test) = work.datasets()?;
    add_estimates(&mut train, &net, &cfg.methods)?;
    add_estimates(&mut test, &net, &cfg.methods)?;
    train.write_csv(&work.path(TRAIN_CSV))?;
    test.write_csv(&work.path(TEST_CSV))?;
    let invalid: usize = test
        .rows
        .iter()
        .chain(&train.rows)
        .map(|r| r.estimates.iter().filter(|(_, v)| v.is_none()).count())
        .sum();
    Ok(json!({
        "command": "estimate",
        "methods": cfg.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "invalid_estimates": invalid,
    }))
}

fn cmd_features(cfg: &PipelineConfig, work: &Work) -> Result<Value, Failure> {
    let net = cfg.network()?;
    let (train, test) = work.datasets()?;
    let stage = feature_stage(&train, &test, &net, cfg.locator, cfg.selection)?;
    stage.prepared.write_csv(&work.path(FEATURES_CSV))?;
    save_json(&work.path(SELECTION_JSON), &stage.selection)?;
    save_json(&work.path(SCALER_JSON), &stage.scaler)?;
    save_json(&work.path(EXCLUDED_JSON), &stage.table.excluded)?;
    let summary = json!({
        "command": "features",
        "locator": cfg.locator.name(),
        "retained": stage.selection.retained.len(),
        "excluded_rows": stage.table.excluded.len(),
        "rows": stage.prepared.rows.len(),
    });
    save_json(&work.path(FEATURES_META), &summary)?;
    Ok(summary)
}

fn cmd_train(cfg: &PipelineConfig, work: &Work) -> Result<Value, Failure> {
    let (prepared, scaler) = work.features()?;
    let locator = prepared_locator(cfg, work)?;
    let out = train_model(&prepared, &scaler, &cfg.hyperparams, &cfg.train)?;
    let ck = Checkpoint::new(locator.name(), cfg.hyperparams, cfg.train, scaler, &out);
    ck.save(&work.path(CHECKPOINT_JSON))?;
    save_json(&work.path(HISTORY_JSON), &out.history)?;
    Ok(json!({
        "command": "train",
        "locator": locator.name(),
        "epochs": out.history.len(),
        "best_epoch": out.best_epoch,
        "best_val_mae": out.best_val_mae,
    }))
}

/// The locator the feature files were built for; the configured one must match.
fn prepared_locator(cfg: &PipelineConfig, work: &Work) -> Result<LocatorMethod, Failure> {
    let meta: Value = read_json(&need(&work.path(FEATURES_META), "features")?)?;
    let name = meta["locator"].as_str().unwrap_or_default();
    let m: LocatorMethod = name
        .parse()
        .map_err(|_| Failure::new(Kind::Data, format!("{FEATURES_META}: unknown locator {name:?}")))?;
    if m != cfg.locator {
        return Err(Failure::new(
            Kind::Config,
            format!(
                "features were built for {}, not {}; rerun `faultloc features`",
                m.name(),
                cfg.locator.name()
            ),
        ));
    }
    Ok(m)
}

fn cmd_tune(cfg: &PipelineConfig, work: &Work) -> Result<Value, Failure> {
    let (prepared, scaler) = work.features()?;
    let out = tune(&prepared, &scaler, &cfg.train, &cfg.tune)?;
    out.history
        .write_jsonl(&work.path(TUNE_HISTORY))
        .map_err(|e| Failure::io(&work.path(TUNE_HISTORY), e))?;
    let summary = BestSummary::new(&out.best, &out.history, &out.space);
    save_json(&work.path(TUNE_BEST), &summary)?;
    Ok(json!({
        "command": "tune",
        "trials": out.history.trials.len(),
        "failed": summary.n_failed,
        "best_objective": summary.objective,
        "best_point": summary.point,
    }))
}

fn cmd_stability(cfg: &PipelineConfig, work: &Work) -> Result<Value, Failure> {
    let (prepared, scaler) = work.features()?;
    let locator = prepared_locator(cfg, work)?;
    let (_, test) = work.datasets()?;
    let out = stability(
        &prepared,
        &scaler,
        locator,
        &test,
        &cfg.hyperparams,
        &cfg.train,
        &cfg.seeds,
    )?;
    save_json(&work.path(STABILITY_JSON), &out.report)?;
    out.median_checkpoint.save(&work.path(MEDIAN_CHECKPOINT))?;
    let all = &out.report.distribution.groups["ALL"].summary;
    Ok(json!({
        "command": "stability",
        "locator": locator.name(),
        "seeds": cfg.seeds.len(),
        "median_seed": out.report.distribution.median_seed,
        "all_median_pct": all.median,
        "all_iqr_pct": all.iqr,
    }))
}

fn errors_csv(records: &[ErrorRecord]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario_id", "method", "fault_group", "error_pct"])
        .and_then(|_| {
            records.iter().try_for_each(|r| {
                w.write_record([
                    r.scenario_id.as_str(),
                    r.method.as_str(),
                    r.fault_group.name(),
                    &faultloc_core::io::fmt_f64(r.error_pct),
                ])
            })
        })
        .map_err(|e| Failure::new(Kind::Data, e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| Failure::new(Kind::Data, e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Failure::new(Kind::Data, e.to_string()))
}

fn cmd_evaluate(cfg: &PipelineConfig, work: &Work, checkpoint: Option<&Path>) -> Result<Value, Failure> {
    let test = Dataset::read_csv(&need(&work.path(TEST_CSV), "simulate")?)?;
    let methods: Vec<String> = cfg.methods.iter().map(|m| m.name().to_string()).collect();
    let corrected = match work.checkpoint(checkpoint)? {
        Some(ck) => {
            let (prepared, _) = work.features()?;
            corrected_records(&ck, &prepared, &test)?
        }
        None => Vec::new(),
    };
    let (table, records) = comparison(&test, &methods, &corrected)?;
    save_text(&work.path(COMPARISON_CSV), &table.to_csv())?;
    save_text(&work.path(ERRORS_CSV), &errors_csv(&records)?)?;

    let mut cdfs = vec![cfg.locator.name().to_string()];
    if let Some(first) = corrected.first() {
        cdfs.push(first.method.clone());
    }
    let mut written = Vec::new();
    for m in &cdfs {
        let errs: Vec<f64> = records.iter().filter(|r| &r.method == m).map(|r| r.error_pct).collect();
        if errs.is_empty() {
            continue;
        }
        let name = format!("cdf_{m}.csv");
        save_text(&work.path(&name), &cdf_csv(&empirical_cdf(&errs)?))?;
        written.push(name);
    }
    let all = |m: &str| table.row(m).and_then(|r| r.cells.last().and_then(|c| c.mean_pct));
    Ok(json!({
        "command": "evaluate",
        "methods": table.rows.iter().map(|r| r.method.clone()).collect::<Vec<_>>(),
        "baseline_all_pct": all(cfg.locator.name()),
        "corrected_all_pct": corrected.first().and_then(|r| all(&r.method)),
        "cdf_files": written,
    }))
}

fn cmd_correct(
    cfg: &PipelineConfig,
    work: &Work,
    checkpoint: Option<&Path>,
    input: &Path,
    scenario_id: Option<&str>,
) -> Result<Value, Failure> {
    let ck = work
        .checkpoint(checkpoint)?
        .ok_or_else(|| Failure::io(&work.path(CHECKPOINT_JSON), "not found (run `faultloc train` first)"))?;
    let mut ds = Dataset::read_csv(&need(input, "simulate")?)?;
    ds.rows
        .retain(|r| scenario_id.is_none_or(|id| r.record.scenario.scenario_id == id));
    match ds.rows.len() {
        1 => {}
        0 => return Err(Failure::new(Kind::Data, "no matching record")),
        n => {
            return Err(Failure::new(
                Kind::Data,
                format!("{n} records match; pass --scenario-id to pick one"),
            ))
        }
    }
    let locator: LocatorMethod = ck
        .locator
        .parse()
        .map_err(|_| Failure::new(Kind::Data, format!("checkpoint names unknown locator {}", ck.locator)))?;
    let net = cfg.network()?;
    let table = FeatureTable::build(&ds, &net, locator);
    if let Some(x) = table.excluded.first() {
        return Err(Failure::new(Kind::Data, format!("{}: {}", x.scenario_id, x.reason)));
    }
    let row = &table.rows[0];
    let corrected = ck.predict_corrected(&row.features, row.d_est_km, row.d_max_km)?;
    Ok(json!({
        "command": "correct",
        "scenario_id": row.features.scenario_id,
        "locator": ck.locator,
        "method": format!("{GRN_PREFIX}{}", ck.locator),
        "d_est_km": row.d_est_km,
        "d_corrected_km": corrected,
        "d_max_km": row.d_max_km,
    }))
}

#[cfg(test)]
mod tests {
    use super::parse_seeds;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1-5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_seeds("3,7, 9-10").unwrap(), vec![3, 7, 9, 10]);
        assert_eq!(parse_seeds("42").unwrap(), vec![42]);
        for bad in ["", "5-1", "a", "1-", "1,,2"] {
            assert!(parse_seeds(bad).is_err(), "{bad}");
        }
    }
}
