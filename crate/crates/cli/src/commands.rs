use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cascnn_core::afc::{ingest as bin_records, parse_afc, write_afc, Ingested, Manifest};
use cascnn_core::eval::{interpretability_report, write_interval_csv, write_pairs_csv};
use cascnn_core::model::{load_checkpoint, save_checkpoint, Model, ModelInput};
use cascnn_core::odad::sparsity_report;
use cascnn_core::pipeline::{evaluate_test, prepare_dataset, run_experiment, Dataset, TestSummary};
use cascnn_core::synth::{generate, weekdays};
use cascnn_core::{Error, Result};
use chrono::NaiveDate;
use serde_json::json;

use crate::config::{RunConfig, Settings};
use crate::run::{create_file, create_run_dir, io_err, write_file, RunLog};
use crate::Common;

const AFC_FILE: &str = "afc.csv";
const MANIFEST_FILE: &str = "manifest.json";
const DATASET_FILE: &str = "dataset.json";
const REPORT_FILE: &str = "report.json";

struct Session {
    config: RunConfig,
    settings: Settings,
    dir: PathBuf,
    log: RunLog,
}

fn start(common: &Common, base: RunConfig, label: &str) -> Result<Session> {
    let config = base.layer(common.config.as_deref(), &common.set)?;
    let settings = config.settings()?;
    let dir = create_run_dir(&settings.runs_dir, common.run_dir.as_deref(), label)?;
    let mut log = RunLog::open(&dir)?;
    log.line(format!("run directory: {}", dir.display()))?;
    log.line(format!("seed: {}", settings.seed))?;
    write_file(&dir.join("config.txt"), config.to_text())?;
    Ok(Session {
        config,
        settings,
        dir,
        log,
    })
}

fn json_file(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

pub fn synth(common: &Common) -> Result<()> {
    let mut s = start(common, RunConfig::default(), "synth")?;
    let dates = weekdays(s.settings.synth_start, s.settings.synth_days);
    let grid = s.settings.grid(dates)?;
    s.log.line(format!("synth seed: {}", s.settings.synth.seed))?;
    let out = generate(&s.settings.synth, &grid)?;
    let afc = s.dir.join(AFC_FILE);
    write_afc(&out.records, create_file(&afc)?)?;
    let manifest = s.dir.join(MANIFEST_FILE);
    json_file(&manifest, &out.manifest)?;
    s.log.line(format!(
        "{} trips over {} days and {} stations ({} skipped for exiting after service end)",
        out.records.len(),
        grid.days(),
        s.settings.synth.n,
        out.skipped_late
    ))?;
    s.log.line(format!("wrote {}", afc.display()))?;
    s.log.line(format!("wrote {}", manifest.display()))
}

/// Loads an ingested dataset: `dataset.json` if present (directly or inside
/// `path`), otherwise `afc.csv` + `manifest.json` binned on the configured grid.
fn load_ingested(path: &Path, settings: &Settings, log: &mut RunLog) -> Result<Ingested> {
    let dataset = if path.is_file() { path.to_path_buf() } else { path.join(DATASET_FILE) };
    if dataset.is_file() {
        log.line(format!("data: {}", dataset.display()))?;
        let text = std::fs::read(&dataset).map_err(|e| io_err(&dataset, e))?;
        return Ok(serde_json::from_slice(&text)?);
    }
    let manifest_path = path.join(MANIFEST_FILE);
    let afc = path.join(AFC_FILE);
    log.line(format!("data: {} + {}", afc.display(), manifest_path.display()))?;
    let manifest = Manifest::read(&manifest_path)?;
    let grid = settings.grid(manifest.dates.clone())?;
    let parsed = parse_afc(std::fs::File::open(&afc).map_err(|e| io_err(&afc, e))?)?;
    if !parsed.rejected.is_empty() {
        log.line(format!("rejected {} rows with exit not after entry", parsed.rejected.len()))?;
    }
    let data = bin_records(&parsed.records, &grid, manifest.n, settings.data.outflow)?;
    let r = &data.report;
    log.line(format!(
        "{} records; dropped {} entering outside the grid, {} exiting outside it",
        r.records, r.dropped_entry_out_of_grid, r.dropped_exit_out_of_grid
    ))?;
    Ok(data)
}

pub fn ingest(common: &Common, data: &Path) -> Result<()> {
    let mut s = start(common, RunConfig::default(), "ingest")?;
    let ingested = load_ingested(data, &s.settings, &mut s.log)?;
    let out = s.dir.join(DATASET_FILE);
    json_file(&out, &ingested)?;
    json_file(&s.dir.join("ingest_report.json"), &ingested.report)?;
    s.log.line(format!("wrote {}", out.display()))
}

pub fn stats(common: &Common, data: &Path) -> Result<()> {
    let mut s = start(common, RunConfig::default(), "stats")?;
    let ingested = load_ingested(data, &s.settings, &mut s.log)?;
    let grid = ingested.grid.clone();
    let dataset = prepare_dataset(ingested, &s.settings.data)?;
    let od = &dataset.ingested.od;
    let intervals: Vec<usize> = (0..od.intervals).collect();
    let report = sparsity_report(od, &dataset.odad, &intervals)?;
    let sparsity = s.dir.join("sparsity.csv");
    report.write_csv(create_file(&sparsity)?, |t| grid.interval_label(t))?;
    let mask = s.dir.join("mask.csv");
    dataset.masks.write_csv(create_file(&mask)?)?;
    json_file(&s.dir.join("mask.json"), &dataset.masks.header())?;

    let nn = od.n * od.n;
    let zero_share: Vec<f64> = (0..od.intervals)
        .map(|t| {
            let zeros: usize = (0..od.days).map(|d| od.matrix(d, t).iter().filter(|&&c| c == 0).count()).sum();
            zeros as f64 / (od.days * nn) as f64
        })
        .collect();
    let summary = json!({
        "stations": od.n,
        "days": od.days,
        "intervals": od.intervals,
        "trips": od.total(),
        "fit_days": [dataset.fit_days.start, dataset.fit_days.end],
        "mask_threshold": dataset.masks.threshold,
        "kept_pairs_per_interval": dataset.masks.kept,
        "zero_share_per_interval": zero_share,
        "ingest": dataset.ingested.report,
    });
    json_file(&s.dir.join("stats.json"), &summary)?;
    let kept: usize = dataset.masks.kept.iter().sum();
    s.log.line(format!("{kept} of {} interval-pair cells kept by the mask", nn * od.intervals))?;
    s.log.line(format!("wrote {} and {}", sparsity.display(), mask.display()))
}

fn sample_counts(d: &Dataset) -> serde_json::Value {
    json!({"train": d.split.train.len(), "val": d.split.val.len(), "test": d.split.test.len()})
}

fn log_test(log: &mut RunLog, t: &TestSummary) -> Result<()> {
    let m = &t.metrics;
    let wmape = m.wmape.map_or("n/a".to_string(), |w| format!("{:.4}", w));
    log.line(format!("test RMSE {:.4}  MAE {:.4}  WMAPE {wmape}  over {} cells", m.rmse, m.mae, m.cells))?;
    log.line(format!(
        "test masked MSE {:.6} (historical average {:.6}); {} cells clipped at zero",
        t.masked_mse, t.ha_masked_mse, t.clipped_cells
    ))
}

pub fn train(common: &Common, data: &Path, ablation: Option<&str>) -> Result<()> {
    let mut base = RunConfig::load(common.config.as_deref(), &common.set)?;
    if let Some(a) = ablation {
        base = base.layer(None, &[format!("model.variant={a}")])?;
    }
    let label = format!("train-{}", base.get("model.variant"));
    let no_file = Common {
        config: None,
        set: Vec::new(),
        run_dir: common.run_dir.clone(),
    };
    let mut s = start(&no_file, base, &label)?;
    let data_path = std::fs::canonicalize(data).map_err(|e| io_err(data, e))?;
    let ingested = load_ingested(&data_path, &s.settings, &mut s.log)?;
    let dataset = prepare_dataset(ingested, &s.settings.data)?;
    let variant = s.settings.variant;
    let (spec, train_cfg) = variant.configure(&s.settings.model.config(dataset.ingested.od.n), &s.settings.train);
    s.log.line(format!(
        "variant {} ({}); {} train / {} val / {} test samples",
        variant.name(),
        variant.label(),
        dataset.split.train.len(),
        dataset.split.val.len(),
        dataset.split.test.len()
    ))?;

    let mut losses = String::from("epoch,train_loss,val_loss\n");
    let log = &mut s.log;
    let mut log_err = None;
    let exp = run_experiment(&dataset, &spec, &train_cfg, s.settings.seed, |e| {
        losses.push_str(&format!("{},{},{}\n", e.epoch, e.train, e.val));
        if let Err(err) = log.line(format!("epoch {:>3}  train {:.6}  val {:.6}", e.epoch, e.train, e.val)) {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    s.log.line(format!(
        "stopped after {} epochs ({:?}); best validation loss {:.6} at epoch {}",
        exp.state.epoch, exp.state.stop_reason, exp.state.best_val, exp.state.best_epoch
    ))?;
    log_test(&mut s.log, &exp.test)?;

    let extra = json!({
        "config": s.config.map(),
        "data": data_path,
        "variant": variant.name(),
    });
    save_checkpoint(&exp.model, &s.dir, extra)?;
    let losses_path = s.dir.join("losses.csv");
    write_file(&losses_path, losses)?;
    let report = json!({
        "variant": variant.name(),
        "label": variant.label(),
        "config": s.config.map(),
        "data": data_path,
        "seed": s.settings.seed,
        "model": spec,
        "parameters": exp.model.params().scalar_count(),
        "samples": sample_counts(&dataset),
        "train_settings": train_cfg,
        "train": exp.state,
        "test": exp.test,
        "run_dir": s.dir,
    });
    let report_path = s.dir.join(REPORT_FILE);
    json_file(&report_path, &report)?;
    s.log.line(format!("wrote {}", s.dir.join("model.json").display()))?;
    s.log.line(format!("wrote {}", losses_path.display()))?;
    s.log.line(format!("wrote {}", report_path.display()))
}

/// Restores a trained model with the configuration and data it was trained on.
fn restore(common: &Common, model_dir: &Path, data: Option<&Path>, label: &str) -> Result<(Session, Model, Dataset)> {
    let (model, manifest) = load_checkpoint(model_dir)?;
    let saved: BTreeMap<String, String> = serde_json::from_value(manifest.extra["config"].clone())
        .map_err(|e| Error::Format(format!("{}: missing training config: {e}", model_dir.display())))?;
    let base = RunConfig::from_map(&saved)?;
    let mut s = start(common, base, label)?;
    s.log.line(format!("model: {}", model_dir.display()))?;
    let data_path = match data {
        Some(d) => d.to_path_buf(),
        None => manifest.extra["data"]
            .as_str()
            .map(PathBuf::from)
            .ok_or_else(|| Error::Format("checkpoint does not record its data path; pass --data".into()))?,
    };
    let ingested = load_ingested(&data_path, &s.settings, &mut s.log)?;
    let dataset = prepare_dataset(ingested, &s.settings.data)?;
    if dataset.ingested.od.n != model.config().n {
        return Err(Error::Data(format!(
            "model has {} stations, data has {}",
            model.config().n,
            dataset.ingested.od.n
        )));
    }
    Ok((s, model, dataset))
}

pub struct EvalOptions {
    pub per_interval: bool,
    pub pairs: Option<String>,
    pub interpret: bool,
}

fn parse_pairs(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|p| {
            let (o, d) = p.trim().split_once('-').ok_or_else(|| Error::Usage(format!("pair `{p}` is not O-D")))?;
            let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| Error::Usage(format!("pair `{p}`: {e}")));
            Ok((parse(o)?, parse(d)?))
        })
        .collect()
}

pub fn eval(common: &Common, model_dir: &Path, data: Option<&Path>, opts: EvalOptions) -> Result<()> {
    let pairs = opts.pairs.as_deref().map(parse_pairs).transpose()?;
    let (mut s, model, dataset) = restore(common, model_dir, data, "eval")?;
    let (summary, predictions) = evaluate_test(&model, &dataset)?;
    log_test(&mut s.log, &summary)?;
    json_file(&s.dir.join("eval.json"), &summary)?;
    let grid = &dataset.ingested.grid;

    if opts.per_interval {
        let reports = predictions.per_interval(&dataset.masks)?;
        let path = s.dir.join("per_interval.csv");
        write_interval_csv(&reports, create_file(&path)?, |t| grid.interval_label(t))?;
        s.log.line(format!("wrote {}", path.display()))?;
    }
    if let Some(pairs) = pairs {
        let series = predictions.pair_series(&dataset.masks, &pairs)?;
        for w in series.iter().filter_map(|p| p.warning.as_ref()) {
            s.log.line(format!("warning: {w}"))?;
        }
        let path = s.dir.join("pairs.csv");
        write_pairs_csv(&series, create_file(&path)?)?;
        s.log.line(format!("wrote {}", path.display()))?;
    }
    if opts.interpret {
        let report = interpretability_report(&model, &dataset.ingested.flows, dataset.fit_days.clone())?;
        let path = s.dir.join("interpret.csv");
        report.write_csv(create_file(&path)?)?;
        let r = report.pearson_r.map_or(json!("n/a"), |v| json!(v));
        json_file(&s.dir.join("interpret.json"), &json!({"pearson_r": r, "stations": report.stations}))?;
        let sign = match report.pearson_r {
            Some(v) if v < 0.0 => "negative",
            Some(v) if v > 0.0 => "positive",
            Some(_) => "zero",
            None => "undefined",
        };
        s.log.line(format!("pearson r (inflow volume vs gate weight) = {} ({sign})", report.pearson_label()))?;
        s.log.line(format!("wrote {}", path.display()))?;
    }
    Ok(())
}

pub fn predict(common: &Common, model_dir: &Path, data: Option<&Path>, date: NaiveDate, interval: &str) -> Result<()> {
    let (mut s, model, dataset) = restore(common, model_dir, data, "predict")?;
    let grid = &dataset.ingested.grid;
    let day = grid
        .day_index(date)
        .ok_or_else(|| Error::Lookup(format!("{date} is not a service date of the dataset")))?;
    let t = (0..grid.intervals_per_day())
        .find(|&t| grid.interval_label(t) == interval)
        .ok_or_else(|| Error::Lookup(format!("no interval starts at {interval}")))?;
    let split = &dataset.split;
    let sample = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .find(|x| x.day == day && x.interval == t)
        .ok_or_else(|| Error::Lookup(format!("{date} {interval} lacks the history needed for a prediction")))?;
    let out = model.predict(ModelInput::from(sample))?;
    let n = model.config().n;
    let od = dataset.scalers.od;
    let mut csv = String::from("origin,destination,predicted,actual\n");
    for i in 0..n {
        for j in 0..n {
            let p = od.invert(out.data()[i * n + j]).max(0.0);
            let a = od.invert(sample.target.data()[i * n + j]);
            csv.push_str(&format!("{i},{j},{p},{a}\n"));
        }
    }
    let path = s.dir.join("prediction.csv");
    write_file(&path, csv)?;
    s.log.line(format!("wrote {}", path.display()))
}

pub fn compare(common: &Common, runs: &[PathBuf]) -> Result<()> {
    let mut s = start(common, RunConfig::default(), "compare")?;
    let mut csv = String::from("model,RMSE,MAE,WMAPE\n");
    for run in runs {
        let path = run.join(REPORT_FILE);
        let text = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        let report: serde_json::Value = serde_json::from_slice(&text)?;
        let metrics = &report["test"]["metrics"];
        let field = |k: &str| -> Result<f64> {
            metrics[k]
                .as_f64()
                .ok_or_else(|| Error::Format(format!("{}: test.metrics.{k} missing", path.display())))
        };
        let label = report["label"].as_str().unwrap_or("unknown");
        let wmape = metrics["wmape"].as_f64().map_or("n/a".to_string(), |w| w.to_string());
        csv.push_str(&format!("{label},{},{},{wmape}\n", field("rmse")?, field("mae")?));
        s.log.line(format!("{label}: {}", run.display()))?;
    }
    let out = s.dir.join("comparison.csv");
    write_file(&out, csv)?;
    s.log.line(format!("wrote {}", out.display()))
}
