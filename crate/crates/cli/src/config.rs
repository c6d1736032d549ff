//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cascnn_core::afc::{OutflowConvention, SplitConfig, TimeGrid};
use cascnn_core::model::ModelConfig;
use cascnn_core::pipeline::{DataConfig, Variant};
use cascnn_core::synth::SynthConfig;
use cascnn_core::tensor::OptimizerKind;
use cascnn_core::train::{LossKind, TrainConfig};
use cascnn_core::{Error, Result};
use chrono::{NaiveDate, NaiveTime};

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(key: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, default, help }
}

pub const KEYS: &[KeySpec] = &[
    key("seed", "42", "model initialization, epoch shuffling and train/validation split"),
    key("grid.service_start", "05:00", "first interval start (HH:MM)"),
    key("grid.service_end", "23:00", "service end (HH:MM)"),
    key("grid.interval_minutes", "30", "interval length in minutes"),
    key("data.outflow_convention", "exit_time", "outflow binning: exit_time | column_sum"),
    key("data.val_rate", "0.1", "share of non-test samples used for validation"),
    key("data.test_fraction", "0.2", "share of trailing days held out for testing"),
    key("mask.threshold", "2.0", "keep OD pairs whose attraction degree exceeds this"),
    key("model.variant", "full", "full | no_split | no_mask | no_ca | no_inflow | no_outflow | cnn2d"),
    key("model.x", "5", "history days at the same interval"),
    key("model.y", "5", "recent intervals of inflow/outflow"),
    key("model.kernels", "3,5", "split-convolution kernel sizes"),
    key("model.filters_layer1", "16", "filters of the first split convolution"),
    key("model.filters_layer2", "1", "filters of the second split convolution"),
    key("model.reduction", "2", "channel-attention reduction factor"),
    key("model.ca_after_layer2", "false", "also attend over the second layer's channels"),
    key("train.lr", "0.001", "learning rate"),
    key("train.batch_size", "16", "mini-batch size (the cnn2d variant uses 8)"),
    key("train.max_epochs", "200", "epoch limit"),
    key("train.patience", "10", "epochs without validation improvement before stopping"),
    key("train.optimizer", "adam", "adam | sgd"),
    key("train.loss", "masked_mse", "masked_mse | plain_mse"),
    key("synth.n", "20", "stations on the synthetic line"),
    key("synth.days", "15", "weekdays to generate"),
    key("synth.start_date", "2016-02-29", "first generated date (YYYY-MM-DD)"),
    key("synth.residential_fraction", "0.5", "share of residential stations"),
    key("synth.per_hop_minutes", "3", "ride time between adjacent stations"),
    key("synth.duration_noise_minutes", "4", "extra ride time, uniform in [0, value]"),
    key("synth.base_rate", "1.6", "off-peak trips per interval between adjacent affine stations"),
    key("synth.distance_decay", "4", "hops over which demand decays by a factor e"),
    key("synth.peak_boost", "5", "peak-direction multiplier in the AM/PM peaks"),
    key("synth.daily_jitter", "0.2", "log-sd of each station's daily level"),
    key("synth.weekday_spread", "0.5", "log-sd of each station's day-of-week profile"),
    key("synth.seed", "7", "generator seed"),
    key("paths.runs_dir", "runs", "parent directory of timestamped run directories"),
];

/// Renders the key table for `--help`.
pub fn help_table() -> String {
    let width = KEYS.iter().map(|k| k.key.len() + k.default.len()).max().unwrap_or(0) + 3;
    let mut out = String::from("Configuration keys (set in --config files or with --set KEY=VALUE):\n");
    for k in KEYS {
        let lhs = format!("{} = {}", k.key, k.default);
        out.push_str(&format!("  {lhs:<width$}  {}\n", k.help));
    }
    out
}

/// Every key resolved to a raw string value.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn split_assignment(line: &str) -> Option<(String, String)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim().to_string(), v.trim().to_string()))
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|k| (k.key.to_string(), k.default.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the file, then `--set` overrides. All malformed lines
    /// and unknown keys are reported together.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        RunConfig::default().layer(path, overrides)
    }

    /// Applies a file and overrides on top of `self`.
    pub fn layer(self, path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = self;
        let mut problems = Vec::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            cfg.apply_text(&text, &format!("{}", path.display()), &mut problems);
        }
        for (i, o) in overrides.iter().enumerate() {
            match split_assignment(o) {
                Some((k, v)) => cfg.set(&k, v, &format!("--set #{}", i + 1), &mut problems),
                None => problems.push(format!("--set `{o}`: expected KEY=VALUE")),
            }
        }
        cfg.settings_problems(&mut problems);
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut problems = Vec::new();
        for (k, v) in map {
            cfg.set(k, v.clone(), "saved config", &mut problems);
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn apply_text(&mut self, text: &str, origin: &str, problems: &mut Vec<String>) {
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("{origin}:{}", i + 1);
            let Some((k, v)) = split_assignment(line) else {
                problems.push(format!("{at}: expected KEY = VALUE"));
                continue;
            };
            if let Some(prev) = seen.insert(k.clone(), i + 1) {
                problems.push(format!("{at}: `{k}` already set on line {prev}"));
                continue;
            }
            self.set(&k, v, &at, problems);
        }
    }

    fn set(&mut self, key: &str, value: String, at: &str, problems: &mut Vec<String>) {
        match self.values.get_mut(key) {
            Some(slot) => *slot = value,
            None => problems.push(format!("{at}: unknown key `{key}`")),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    pub fn map(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn settings_problems(&self, problems: &mut Vec<String>) {
        if let Err(Error::Config(msg)) = self.settings() {
            problems.extend(msg.split("; ").map(str::to_string));
        }
    }

    /// Typed view of every key; reports all invalid values together.
    pub fn settings(&self) -> Result<Settings> {
        let mut p = Parser { cfg: self, problems: Vec::new() };
        let service_start = p.time("grid.service_start");
        let service_end = p.time("grid.service_end");
        let interval_minutes = p.parse::<u32>("grid.interval_minutes");
        let outflow = p.choice("data.outflow_convention", &[("exit_time", OutflowConvention::ExitTime), ("column_sum", OutflowConvention::ColumnSum)]);
        let val_rate = p.fraction("data.val_rate");
        let test_fraction = p.fraction("data.test_fraction");
        let mask_threshold = p.parse::<f64>("mask.threshold");
        let seed = p.parse::<u64>("seed");
        let variant = p.parse_with("model.variant", |s| s.parse::<Variant>().map_err(|e| e.to_string()));
        let x = p.parse::<usize>("model.x");
        let y = p.parse::<usize>("model.y");
        let kernels = p.parse_with("model.kernels", |s| {
            s.split(',').map(|k| k.trim().parse::<usize>().map_err(|e| e.to_string())).collect::<std::result::Result<Vec<_>, _>>()
        });
        let filters_layer1 = p.parse::<usize>("model.filters_layer1");
        let filters_layer2 = p.parse::<usize>("model.filters_layer2");
        let reduction = p.parse::<usize>("model.reduction");
        let ca_after_layer2 = p.parse::<bool>("model.ca_after_layer2");
        let lr = p.parse::<f64>("train.lr");
        let batch_size = p.parse::<usize>("train.batch_size");
        let max_epochs = p.parse::<usize>("train.max_epochs");
        let patience = p.parse::<usize>("train.patience");
        let optimizer = p.choice("train.optimizer", &[("adam", OptimizerKind::Adam), ("sgd", OptimizerKind::Sgd)]);
        let loss = p.choice("train.loss", &[("masked_mse", LossKind::MaskedMse), ("plain_mse", LossKind::PlainMse)]);
        let synth_days = p.parse::<usize>("synth.days");
        let synth_start = p.parse_with("synth.start_date", |s| NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| e.to_string()));
        let synth = SynthConfig {
            n: p.parse("synth.n").unwrap_or(0),
            residential_fraction: p.parse("synth.residential_fraction").unwrap_or(0.0),
            per_hop_minutes: p.parse("synth.per_hop_minutes").unwrap_or(0.0),
            duration_noise_minutes: p.parse("synth.duration_noise_minutes").unwrap_or(0.0),
            base_rate: p.parse("synth.base_rate").unwrap_or(0.0),
            distance_decay: p.parse("synth.distance_decay").unwrap_or(0.0),
            peak_boost: p.parse("synth.peak_boost").unwrap_or(0.0),
            daily_jitter: p.parse("synth.daily_jitter").unwrap_or(0.0),
            weekday_spread: p.parse("synth.weekday_spread").unwrap_or(0.0),
            seed: p.parse("synth.seed").unwrap_or(0),
        };
        let runs_dir = PathBuf::from(self.get("paths.runs_dir"));

        let mut problems = p.problems;
        if let (Some(s), Some(e), Some(i)) = (service_start, service_end, interval_minutes) {
            if let Err(Error::Config(m)) = TimeGrid::new(s, e, i, Vec::new()) {
                problems.push(format!("grid: {m}"));
            }
        }
        let train = TrainConfig {
            lr: lr.unwrap_or(0.0),
            batch_size: batch_size.unwrap_or(1),
            max_epochs: max_epochs.unwrap_or(1),
            patience: patience.unwrap_or(1),
            seed: seed.unwrap_or(0),
            loss: loss.unwrap_or(LossKind::MaskedMse),
            optimizer: optimizer.unwrap_or(OptimizerKind::Adam),
        };
        // unparsed keys fall back to valid placeholders, so this only reports real range errors
        if let Err(Error::Config(m)) = train.validate() {
            problems.extend(m.split("; ").map(|s| format!("train: {s}")));
        }
        if let Err(Error::Config(m)) = synth.validate() {
            if problems.iter().all(|p| !p.starts_with("synth.")) {
                problems.extend(m.split("; ").map(|s| format!("synth: {s}")));
            }
        }
        if synth_days == Some(0) {
            problems.push("synth.days must be >= 1".into());
        }
        let model_parsed = [x.is_some(), y.is_some(), kernels.is_some(), filters_layer1.is_some(), filters_layer2.is_some(), reduction.is_some()];
        let model = ModelTemplate {
            x: x.unwrap_or(1),
            y: y.unwrap_or(1),
            kernels: kernels.unwrap_or_default(),
            filters_layer1: filters_layer1.unwrap_or(1),
            filters_layer2: filters_layer2.unwrap_or(1),
            reduction: reduction.unwrap_or(1),
            ca_after_layer2: ca_after_layer2.unwrap_or(false),
        };
        if model_parsed.iter().all(|&ok| ok) {
            if let Err(Error::Config(m)) = model.config(2).validate() {
                problems.extend(m.split("; ").map(|s| format!("model: {s}")));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        Ok(Settings {
            seed: train.seed,
            service_start: service_start.expect("checked"),
            service_end: service_end.expect("checked"),
            interval_minutes: interval_minutes.expect("checked"),
            data: DataConfig {
                x: model.x,
                y: model.y,
                outflow: outflow.expect("checked"),
                split: SplitConfig {
                    test_fraction: test_fraction.expect("checked"),
                    val_rate: val_rate.expect("checked"),
                    seed: train.seed,
                },
                mask_threshold: mask_threshold.expect("checked"),
            },
            variant: variant.expect("checked"),
            model,
            train,
            synth,
            synth_days: synth_days.expect("checked"),
            synth_start: synth_start.expect("checked"),
            runs_dir,
        })
    }
}

struct Parser<'a> {
    cfg: &'a RunConfig,
    problems: Vec<String>,
}

impl Parser<'_> {
    fn parse_with<T>(&mut self, key: &str, f: impl FnOnce(&str) -> std::result::Result<T, String>) -> Option<T> {
        let raw = self.cfg.get(key);
        match f(raw) {
            Ok(v) => Some(v),
            Err(e) => {
                self.problems.push(format!("{key} = `{raw}`: {e}"));
                None
            }
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse_with(key, |s| s.parse::<T>().map_err(|e| e.to_string()))
    }

    fn fraction(&mut self, key: &str) -> Option<f64> {
        self.parse_with(key, |s| match s.parse::<f64>() {
            Ok(v) if (0.0..1.0).contains(&v) => Ok(v),
            Ok(v) => Err(format!("{v} is outside [0, 1)")),
            Err(e) => Err(e.to_string()),
        })
    }

    fn time(&mut self, key: &str) -> Option<NaiveTime> {
        self.parse_with(key, |s| NaiveTime::parse_from_str(s, "%H:%M").map_err(|e| e.to_string()))
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)]) -> Option<T> {
        self.parse_with(key, |s| {
            options.iter().find(|(name, _)| *name == s).map(|(_, v)| *v).ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                format!("expected one of {}", names.join(", "))
            })
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelTemplate {
    pub x: usize,
    pub y: usize,
    pub kernels: Vec<usize>,
    pub filters_layer1: usize,
    pub filters_layer2: usize,
    pub reduction: usize,
    pub ca_after_layer2: bool,
}

impl ModelTemplate {
    pub fn config(&self, n: usize) -> ModelConfig {
        ModelConfig {
            x: self.x,
            y: self.y,
            kernels: self.kernels.clone(),
            filters_layer1: self.filters_layer1,
            filters_layer2: self.filters_layer2,
            reduction: self.reduction,
            ca_after_layer2: self.ca_after_layer2,
            ..ModelConfig::new(n)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub service_start: NaiveTime,
    pub service_end: NaiveTime,
    pub interval_minutes: u32,
    pub data: DataConfig,
    pub variant: Variant,
    pub model: ModelTemplate,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub synth_days: usize,
    pub synth_start: NaiveDate,
    pub runs_dir: PathBuf,
}

impl Settings {
    pub fn grid(&self, dates: Vec<NaiveDate>) -> Result<TimeGrid> {
        TimeGrid::new(self.service_start, self.service_end, self.interval_minutes, dates)
    }
}
