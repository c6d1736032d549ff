//! End-to-end experiment plumbing shared by the command line and tests.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::afc::{build_samples, fit_scalers, split_train_val_test, test_day_range, Ingested, OutflowConvention, Scalers, Split, SplitConfig};
use crate::eval::{predict_samples, HistoricalAverage, MetricReport, PredictionSet};
use crate::model::{Model, ModelConfig, ModelKind, ModelSpec};
use crate::odad::{build_masks, compute_odad, MaskSet, OdadTable};
use crate::train::{fit_observed, mean_loss, EpochLosses, LossKind, TrainConfig, TrainState};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub x: usize,
    pub y: usize,
    pub outflow: OutflowConvention,
    pub split: SplitConfig,
    pub mask_threshold: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            x: 5,
            y: 5,
            outflow: OutflowConvention::ExitTime,
            split: SplitConfig::default(),
            mask_threshold: 2.0,
        }
    }
}

/// Everything derived from one ingested dataset before training.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub ingested: Ingested,
    pub scalers: Scalers,
    pub odad: OdadTable,
    pub masks: MaskSet,
    pub split: Split,
    /// Days used to fit scalers, attraction degrees and the historical average.
    pub fit_days: Range<usize>,
    pub test_days: Range<usize>,
}

pub fn prepare_dataset(ingested: Ingested, cfg: &DataConfig) -> Result<Dataset> {
    let days = ingested.grid.days();
    if days < 2 {
        return Err(Error::Data(format!("need at least 2 service days, got {days}")));
    }
    let test_days = test_day_range(days, cfg.split.test_fraction);
    let fit_days = 0..test_days.start;
    let scalers = fit_scalers(&ingested.od, &ingested.flows, fit_days.clone())?;
    let samples = build_samples(&ingested.od, &ingested.flows, &scalers, cfg.x, cfg.y)?;
    let split = split_train_val_test(samples, days, &cfg.split);
    let odad = compute_odad(&ingested.od, fit_days.clone())?;
    let masks = build_masks(&odad, cfg.mask_threshold);
    Ok(Dataset {
        ingested,
        scalers,
        odad,
        masks,
        split,
        fit_days,
        test_days,
    })
}

impl Dataset {
    pub fn historical_average(&self) -> Result<HistoricalAverage> {
        HistoricalAverage::fit(&self.ingested.od, self.fit_days.clone())
    }
}

/// One of the compared model configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoSplit,
    NoMask,
    NoCa,
    NoInflow,
    NoOutflow,
    Cnn2d,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoSplit,
        Variant::NoMask,
        Variant::NoCa,
        Variant::NoInflow,
        Variant::NoOutflow,
        Variant::Cnn2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSplit => "no_split",
            Variant::NoMask => "no_mask",
            Variant::NoCa => "no_ca",
            Variant::NoInflow => "no_inflow",
            Variant::NoOutflow => "no_outflow",
            Variant::Cnn2d => "cnn2d",
        }
    }

    /// Row label in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "CAS-CNN",
            Variant::NoSplit => "CAS-CNN (No S-CNN)",
            Variant::NoMask => "CAS-CNN (No Mask)",
            Variant::NoCa => "CAS-CNN (No CA)",
            Variant::NoInflow => "CAS-CNN (No Inflow)",
            Variant::NoOutflow => "CAS-CNN (No Outflow)",
            Variant::Cnn2d => "2D CNN",
        }
    }

    /// Applies the variant's switch to the base model and training settings.
    /// The plain CNN trains with batch size 8 and an unmasked loss.
    pub fn configure(self, base: &ModelConfig, train: &TrainConfig) -> (ModelSpec, TrainConfig) {
        let mut config = base.clone();
        let mut train = train.clone();
        let mut kind = ModelKind::CasCnn;
        match self {
            Variant::Full => {}
            Variant::NoSplit => config.ablations.no_split = true,
            Variant::NoMask => train.loss = LossKind::PlainMse,
            Variant::NoCa => config.ablations.no_channel_attention = true,
            Variant::NoInflow => config.ablations.no_inflow = true,
            Variant::NoOutflow => config.ablations.no_outflow = true,
            Variant::Cnn2d => {
                kind = ModelKind::Cnn2d;
                train.batch_size = 8;
                train.loss = LossKind::PlainMse;
            }
        }
        (ModelSpec { kind, config }, train)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown ablation `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

/// Held-out performance of a model next to the historical average.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestSummary {
    pub metrics: MetricReport,
    /// Mean per-sample masked MSE on the normalized scale.
    pub masked_mse: f64,
    pub ha_metrics: MetricReport,
    pub ha_masked_mse: f64,
    /// Test samples whose interval keeps at least one cell.
    pub evaluated_samples: usize,
    pub skipped_samples: usize,
    /// Predicted cells clipped to zero after denormalization.
    pub clipped_cells: usize,
}

pub struct Experiment {
    pub model: Model,
    pub state: TrainState,
    pub test: TestSummary,
    pub predictions: PredictionSet,
}

pub fn evaluate_test(model: &Model, data: &Dataset) -> Result<(TestSummary, PredictionSet)> {
    let (usable, skipped): (Vec<_>, Vec<_>) = data
        .split
        .test
        .iter()
        .cloned()
        .partition(|s| data.masks.kept_count(s.interval) > 0);
    if usable.is_empty() {
        return Err(Error::EmptyScope("no test sample keeps any OD cell".into()));
    }
    let predictions = predict_samples(model, &usable, &data.scalers)?;
    let metrics = predictions.overall(&data.masks)?;
    let masked_mse = mean_loss(model, &usable, &data.masks, LossKind::MaskedMse)?;
    let ha = data.historical_average()?;
    let ha_metrics = ha.predict_samples(&usable, &data.scalers).overall(&data.masks)?;
    let ha_masked_mse = ha.mean_masked_mse(&usable, &data.masks, &data.scalers)?;
    let summary = TestSummary {
        metrics,
        masked_mse,
        ha_metrics,
        ha_masked_mse,
        evaluated_samples: usable.len(),
        skipped_samples: skipped.len(),
        clipped_cells: predictions.clipped,
    };
    Ok((summary, predictions))
}

/// Builds, trains and tests one model on `data`.
pub fn run_experiment(
    data: &Dataset,
    spec: &ModelSpec,
    train: &TrainConfig,
    model_seed: u64,
    observer: impl FnMut(&EpochLosses),
) -> Result<Experiment> {
    let n = data.ingested.od.n;
    if spec.config.n != n {
        return Err(Error::Config(format!("model expects {} stations but the data has {n}", spec.config.n)));
    }
    let mut model = Model::build(spec, &mut ChaCha8Rng::seed_from_u64(model_seed))?;
    let state = fit_observed(&mut model, &data.split.train, &data.split.val, &data.masks, train, observer)?;
    let (test, predictions) = evaluate_test(&model, data)?;
    Ok(Experiment {
        model,
        state,
        test,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("nope".parse::<Variant>(), Err(Error::Config(_))));
    }

    #[test]
    fn variants_flip_one_switch() {
        let base = ModelConfig::new(4);
        let train = TrainConfig::default();
        let (spec, t) = Variant::NoMask.configure(&base, &train);
        assert_eq!((spec.config, t.loss), (base.clone(), LossKind::PlainMse));
        let (spec, t) = Variant::Cnn2d.configure(&base, &train);
        assert_eq!((spec.kind, t.batch_size), (ModelKind::Cnn2d, 8));
        let (spec, _) = Variant::NoInflow.configure(&base, &train);
        assert!(spec.config.ablations.no_inflow && !spec.config.ablations.no_outflow);
    }
}
