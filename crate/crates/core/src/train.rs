//! Mini-batch training with masked loss and early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afc::Sample;
use crate::model::{Model, ModelInput};
use crate::odad::MaskSet;
use crate::tensor::{Adam, Optimizer, OptimizerKind, Sgd, Tape, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MaskedMse,
    PlainMse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 16,
            max_epochs: 200,
            patience: 10,
            seed: 42,
            loss: LossKind::MaskedMse,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if self.patience == 0 {
            problems.push("patience must be >= 1".to_string());
        }
        if self.max_epochs == 0 {
            problems.push("max_epochs must be >= 1".to_string());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            problems.push(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val: f64,
    pub best_epoch: usize,
    pub since_improvement: usize,
    pub history: Vec<EpochLosses>,
    pub stop_reason: StopReason,
    /// Training and validation samples dropped because their mask keeps nothing.
    pub skipped_samples: usize,
    pub wall_clock_secs: f64,
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since: 0,
        }
    }

    /// Records a validation loss; returns true if it is a new best.
    pub fn observe(&mut self, epoch: usize, val: f64) -> bool {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.since = 0;
            true
        } else {
            self.since += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since >= self.patience
    }
}

/// Value-only masked MSE. Masked cells are never read.
pub fn masked_mse(pred: &Tensor, target: &Tensor, mask: &[bool]) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("masked_mse", "target cells", pred.len(), target.len()));
    }
    if mask.len() != pred.len() {
        return Err(Error::dim("masked_mse", "mask", pred.len(), mask.len()));
    }
    let mut acc = 0.0;
    let mut kept = 0usize;
    for ((p, t), &m) in pred.data().iter().zip(target.data()).zip(mask) {
        if m {
            let d = t - p;
            acc += d * d;
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::DegenerateMask);
    }
    Ok(acc / kept as f64)
}

/// The loss mask for one sample under `kind`.
fn sample_mask<'m>(kind: LossKind, masks: &'m MaskSet, sample: &Sample, all: &'m [bool]) -> &'m [bool] {
    match kind {
        LossKind::MaskedMse => masks.interval(sample.interval),
        LossKind::PlainMse => all,
    }
}

struct ItemResult {
    loss: f64,
    grads: Vec<Vec<f64>>,
}

fn loss_and_grads(model: &Model, sample: &Sample, mask: &[bool]) -> Result<ItemResult> {
    let mut tape = Tape::new();
    let pred = model.forward(&mut tape, ModelInput::from(sample))?;
    let loss = tape.masked_mse(pred, &sample.target, mask)?;
    tape.backward(loss)?;
    let mut grads: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.tensor.len()]).collect();
    for (id, g) in tape.param_grads() {
        for (acc, v) in grads[id.index()].iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok(ItemResult {
        loss: tape.value(loss).data()[0],
        grads,
    })
}

/// Mean per-sample loss over `samples` under `kind`, without gradients.
pub fn mean_loss(model: &Model, samples: &[Sample], masks: &MaskSet, kind: LossKind) -> Result<f64> {
    let refs: Vec<&Sample> = samples.iter().collect();
    mean_loss_of(model, &refs, masks, kind)
}

fn mean_loss_of(model: &Model, samples: &[&Sample], masks: &MaskSet, kind: LossKind) -> Result<f64> {
    let all = vec![true; model.config().n * model.config().n];
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let pred = model.predict(ModelInput::from(*s))?;
            masked_mse(&pred, &s.target, sample_mask(kind, masks, s, &all))
        })
        .collect::<Result<_>>()?;
    if losses.is_empty() {
        return Err(Error::EmptyScope("no samples to evaluate".into()));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Drops samples whose interval mask keeps no cell.
fn usable<'s>(samples: &'s [Sample], masks: &MaskSet, kind: LossKind) -> (Vec<&'s Sample>, usize) {
    match kind {
        LossKind::PlainMse => (samples.iter().collect(), 0),
        LossKind::MaskedMse => {
            let kept: Vec<&Sample> = samples.iter().filter(|s| masks.kept_count(s.interval) > 0).collect();
            let dropped = samples.len() - kept.len();
            (kept, dropped)
        }
    }
}

pub fn fit(model: &mut Model, train: &[Sample], val: &[Sample], masks: &MaskSet, cfg: &TrainConfig) -> Result<TrainState> {
    fit_observed(model, train, val, masks, cfg, |_| {})
}

/// Like [`fit`], calling `observer` after every epoch.
pub fn fit_observed(
    model: &mut Model,
    train: &[Sample],
    val: &[Sample],
    masks: &MaskSet,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochLosses),
) -> Result<TrainState> {
    cfg.validate()?;
    let started = Instant::now();
    let (train, skipped_train) = usable(train, masks, cfg.loss);
    let (val, skipped_val) = usable(val, masks, cfg.loss);
    if train.is_empty() {
        return Err(Error::EmptyScope("no usable training samples".into()));
    }
    let n = model.config().n;
    let all = vec![true; n * n];

    let mut optimizer: Box<dyn Optimizer> = match cfg.optimizer {
        OptimizerKind::Adam => Box::new(Adam::new(cfg.lr)),
        OptimizerKind::Sgd => Box::new(Sgd { lr: cfg.lr }),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_values = model.params().values();
    let mut history = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let frozen: &Model = model;
            let items: Vec<ItemResult> = chunk
                .par_iter()
                .map(|&i| loss_and_grads(frozen, train[i], sample_mask(cfg.loss, masks, train[i], &all)))
                .collect::<Result<_>>()?;
            let scale = 1.0 / items.len() as f64;
            let batch_loss = items.iter().map(|r| r.loss).sum::<f64>() * scale;
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!("loss became {batch_loss} at epoch {epoch}, batch {b}")));
            }
            epoch_loss += items.iter().map(|r| r.loss).sum::<f64>();
            let params = model.params_mut();
            params.zero_grad();
            for item in &items {
                for (p, g) in params.iter_mut().zip(&item.grads) {
                    for (acc, v) in p.grad.iter_mut().zip(g) {
                        *acc += v;
                    }
                }
            }
            for p in params.iter_mut() {
                p.grad.iter_mut().for_each(|g| *g *= scale);
            }
            optimizer.step(params);
        }
        let train_loss = epoch_loss / train.len() as f64;
        // without validation samples the training loss drives stopping
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            mean_loss_of(model, &val, masks, cfg.loss)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss became {val_loss} at epoch {epoch}")));
        }
        let record = EpochLosses {
            epoch,
            train: train_loss,
            val: val_loss,
        };
        history.push(record);
        observer(&record);
        if stopper.observe(epoch, val_loss) {
            best_values = model.params().values();
        }
        if stopper.should_stop() {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    model.params_mut().load_values(&best_values)?;
    Ok(TrainState {
        epoch: history.len(),
        best_val: stopper.best,
        best_epoch: stopper.best_epoch,
        since_improvement: stopper.since,
        history,
        stop_reason,
        skipped_samples: skipped_train + skipped_val,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// One failed check of the masked-gradient guarantee.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskViolation {
    pub row: usize,
    pub col: usize,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaskedGradientReport {
    pub masked_cells: usize,
    pub violations: Vec<MaskViolation>,
}

impl MaskedGradientReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that masked cells receive exactly zero prediction gradient and
/// that rewriting their targets leaves the loss and every parameter
/// gradient bit-identical.
pub fn verify_masked_gradient(model: &Model, sample: &Sample, mask: &[bool]) -> Result<MaskedGradientReport> {
    let n = model.config().n;
    let run = |target: &Tensor| -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let pred = model.forward(&mut tape, ModelInput::from(sample))?;
        let loss = tape.masked_mse(pred, target, mask)?;
        tape.backward(loss)?;
        let dpred = tape.grad(pred).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n * n]);
        let mut grads: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        for (id, g) in tape.param_grads() {
            grads[id.index()].copy_from_slice(g);
        }
        Ok((tape.value(loss).data()[0], dpred, grads))
    };
    let (loss, dpred, grads) = run(&sample.target)?;
    let mut report = MaskedGradientReport::default();
    let mut moved = sample.target.clone();
    for (cell, &keep) in mask.iter().enumerate() {
        if keep {
            continue;
        }
        report.masked_cells += 1;
        moved.data_mut()[cell] += 1.0 + 3.0 * cell as f64;
        if dpred[cell] != 0.0 {
            report.violations.push(MaskViolation {
                row: cell / n,
                col: cell % n,
                detail: format!("prediction gradient {}", dpred[cell]),
            });
        }
    }
    if report.masked_cells > 0 {
        let (loss2, _, grads2) = run(&moved)?;
        let bits = |a: f64| a.to_bits();
        if bits(loss) != bits(loss2) {
            report.violations.push(MaskViolation {
                row: n,
                col: n,
                detail: format!("loss changed from {loss} to {loss2}"),
            });
        }
        for (p, (a, b)) in model.params().iter().zip(grads.iter().zip(&grads2)) {
            if a.iter().zip(b).any(|(x, y)| bits(*x) != bits(*y)) {
                report.violations.push(MaskViolation {
                    row: n,
                    col: n,
                    detail: format!("gradient of {} changed", p.name),
                });
            }
        }
    }
    Ok(report)
}
