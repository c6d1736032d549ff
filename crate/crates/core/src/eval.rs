//! Masked accuracy metrics, grouped analyses and the gate report.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afc::{FlowSeries, OdTensor, Sample, Scalers};
use crate::model::{Model, ModelInput};
use crate::odad::{compute_odad, MaskSet, OdadTable};
use crate::train::masked_mse;
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scope {
    Overall,
    Interval { interval: usize },
    Pair { origin: usize, destination: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scope: Scope,
    pub rmse: f64,
    pub mae: f64,
    /// Absent when no kept cell has a positive target.
    pub wmape: Option<f64>,
    /// Mean of |error|/target over positive cells; the printed form of the
    /// MAE formula, reported for completeness.
    pub mape: Option<f64>,
    pub cells: usize,
    pub positive_cells: usize,
}

/// Running pooled sums over kept cells.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    pub sq_sum: f64,
    pub abs_sum: f64,
    pub cells: usize,
    pub positive_abs_sum: f64,
    pub positive_target_sum: f64,
    pub ape_sum: f64,
    pub positive_cells: usize,
}

impl MetricAccumulator {
    pub fn push(&mut self, pred: f64, target: f64) {
        let e = target - pred;
        self.sq_sum += e * e;
        self.abs_sum += e.abs();
        self.cells += 1;
        if target > 0.0 {
            self.positive_abs_sum += e.abs();
            self.positive_target_sum += target;
            self.ape_sum += e.abs() / target;
            self.positive_cells += 1;
        }
    }

    /// Adds every kept cell of one matrix pair.
    pub fn push_matrix(&mut self, pred: &[f64], target: &[f64], mask: &[bool]) {
        for ((&p, &t), &m) in pred.iter().zip(target).zip(mask) {
            if m {
                self.push(p, t);
            }
        }
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.sq_sum += other.sq_sum;
        self.abs_sum += other.abs_sum;
        self.cells += other.cells;
        self.positive_abs_sum += other.positive_abs_sum;
        self.positive_target_sum += other.positive_target_sum;
        self.ape_sum += other.ape_sum;
        self.positive_cells += other.positive_cells;
    }

    pub fn finish(&self, scope: Scope) -> Result<MetricReport> {
        if self.cells == 0 {
            return Err(Error::EmptyScope(format!("no kept cells in scope {scope:?}")));
        }
        let count = self.cells as f64;
        let rmse = (self.sq_sum / count).sqrt();
        let mae = self.abs_sum / count;
        if rmse < mae * (1.0 - 1e-12) {
            return Err(Error::Numeric(format!("rmse {rmse} below mae {mae}")));
        }
        let positive = self.positive_cells > 0 && self.positive_target_sum > 0.0;
        Ok(MetricReport {
            scope,
            rmse,
            mae,
            wmape: positive.then(|| self.positive_abs_sum / self.positive_target_sum),
            mape: positive.then(|| self.ape_sum / self.positive_cells as f64),
            cells: self.cells,
            positive_cells: self.positive_cells,
        })
    }
}

/// Pooled metrics over all kept cells of every (pred, target, mask) triple.
pub fn metrics(preds: &[Tensor], targets: &[Tensor], masks: &[&[bool]]) -> Result<MetricReport> {
    if preds.len() != targets.len() || preds.len() != masks.len() {
        return Err(Error::dim("metrics", "items", preds.len(), targets.len().max(masks.len())));
    }
    let mut acc = MetricAccumulator::default();
    for ((p, t), m) in preds.iter().zip(targets).zip(masks) {
        if p.len() != t.len() || p.len() != m.len() {
            return Err(Error::dim("metrics", "cells", p.len(), t.len()));
        }
        acc.push_matrix(p.data(), t.data(), m);
    }
    acc.finish(Scope::Overall)
}

/// A denormalized prediction for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub day: usize,
    pub interval: usize,
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub n: usize,
    pub items: Vec<Prediction>,
    /// Cells raised to zero after denormalization.
    pub clipped: usize,
}

/// Runs `model` on every sample and maps outputs and targets back to counts.
/// Negative predicted counts are clipped to zero.
pub fn predict_samples(model: &Model, samples: &[Sample], scalers: &Scalers) -> Result<PredictionSet> {
    let od = scalers.od;
    let raw: Vec<(Prediction, usize)> = samples
        .par_iter()
        .map(|s| {
            let out = model.predict(ModelInput::from(s))?;
            let mut clipped = 0;
            let predicted = out
                .data()
                .iter()
                .map(|&u| {
                    let v = od.invert(u);
                    if v < 0.0 {
                        clipped += 1;
                        0.0
                    } else {
                        v
                    }
                })
                .collect();
            let actual = s.target.data().iter().map(|&u| od.invert(u)).collect();
            let item = Prediction {
                day: s.day,
                interval: s.interval,
                predicted,
                actual,
            };
            Ok((item, clipped))
        })
        .collect::<Result<_>>()?;
    let clipped = raw.iter().map(|(_, c)| c).sum();
    Ok(PredictionSet {
        n: model.config().n,
        items: raw.into_iter().map(|(p, _)| p).collect(),
        clipped,
    })
}

impl PredictionSet {
    /// Pooled metrics over the set; samples whose mask keeps nothing add no cells.
    pub fn overall(&self, masks: &MaskSet) -> Result<MetricReport> {
        let mut acc = MetricAccumulator::default();
        for p in &self.items {
            acc.push_matrix(&p.predicted, &p.actual, masks.interval(p.interval));
        }
        acc.finish(Scope::Overall)
    }

    /// Pooled metrics per interval-of-day, in interval order. Intervals
    /// whose mask keeps nothing are omitted.
    pub fn per_interval(&self, masks: &MaskSet) -> Result<Vec<MetricReport>> {
        let mut groups: BTreeMap<usize, MetricAccumulator> = BTreeMap::new();
        for p in &self.items {
            groups
                .entry(p.interval)
                .or_default()
                .push_matrix(&p.predicted, &p.actual, masks.interval(p.interval));
        }
        groups
            .into_iter()
            .filter(|(_, acc)| acc.cells > 0)
            .map(|(interval, acc)| acc.finish(Scope::Interval { interval }))
            .collect()
    }

    /// Chronological (actual, predicted) series for each requested pair,
    /// over the samples whose interval keeps that pair.
    pub fn pair_series(&self, masks: &MaskSet, pairs: &[(usize, usize)]) -> Result<Vec<PairSeries>> {
        let n = self.n;
        let mut order: Vec<&Prediction> = self.items.iter().collect();
        order.sort_by_key(|p| (p.day, p.interval));
        pairs
            .iter()
            .map(|&(origin, destination)| {
                if origin >= n || destination >= n {
                    return Err(Error::Lookup(format!("OD pair ({origin},{destination}) outside {n} stations")));
                }
                let cell = origin * n + destination;
                let points: Vec<SeriesPoint> = order
                    .iter()
                    .filter(|p| masks.interval(p.interval)[cell])
                    .map(|p| SeriesPoint {
                        day: p.day,
                        interval: p.interval,
                        actual: p.actual[cell],
                        predicted: p.predicted[cell],
                    })
                    .collect();
                let warning = points
                    .is_empty()
                    .then(|| format!("OD pair ({origin},{destination}) is masked at every evaluated interval"));
                Ok(PairSeries {
                    origin,
                    destination,
                    points,
                    warning,
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub day: usize,
    pub interval: usize,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSeries {
    pub origin: usize,
    pub destination: usize,
    pub points: Vec<SeriesPoint>,
    pub warning: Option<String>,
}

pub fn write_interval_csv<W: Write>(reports: &[MetricReport], writer: W, label: impl Fn(usize) -> String) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["interval", "start", "rmse", "mae", "wmape", "cells"])?;
    for r in reports {
        let Scope::Interval { interval } = r.scope else { continue };
        w.write_record([
            interval.to_string(),
            label(interval),
            r.rmse.to_string(),
            r.mae.to_string(),
            opt(r.wmape),
            r.cells.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_pairs_csv<W: Write>(series: &[PairSeries], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["origin", "destination", "day", "interval", "actual", "predicted"])?;
    for s in series {
        for p in &s.points {
            w.write_record([
                s.origin.to_string(),
                s.destination.to_string(),
                p.day.to_string(),
                p.interval.to_string(),
                p.actual.to_string(),
                p.predicted.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationGate {
    pub station: usize,
    pub inflow_volume: f64,
    pub gate_weight: f64,
    pub inflow_normalized: f64,
    pub gate_normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InterpretReport {
    pub stations: Vec<StationGate>,
    pub pearson_r: Option<f64>,
}

impl InterpretReport {
    pub fn pearson_label(&self) -> String {
        opt(self.pearson_r)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["station", "inflow_volume", "gate_weight", "inflow_normalized", "gate_normalized"])?;
        for s in &self.stations {
            w.write_record([
                s.station.to_string(),
                s.inflow_volume.to_string(),
                s.gate_weight.to_string(),
                s.inflow_normalized.to_string(),
                s.gate_normalized.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Pairs each station's total inflow over `days` with its learned gate weight.
pub fn interpretability_report(model: &Model, flows: &FlowSeries, days: Range<usize>) -> Result<InterpretReport> {
    let w = model
        .params()
        .by_name("gate.w")
        .ok_or_else(|| Error::Lookup("model has no inflow/outflow gate".into()))?;
    let n = flows.n;
    if w.tensor.len() != n {
        return Err(Error::dim("interpretability_report", "stations", n, w.tensor.len()));
    }
    let mut volume = vec![0.0; n];
    for d in days {
        for t in 0..flows.intervals {
            for (i, v) in volume.iter_mut().enumerate() {
                *v += f64::from(flows.inflow_at(d, t, i));
            }
        }
    }
    let weights = w.tensor.data().to_vec();
    let vn = min_max_normalize(&volume);
    let wn = min_max_normalize(&weights);
    let stations = (0..n)
        .map(|i| StationGate {
            station: i,
            inflow_volume: volume[i],
            gate_weight: weights[i],
            inflow_normalized: vn[i],
            gate_normalized: wn[i],
        })
        .collect();
    Ok(InterpretReport {
        stations,
        pearson_r: pearson(&vn, &wn),
    })
}

/// Predicts every (day, interval) with the mean OD matrix of that interval
/// over the fitting days.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoricalAverage {
    pub table: OdadTable,
}

impl HistoricalAverage {
    pub fn fit(od: &OdTensor, days: Range<usize>) -> Result<Self> {
        Ok(HistoricalAverage {
            table: compute_odad(od, days)?,
        })
    }

    pub fn predict(&self, interval: usize) -> &[f64] {
        self.table.matrix(interval)
    }

    /// Mean masked MSE on the normalized scale, comparable with a model's loss.
    pub fn mean_masked_mse(&self, samples: &[Sample], masks: &MaskSet, scalers: &Scalers) -> Result<f64> {
        let n = self.table.n;
        let mut total = 0.0;
        let mut count = 0usize;
        for s in samples {
            let mask = masks.interval(s.interval);
            if !mask.iter().any(|&m| m) {
                continue;
            }
            let pred = Tensor::new(vec![n, n], self.predict(s.interval).iter().map(|&v| scalers.od.apply(v)).collect())?;
            total += masked_mse(&pred, &s.target, mask)?;
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyScope("no samples with kept cells".into()));
        }
        Ok(total / count as f64)
    }

    /// Raw-scale predictions aligned with `samples`.
    pub fn predict_samples(&self, samples: &[Sample], scalers: &Scalers) -> PredictionSet {
        let items = samples
            .iter()
            .map(|s| Prediction {
                day: s.day,
                interval: s.interval,
                predicted: self.predict(s.interval).to_vec(),
                actual: s.target.data().iter().map(|&u| scalers.od.invert(u)).collect(),
            })
            .collect();
        PredictionSet {
            n: self.table.n,
            items,
            clipped: 0,
        }
    }
}
