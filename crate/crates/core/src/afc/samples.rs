use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FlowSeries, MinMaxScaler, OdTensor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One supervised example: OD matrices at interval `t` on the previous
/// `x` days, the same day's flows over the previous `y` intervals, and the
/// OD matrix at `(day, interval)` as target. All values normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub day: usize,
    pub interval: usize,
    /// x×n×n, oldest day first.
    pub history: Tensor,
    /// y×n, oldest interval first.
    pub inflow: Tensor,
    pub outflow: Tensor,
    /// n×n.
    pub target: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scalers {
    pub od: MinMaxScaler,
    /// Shared by inflow and outflow.
    pub flow: MinMaxScaler,
}

/// Fits the OD scaler on every OD entry of `days`, and the flow scaler on
/// every inflow and outflow entry of the same days.
pub fn fit_scalers(od: &OdTensor, flows: &FlowSeries, days: Range<usize>) -> Result<Scalers> {
    if days.is_empty() {
        return Err(Error::Config("scalers need at least one training day".into()));
    }
    let od_span = od.intervals * od.n * od.n;
    let od_vals = od.counts[days.start * od_span..days.end * od_span].iter().map(|&c| f64::from(c));
    let fl_span = flows.intervals * flows.n;
    let fl = days.start * fl_span..days.end * fl_span;
    let flow_vals = flows.inflow[fl.clone()]
        .iter()
        .chain(&flows.outflow[fl])
        .map(|&c| f64::from(c));
    Ok(Scalers {
        od: MinMaxScaler::fit(od_vals)?,
        flow: MinMaxScaler::fit(flow_vals)?,
    })
}

/// One sample per `(d, t)` with `d >= x` and `t >= y`.
pub fn build_samples(od: &OdTensor, flows: &FlowSeries, scalers: &Scalers, x: usize, y: usize) -> Result<Vec<Sample>> {
    if x == 0 || y == 0 {
        return Err(Error::Config("history days x and flow steps y must be at least 1".into()));
    }
    if od.days < x + 1 {
        return Err(Error::Config(format!("need at least {} days for x = {x}, have {}", x + 1, od.days)));
    }
    if od.intervals <= y {
        return Err(Error::Config(format!(
            "need more than {y} intervals per day for y = {y}, have {}",
            od.intervals
        )));
    }
    if flows.days != od.days || flows.intervals != od.intervals || flows.n != od.n {
        return Err(Error::Data("OD tensor and flow series disagree on shape".into()));
    }
    let n = od.n;
    let norm_od = |d: usize, t: usize| od.matrix(d, t).iter().map(|&c| scalers.od.apply(f64::from(c)));
    let mut samples = Vec::with_capacity((od.days - x) * (od.intervals - y));
    for d in x..od.days {
        for t in y..od.intervals {
            let history: Vec<f64> = (d - x..d).flat_map(|p| norm_od(p, t)).collect();
            let window = |series: &[u32]| -> Vec<f64> {
                (t - y..t)
                    .flat_map(|s| {
                        let base = flows.index(d, s, 0);
                        series[base..base + n].iter().map(|&c| scalers.flow.apply(f64::from(c)))
                    })
                    .collect()
            };
            samples.push(Sample {
                day: d,
                interval: t,
                history: Tensor::new(vec![x, n, n], history)?,
                inflow: Tensor::new(vec![y, n], window(&flows.inflow))?,
                outflow: Tensor::new(vec![y, n], window(&flows.outflow))?,
                target: Tensor::new(vec![n, n], norm_od(d, t).collect())?,
            });
        }
    }
    Ok(samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Fraction of trailing days held out for testing.
    pub test_fraction: f64,
    /// Fraction of the remaining samples used for validation.
    pub val_rate: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            val_rate: 0.1,
            seed: 42,
        }
    }
}

/// Trailing days reserved for testing: `round(days · fraction)`, clamped to
/// `[1, days − 1]`.
pub fn test_day_range(days: usize, test_fraction: f64) -> Range<usize> {
    let k = ((days as f64 * test_fraction).round() as usize).clamp(1, days.saturating_sub(1).max(1));
    days - k..days
}

#[derive(Clone, Debug, Default)]
pub struct Split {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Samples on test days go to `test`; the rest are split uniformly at random
/// (seeded) into train and validation. Each part keeps chronological order.
pub fn split_train_val_test(samples: Vec<Sample>, days: usize, cfg: &SplitConfig) -> Split {
    let test_days = test_day_range(days, cfg.test_fraction);
    let (test, rest): (Vec<Sample>, Vec<Sample>) = samples.into_iter().partition(|s| test_days.contains(&s.day));
    let n_val = (rest.len() as f64 * cfg.val_rate).round() as usize;
    let mut order: Vec<usize> = (0..rest.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut is_val = vec![false; rest.len()];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (s, v) in rest.into_iter().zip(is_val) {
        if v {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    Split { train, val, test }
}
