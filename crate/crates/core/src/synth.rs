//! Deterministic synthetic smart-card trips on a single metro line.

use chrono::{Datelike, NaiveDate, Timelike, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afc::{AfcRecord, Manifest, TimeGrid};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationRole {
    Residential,
    Commercial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub residential_fraction: f64,
    pub per_hop_minutes: f64,
    /// Extra ride time drawn uniformly from `[0, duration_noise_minutes]`.
    pub duration_noise_minutes: f64,
    /// Expected trips per interval between adjacent stations of affine roles
    /// outside the peaks.
    pub base_rate: f64,
    /// Hops over which demand decays by a factor e.
    pub distance_decay: f64,
    /// Multiplier on the peak-direction flow during the AM and PM peaks.
    pub peak_boost: f64,
    /// Standard deviation of the log of each station's daily demand level.
    pub daily_jitter: f64,
    /// Spread of each station's day-of-week demand profile; the profile
    /// averages to 1 over the five weekdays.
    pub weekday_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 20,
            residential_fraction: 0.5,
            per_hop_minutes: 3.0,
            duration_noise_minutes: 4.0,
            base_rate: 1.6,
            distance_decay: 4.0,
            peak_boost: 5.0,
            daily_jitter: 0.2,
            weekday_spread: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n < 2 {
            problems.push(format!("n must be >= 2, got {}", self.n));
        }
        if !(0.0..=1.0).contains(&self.residential_fraction) {
            problems.push("residential_fraction must lie in [0, 1]".to_string());
        }
        if !(self.per_hop_minutes > 0.0) {
            problems.push("per_hop_minutes must be positive".to_string());
        }
        for (name, v) in [
            ("duration_noise_minutes", self.duration_noise_minutes),
            ("base_rate", self.base_rate),
            ("daily_jitter", self.daily_jitter),
            ("peak_boost", self.peak_boost),
            ("weekday_spread", self.weekday_spread),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("{name} must be finite and >= 0"));
            }
        }
        if !(self.distance_decay > 0.0) {
            problems.push("distance_decay must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Station roles plus the role- and distance-dependent base rates.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandModel {
    pub roles: Vec<StationRole>,
    /// `[station][weekday]` demand level, Monday first.
    pub weekday_levels: Vec<[f64; 5]>,
    base: Vec<f64>,
    n: usize,
    peak_boost: f64,
}

fn affinity(from: StationRole, to: StationRole) -> f64 {
    use StationRole::*;
    match (from, to) {
        (Residential, Commercial) | (Commercial, Residential) => 1.0,
        (Commercial, Commercial) => 0.5,
        (Residential, Residential) => 0.3,
    }
}

impl DemandModel {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n;
        let residential = (cfg.residential_fraction * n as f64).round() as usize;
        let mut roles: Vec<StationRole> = (0..n)
            .map(|i| if i < residential { StationRole::Residential } else { StationRole::Commercial })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        roles.shuffle(&mut rng);
        let spread = Normal::new(0.0, cfg.weekday_spread).expect("finite spread");
        let weekday_levels = (0..n)
            .map(|_| {
                let mut w = [0.0; 5];
                w.iter_mut().for_each(|v| *v = spread.sample(&mut rng).exp());
                let mean = w.iter().sum::<f64>() / 5.0;
                w.map(|v| v / mean)
            })
            .collect();
        let mut base = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let hops = i.abs_diff(j) as f64;
                    base[i * n + j] = cfg.base_rate * affinity(roles[i], roles[j]) * (-(hops - 1.0) / cfg.distance_decay).exp();
                }
            }
        }
        Ok(DemandModel {
            roles,
            weekday_levels,
            base,
            n,
            peak_boost: cfg.peak_boost,
        })
    }

    /// Time-of-day multiplier for a trip starting at `minute` of the day.
    /// Peak-direction demand ramps up over the hour before each peak window
    /// and back down over the hour after it.
    pub fn multiplier(&self, minute: f64, from: StationRole, to: StationRole) -> f64 {
        use StationRole::*;
        let floor = if (390.0..1260.0).contains(&minute) { 0.6 } else { 0.25 };
        let am = peak_weight(minute, 450.0, 570.0);
        let pm = peak_weight(minute, 1020.0, 1140.0);
        let peak = match (from, to) {
            (Residential, Commercial) => am,
            (Commercial, Residential) => pm,
            _ => 0.0,
        };
        let busy = am.max(pm);
        floor + (self.peak_boost - floor) * peak + (1.0 - floor) * busy * (1.0 - peak)
    }

    /// Expected trips from `origin` to `dest` starting in an interval
    /// centred on `minute`, before the weekday and daily levels.
    pub fn mean_rate(&self, minute: f64, origin: usize, dest: usize) -> f64 {
        self.base[origin * self.n + dest] * self.multiplier(minute, self.roles[origin], self.roles[dest])
    }
}

/// 1 inside `[start, end)`, falling linearly to 0 an hour either side.
fn peak_weight(minute: f64, start: f64, end: f64) -> f64 {
    let outside = (start - minute).max(minute - end).max(0.0);
    (1.0 - outside / 60.0).max(0.0)
}

/// The first `count` weekdays on or after `start`.
pub fn weekdays(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(count)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub records: Vec<AfcRecord>,
    pub manifest: Manifest,
    pub demand: DemandModel,
    /// Trips dropped because they would exit after service end.
    pub skipped_late: usize,
}

fn day_records(cfg: &SynthConfig, demand: &DemandModel, grid: &TimeGrid, day: usize) -> (Vec<AfcRecord>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(day as u64 + 1);
    let n = cfg.n;
    let sigma = cfg.daily_jitter;
    let mut levels: Vec<f64> = if sigma > 0.0 {
        let dist = LogNormal::new(-sigma * sigma / 2.0, sigma).expect("valid lognormal");
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    } else {
        vec![1.0; n]
    };
    let weekday = grid.dates[day].weekday().num_days_from_monday().min(4) as usize;
    for (i, level) in levels.iter_mut().enumerate() {
        *level *= demand.weekday_levels[i][weekday];
    }
    let service_end = grid.interval_start(day, grid.intervals_per_day());
    let len = grid.interval_secs();
    let noise = (cfg.duration_noise_minutes * 60.0).round() as i64;
    let start_minute = f64::from(grid.service_start.num_seconds_from_midnight()) / 60.0;
    let mut records = Vec::new();
    let mut skipped = 0;
    for t in 0..grid.intervals_per_day() {
        let minute = start_minute + (t as f64 + 0.5) * f64::from(grid.interval_minutes);
        let t0 = grid.interval_start(day, t);
        for i in 0..n {
            for j in 0..n {
                let rate = demand.mean_rate(minute, i, j) * levels[i];
                if rate <= 0.0 {
                    continue;
                }
                let count = Poisson::new(rate).expect("positive rate").sample(&mut rng) as usize;
                let ride = (i.abs_diff(j) as f64 * cfg.per_hop_minutes * 60.0).round() as i64;
                for _ in 0..count {
                    let entry = t0 + rng.random_range(0..len);
                    let exit = entry + ride.max(1) + rng.random_range(0..=noise);
                    if exit >= service_end {
                        skipped += 1;
                        continue;
                    }
                    records.push(AfcRecord {
                        card_id: format!("d{day:03}-{:07}", records.len()),
                        entry_station: i,
                        entry_time: entry,
                        exit_station: j,
                        exit_time: exit,
                    });
                }
            }
        }
    }
    (records, skipped)
}

/// Generates trips for every date of `grid`; each day draws from its own
/// stream of the seeded generator, so days can be produced in parallel.
pub fn generate(cfg: &SynthConfig, grid: &TimeGrid) -> Result<SynthOutput> {
    let demand = DemandModel::new(cfg)?;
    let per_day: Vec<(Vec<AfcRecord>, usize)> = (0..grid.days())
        .into_par_iter()
        .map(|d| day_records(cfg, &demand, grid, d))
        .collect();
    let skipped_late: usize = per_day.iter().map(|(_, s)| s).sum();
    let records = per_day.into_iter().flat_map(|(r, _)| r).collect();

    let mut extra = serde_json::Map::new();
    extra.insert("generator".into(), serde_json::to_value(cfg)?);
    extra.insert("roles".into(), serde_json::to_value(&demand.roles)?);
    extra.insert(
        "grid".into(),
        serde_json::json!({
            "service_start": grid.service_start.format("%H:%M").to_string(),
            "service_end": grid.service_end.format("%H:%M").to_string(),
            "interval_minutes": grid.interval_minutes,
        }),
    );
    extra.insert("skipped_late_trips".into(), skipped_late.into());
    Ok(SynthOutput {
        records,
        manifest: Manifest {
            n: cfg.n,
            dates: grid.dates.clone(),
            extra,
        },
        demand,
        skipped_late,
    })
}
