use std::path::Path;

use chrono::{NaiveDate, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DAY_SECS: i64 = 86_400;

/// Service-day time grid: intervals of fixed length between a daily start
/// and end time, over an ordered list of service dates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub service_start: NaiveTime,
    pub service_end: NaiveTime,
    pub interval_minutes: u32,
    pub dates: Vec<NaiveDate>,
}

impl TimeGrid {
    pub fn new(service_start: NaiveTime, service_end: NaiveTime, interval_minutes: u32, dates: Vec<NaiveDate>) -> Result<Self> {
        if interval_minutes == 0 {
            return Err(Error::Config("interval length must be positive".into()));
        }
        if service_end <= service_start {
            return Err(Error::Config("service end must follow service start".into()));
        }
        let span = (service_end - service_start).num_seconds();
        if span % (i64::from(interval_minutes) * 60) != 0 {
            return Err(Error::Config(format!(
                "service span of {} min is not divisible by {interval_minutes} min",
                span / 60
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("service dates must be strictly increasing".into()));
        }
        Ok(TimeGrid {
            service_start,
            service_end,
            interval_minutes,
            dates,
        })
    }

    /// 05:00–23:00 in 30-minute intervals.
    pub fn with_defaults(dates: Vec<NaiveDate>) -> Result<Self> {
        Self::new(
            NaiveTime::from_hms_opt(5, 0, 0).expect("valid"),
            NaiveTime::from_hms_opt(23, 0, 0).expect("valid"),
            30,
            dates,
        )
    }

    pub fn intervals_per_day(&self) -> usize {
        ((self.service_end - self.service_start).num_seconds() / self.interval_secs()) as usize
    }

    pub fn days(&self) -> usize {
        self.dates.len()
    }

    pub fn interval_secs(&self) -> i64 {
        i64::from(self.interval_minutes) * 60
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Epoch seconds of the start of interval `t` on day `d`.
    pub fn interval_start(&self, day: usize, interval: usize) -> i64 {
        let midnight = self.dates[day].and_hms_opt(0, 0, 0).expect("valid").and_utc().timestamp();
        midnight + i64::from(self.service_start.num_seconds_from_midnight()) + interval as i64 * self.interval_secs()
    }

    /// (day, interval) containing the timestamp, or `None` outside the grid.
    pub fn locate(&self, ts: i64) -> Option<(usize, usize)> {
        let date = chrono::DateTime::from_timestamp(ts.div_euclid(DAY_SECS) * DAY_SECS, 0)?.date_naive();
        let day = self.day_index(date)?;
        let secs = ts.rem_euclid(DAY_SECS);
        let start = i64::from(self.service_start.num_seconds_from_midnight());
        let end = i64::from(self.service_end.num_seconds_from_midnight());
        if secs < start || secs >= end {
            return None;
        }
        Some((day, ((secs - start) / self.interval_secs()) as usize))
    }

    /// Label such as `08:00` for the start of interval `t`.
    pub fn interval_label(&self, interval: usize) -> String {
        let secs = self.service_start.num_seconds_from_midnight() as usize + interval * self.interval_minutes as usize * 60;
        format!("{:02}:{:02}", secs / 3600, (secs / 60) % 60)
    }
}

/// Station count and service dates accompanying an AFC dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub dates: Vec<NaiveDate>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.n == 0 {
            return Err(Error::Data("manifest declares zero stations".into()));
        }
        Ok(m)
    }
}
