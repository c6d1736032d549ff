use serde::{Deserialize, Serialize};

use super::{AfcRecord, TimeGrid};
use crate::error::{Error, Result};

/// Trip counts indexed `[day][interval][origin][destination]`, binned by the
/// interval in which each trip entered the network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdTensor {
    pub days: usize,
    pub intervals: usize,
    pub n: usize,
    pub counts: Vec<u32>,
}

impl OdTensor {
    pub fn zeros(days: usize, intervals: usize, n: usize) -> Self {
        OdTensor {
            days,
            intervals,
            n,
            counts: vec![0; days * intervals * n * n],
        }
    }

    fn offset(&self, day: usize, interval: usize) -> usize {
        (day * self.intervals + interval) * self.n * self.n
    }

    pub fn get(&self, day: usize, interval: usize, origin: usize, dest: usize) -> u32 {
        self.counts[self.offset(day, interval) + origin * self.n + dest]
    }

    /// The n×n matrix for one (day, interval), row-major by origin.
    pub fn matrix(&self, day: usize, interval: usize) -> &[u32] {
        let o = self.offset(day, interval);
        &self.counts[o..o + self.n * self.n]
    }

    pub fn row_sum(&self, day: usize, interval: usize, origin: usize) -> u64 {
        let m = self.matrix(day, interval);
        m[origin * self.n..(origin + 1) * self.n].iter().map(|&c| u64::from(c)).sum()
    }

    pub fn column_sum(&self, day: usize, interval: usize, dest: usize) -> u64 {
        let m = self.matrix(day, interval);
        (0..self.n).map(|i| u64::from(m[i * self.n + dest])).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Per-station inflow and outflow indexed `[day][interval][station]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSeries {
    pub days: usize,
    pub intervals: usize,
    pub n: usize,
    pub inflow: Vec<u32>,
    pub outflow: Vec<u32>,
}

impl FlowSeries {
    fn zeros(days: usize, intervals: usize, n: usize) -> Self {
        FlowSeries {
            days,
            intervals,
            n,
            inflow: vec![0; days * intervals * n],
            outflow: vec![0; days * intervals * n],
        }
    }

    pub fn index(&self, day: usize, interval: usize, station: usize) -> usize {
        (day * self.intervals + interval) * self.n + station
    }

    pub fn inflow_at(&self, day: usize, interval: usize, station: usize) -> u32 {
        self.inflow[self.index(day, interval, station)]
    }

    pub fn outflow_at(&self, day: usize, interval: usize, station: usize) -> u32 {
        self.outflow[self.index(day, interval, station)]
    }

    pub fn total_inflow(&self) -> u64 {
        self.inflow.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn total_outflow(&self) -> u64 {
        self.outflow.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Which series feeds the outflow input of the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutflowConvention {
    /// Passengers counted at their exit station in their exit interval.
    #[default]
    ExitTime,
    /// OD column sums of the entry-indexed tensor.
    ColumnSum,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: usize,
    /// Trips whose entry falls outside the grid; dropped entirely.
    pub dropped_entry_out_of_grid: usize,
    /// Trips counted in OD/inflow whose exit falls outside the grid, so they
    /// are missing from the exit-time outflow.
    pub dropped_exit_out_of_grid: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ingested {
    pub grid: TimeGrid,
    pub od: OdTensor,
    pub flows: FlowSeries,
    pub report: IngestReport,
}

fn check_station(rec: &AfcRecord, n: usize) -> Result<()> {
    for s in [rec.entry_station, rec.exit_station] {
        if s >= n {
            return Err(Error::Data(format!(
                "card {} references station {s}, but the network has {n} stations",
                rec.card_id
            )));
        }
    }
    Ok(())
}

/// Bins every record into the OD tensor and both flow series.
pub fn ingest(records: &[AfcRecord], grid: &TimeGrid, n: usize, convention: OutflowConvention) -> Result<Ingested> {
    let (days, intervals) = (grid.days(), grid.intervals_per_day());
    let mut od = OdTensor::zeros(days, intervals, n);
    let mut flows = FlowSeries::zeros(days, intervals, n);
    let mut report = IngestReport {
        records: records.len(),
        ..Default::default()
    };
    for rec in records {
        check_station(rec, n)?;
        let Some((d, t)) = grid.locate(rec.entry_time) else {
            report.dropped_entry_out_of_grid += 1;
            continue;
        };
        let cell = od.offset(d, t) + rec.entry_station * n + rec.exit_station;
        od.counts[cell] += 1;
        let i = flows.index(d, t, rec.entry_station);
        flows.inflow[i] += 1;
        if convention == OutflowConvention::ExitTime {
            match grid.locate(rec.exit_time) {
                Some((de, te)) => {
                    let j = flows.index(de, te, rec.exit_station);
                    flows.outflow[j] += 1;
                }
                None => report.dropped_exit_out_of_grid += 1,
            }
        }
    }
    if convention == OutflowConvention::ColumnSum {
        for d in 0..days {
            for t in 0..intervals {
                for j in 0..n {
                    let idx = flows.index(d, t, j);
                    flows.outflow[idx] = od.column_sum(d, t, j) as u32;
                }
            }
        }
    }
    Ok(Ingested {
        grid: grid.clone(),
        od,
        flows,
        report,
    })
}

pub fn extract_od(records: &[AfcRecord], grid: &TimeGrid, n: usize) -> Result<OdTensor> {
    Ok(ingest(records, grid, n, OutflowConvention::ExitTime)?.od)
}

pub fn extract_flows(records: &[AfcRecord], grid: &TimeGrid, n: usize, convention: OutflowConvention) -> Result<FlowSeries> {
    Ok(ingest(records, grid, n, convention)?.flows)
}
