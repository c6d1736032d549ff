//! OD attraction degree (per-interval multi-day mean flow), its five-level
//! classification, the per-interval loss masks, and sparsity reports.

use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::afc::OdTensor;
use crate::error::{Error, Result};

/// Mean OD flow per `[interval][origin][destination]` over a set of days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdadTable {
    pub intervals: usize,
    pub n: usize,
    pub n_days: usize,
    pub values: Vec<f64>,
}

impl OdadTable {
    pub fn get(&self, interval: usize, origin: usize, dest: usize) -> f64 {
        self.values[(interval * self.n + origin) * self.n + dest]
    }

    pub fn matrix(&self, interval: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.values[interval * nn..(interval + 1) * nn]
    }
}

/// Averages the OD tensor over `days`, which must be training days only.
pub fn compute_odad(od: &OdTensor, days: Range<usize>) -> Result<OdadTable> {
    if days.is_empty() || days.end > od.days {
        return Err(Error::Config(format!(
            "ODAD day range {days:?} must be nonempty and within {} days",
            od.days
        )));
    }
    let nn = od.n * od.n;
    let mut sums = vec![0u64; od.intervals * nn];
    for d in days.clone() {
        for t in 0..od.intervals {
            for (s, &c) in sums[t * nn..(t + 1) * nn].iter_mut().zip(od.matrix(d, t)) {
                *s += u64::from(c);
            }
        }
    }
    let n_days = days.len();
    Ok(OdadTable {
        intervals: od.intervals,
        n: od.n,
        n_days,
        values: sums.into_iter().map(|s| s as f64 / n_days as f64).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdadLevel {
    Lowest,
    Low,
    Middle,
    High,
    Highest,
}

impl OdadLevel {
    pub const ALL: [OdadLevel; 5] = [
        OdadLevel::Lowest,
        OdadLevel::Low,
        OdadLevel::Middle,
        OdadLevel::High,
        OdadLevel::Highest,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OdadLevel::Lowest => "lowest",
            OdadLevel::Low => "low",
            OdadLevel::Middle => "middle",
            OdadLevel::High => "high",
            OdadLevel::Highest => "highest",
        }
    }

    /// Bucket label of the flow range the level covers.
    pub fn bucket(self) -> &'static str {
        match self {
            OdadLevel::Lowest => "=0",
            OdadLevel::Low => "(0,2]",
            OdadLevel::Middle => "(2,4]",
            OdadLevel::High => "(4,6]",
            OdadLevel::Highest => ">6",
        }
    }
}

/// `0` → Lowest, `(0,2]` → Low, `(2,4]` → Middle, `(4,6]` → High, `>6` → Highest.
pub fn classify_level(a: f64) -> Result<OdadLevel> {
    if !(a >= 0.0) {
        return Err(Error::Domain(format!("ODAD value must be non-negative, got {a}")));
    }
    Ok(if a == 0.0 {
        OdadLevel::Lowest
    } else if a <= 2.0 {
        OdadLevel::Low
    } else if a <= 4.0 {
        OdadLevel::Middle
    } else if a <= 6.0 {
        OdadLevel::High
    } else {
        OdadLevel::Highest
    })
}

/// Per-interval binary masks: a cell is kept iff its ODAD exceeds `threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub intervals: usize,
    pub n: usize,
    pub threshold: f64,
    pub mask: Vec<bool>,
    pub kept: Vec<usize>,
}

impl MaskSet {
    pub fn interval(&self, t: usize) -> &[bool] {
        let nn = self.n * self.n;
        &self.mask[t * nn..(t + 1) * nn]
    }

    pub fn kept_count(&self, t: usize) -> usize {
        self.kept[t]
    }

    /// A mask keeping every cell, for plain-MSE training.
    pub fn all_kept(intervals: usize, n: usize) -> Self {
        MaskSet {
            intervals,
            n,
            threshold: f64::NEG_INFINITY,
            mask: vec![true; intervals * n * n],
            kept: vec![n * n; intervals],
        }
    }

    /// Writes kept cells as `interval,origin,destination,mask` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["interval", "origin", "destination", "mask"])?;
        let nn = self.n * self.n;
        for (idx, _) in self.mask.iter().enumerate().filter(|(_, &m)| m) {
            let (t, cell) = (idx / nn, idx % nn);
            w.write_record([t.to_string(), (cell / self.n).to_string(), (cell % self.n).to_string(), "1".into()])?;
        }
        w.flush().map_err(|e| Error::io("<mask writer>", e))?;
        Ok(())
    }

    pub fn header(&self) -> MaskHeader {
        MaskHeader {
            n: self.n,
            intervals: self.intervals,
            threshold: self.threshold,
        }
    }

    /// Rebuilds a mask set from its JSON header and kept-cell CSV.
    pub fn read_csv<R: Read>(header: &MaskHeader, reader: R) -> Result<Self> {
        let (n, intervals) = (header.n, header.intervals);
        let mut mask = vec![false; intervals * n * n];
        let mut rdr = csv::Reader::from_reader(reader);
        for row in rdr.deserialize() {
            let (t, i, j, m): (usize, usize, usize, u8) = row?;
            if t >= intervals || i >= n || j >= n {
                return Err(Error::Data(format!("mask cell ({t},{i},{j}) outside {intervals}×{n}×{n}")));
            }
            mask[(t * n + i) * n + j] = m == 1;
        }
        let kept = mask.chunks(n * n).map(|c| c.iter().filter(|&&m| m).count()).collect();
        Ok(MaskSet {
            intervals,
            n,
            threshold: header.threshold,
            mask,
            kept,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskHeader {
    pub n: usize,
    pub intervals: usize,
    pub threshold: f64,
}

pub fn build_masks(table: &OdadTable, threshold: f64) -> MaskSet {
    let mask: Vec<bool> = table.values.iter().map(|&a| a > threshold).collect();
    let nn = table.n * table.n;
    let kept = mask.chunks(nn).map(|c| c.iter().filter(|&&m| m).count()).collect();
    MaskSet {
        intervals: table.intervals,
        n: table.n,
        threshold,
        mask,
        kept,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalSparsity {
    pub interval: usize,
    /// Share of (day, origin, destination) cells per flow bucket
    /// `=0, (0,2], (2,4], (4,6], >6`.
    pub bucket_fractions: [f64; 5],
    /// Number of OD pairs per ODAD level.
    pub level_counts: [usize; 5],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub n: usize,
    pub days: usize,
    pub intervals: Vec<IntervalSparsity>,
}

/// Bucket shares of instantaneous flows pooled over all days, plus ODAD level
/// counts, for each interval in `intervals`.
pub fn sparsity_report(od: &OdTensor, table: &OdadTable, intervals: &[usize]) -> Result<SparsityReport> {
    let mut rows = Vec::with_capacity(intervals.len());
    for &t in intervals {
        if t >= od.intervals {
            return Err(Error::Lookup(format!("interval {t} outside 0..{}", od.intervals)));
        }
        let mut counts = [0usize; 5];
        for d in 0..od.days {
            for &c in od.matrix(d, t) {
                counts[classify_level(f64::from(c))?.index()] += 1;
            }
        }
        let total = (od.days * od.n * od.n) as f64;
        let mut level_counts = [0usize; 5];
        for &a in table.matrix(t) {
            level_counts[classify_level(a)?.index()] += 1;
        }
        rows.push(IntervalSparsity {
            interval: t,
            bucket_fractions: counts.map(|c| c as f64 / total),
            level_counts,
        });
    }
    Ok(SparsityReport {
        n: od.n,
        days: od.days,
        intervals: rows,
    })
}

impl SparsityReport {
    pub fn write_csv<W: Write>(&self, writer: W, label: impl Fn(usize) -> String) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["interval".to_string(), "start".to_string()];
        header.extend(OdadLevel::ALL.iter().map(|l| format!("flow {}", l.bucket())));
        header.extend(OdadLevel::ALL.iter().map(|l| format!("odad_{}", l.name())));
        w.write_record(&header)?;
        for row in &self.intervals {
            let mut rec = vec![row.interval.to_string(), label(row.interval)];
            rec.extend(row.bucket_fractions.iter().map(|f| format!("{f:.6}")));
            rec.extend(row.level_counts.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<sparsity writer>", e))?;
        Ok(())
    }
}
