use std::io::{Read, Write};

use chrono::NaiveDateTime;

use crate::error::{Error, Result};

pub const AFC_HEADER: [&str; 5] = ["card_id", "entry_station", "entry_time", "exit_station", "exit_time"];
const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// One completed trip. Times are seconds since 1970-01-01T00:00:00 on the
/// local (naive) service clock.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AfcRecord {
    pub card_id: String,
    pub entry_station: usize,
    pub entry_time: i64,
    pub exit_station: usize,
    pub exit_time: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<AfcRecord>,
    pub rejected: Vec<RejectedRow>,
}

pub fn parse_timestamp(s: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(s.trim(), TIME_FORMAT)
        .ok()
        .map(|t| t.and_utc().timestamp())
}

pub fn format_timestamp(ts: i64) -> String {
    chrono::DateTime::from_timestamp(ts, 0)
        .expect("timestamp in chrono range")
        .naive_utc()
        .format(TIME_FORMAT)
        .to_string()
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<AfcRecord, String> {
    if row.len() != AFC_HEADER.len() {
        return Err(format!("expected 5 fields, found {}", row.len()));
    }
    let station = |idx: usize| {
        row[idx]
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("bad {} `{}`", AFC_HEADER[idx], &row[idx]))
    };
    let time = |idx: usize| parse_timestamp(&row[idx]).ok_or_else(|| format!("bad {} `{}`", AFC_HEADER[idx], &row[idx]));
    let card_id = row[0].trim();
    if card_id.is_empty() {
        return Err("empty card_id".into());
    }
    let rec = AfcRecord {
        card_id: card_id.to_string(),
        entry_station: station(1)?,
        entry_time: time(2)?,
        exit_station: station(3)?,
        exit_time: time(4)?,
    };
    if rec.exit_time <= rec.entry_time {
        return Err("exit_time not after entry_time".into());
    }
    Ok(rec)
}

/// Parses an AFC CSV stream. Malformed rows are collected in
/// [`ParseOutcome::rejected`]; more than 1% malformed rows is a hard error.
pub fn parse_afc<R: Read>(reader: R) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(Error::Format(format!("unreadable header: {e}"))),
        None => return Err(Error::Format("missing header".into())),
    };
    if header.iter().collect::<Vec<_>>() != AFC_HEADER {
        return Err(Error::Format(format!(
            "header must be `{}`, found `{}`",
            AFC_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = ParseOutcome::default();
    let mut total = 0usize;
    for row in rows {
        total += 1;
        match row {
            Ok(r) => {
                let line = r.position().map_or(0, |p| p.line());
                match parse_row(&r) {
                    Ok(rec) => out.records.push(rec),
                    Err(reason) => out.rejected.push(RejectedRow { line, reason }),
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.rejected.push(RejectedRow {
                    line,
                    reason: e.to_string(),
                });
            }
        }
    }
    if out.rejected.len() * 100 > total {
        let lines: Vec<String> = out.rejected.iter().take(20).map(|r| r.line.to_string()).collect();
        return Err(Error::Format(format!(
            "{} of {} rows malformed (limit 1%); lines {}{}",
            out.rejected.len(),
            total,
            lines.join(", "),
            if out.rejected.len() > 20 { ", ..." } else { "" }
        )));
    }
    Ok(out)
}

pub fn write_afc<W: Write>(records: &[AfcRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(AFC_HEADER)?;
    for r in records {
        w.write_record([
            r.card_id.as_str(),
            &r.entry_station.to_string(),
            &format_timestamp(r.entry_time),
            &r.exit_station.to_string(),
            &format_timestamp(r.exit_time),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<afc writer>", e))?;
    Ok(())
}
