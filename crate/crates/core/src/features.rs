//! The 47-feature rows used for next-hour positioning prediction.
//!
//! For a prediction hour `h` (the target hour), lag features look back from
//! `h`: `PN1 = q(h-1)`, `MQ1 = m(h-1)`, and so on. Calendar features describe
//! `h` itself. Rows whose history reaches before the series start are skipped.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use chrono::{NaiveDate, Weekday};

use crate::error::{Error, Result};
use crate::series::{HourTimestamp, HourlySeries, Signal};

pub const N_FEATURES: usize = 47;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "PN1", "PN2", "PN3", "PN4", //
    "PNS1", "PNS2", "PNS3", "PNS4", "PNS5", "PNS6", "PNS7", //
    "MQ1", "MQ2", "MQY", //
    "CT1", "CT2", "CT3", "CT4", "CT5", "CT6", "CT7", "CT8", "CT9", "CT10", "CT11", "CT12", "CT13",
    "CT14", "CT15", "CT16", "CT17", "CT18", "CT19", "CT20", "CT21", "CT22", "CT23", "CT24", //
    "TW1", "TW2", "TW3", "TW4", "TW5", "TW6", "TW7", //
    "WD", "HD",
];

/// Features derived from the query signal; removed by [`ablate_query_features`].
pub const QUERY_FEATURES: [&str; 3] = ["MQ1", "MQ2", "MQY"];

pub const TRAIN_WINDOW_DAYS: i64 = 60;
/// Deepest look-back of any lag feature (PNS7).
pub const MAX_HISTORY_HOURS: i64 = 7 * 24;

const CT_OFFSET: usize = 14;
const TW_OFFSET: usize = 38;
const WD_INDEX: usize = 45;
const HD_INDEX: usize = 46;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CalendarConfig {
    pub holidays: BTreeSet<NaiveDate>,
    pub weekend_days: Vec<Weekday>,
}

impl Default for CalendarConfig {
    fn default() -> Self {
        CalendarConfig {
            holidays: BTreeSet::new(),
            weekend_days: vec![Weekday::Sat, Weekday::Sun],
        }
    }
}

impl CalendarConfig {
    pub fn with_holidays(holidays: BTreeSet<NaiveDate>) -> Self {
        CalendarConfig {
            holidays,
            ..Default::default()
        }
    }
}

/// One `YYYY-MM-DD` per line; blank lines and `#` comments are ignored.
pub fn parse_holidays(text: &str) -> Result<BTreeSet<NaiveDate>> {
    let mut out = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let date = NaiveDate::parse_from_str(line, "%Y-%m-%d").map_err(|_| Error::Ingest {
            line: i as u64 + 1,
            message: format!("malformed holiday date {line:?}"),
        })?;
        out.insert(date);
    }
    Ok(out)
}

pub fn load_holidays(path: &Path) -> Result<BTreeSet<NaiveDate>> {
    parse_holidays(&std::fs::read_to_string(path)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub poi_id: String,
    /// The hour being predicted.
    pub at: HourTimestamp,
    pub x: Vec<f64>,
    pub y: Option<u64>,
}

/// Rows with their column names. Full tables use [`FEATURE_NAMES`].
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows with `from <= at < to`.
    pub fn between(&self, from: HourTimestamp, to: HourTimestamp) -> FeatureTable {
        FeatureTable {
            names: self.names.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| r.at >= from && r.at < to)
                .cloned()
                .collect(),
        }
    }

    /// CSV with header `poi_id,timestamp,<feature names>,target`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["poi_id".to_string(), "timestamp".to_string()];
        header.extend(self.names.iter().cloned());
        header.push("target".into());
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.poi_id.clone(), row.at.to_string()];
            rec.extend(row.x.iter().map(|v| v.to_string()));
            rec.push(row.y.map(|y| y.to_string()).unwrap_or_default());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOutput {
    pub table: FeatureTable,
    /// Prediction hours dropped for missing history.
    pub skipped: usize,
}

fn feature_vector(
    query: &HourlySeries,
    positioning: &HourlySeries,
    cal: &CalendarConfig,
    h: HourTimestamp,
) -> Option<Vec<f64>> {
    let q = |back: i64| positioning.get(h - back).map(|v| v as f64);
    let m = |back: i64| query.get(h - back).map(|v| v as f64);
    let mut x = Vec::with_capacity(N_FEATURES);
    for back in 1..=4 {
        x.push(q(back)?);
    }
    for day in 1..=7 {
        x.push(q(24 * day)?);
    }
    x.push(m(1)?);
    x.push(m(2)?);
    let yesterday_20 = h.day_start() - 24 + 20;
    let mut mqy = 0.0;
    for k in 0..4 {
        mqy += query.get(yesterday_20 + k)? as f64;
    }
    x.push(mqy);

    x.resize(N_FEATURES, 0.0);
    // CT1..CT23 are hours 1..23; CT24 is hour 0.
    let ct = match h.hour() {
        0 => 23,
        hour => hour as usize - 1,
    };
    x[CT_OFFSET + ct] = 1.0;
    let weekday = h.weekday();
    x[TW_OFFSET + weekday.num_days_from_monday() as usize] = 1.0;
    if cal.weekend_days.contains(&weekday) {
        x[WD_INDEX] = 1.0;
    }
    if cal.holidays.contains(&h.date()) {
        x[HD_INDEX] = 1.0;
    }
    Some(x)
}

/// Builds one row per hour in `[first, last]`.
pub fn build_rows(
    query: &HourlySeries,
    positioning: &HourlySeries,
    cal: &CalendarConfig,
    first: HourTimestamp,
    last: HourTimestamp,
) -> Result<BuildOutput> {
    if query.signal() != Signal::MapQuery {
        return Err(Error::SignalMismatch {
            expected: Signal::MapQuery,
            actual: query.signal(),
        });
    }
    if positioning.signal() != Signal::Positioning {
        return Err(Error::SignalMismatch {
            expected: Signal::Positioning,
            actual: positioning.signal(),
        });
    }
    if query.poi_id() != positioning.poi_id() {
        return Err(Error::PoiMismatch {
            left: query.poi_id().to_string(),
            right: positioning.poi_id().to_string(),
        });
    }
    if last < first {
        return Err(Error::Param(format!("empty window {first}..={last}")));
    }
    if cal.weekend_days.is_empty() {
        return Err(Error::Param("weekend_days must not be empty".into()));
    }
    let mut rows = Vec::new();
    let mut skipped = 0;
    for k in 0..=(last - first) {
        let h = first + k;
        match feature_vector(query, positioning, cal, h) {
            Some(x) => rows.push(FeatureRow {
                poi_id: query.poi_id().to_string(),
                at: h,
                x,
                y: positioning.get(h),
            }),
            None => skipped += 1,
        }
    }
    Ok(BuildOutput {
        table: FeatureTable {
            names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            rows,
        },
        skipped,
    })
}

/// Rows for every hour the series can support: from one week after the start
/// to the last positioning hour.
pub fn build_all_rows(
    query: &HourlySeries,
    positioning: &HourlySeries,
    cal: &CalendarConfig,
) -> Result<BuildOutput> {
    let first = query.start().max(positioning.start()) + MAX_HISTORY_HOURS;
    build_rows(query, positioning, cal, first, positioning.end())
}

/// Rows predicting hours in `[event_time - 60 days, event_time)`.
pub fn train_window(table: &FeatureTable, event_time: HourTimestamp) -> Result<FeatureTable> {
    let required = TRAIN_WINDOW_DAYS * 24;
    let window_start = event_time - required;
    let earliest = table.rows.iter().map(|r| r.at).min();
    match earliest {
        Some(e) if e <= window_start => Ok(table.between(window_start, event_time)),
        _ => Err(Error::InsufficientCoverage {
            available_hours: earliest.map_or(0, |e| (event_time - e).max(0)),
            required_hours: required,
        }),
    }
}

/// Drops MQ1, MQ2 and MQY. Idempotent.
pub fn ablate_query_features(table: &FeatureTable) -> FeatureTable {
    let keep: Vec<usize> = (0..table.names.len())
        .filter(|&i| !QUERY_FEATURES.contains(&table.names[i].as_str()))
        .collect();
    FeatureTable {
        names: keep.iter().map(|&i| table.names[i].clone()).collect(),
        rows: table
            .rows
            .iter()
            .map(|r| FeatureRow {
                x: keep.iter().map(|&i| r.x[i]).collect(),
                ..r.clone()
            })
            .collect(),
    }
}
