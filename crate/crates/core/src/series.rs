//! Hourly count series: timestamps, CSV ingestion, daily peaks, alignment.
//!
//! Every other module consumes [`HourlySeries`]. A series is dense: value `k`
//! belongs to `start + k` hours, and interior gaps in the input are filled
//! with zero and reported.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::ops::{Add, Sub};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::stats;

/// Days from 0001-01-01 (CE day 1) to 1970-01-01.
const EPOCH_DAYS_FROM_CE: i64 = 719_163;

pub const CSV_HEADER: [&str; 4] = ["poi_id", "timestamp", "query_count", "positioning_count"];

/// A naive wall-clock hour, stored as whole hours since 1970-01-01T00:00.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HourTimestamp(i64);

impl HourTimestamp {
    pub fn new(date: NaiveDate, hour: u32) -> Result<Self> {
        if hour > 23 {
            return Err(Error::Param(format!(
                "hour of day {hour} is outside 0..=23"
            )));
        }
        let days = i64::from(date.num_days_from_ce()) - EPOCH_DAYS_FROM_CE;
        Ok(HourTimestamp(days * 24 + i64::from(hour)))
    }

    pub fn from_ymdh(year: i32, month: u32, day: u32, hour: u32) -> Result<Self> {
        let date = NaiveDate::from_ymd_opt(year, month, day)
            .ok_or_else(|| Error::Param(format!("invalid date {year:04}-{month:02}-{day:02}")))?;
        Self::new(date, hour)
    }

    pub fn from_hours_since_epoch(hours: i64) -> Self {
        HourTimestamp(hours)
    }

    pub fn hours_since_epoch(self) -> i64 {
        self.0
    }

    pub fn date(self) -> NaiveDate {
        let days = self.0.div_euclid(24) + EPOCH_DAYS_FROM_CE;
        NaiveDate::from_num_days_from_ce_opt(days as i32).expect("timestamp within chrono range")
    }

    pub fn hour(self) -> u32 {
        self.0.rem_euclid(24) as u32
    }

    pub fn weekday(self) -> Weekday {
        self.date().weekday()
    }

    /// Midnight of the same calendar day.
    pub fn day_start(self) -> Self {
        HourTimestamp(self.0 - self.0.rem_euclid(24))
    }
}

impl Add<i64> for HourTimestamp {
    type Output = HourTimestamp;
    fn add(self, hours: i64) -> HourTimestamp {
        HourTimestamp(self.0 + hours)
    }
}

impl Sub<i64> for HourTimestamp {
    type Output = HourTimestamp;
    fn sub(self, hours: i64) -> HourTimestamp {
        HourTimestamp(self.0 - hours)
    }
}

impl Sub for HourTimestamp {
    type Output = i64;
    fn sub(self, other: HourTimestamp) -> i64 {
        self.0 - other.0
    }
}

impl fmt::Display for HourTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}T{:02}:00",
            self.date().format("%Y-%m-%d"),
            self.hour()
        )
    }
}

impl FromStr for HourTimestamp {
    type Err = String;

    /// Parses `YYYY-MM-DDTHH:00`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bytes = s.as_bytes();
        let shape_ok = bytes.len() == 16
            && bytes[4] == b'-'
            && bytes[7] == b'-'
            && bytes[10] == b'T'
            && &s[13..] == ":00"
            && [0, 1, 2, 3, 5, 6, 8, 9, 11, 12]
                .iter()
                .all(|&i| bytes[i].is_ascii_digit());
        if !shape_ok {
            return Err(format!(
                "malformed timestamp {s:?}, expected YYYY-MM-DDTHH:00"
            ));
        }
        let date = NaiveDate::parse_from_str(&s[..10], "%Y-%m-%d")
            .map_err(|_| format!("invalid calendar date in {s:?}"))?;
        let hour: u32 = s[11..13]
            .parse()
            .map_err(|_| format!("invalid hour in {s:?}"))?;
        HourTimestamp::new(date, hour).map_err(|e| e.to_string())
    }
}

impl Serialize for HourTimestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HourTimestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    MapQuery,
    Positioning,
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Signal::MapQuery => "map_query",
            Signal::Positioning => "positioning",
        })
    }
}

/// Dense hourly counts for one POI and one signal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HourlySeries {
    poi_id: String,
    signal: Signal,
    start: HourTimestamp,
    values: Vec<u64>,
}

impl HourlySeries {
    pub fn new(
        poi_id: impl Into<String>,
        signal: Signal,
        start: HourTimestamp,
        values: Vec<u64>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("hourly series needs at least one value"));
        }
        Ok(HourlySeries {
            poi_id: poi_id.into(),
            signal,
            start,
            values,
        })
    }

    pub fn poi_id(&self) -> &str {
        &self.poi_id
    }

    pub fn signal(&self) -> Signal {
        self.signal
    }

    pub fn start(&self) -> HourTimestamp {
        self.start
    }

    /// Last covered hour (inclusive).
    pub fn end(&self) -> HourTimestamp {
        self.start + (self.values.len() as i64 - 1)
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, at: HourTimestamp) -> Option<u64> {
        let offset = at - self.start;
        if offset < 0 {
            return None;
        }
        self.values.get(offset as usize).copied()
    }

    /// `(timestamp, value)` pairs in time order.
    pub fn iter(&self) -> impl Iterator<Item = (HourTimestamp, u64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (self.start + k as i64, v))
    }
}

/// One input CSV row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvRow {
    pub poi_id: String,
    pub timestamp: HourTimestamp,
    pub query_count: u64,
    pub positioning_count: u64,
}

/// The two signals of one POI over the same hour range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoiSeries {
    pub query: HourlySeries,
    pub positioning: HourlySeries,
}

impl PoiSeries {
    pub fn poi_id(&self) -> &str {
        self.query.poi_id()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapReport {
    pub poi_id: String,
    pub filled_hours: usize,
    pub first: HourTimestamp,
    pub last: HourTimestamp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ingested {
    /// Sorted by POI id.
    pub series: Vec<PoiSeries>,
    pub gaps: Vec<GapReport>,
}

impl Ingested {
    pub fn poi(&self, poi_id: &str) -> Option<&PoiSeries> {
        self.series.iter().find(|s| s.poi_id() == poi_id)
    }
}

/// Reads the input CSV, validating the header, timestamps and counts.
pub fn read_rows<R: Read>(reader: R) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Ingest {
            line: 1,
            message: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Ingest { line, message };
        let timestamp: HourTimestamp = record[1].trim().parse().map_err(bad)?;
        let count = |field: usize| -> Result<u64> {
            let raw = record[field].trim();
            match raw.parse::<i64>() {
                Ok(v) if v < 0 => Err(bad(format!("negative {} {v}", CSV_HEADER[field]))),
                Ok(v) => Ok(v as u64),
                Err(_) => Err(bad(format!("malformed {} {raw:?}", CSV_HEADER[field]))),
            }
        };
        rows.push(CsvRow {
            poi_id: record[0].trim().to_string(),
            timestamp,
            query_count: count(2)?,
            positioning_count: count(3)?,
        });
    }
    Ok(rows)
}

/// Groups rows by POI into dense series, zero-filling interior gaps.
///
/// Row `i` of `rows` is reported as line `i + 2` (the header is line 1).
pub fn ingest_series(rows: &[CsvRow]) -> Result<Ingested> {
    let mut by_poi: BTreeMap<&str, BTreeMap<HourTimestamp, (u64, u64)>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        if row.poi_id.is_empty() {
            return Err(Error::Ingest {
                line: i as u64 + 2,
                message: "empty poi_id".into(),
            });
        }
        let hours = by_poi.entry(&row.poi_id).or_default();
        if hours
            .insert(row.timestamp, (row.query_count, row.positioning_count))
            .is_some()
        {
            return Err(Error::Ingest {
                line: i as u64 + 2,
                message: format!(
                    "duplicate timestamp {} for poi {}",
                    row.timestamp, row.poi_id
                ),
            });
        }
    }

    let mut series = Vec::with_capacity(by_poi.len());
    let mut gaps = Vec::with_capacity(by_poi.len());
    for (poi_id, hours) in by_poi {
        let (&first, _) = hours.first_key_value().expect("non-empty group");
        let (&last, _) = hours.last_key_value().expect("non-empty group");
        let len = (last - first + 1) as usize;
        let mut query = vec![0; len];
        let mut positioning = vec![0; len];
        for (ts, (q, p)) in &hours {
            let k = (*ts - first) as usize;
            query[k] = *q;
            positioning[k] = *p;
        }
        gaps.push(GapReport {
            poi_id: poi_id.to_string(),
            filled_hours: len - hours.len(),
            first,
            last,
        });
        series.push(PoiSeries {
            query: HourlySeries::new(poi_id, Signal::MapQuery, first, query)?,
            positioning: HourlySeries::new(poi_id, Signal::Positioning, first, positioning)?,
        });
    }
    Ok(Ingested { series, gaps })
}

/// Flattens POI series back into CSV rows over the union of both ranges.
pub fn export_rows(series: &[PoiSeries]) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for poi in series {
        let first = poi.query.start().min(poi.positioning.start());
        let last = poi.query.end().max(poi.positioning.end());
        for k in 0..=(last - first) {
            let ts = first + k;
            rows.push(CsvRow {
                poi_id: poi.poi_id().to_string(),
                timestamp: ts,
                query_count: poi.query.get(ts).unwrap_or(0),
                positioning_count: poi.positioning.get(ts).unwrap_or(0),
            });
        }
    }
    rows
}

pub fn write_rows<W: Write>(writer: W, rows: &[CsvRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    for row in rows {
        wtr.write_record([
            row.poi_id.clone(),
            row.timestamp.to_string(),
            row.query_count.to_string(),
            row.positioning_count.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DailyPeak {
    pub date: NaiveDate,
    pub peak: u64,
    pub peak_hour: HourTimestamp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DailyPeaks {
    pub poi_id: String,
    pub signal: Signal,
    pub entries: Vec<DailyPeak>,
}

impl DailyPeaks {
    pub fn peaks(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.peak)
    }
}

/// Maximum of each complete calendar day (hours 00..=23), earliest hour on ties.
/// Partial days at either end are skipped.
pub fn daily_peaks(series: &HourlySeries) -> Result<DailyPeaks> {
    let start = series.start();
    let first_day = if start.hour() == 0 {
        start
    } else {
        start.day_start() + 24
    };
    let mut entries = Vec::new();
    let mut day = first_day;
    while day + 23 <= series.end() {
        let offset = (day - start) as usize;
        let hours = &series.values()[offset..offset + 24];
        let mut best = 0;
        for (h, &v) in hours.iter().enumerate() {
            if v > hours[best] {
                best = h;
            }
        }
        entries.push(DailyPeak {
            date: day.date(),
            peak: hours[best],
            peak_hour: day + best as i64,
        });
        day = day + 24;
    }
    if entries.is_empty() {
        return Err(Error::NoCompleteDay {
            poi_id: series.poi_id().to_string(),
        });
    }
    Ok(DailyPeaks {
        poi_id: series.poi_id().to_string(),
        signal: series.signal(),
        entries,
    })
}

/// Divides each value by the sample standard deviation. For display only.
pub fn normalize_by_std(series: &HourlySeries) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::Empty("normalization needs at least two values"));
    }
    let values: Vec<f64> = series.values().iter().map(|&v| v as f64).collect();
    let sd = stats::sample_std(&values);
    if !(sd > 0.0) {
        return Err(Error::ZeroStd);
    }
    Ok(values.iter().map(|v| v / sd).collect())
}

/// Pairs of values from two series over their common hours.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Aligned {
    pub start: HourTimestamp,
    pub pairs: Vec<(u64, u64)>,
}

pub fn align(a: &HourlySeries, b: &HourlySeries) -> Result<Aligned> {
    if a.poi_id() != b.poi_id() {
        return Err(Error::PoiMismatch {
            left: a.poi_id().to_string(),
            right: b.poi_id().to_string(),
        });
    }
    let start = a.start().max(b.start());
    let end = a.end().min(b.end());
    if end < start {
        return Err(Error::NoOverlap);
    }
    let pairs = (0..=(end - start))
        .map(|k| {
            let ts = start + k;
            (a.get(ts).unwrap(), b.get(ts).unwrap())
        })
        .collect();
    Ok(Aligned { start, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> HourTimestamp {
        s.parse().unwrap()
    }

    fn row(poi: &str, t: &str, q: u64, p: u64) -> CsvRow {
        CsvRow {
            poi_id: poi.into(),
            timestamp: ts(t),
            query_count: q,
            positioning_count: p,
        }
    }

    fn series(values: Vec<u64>) -> HourlySeries {
        HourlySeries::new("p", Signal::MapQuery, ts("2014-12-28T00:00"), values).unwrap()
    }

    #[test]
    fn timestamp_parse_and_display() {
        let t = ts("2014-12-31T23:00");
        assert_eq!(t.to_string(), "2014-12-31T23:00");
        assert_eq!(t.hour(), 23);
        assert_eq!((t + 1).to_string(), "2015-01-01T00:00");
        assert_eq!((t + 1) - t, 1);
        assert_eq!(ts("1969-12-31T05:00").to_string(), "1969-12-31T05:00");
        for bad in [
            "2014-12-31 23:00",
            "2014-12-31T24:00",
            "2014-02-30T01:00",
            "2014-12-31T23:30",
        ] {
            assert!(bad.parse::<HourTimestamp>().is_err(), "{bad}");
        }
    }

    #[test]
    fn contiguous_rows_pass_through() {
        let rows = vec![
            row("a", "2014-01-01T00:00", 5, 1),
            row("a", "2014-01-01T01:00", 7, 1),
            row("a", "2014-01-01T02:00", 2, 1),
        ];
        let ing = ingest_series(&rows).unwrap();
        assert_eq!(ing.series[0].query.values(), &[5, 7, 2]);
        assert_eq!(ing.gaps[0].filled_hours, 0);
    }

    #[test]
    fn interior_gap_is_zero_filled_and_reported() {
        let rows = vec![
            row("a", "2014-01-01T02:00", 6, 0),
            row("a", "2014-01-01T00:00", 4, 0),
        ];
        let ing = ingest_series(&rows).unwrap();
        assert_eq!(ing.series[0].query.values(), &[4, 0, 6]);
        assert_eq!(ing.gaps[0].filled_hours, 1);
        assert_eq!(ing.gaps[0].first, ts("2014-01-01T00:00"));
        assert_eq!(ing.gaps[0].last, ts("2014-01-01T02:00"));
    }

    #[test]
    fn duplicate_timestamp_is_rejected() {
        let rows = vec![
            row("a", "2014-01-01T00:00", 1, 1),
            row("b", "2014-01-01T00:00", 1, 1),
            row("a", "2014-01-01T00:00", 2, 2),
        ];
        match ingest_series(&rows) {
            Err(Error::Ingest { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn read_rows_reports_bad_lines() {
        let csv = "poi_id,timestamp,query_count,positioning_count\n\
                   a,2014-01-01T00:00,1,2\n\
                   a,2014-01-01T01:00,-3,2\n";
        match read_rows(csv.as_bytes()) {
            Err(Error::Ingest { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("negative"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let csv = "poi_id,timestamp,query_count,positioning_count\na,2014/01/01 00,1,2\n";
        assert!(matches!(
            read_rows(csv.as_bytes()),
            Err(Error::Ingest { line: 2, .. })
        ));
        let csv = "poi,ts,q,p\n";
        assert!(matches!(
            read_rows(csv.as_bytes()),
            Err(Error::Ingest { line: 1, .. })
        ));
    }

    #[test]
    fn constant_series_peaks() {
        let peaks = daily_peaks(&series(vec![7; 48])).unwrap();
        assert_eq!(peaks.peaks().collect::<Vec<_>>(), vec![7, 7]);
        assert_eq!(peaks.entries[0].peak_hour, ts("2014-12-28T00:00"));
        assert_eq!(peaks.entries[1].peak_hour, ts("2014-12-29T00:00"));
    }

    #[test]
    fn single_maximum_peak() {
        let mut v = vec![0; 24];
        v[21] = 9;
        let peaks = daily_peaks(&series(v)).unwrap();
        assert_eq!(peaks.entries[0].peak, 9);
        assert_eq!(peaks.entries[0].peak_hour.hour(), 21);
    }

    #[test]
    fn partial_days_are_excluded() {
        let s = HourlySeries::new(
            "p",
            Signal::Positioning,
            ts("2014-12-28T05:00"),
            vec![1; 50],
        )
        .unwrap();
        // 05:00 on the 28th through 06:00 on the 30th: only the 29th is complete.
        let peaks = daily_peaks(&s).unwrap();
        assert_eq!(peaks.entries.len(), 1);
        assert_eq!(peaks.entries[0].date.to_string(), "2014-12-29");

        let short = HourlySeries::new(
            "p",
            Signal::Positioning,
            ts("2014-12-28T01:00"),
            vec![1; 30],
        )
        .unwrap();
        assert!(matches!(
            daily_peaks(&short),
            Err(Error::NoCompleteDay { .. })
        ));
    }

    #[test]
    fn normalization() {
        assert!(matches!(
            normalize_by_std(&series(vec![2, 2, 2])),
            Err(Error::ZeroStd)
        ));
        assert_eq!(
            normalize_by_std(&series(vec![0, 2, 4])).unwrap(),
            vec![0.0, 1.0, 2.0]
        );
    }

    #[test]
    fn alignment() {
        let a = series(vec![1; 10]);
        let b = HourlySeries::new("p", Signal::Positioning, a.start() + 5, vec![2; 10]).unwrap();
        let al = align(&a, &b).unwrap();
        assert_eq!(al.pairs.len(), 5);
        assert_eq!(al.start, a.start() + 5);
        assert_eq!(align(&a, &a).unwrap().pairs.len(), 10);

        let far =
            HourlySeries::new("p", Signal::Positioning, a.start() + 100, vec![2; 10]).unwrap();
        assert!(matches!(align(&a, &far), Err(Error::NoOverlap)));
        let other = HourlySeries::new("q", Signal::Positioning, a.start(), vec![2; 10]).unwrap();
        assert!(matches!(align(&a, &other), Err(Error::PoiMismatch { .. })));
    }
}
