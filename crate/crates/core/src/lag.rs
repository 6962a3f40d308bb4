//! Lead-lag analytics between the query and positioning signals.
//!
//! Two views: the per-day difference between the hours at which each signal
//! peaks, and plug-in mutual information between `m(t + lag)` and `q(t)` over
//! a range of lags. Negative lags mean the query signal leads.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::series::{DailyPeaks, HourlySeries};

pub const DEFAULT_MI_BINS: usize = 8;
pub const DEFAULT_LAGS: RangeInclusive<i32> = -6..=3;
/// Minimum number of pairs per bin required to estimate MI at a lag.
pub const MIN_PAIRS_PER_BIN: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeakLagHistogram {
    pub poi_id: String,
    /// Lag in hours (query peak hour minus positioning peak hour) to day count.
    pub bins: BTreeMap<i32, usize>,
    pub n_days: usize,
}

impl PeakLagHistogram {
    /// Most frequent lag; ties go to the smallest lag.
    pub fn mode(&self) -> Option<i32> {
        self.bins
            .iter()
            .fold(
                None,
                |best: Option<(i32, usize)>, (&lag, &count)| match best {
                    Some((_, c)) if c >= count => best,
                    _ => Some((lag, count)),
                },
            )
            .map(|(lag, _)| lag)
    }
}

pub fn peak_lag_histogram(
    query_peaks: &DailyPeaks,
    positioning_peaks: &DailyPeaks,
) -> Result<PeakLagHistogram> {
    if query_peaks.poi_id != positioning_peaks.poi_id {
        return Err(Error::PoiMismatch {
            left: query_peaks.poi_id.clone(),
            right: positioning_peaks.poi_id.clone(),
        });
    }
    let positioning_hour: BTreeMap<_, _> = positioning_peaks
        .entries
        .iter()
        .map(|e| (e.date, e.peak_hour.hour() as i32))
        .collect();
    let mut bins = BTreeMap::new();
    let mut n_days = 0;
    for e in &query_peaks.entries {
        if let Some(&ph) = positioning_hour.get(&e.date) {
            *bins.entry(e.peak_hour.hour() as i32 - ph).or_insert(0) += 1;
            n_days += 1;
        }
    }
    if n_days == 0 {
        return Err(Error::NoSharedDays);
    }
    Ok(PeakLagHistogram {
        poi_id: query_peaks.poi_id.clone(),
        bins,
        n_days,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MiEntry {
    pub lag: i32,
    pub mi_bits: f64,
    pub n_pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiCurve {
    pub poi_id: String,
    /// Sorted by lag.
    pub entries: Vec<MiEntry>,
    pub n_bins: usize,
    /// Lags without enough pairs, with the pair count that was available.
    pub skipped: Vec<(i32, usize)>,
}

impl MiCurve {
    /// Lag with the largest MI; ties go to the smallest lag.
    pub fn argmax(&self) -> Option<i32> {
        self.entries
            .iter()
            .fold(None, |best: Option<&MiEntry>, e| match best {
                Some(b) if b.mi_bits >= e.mi_bits => best,
                _ => Some(e),
            })
            .map(|e| e.lag)
    }
}

/// Equal-frequency bin index for each value. Ties are ordered by position so
/// every bin gets `n / n_bins` values (up to rounding).
pub fn equal_frequency_bins(values: &[u64], n_bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| values[i]);
    let mut bins = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        bins[i] = rank * n_bins / n;
    }
    bins
}

/// Plug-in mutual information in bits between two equally long samples,
/// each discretized into `n_bins` equal-frequency bins.
///
/// Returns exactly 0 when either sample is constant.
pub fn plug_in_mi(x: &[u64], y: &[u64], n_bins: usize) -> f64 {
    assert_eq!(x.len(), y.len(), "samples must be paired");
    let n = x.len();
    let constant = |v: &[u64]| v.iter().all(|&a| a == v[0]);
    if n == 0 || constant(x) || constant(y) {
        return 0.0;
    }
    let bx = equal_frequency_bins(x, n_bins);
    let by = equal_frequency_bins(y, n_bins);
    let mut joint = vec![0usize; n_bins * n_bins];
    let mut mx = vec![0usize; n_bins];
    let mut my = vec![0usize; n_bins];
    for (&i, &j) in bx.iter().zip(&by) {
        joint[i * n_bins + j] += 1;
        mx[i] += 1;
        my[j] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for i in 0..n_bins {
        for j in 0..n_bins {
            let c = joint[i * n_bins + j];
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (c * nf / (mx[i] as f64 * my[j] as f64)).log2();
            }
        }
    }
    mi.max(0.0)
}

/// MI between `m(t + lag)` and `q(t)` for every lag in `lags`.
pub fn mutual_information(
    query: &HourlySeries,
    positioning: &HourlySeries,
    lags: RangeInclusive<i32>,
    n_bins: usize,
) -> Result<MiCurve> {
    if n_bins < 2 {
        return Err(Error::Param(format!(
            "n_bins must be at least 2, got {n_bins}"
        )));
    }
    if query.poi_id() != positioning.poi_id() {
        return Err(Error::PoiMismatch {
            left: query.poi_id().to_string(),
            right: positioning.poi_id().to_string(),
        });
    }
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for lag in lags {
        let lag_h = i64::from(lag);
        // t must lie in the positioning range and t + lag in the query range.
        let first = positioning.start().max(query.start() - lag_h);
        let last = positioning.end().min(query.end() - lag_h);
        let n_pairs = if last >= first {
            (last - first + 1) as usize
        } else {
            0
        };
        if n_pairs < MIN_PAIRS_PER_BIN * n_bins {
            skipped.push((lag, n_pairs));
            continue;
        }
        let (m, q): (Vec<u64>, Vec<u64>) = (0..n_pairs as i64)
            .map(|k| {
                let t = first + k;
                (query.get(t + lag_h).unwrap(), positioning.get(t).unwrap())
            })
            .unzip();
        entries.push(MiEntry {
            lag,
            mi_bits: plug_in_mi(&m, &q, n_bins),
            n_pairs,
        });
    }
    Ok(MiCurve {
        poi_id: query.poi_id().to_string(),
        entries,
        n_bins,
        skipped,
    })
}
