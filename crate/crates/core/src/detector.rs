//! Query-line alerting and scoring against positioning exceedances.
//!
//! An alert at hour `t` is a hit when a positioning exceedance occurs in
//! `[t + min_lead, t + horizon]`. An exceedance at `t'` is detected when some
//! alert lies in `[t' - horizon, t' - min_lead]`. Matching is many-to-many.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::series::{daily_peaks, HourTimestamp, HourlySeries, PoiSeries, Signal};
use crate::warning::{self, LogNormalPeakFit, WarningLine};

/// POI id used for macro-averaged rows.
pub const ALL_POIS: &str = "ALL";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlertRecord {
    pub poi_id: String,
    #[serde(rename = "timestamp")]
    pub time: HourTimestamp,
    pub query_count: u64,
    pub threshold_raw: f64,
    #[serde(skip)]
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GroundTruthPoint {
    pub poi_id: String,
    #[serde(rename = "timestamp")]
    pub time: HourTimestamp,
    pub positioning_count: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchConfig {
    /// Longest accepted lead, in hours.
    pub horizon: i64,
    /// Shortest accepted lead, in hours.
    pub min_lead: i64,
    /// Merge runs of consecutive exceedance hours into single events.
    pub cluster: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            horizon: 3,
            min_lead: 1,
            cluster: false,
        }
    }
}

impl MatchConfig {
    pub fn new(horizon: i64, min_lead: i64) -> Result<Self> {
        let cfg = MatchConfig {
            horizon,
            min_lead,
            cluster: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_lead < 1 || self.min_lead > self.horizon {
            return Err(Error::Param(format!(
                "need 1 <= min_lead <= horizon, got min_lead={} horizon={}",
                self.min_lead, self.horizon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub alpha: f64,
    pub poi_id: String,
    pub tp_alerts: usize,
    pub fp_alerts: usize,
    pub detected_events: usize,
    pub missed_events: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub both_empty: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

impl EvalReport {
    fn from_counts(
        alpha: f64,
        poi_id: &str,
        tp: usize,
        fp: usize,
        det: usize,
        miss: usize,
    ) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(det, det + miss);
        EvalReport {
            alpha,
            poi_id: poi_id.to_string(),
            tp_alerts: tp,
            fp_alerts: fp,
            detected_events: det,
            missed_events: miss,
            precision,
            recall,
            f1: harmonic(precision, recall),
            both_empty: tp + fp == 0 && det + miss == 0,
        }
    }
}

fn check_signal(series: &HourlySeries, line: &WarningLine, expected: Signal) -> Result<()> {
    for actual in [series.signal(), line.signal] {
        if actual != expected {
            return Err(Error::SignalMismatch { expected, actual });
        }
    }
    if series.poi_id() != line.poi_id {
        return Err(Error::PoiMismatch {
            left: series.poi_id().to_string(),
            right: line.poi_id.clone(),
        });
    }
    Ok(())
}

/// One alert per hour with `m(t) >= exp(threshold_log)`.
pub fn raise_alerts(query: &HourlySeries, line: &WarningLine) -> Result<Vec<AlertRecord>> {
    check_signal(query, line, Signal::MapQuery)?;
    Ok(query
        .iter()
        .filter(|&(_, v)| warning::exceeds(line, v))
        .map(|(time, query_count)| AlertRecord {
            poi_id: query.poi_id().to_string(),
            time,
            query_count,
            threshold_raw: line.threshold_raw,
            alpha: line.alpha,
        })
        .collect())
}

/// Positioning exceedance hours, using the same comparator as [`raise_alerts`].
pub fn ground_truth(
    positioning: &HourlySeries,
    line: &WarningLine,
) -> Result<Vec<GroundTruthPoint>> {
    check_signal(positioning, line, Signal::Positioning)?;
    Ok(positioning
        .iter()
        .filter(|&(_, v)| warning::exceeds(line, v))
        .map(|(time, positioning_count)| GroundTruthPoint {
            poi_id: positioning.poi_id().to_string(),
            time,
            positioning_count,
        })
        .collect())
}

/// An inclusive hour range of ground truth. Pointwise truth uses `start == end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TruthSpan {
    pub start: HourTimestamp,
    pub end: HourTimestamp,
}

/// Merges runs of consecutive hours into spans.
pub fn cluster_truth(times: &[HourTimestamp]) -> Vec<TruthSpan> {
    let mut sorted = times.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut spans: Vec<TruthSpan> = Vec::new();
    for t in sorted {
        match spans.last_mut() {
            Some(span) if t - span.end == 1 => span.end = t,
            _ => spans.push(TruthSpan { start: t, end: t }),
        }
    }
    spans
}

/// Counts `(tp_alerts, fp_alerts, detected, missed)` against arbitrary spans.
///
/// Spans must be sorted by start and pairwise non-overlapping (duplicates of
/// the same point are allowed) so their ends are sorted too.
fn score_spans(alerts: &[HourTimestamp], spans: &[TruthSpan], cfg: &MatchConfig) -> [usize; 4] {
    let mut sorted_alerts = alerts.to_vec();
    sorted_alerts.sort_unstable();

    let mut tp = 0;
    for &t in &sorted_alerts {
        let lo = t + cfg.min_lead;
        let hi = t + cfg.horizon;
        let i = spans.partition_point(|s| s.end < lo);
        if spans.get(i).is_some_and(|s| s.start <= hi) {
            tp += 1;
        }
    }

    let mut detected = 0;
    for span in spans {
        let lo = span.start - cfg.horizon;
        let hi = span.start - cfg.min_lead;
        let i = sorted_alerts.partition_point(|&a| a < lo);
        if sorted_alerts.get(i).is_some_and(|&a| a <= hi) {
            detected += 1;
        }
    }
    [
        tp,
        sorted_alerts.len() - tp,
        detected,
        spans.len() - detected,
    ]
}

/// Scores raw alert and truth times. With `cfg.cluster`, consecutive truth
/// hours count as one event and recall is measured per event onset.
pub fn score_times(
    alerts: &[HourTimestamp],
    truth: &[HourTimestamp],
    alpha: f64,
    poi_id: &str,
    cfg: &MatchConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let spans = if cfg.cluster {
        cluster_truth(truth)
    } else {
        let mut t = truth.to_vec();
        t.sort_unstable();
        t.into_iter()
            .map(|p| TruthSpan { start: p, end: p })
            .collect()
    };
    let [tp, fp, det, miss] = score_spans(alerts, &spans, cfg);
    Ok(EvalReport::from_counts(alpha, poi_id, tp, fp, det, miss))
}

pub fn match_and_score(
    alerts: &[AlertRecord],
    truth: &[GroundTruthPoint],
    cfg: &MatchConfig,
) -> Result<EvalReport> {
    let alpha = alerts.first().map_or(f64::NAN, |a| a.alpha);
    let poi_id = alerts
        .first()
        .map(|a| a.poi_id.as_str())
        .or_else(|| truth.first().map(|t| t.poi_id.as_str()))
        .unwrap_or("");
    let a: Vec<_> = alerts.iter().map(|a| a.time).collect();
    let t: Vec<_> = truth.iter().map(|t| t.time).collect();
    score_times(&a, &t, alpha, poi_id, cfg)
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(Error::Param("alphas must be positive and finite".into()));
    }
    if alphas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Param("alphas must be strictly ascending".into()));
    }
    Ok(())
}

/// One report per alpha; the query line is re-derived from `query_fit` each time.
pub fn alpha_sweep(
    query: &HourlySeries,
    positioning: &HourlySeries,
    query_fit: &LogNormalPeakFit,
    line_q: &WarningLine,
    alphas: &[f64],
    cfg: &MatchConfig,
) -> Result<Vec<EvalReport>> {
    check_alphas(alphas)?;
    cfg.validate()?;
    let truth: Vec<_> = ground_truth(positioning, line_q)?
        .into_iter()
        .map(|p| p.time)
        .collect();
    alphas
        .iter()
        .map(|&alpha| {
            let line_m = warning::warning_line(query_fit, alpha)?;
            let alerts: Vec<_> = raise_alerts(query, &line_m)?
                .into_iter()
                .map(|a| a.time)
                .collect();
            score_times(&alerts, &truth, alpha, query.poi_id(), cfg)
        })
        .collect()
}

/// Fitted lines for one POI: the query fit (for re-deriving lines) and the
/// fixed positioning line.
#[derive(Clone, Debug)]
pub struct PoiLines {
    pub query_fit: LogNormalPeakFit,
    pub positioning_fit: LogNormalPeakFit,
    pub line_q: WarningLine,
}

pub fn fit_poi_lines(poi: &PoiSeries, min_days: usize) -> Result<PoiLines> {
    let query_fit = warning::fit_log_peaks_with_min(&daily_peaks(&poi.query)?, min_days)?;
    let positioning_fit =
        warning::fit_log_peaks_with_min(&daily_peaks(&poi.positioning)?, min_days)?;
    let line_q = warning::positioning_line(&positioning_fit)?;
    Ok(PoiLines {
        query_fit,
        positioning_fit,
        line_q,
    })
}

/// Unweighted mean over POIs for each alpha; counts are summed.
pub fn macro_average(reports: &[EvalReport]) -> Vec<EvalReport> {
    let mut alphas: Vec<f64> = reports.iter().map(|r| r.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    alphas
        .into_iter()
        .map(|alpha| {
            let group: Vec<_> = reports.iter().filter(|r| r.alpha == alpha).collect();
            let n = group.len() as f64;
            let sum = |f: fn(&EvalReport) -> usize| group.iter().map(|r| f(r)).sum::<usize>();
            let avg = |f: fn(&EvalReport) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            EvalReport {
                alpha,
                poi_id: ALL_POIS.to_string(),
                tp_alerts: sum(|r| r.tp_alerts),
                fp_alerts: sum(|r| r.fp_alerts),
                detected_events: sum(|r| r.detected_events),
                missed_events: sum(|r| r.missed_events),
                precision: avg(|r| r.precision),
                recall: avg(|r| r.recall),
                f1: avg(|r| r.f1),
                both_empty: group.iter().all(|r| r.both_empty),
            }
        })
        .collect()
}

/// Sweeps every POI. Rows are ordered by alpha, then POI id, with the `ALL`
/// row for each alpha last.
pub fn sweep_pois(
    series: &[PoiSeries],
    alphas: &[f64],
    cfg: &MatchConfig,
    min_days: usize,
) -> Result<Vec<EvalReport>> {
    let mut per_poi = Vec::new();
    for poi in series {
        let lines = fit_poi_lines(poi, min_days)?;
        per_poi.extend(alpha_sweep(
            &poi.query,
            &poi.positioning,
            &lines.query_fit,
            &lines.line_q,
            alphas,
            cfg,
        )?);
    }
    let all = macro_average(&per_poi);
    let mut out = per_poi;
    out.extend(all);
    out.sort_by(|a, b| {
        a.alpha
            .total_cmp(&b.alpha)
            .then_with(|| (a.poi_id == ALL_POIS).cmp(&(b.poi_id == ALL_POIS)))
            .then_with(|| a.poi_id.cmp(&b.poi_id))
    });
    Ok(out)
}
