//! Log-normal warning lines fitted on daily peaks.
//!
//! Daily peaks are modelled as log-normal: `ln(peak) ~ N(mu, sigma^2)`. The
//! warning line sits `alpha` standard deviations above the mean in log space,
//! and raw counts are compared against `exp` of that value so both sides are on
//! the count scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{DailyPeaks, Signal};
use crate::stats;

pub const MIN_FIT_DAYS: usize = 14;
pub const DEFAULT_QUERY_ALPHA: f64 = 2.0;
/// The positioning line is always three standard deviations above the mean.
pub const POSITIONING_ALPHA: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormalPeakFit {
    pub poi_id: String,
    pub signal: Signal,
    pub n_days: usize,
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub excluded_zero_days: usize,
}

pub fn fit_log_peaks(peaks: &DailyPeaks) -> Result<LogNormalPeakFit> {
    fit_log_peaks_with_min(peaks, MIN_FIT_DAYS)
}

/// Mean and unbiased standard deviation of `ln(peak)`; zero-peak days are dropped.
pub fn fit_log_peaks_with_min(peaks: &DailyPeaks, min_days: usize) -> Result<LogNormalPeakFit> {
    let values: Vec<f64> = peaks.peaks().map(|p| p as f64).collect();
    fit_log_values(&peaks.poi_id, peaks.signal, &values, min_days)
}

/// Same fit over real-valued peaks. Non-positive values are excluded.
pub fn fit_log_values(
    poi_id: &str,
    signal: Signal,
    peaks: &[f64],
    min_days: usize,
) -> Result<LogNormalPeakFit> {
    let logs: Vec<f64> = peaks.iter().filter(|&&p| p > 0.0).map(|p| p.ln()).collect();
    let excluded = peaks.len() - logs.len();
    if logs.len() < min_days.max(2) {
        return Err(Error::InsufficientDays {
            valid: logs.len(),
            required: min_days.max(2),
            excluded,
        });
    }
    Ok(LogNormalPeakFit {
        poi_id: poi_id.to_string(),
        signal,
        n_days: logs.len(),
        mu_hat: stats::mean(&logs),
        sigma_hat: stats::sample_std(&logs),
        excluded_zero_days: excluded,
    })
}

/// A fitted threshold. Serializes to the warning-line JSON record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarningLine {
    pub poi_id: String,
    pub signal: Signal,
    pub n_days: usize,
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub alpha: f64,
    pub threshold_log: f64,
    pub threshold_raw: f64,
}

/// `mu_hat + alpha * sigma_hat` in log space. Positioning lines only accept
/// `alpha == 3`.
pub fn warning_line(fit: &LogNormalPeakFit, alpha: f64) -> Result<WarningLine> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Param(format!("alpha must be positive, got {alpha}")));
    }
    if fit.signal == Signal::Positioning && alpha != POSITIONING_ALPHA {
        return Err(Error::Param(format!(
            "positioning warning line uses alpha = {POSITIONING_ALPHA}, got {alpha}"
        )));
    }
    let threshold_log = fit.mu_hat + alpha * fit.sigma_hat;
    Ok(WarningLine {
        poi_id: fit.poi_id.clone(),
        signal: fit.signal,
        n_days: fit.n_days,
        mu_hat: fit.mu_hat,
        sigma_hat: fit.sigma_hat,
        alpha,
        threshold_log,
        threshold_raw: threshold_log.exp(),
    })
}

pub fn positioning_line(fit: &LogNormalPeakFit) -> Result<WarningLine> {
    warning_line(fit, POSITIONING_ALPHA)
}

impl WarningLine {
    pub fn exceeds(&self, count: u64) -> bool {
        exceeds(self, count)
    }
}

/// `count >= exp(threshold_log)`.
pub fn exceeds(line: &WarningLine, count: u64) -> bool {
    count as f64 >= line.threshold_raw
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{DailyPeak, HourTimestamp};
    use proptest::prelude::*;

    fn peaks_from(values: &[u64]) -> DailyPeaks {
        let start = HourTimestamp::from_ymdh(2014, 1, 1, 0).unwrap();
        DailyPeaks {
            poi_id: "p".into(),
            signal: Signal::MapQuery,
            entries: values
                .iter()
                .enumerate()
                .map(|(d, &peak)| {
                    let ts = start + 24 * d as i64;
                    DailyPeak {
                        date: ts.date(),
                        peak,
                        peak_hour: ts,
                    }
                })
                .collect(),
        }
    }

    fn fit(mu: f64, sigma: f64, signal: Signal) -> LogNormalPeakFit {
        LogNormalPeakFit {
            poi_id: "p".into(),
            signal,
            n_days: 30,
            mu_hat: mu,
            sigma_hat: sigma,
            excluded_zero_days: 0,
        }
    }

    #[test]
    fn three_level_peaks() {
        let e = std::f64::consts::E;
        let peaks: Vec<f64> = [e, e * e, e * e * e]
            .iter()
            .flat_map(|&p| [p; 10])
            .collect();
        let f = fit_log_values("p", Signal::MapQuery, &peaks, MIN_FIT_DAYS).unwrap();
        assert!((f.mu_hat - 2.0).abs() < 1e-9);
        assert!((f.sigma_hat - (20.0f64 / 29.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn identical_peaks_give_zero_sigma() {
        let f = fit_log_peaks(&peaks_from(&[1000; 20])).unwrap();
        assert_eq!(f.mu_hat, 1000f64.ln());
        assert_eq!(f.sigma_hat, 0.0);
        assert_eq!(f.n_days, 20);
    }

    #[test]
    fn zero_days_excluded_and_counted() {
        let mut v = vec![5u64; 20];
        v[3] = 0;
        v[7] = 0;
        let f = fit_log_peaks(&peaks_from(&v)).unwrap();
        assert_eq!(f.n_days, 18);
        assert_eq!(f.excluded_zero_days, 2);

        match fit_log_peaks(&peaks_from(&[0; 20])) {
            Err(Error::InsufficientDays {
                valid, excluded, ..
            }) => {
                assert_eq!((valid, excluded), (0, 20));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(fit_log_peaks(&peaks_from(&[3; 13])).is_err());
    }

    #[test]
    fn line_arithmetic() {
        let l = warning_line(&fit(2.0, 0.0, Signal::MapQuery), 1.7).unwrap();
        assert_eq!(l.threshold_log, 2.0);
        assert!((l.threshold_raw - 7.389056).abs() < 1e-6);

        let l = warning_line(&fit(2.0, 1.0, Signal::MapQuery), 1.0).unwrap();
        assert_eq!(l.threshold_log, 3.0);
        assert!((l.threshold_raw - 20.085537).abs() < 1e-6);
        assert!(!l.exceeds(20));
        assert!(l.exceeds(21));
        assert!(!l.exceeds(0));

        let l = warning_line(&fit(2.0, 1.0, Signal::MapQuery), 3.0).unwrap();
        assert_eq!(l.threshold_log, 5.0);
        assert!(((l.threshold_raw - l.threshold_log.exp()) / l.threshold_raw).abs() <= 1e-12);
    }

    #[test]
    fn alpha_validation() {
        let f = fit(2.0, 1.0, Signal::MapQuery);
        assert!(matches!(warning_line(&f, 0.0), Err(Error::Param(_))));
        assert!(matches!(warning_line(&f, -1.0), Err(Error::Param(_))));
        assert!(matches!(warning_line(&f, f64::NAN), Err(Error::Param(_))));
        let pf = fit(2.0, 1.0, Signal::Positioning);
        assert!(warning_line(&pf, 2.0).is_err());
        assert_eq!(positioning_line(&pf).unwrap().threshold_log, 5.0);
    }

    proptest! {
        #[test]
        fn thresholds_monotone_in_alpha(
            peaks in prop::collection::vec(1u64..5000, 14..60),
            a1 in 0.01f64..5.0,
            delta in 0.0f64..5.0,
            count in 0u64..20000,
        ) {
            let f = fit_log_peaks(&peaks_from(&peaks)).unwrap();
            let l1 = warning_line(&f, a1).unwrap();
            let l2 = warning_line(&f, a1 + delta).unwrap();
            prop_assert!(l2.threshold_raw >= l1.threshold_raw);
            if l2.exceeds(count) {
                prop_assert!(l1.exceeds(count));
            }
        }

        #[test]
        fn scale_covariance(
            peaks in prop::collection::vec(1u64..1000, 14..60),
            c in 1u64..50,
        ) {
            let base = fit_log_peaks(&peaks_from(&peaks)).unwrap();
            let scaled: Vec<u64> = peaks.iter().map(|p| p * c).collect();
            let sc = fit_log_peaks(&peaks_from(&scaled)).unwrap();
            let c = c as f64;
            prop_assert!((sc.mu_hat - base.mu_hat - c.ln()).abs() < 1e-9);
            prop_assert!((sc.sigma_hat - base.sigma_hat).abs() < 1e-9);
            let l0 = warning_line(&base, 2.0).unwrap();
            let l1 = warning_line(&sc, 2.0).unwrap();
            prop_assert!((l1.threshold_raw / (l0.threshold_raw * c) - 1.0).abs() < 1e-9);
        }
    }
}
