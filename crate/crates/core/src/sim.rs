//! Seeded generator for multi-POI query/positioning series with injected
//! crowd events.
//!
//! Expected positioning per hour is `base * profile[hour] * weekday_factor`,
//! multiplied during events. Expected query mixes the event-free positioning
//! rate `lead` hours ahead with the current one:
//! `coupling * rate(t + lead) + (1 - coupling) * rate(t)`, and is multiplied
//! during the window that starts `lead` hours before each event.
//!
//! Randomness: each POI `i` gets its own ChaCha8 stream seeded with
//! `seed + i` (rand_core `seed_from_u64`). Per hour, the positioning count is
//! drawn before the query count. Uniforms take the top 53 bits of `next_u64`.
//! Poisson draws use multiplication of uniforms for rates below 10 and the
//! PTRS transformed-rejection method (Hörmann, 1993) otherwise. Changing any
//! of this changes every pinned output.

use std::io::Write;

use chrono::{Datelike, NaiveDate};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{CsvRow, HourTimestamp};

const DEFAULT_POI_NAMES: [&str; 6] = [
    "bund",
    "stadium",
    "bay_sports_center",
    "forbidden_city",
    "national_stadium",
    "workers_stadium",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Poisson,
    /// Expected counts rounded to the nearest integer.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub day_index: usize,
    pub event_hour: u32,
    pub positioning_multiplier: f64,
    pub query_multiplier: f64,
    pub duration_hours: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub poi_count: usize,
    pub days: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub daily_profile: Vec<f64>,
    /// Monday first.
    pub weekday_factors: Vec<f64>,
    pub base_positioning_level: f64,
    pub query_coupling: f64,
    pub query_lead_hours: usize,
    pub events: Vec<EventSpec>,
    pub noise_model: NoiseModel,
}

/// Evening-peaked profile: a floor of 0.1 plus a bump centred on 20:00.
pub fn default_profile() -> Vec<f64> {
    (0..24)
        .map(|h: i32| {
            let d = (h - 20).rem_euclid(24).min((20 - h).rem_euclid(24)) as f64;
            0.1 + 0.9 * (-(d * d) / (2.0 * 1.5 * 1.5)).exp()
        })
        .collect()
}

impl Default for SimConfig {
    /// One POI, 120 days, six evening events with a two-hour query lead.
    fn default() -> Self {
        SimConfig {
            poi_count: 1,
            days: 120,
            seed: 42,
            start_date: NaiveDate::from_ymd_opt(2014, 9, 1).unwrap(),
            daily_profile: default_profile(),
            weekday_factors: vec![1.0, 1.0, 1.0, 1.05, 1.15, 1.3, 1.25],
            base_positioning_level: 2000.0,
            query_coupling: 0.8,
            query_lead_hours: 2,
            events: [15, 32, 49, 66, 83, 100]
                .into_iter()
                .map(|day_index| EventSpec {
                    day_index,
                    event_hour: 20,
                    positioning_multiplier: 8.0,
                    query_multiplier: 10.0,
                    duration_hours: 3,
                })
                .collect(),
            noise_model: NoiseModel::Poisson,
        }
    }
}

impl SimConfig {
    pub fn flagship(seed: u64) -> Self {
        SimConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn poi_ids(&self) -> Vec<String> {
        (0..self.poi_count)
            .map(|i| match DEFAULT_POI_NAMES.get(i) {
                Some(name) => name.to_string(),
                None => format!("poi_{i}"),
            })
            .collect()
    }

    pub fn start(&self) -> HourTimestamp {
        HourTimestamp::new(self.start_date, 0).expect("midnight is valid")
    }

    fn event_onset(&self, e: &EventSpec) -> usize {
        e.day_index * 24 + e.event_hour as usize
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.poi_count == 0 || self.days == 0 {
            return err("poi_count and days must be positive".into());
        }
        if self.daily_profile.len() != 24 || self.daily_profile.iter().any(|v| !(*v >= 0.0)) {
            return err("daily_profile needs 24 non-negative values".into());
        }
        if self.weekday_factors.len() != 7 || self.weekday_factors.iter().any(|v| !(*v >= 0.0)) {
            return err("weekday_factors needs 7 non-negative values".into());
        }
        if !(self.base_positioning_level >= 0.0) || !self.base_positioning_level.is_finite() {
            return err("base_positioning_level must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.query_coupling) {
            return err("query_coupling must lie in [0, 1]".into());
        }
        if self.query_lead_hours < 1 {
            return err("query_lead_hours must be at least 1".into());
        }
        let hours = self.days * 24;
        for (i, e) in self.events.iter().enumerate() {
            if e.event_hour > 23 {
                return err(format!(
                    "event {i}: event_hour {} outside 0..=23",
                    e.event_hour
                ));
            }
            if !(e.positioning_multiplier >= 1.0) || !(e.query_multiplier >= 1.0) {
                return err(format!("event {i}: multipliers must be >= 1"));
            }
            if e.duration_hours == 0 {
                return err(format!("event {i}: duration_hours must be positive"));
            }
            let onset = self.event_onset(e);
            if onset < self.query_lead_hours || onset + e.duration_hours > hours {
                return err(format!(
                    "event {i}: day {} hour {} (with lead and duration) is outside the simulated range",
                    e.day_index, e.event_hour
                ));
            }
        }
        Ok(())
    }

    fn baseline(&self, hour_index: usize) -> f64 {
        let ts = self.start() + hour_index as i64;
        let wd = ts.date().weekday().num_days_from_monday() as usize;
        self.base_positioning_level
            * self.daily_profile[ts.hour() as usize]
            * self.weekday_factors[wd]
    }

    /// Expected `(query, positioning)` counts per hour. Identical for every POI.
    pub fn expected_rates(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        let hours = self.days * 24;
        let lead = self.query_lead_hours;
        let c = self.query_coupling;
        let mut positioning: Vec<f64> = (0..hours).map(|t| self.baseline(t)).collect();
        let mut query: Vec<f64> = (0..hours)
            .map(|t| c * self.baseline(t + lead) + (1.0 - c) * self.baseline(t))
            .collect();
        for e in &self.events {
            let onset = self.event_onset(e);
            for t in onset..onset + e.duration_hours {
                positioning[t] *= e.positioning_multiplier;
                query[t - lead] *= e.query_multiplier;
            }
        }
        Ok((query, positioning))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EventRecord {
    pub poi_id: String,
    /// Onset of the positioning surge.
    pub timestamp: HourTimestamp,
    pub lead_hours: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimOutput {
    /// Sorted by POI id, then time.
    pub rows: Vec<CsvRow>,
    pub events: Vec<EventRecord>,
}

impl SimOutput {
    pub fn write_events<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["poi_id", "timestamp", "lead_hours"])?;
        for e in &self.events {
            wtr.write_record([
                e.poi_id.clone(),
                e.timestamp.to_string(),
                e.lead_hours.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Midnight of the latest event day that still leaves a full training window
/// (plus one week of feature history) after `series_start`.
pub fn evaluation_split(
    events: &[EventRecord],
    series_start: HourTimestamp,
) -> Option<HourTimestamp> {
    let needed = crate::features::TRAIN_WINDOW_DAYS * 24 + crate::features::MAX_HISTORY_HOURS;
    events
        .iter()
        .map(|e| e.timestamp.day_start())
        .filter(|&day| day - series_start >= needed)
        .max()
}

pub fn generate(cfg: &SimConfig) -> Result<SimOutput> {
    let (query_rate, positioning_rate) = cfg.expected_rates()?;
    let start = cfg.start();
    let mut rows = Vec::with_capacity(cfg.poi_count * query_rate.len());
    let mut events = Vec::new();
    for (i, poi_id) in cfg.poi_ids().into_iter().enumerate() {
        let mut rng = SimRng::new(cfg.seed.wrapping_add(i as u64));
        for (t, (&lq, &lp)) in query_rate.iter().zip(&positioning_rate).enumerate() {
            let positioning_count = rng.draw(lp, cfg.noise_model);
            let query_count = rng.draw(lq, cfg.noise_model);
            rows.push(CsvRow {
                poi_id: poi_id.clone(),
                timestamp: start + t as i64,
                query_count,
                positioning_count,
            });
        }
        for e in &cfg.events {
            events.push(EventRecord {
                poi_id: poi_id.clone(),
                timestamp: start + cfg.event_onset(e) as i64,
                lead_hours: cfg.query_lead_hours,
            });
        }
    }
    rows.sort_by(|a, b| a.poi_id.cmp(&b.poi_id).then(a.timestamp.cmp(&b.timestamp)));
    events.sort_by(|a, b| a.poi_id.cmp(&b.poi_id).then(a.timestamp.cmp(&b.timestamp)));
    Ok(SimOutput { rows, events })
}

/// Deterministic uniform and Poisson draws over ChaCha8.
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn draw(&mut self, rate: f64, noise: NoiseModel) -> u64 {
        match noise {
            NoiseModel::Poisson => self.poisson(rate),
            NoiseModel::None => rate.round() as u64,
        }
    }

    pub fn poisson(&mut self, rate: f64) -> u64 {
        if !(rate > 0.0) {
            return 0;
        }
        if rate < 10.0 {
            self.poisson_mult(rate)
        } else {
            self.poisson_ptrs(rate)
        }
    }

    fn poisson_mult(&mut self, rate: f64) -> u64 {
        let limit = (-rate).exp();
        let mut k = 0;
        let mut prod = self.uniform();
        while prod > limit {
            k += 1;
            prod *= self.uniform();
        }
        k
    }

    fn poisson_ptrs(&mut self, rate: f64) -> u64 {
        let slam = rate.sqrt();
        let loglam = rate.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let vr = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
            if us >= 0.07 && v <= vr {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
            let rhs = -rate + k * loglam - ln_factorial(k as u64);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}

/// `ln(k!)`: exact sums below 16, Stirling series above.
pub fn ln_factorial(k: u64) -> f64 {
    if k < 16 {
        return (2..=k).map(|i| (i as f64).ln()).sum();
    }
    let x = k as f64 + 1.0;
    let x2 = x * x;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x * x2)
        + 1.0 / (1260.0 * x * x2 * x2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::write_rows;

    #[test]
    fn default_is_the_flagship_fixture() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.poi_ids(), vec!["bund"]);
        assert_eq!(
            (cfg.days, cfg.events.len(), cfg.query_lead_hours),
            (120, 6, 2)
        );
        assert!(cfg
            .events
            .iter()
            .all(|e| e.positioning_multiplier == 8.0 && e.query_multiplier == 10.0));
        let profile = default_profile();
        let peak = (0..24)
            .max_by(|&a, &b| profile[a].total_cmp(&profile[b]))
            .unwrap();
        assert_eq!(peak, 20);
    }

    #[test]
    fn zero_noise_query_is_shifted_positioning() {
        let cfg = SimConfig {
            daily_profile: vec![1.0; 24],
            weekday_factors: (1..=7).map(f64::from).collect(),
            query_coupling: 1.0,
            query_lead_hours: 3,
            events: vec![EventSpec {
                day_index: 5,
                event_hour: 12,
                positioning_multiplier: 1.0,
                query_multiplier: 1.0,
                duration_hours: 4,
            }],
            noise_model: NoiseModel::None,
            days: 20,
            ..SimConfig::default()
        };
        let (q, p) = cfg.expected_rates().unwrap();
        for t in 0..q.len() - 3 {
            assert_eq!(q[t], p[t + 3]);
        }
        let out = generate(&cfg).unwrap();
        for t in 0..out.rows.len() - 3 {
            assert_eq!(out.rows[t].query_count, out.rows[t + 3].positioning_count);
        }
    }

    #[test]
    fn events_boost_with_lead() {
        let cfg = SimConfig::default();
        let (q, p) = cfg.expected_rates().unwrap();
        let plain = SimConfig {
            events: vec![],
            ..SimConfig::default()
        };
        let (q0, p0) = plain.expected_rates().unwrap();
        let onset = 15 * 24 + 20;
        assert_eq!(p[onset], 8.0 * p0[onset]);
        assert_eq!(p[onset - 1], p0[onset - 1]);
        assert_eq!(q[onset - 2], 10.0 * q0[onset - 2]);
        assert_eq!(q[onset - 3], q0[onset - 3]);
        assert_eq!(q[onset + 1], q0[onset + 1]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SimConfig {
            poi_count: 3,
            days: 30,
            events: vec![],
            ..SimConfig::default()
        };
        let bytes = |cfg: &SimConfig| {
            let out = generate(cfg).unwrap();
            let mut buf = Vec::new();
            write_rows(&mut buf, &out.rows).unwrap();
            out.write_events(&mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(&cfg), bytes(&cfg));
        let other = SimConfig {
            seed: 7,
            ..cfg.clone()
        };
        assert_ne!(bytes(&cfg), bytes(&other));
    }

    #[test]
    fn ground_truth_lists_configured_events() {
        let cfg = SimConfig {
            poi_count: 2,
            ..SimConfig::default()
        };
        let out = generate(&cfg).unwrap();
        assert_eq!(out.events.len(), 12);
        let bund: Vec<_> = out.events.iter().filter(|e| e.poi_id == "bund").collect();
        assert_eq!(bund[0].timestamp.to_string(), "2014-09-16T20:00");
        assert!(bund.iter().all(|e| e.lead_hours == 2));
    }

    #[test]
    fn out_of_range_events_rejected() {
        for (day, hour) in [(120, 0), (119, 23), (0, 1)] {
            let cfg = SimConfig {
                events: vec![EventSpec {
                    day_index: day,
                    event_hour: hour,
                    positioning_multiplier: 2.0,
                    query_multiplier: 2.0,
                    duration_hours: 3,
                }],
                ..SimConfig::default()
            };
            assert!(
                matches!(generate(&cfg), Err(Error::Config(_))),
                "{day} {hour}"
            );
        }
    }

    #[test]
    fn ln_factorial_matches_direct_sum() {
        for k in [16u64, 20, 50, 200, 1000] {
            let direct: f64 = (2..=k).map(|i| (i as f64).ln()).sum();
            assert!((ln_factorial(k) - direct).abs() < 1e-9 * direct, "{k}");
        }
    }

    #[test]
    fn poisson_moments() {
        for rate in [0.5, 4.0, 30.0, 2000.0] {
            let mut rng = SimRng::new(11);
            let n = 20_000;
            let draws: Vec<f64> = (0..n).map(|_| rng.poisson(rate) as f64).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
            let se = (rate / n as f64).sqrt();
            assert!((mean - rate).abs() < 5.0 * se, "rate {rate}: mean {mean}");
            assert!((var / rate - 1.0).abs() < 0.1, "rate {rate}: var {var}");
        }
    }
}
