//! Crowd-anomaly early warning from hourly map-query and positioning counts.
//!
//! The pipeline fits log-normal warning lines on daily peaks, raises alerts
//! when the query count crosses its line, scores those alerts against
//! positioning exceedances a few hours later, measures how far the query
//! signal leads, and trains a boosted-tree model for next-hour positioning.
//! A seeded simulator provides data with known ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod detector;
pub mod error;
pub mod features;
pub mod gbdt;
pub mod lag;
pub mod series;
pub mod sim;
pub mod stats;
pub mod warning;

pub use error::{Error, Result};
pub use series::{HourTimestamp, HourlySeries, PoiSeries, Signal};
