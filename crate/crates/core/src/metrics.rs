//! Percentage-error metrics and evaluation reports.
//!
//! For ground truth `y` and prediction `y_hat` the per-item percentage error
//! is `1 - y_hat / y`, so over-prediction is negative. MPE averages it,
//! MAPE averages its absolute value.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Property;
use crate::predictor::PredictionWitness;

pub const DEFAULT_MIN_REGION_N: usize = 100;

/// Histogram domain in percentage points; one bucket per point.
pub const HISTOGRAM_LOW: i32 = -100;
pub const HISTOGRAM_HIGH: i32 = 100;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ground truth has {truth} entries, predictions {predicted}")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("ground truth at position {0} is zero")]
    ZeroGroundTruth(usize),
    #[error("no predictions to evaluate")]
    Empty,
    #[error("no ground truth for property {0}")]
    MissingGroundTruth(u64),
}

fn check(y: &[f64], y_hat: &[f64]) -> Result<(), MetricsError> {
    if y.len() != y_hat.len() {
        return Err(MetricsError::LengthMismatch {
            truth: y.len(),
            predicted: y_hat.len(),
        });
    }
    if y.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(i) = y.iter().position(|&v| v == 0.0) {
        return Err(MetricsError::ZeroGroundTruth(i));
    }
    Ok(())
}

pub fn mpe(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricsError> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(&a, &p)| relative_error(a, p)).sum::<f64>() / y.len() as f64)
}

pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricsError> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(&a, &p)| relative_error(a, p).abs()).sum::<f64>() / y.len() as f64)
}

/// `1 - y_hat / y`, computed as `(y - y_hat) / y` so symmetric errors
/// cancel exactly.
#[inline]
pub fn relative_error(y: f64, y_hat: f64) -> f64 {
    (y - y_hat) / y
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub low: i32,
    pub high: i32,
    /// Errors below `low` percent.
    pub underflow: usize,
    /// `counts[j]` covers `[low + j, low + j + 1)` percent.
    pub counts: Vec<usize>,
    /// Errors at or above `high` percent.
    pub overflow: usize,
}

impl Default for Histogram {
    fn default() -> Self {
        Self {
            low: HISTOGRAM_LOW,
            high: HISTOGRAM_HIGH,
            underflow: 0,
            counts: vec![0; (HISTOGRAM_HIGH - HISTOGRAM_LOW) as usize],
            overflow: 0,
        }
    }
}

impl Histogram {
    pub fn add(&mut self, percent: f64) {
        let bucket = percent.floor();
        if bucket < self.low as f64 {
            self.underflow += 1;
        } else if bucket >= self.high as f64 {
            self.overflow += 1;
        } else {
            self.counts[(bucket as i32 - self.low) as usize] += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.underflow + self.overflow + self.counts.iter().sum::<usize>()
    }

    fn merge(&mut self, other: &Histogram) {
        self.underflow += other.underflow;
        self.overflow += other.overflow;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Rows of `bucket_low,bucket_high,count`, overflow rows use `-inf`/`inf`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bucket_low,bucket_high,count")?;
        writeln!(out, "-inf,{},{}", self.low, self.underflow)?;
        for (j, c) in self.counts.iter().enumerate() {
            let lo = self.low + j as i32;
            writeln!(out, "{},{},{}", lo, lo + 1, c)?;
        }
        writeln!(out, "{},inf,{}", self.high, self.overflow)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub n: usize,
    pub mape: f64,
    pub mpe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mape: f64,
    pub mpe: f64,
    pub fallback_count: usize,
    pub min_region_n: usize,
    pub per_region: BTreeMap<String, RegionStats>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Sums {
    n: usize,
    abs: f64,
    signed: f64,
}

impl Sums {
    fn add(&mut self, e: f64) {
        self.n += 1;
        self.abs += e.abs();
        self.signed += e;
    }

    fn merge(&mut self, o: &Sums) {
        self.n += o.n;
        self.abs += o.abs;
        self.signed += o.signed;
    }
}

/// Mergeable running sums behind an [`EvalReport`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalAccumulator {
    overall: Sums,
    fallback_count: usize,
    regions: BTreeMap<String, Sums>,
    histogram: Histogram,
}

impl EvalAccumulator {
    pub fn add(&mut self, truth: f64, predicted: f64, region: Option<&str>, fallback: bool) {
        let e = relative_error(truth, predicted);
        self.overall.add(e);
        if fallback {
            self.fallback_count += 1;
        }
        if let Some(r) = region {
            self.regions.entry(r.to_string()).or_default().add(e);
        }
        self.histogram.add(100.0 * e);
    }

    pub fn merge(&mut self, other: &EvalAccumulator) {
        self.overall.merge(&other.overall);
        self.fallback_count += other.fallback_count;
        for (k, v) in &other.regions {
            self.regions.entry(k.clone()).or_default().merge(v);
        }
        self.histogram.merge(&other.histogram);
    }

    pub fn finish(&self, min_region_n: usize) -> Result<EvalReport, MetricsError> {
        let n = self.overall.n;
        if n == 0 {
            return Err(MetricsError::Empty);
        }
        let per_region = self
            .regions
            .iter()
            .filter(|(_, s)| s.n >= min_region_n)
            .map(|(k, s)| {
                (
                    k.clone(),
                    RegionStats {
                        n: s.n,
                        mape: s.abs / s.n as f64,
                        mpe: s.signed / s.n as f64,
                    },
                )
            })
            .collect();
        Ok(EvalReport {
            n,
            mape: self.overall.abs / n as f64,
            mpe: self.overall.signed / n as f64,
            fallback_count: self.fallback_count,
            min_region_n,
            per_region,
            histogram: self.histogram.clone(),
        })
    }
}

/// Scores witnesses against the valued properties they predict.
pub fn evaluate(
    witnesses: &[PredictionWitness],
    ground_truth: &[Property],
    min_region_n: usize,
) -> Result<EvalReport, MetricsError> {
    let truth: HashMap<u64, &Property> = ground_truth.iter().map(|p| (p.id, p)).collect();
    let mut acc = EvalAccumulator::default();
    for w in witnesses {
        let p = truth
            .get(&w.target_id)
            .ok_or(MetricsError::MissingGroundTruth(w.target_id))?;
        let y = p.value.ok_or(MetricsError::MissingGroundTruth(w.target_id))?;
        acc.add(y, w.predicted_value, p.region.as_deref(), w.flags.fallback_used);
    }
    acc.finish(min_region_n)
}
