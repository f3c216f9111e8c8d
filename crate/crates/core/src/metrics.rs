//! Revenue rates, SLA-met fractions, waiting-time histograms and Student-t
//! confidence intervals.

use serde::{Deserialize, Serialize};

use crate::domain::RevenueLedger;

/// Revenue and session counts booked inside one time bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueSample {
    pub start: f64,
    pub end: f64,
    pub revenue: f64,
    pub accepted: u64,
    pub rejected: u64,
    pub violated: u64,
}

impl RevenueSample {
    pub fn empty(start: f64, end: f64) -> Self {
        RevenueSample {
            start,
            end,
            revenue: 0.0,
            accepted: 0,
            rejected: 0,
            violated: 0,
        }
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn rate(&self) -> f64 {
        if self.width() > 0.0 {
            self.revenue / self.width()
        } else {
            0.0
        }
    }
}

/// Net revenue per second over `span`; 0 for an empty span.
pub fn revenue_rate(ledger: &RevenueLedger, span: f64) -> f64 {
    if span > 0.0 {
        ledger.revenue() / span
    } else {
        0.0
    }
}

/// Fraction of completed sessions of `class` that met their obligation.
pub fn sla_met_fraction(ledger: &RevenueLedger, class: usize) -> Option<f64> {
    let c = &ledger.classes[class];
    (c.completed > 0).then(|| c.sla_met() as f64 / c.completed as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub half_width: f64,
    pub samples: usize,
}

impl ConfidenceInterval {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lower()..=self.upper()).contains(&x)
    }
}

const T_975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131,
    2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
];

const Z_975: f64 = 1.959_964;

/// Two-sided 95% Student-t quantile for `df` degrees of freedom.
pub fn t_quantile_975(df: usize) -> f64 {
    match df {
        0 => f64::INFINITY,
        1..=30 => T_975[df - 1],
        _ => Z_975,
    }
}

/// 95% Student-t interval for the mean; `None` with fewer than two samples.
pub fn confidence_interval(samples: &[f64]) -> Option<ConfidenceInterval> {
    let n = samples.len();
    if n < 2 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half_width = t_quantile_975(n - 1) * (var / n as f64).sqrt();
    Some(ConfidenceInterval {
        mean,
        half_width,
        samples: n,
    })
}

/// Interval over the per-bucket revenue rates of one run.
///
/// Only buckets of full width are used so the trailing partial bucket does
/// not skew the estimate.
pub fn bucket_interval(ledger: &RevenueLedger) -> Option<ConfidenceInterval> {
    let width = ledger.bucket_width;
    let rates: Vec<f64> = ledger
        .buckets
        .iter()
        .filter(|b| b.width() >= width * (1.0 - 1e-9))
        .map(RevenueSample::rate)
        .collect();
    confidence_interval(&rates)
}

/// Histogram of completed-session mean waits for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitPdf {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl WaitPdf {
    pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

    pub fn from_waits(waits: &[f64], bin_width: f64) -> Self {
        let mut counts = Vec::new();
        for &w in waits {
            let bin = (w.max(0.0) / bin_width).floor() as usize;
            if bin >= counts.len() {
                counts.resize(bin + 1, 0);
            }
            counts[bin] += 1;
        }
        WaitPdf { bin_width, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(bin start, density)` pairs; densities integrate to one.
    pub fn density(&self) -> Vec<(f64, f64)> {
        let total = self.total() as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let d = if total > 0.0 { c as f64 / (total * self.bin_width) } else { 0.0 };
                (i as f64 * self.bin_width, d)
            })
            .collect()
    }

    /// Fraction of sessions whose mean wait is strictly below `x`.
    pub fn fraction_below(waits: &[f64], x: f64) -> Option<f64> {
        (!waits.is_empty()).then(|| waits.iter().filter(|&&w| w < x).count() as f64 / waits.len() as f64)
    }
}
