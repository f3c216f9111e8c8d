//! Observation-window traffic estimates.
//!
//! A window closes at every policy invocation and on a periodic timer. Each
//! class publishes fresh moments once its window holds at least two samples
//! and blends them into the previous estimate. The blend weight is `w` for a
//! window as long as the timer period and `1 − (1 − w)^(span/period)` in
//! general, so the memory of the estimator is measured in seconds rather than
//! in policy invocations. Sparse classes keep accumulating across windows;
//! after `max_stale` seconds the arrival rate is refreshed anyway so that a
//! class that went quiet decays toward zero.

use serde::{Deserialize, Serialize};

use crate::domain::{ServiceClass, TrafficEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Weight of a fresh window spanning one timer period.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    /// Period of the refresh timer, seconds.
    #[serde(default = "default_timer")]
    pub timer: f64,
    #[serde(default = "default_max_stale")]
    pub max_stale: f64,
    /// Known service means per class; replaces the estimated `b`.
    #[serde(default)]
    pub pinned_service: Option<Vec<f64>>,
}

fn default_smoothing() -> f64 {
    0.3
}

fn default_timer() -> f64 {
    10.0
}

fn default_max_stale() -> f64 {
    30.0
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            smoothing: default_smoothing(),
            timer: default_timer(),
            max_stale: default_max_stale(),
            pinned_service: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Sample scv, 0 for degenerate input.
    fn scv(&self) -> f64 {
        let n = self.count as f64;
        let mean = self.mean();
        if n < 2.0 || mean <= 0.0 {
            return 0.0;
        }
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        var / (mean * mean)
    }
}

#[derive(Debug, Clone)]
struct ClassWindow {
    start: f64,
    service_start: f64,
    arrivals: u64,
    last_arrival: Option<f64>,
    gaps: Moments,
    service: Moments,
    seen_arrivals: bool,
    seen_service: bool,
}

impl ClassWindow {
    fn new(start: f64) -> Self {
        ClassWindow {
            start,
            service_start: start,
            arrivals: 0,
            last_arrival: None,
            gaps: Moments::default(),
            service: Moments::default(),
            seen_arrivals: false,
            seen_service: false,
        }
    }
}

/// Per-class window statistics and the last published estimates.
#[derive(Debug, Clone)]
pub struct WindowAccumulator {
    config: EstimatorConfig,
    windows: Vec<ClassWindow>,
    estimates: Vec<TrafficEstimate>,
}

impl WindowAccumulator {
    pub fn new(classes: &[ServiceClass], config: EstimatorConfig) -> Self {
        let estimates = classes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut e = TrafficEstimate::prior(c.mean_service(), c.service.scv());
                if let Some(b) = config.pinned_service.as_ref().and_then(|p| p.get(i)) {
                    e.mean_service = *b;
                }
                e
            })
            .collect();
        WindowAccumulator {
            config,
            windows: vec![ClassWindow::new(0.0); classes.len()],
            estimates,
        }
    }

    /// Start from explicit estimates instead of the class priors.
    pub fn with_estimates(mut self, estimates: Vec<TrafficEstimate>) -> Self {
        assert_eq!(estimates.len(), self.estimates.len());
        self.estimates = estimates;
        self
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn record_job_arrival(&mut self, class: usize, time: f64) {
        let w = &mut self.windows[class];
        w.arrivals += 1;
        if let Some(prev) = w.last_arrival {
            w.gaps.push((time - prev).max(0.0));
        }
        w.last_arrival = Some(time);
    }

    pub fn record_service(&mut self, class: usize, duration: f64) {
        self.windows[class].service.push(duration.max(0.0));
    }

    pub fn estimates(&self) -> &[TrafficEstimate] {
        &self.estimates
    }

    /// Close the current window of every class and publish the blended estimates.
    pub fn publish_estimates(&mut self, now: f64) -> &[TrafficEstimate] {
        let period = self.config.timer;
        let keep = 1.0 - self.config.smoothing;
        let weight = |span: f64| 1.0 - keep.powf(span / period);
        let blend = |old: f64, fresh: f64, w: f64| w * fresh + (1.0 - w) * old;
        for (class, (win, est)) in self.windows.iter_mut().zip(&mut self.estimates).enumerate() {
            let span = now - win.start;
            let stale = span >= self.config.max_stale;
            if span > 0.0 && (win.arrivals >= 2 || stale) {
                let w = if win.seen_arrivals { weight(span) } else { 1.0 };
                est.arrival_rate = blend(est.arrival_rate, win.arrivals as f64 / span, w);
                if win.gaps.count >= 2 {
                    est.interarrival_scv = blend(est.interarrival_scv, win.gaps.scv(), w);
                }
                est.arrival_samples += win.arrivals;
                win.seen_arrivals |= win.arrivals > 0;
                win.start = now;
                win.arrivals = 0;
                win.gaps = Moments::default();
            }
            if win.service.count >= 2 {
                let w = if win.seen_service { weight(now - win.service_start) } else { 1.0 };
                let pinned = self.config.pinned_service.as_ref().and_then(|p| p.get(class));
                est.mean_service = match pinned {
                    Some(b) => *b,
                    None => blend(est.mean_service, win.service.mean(), w),
                };
                est.service_scv = blend(est.service_scv, win.service.scv(), w);
                est.service_samples += win.service.count;
                win.seen_service = true;
                win.service = Moments::default();
                win.service_start = now;
            }
        }
        &self.estimates
    }
}
