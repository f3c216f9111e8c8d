//! Seeded generators for session arrivals, within-session job arrivals and
//! service times.
//!
//! Every `(class, purpose)` pair draws from its own ChaCha8 stream so that
//! different policies see the same offered traffic under a common seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp};
use serde::{Deserialize, Serialize};

use crate::domain::ServiceClass;
use crate::error::{Error, Result};

/// Service-time (or spacing) distribution descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Distribution {
    Exponential {
        mean: f64,
    },
    /// Two-phase hyperexponential: with probability `p1` an exponential of
    /// mean `mean1`, otherwise (probability `p2`) of mean `mean2`.
    Hyperexponential {
        p1: f64,
        mean1: f64,
        p2: f64,
        mean2: f64,
    },
    Deterministic {
        value: f64,
    },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        match *self {
            Distribution::Exponential { mean } if !positive(mean) => Err(Error::InvalidDistribution(
                format!("exponential mean must be positive, got {mean}"),
            )),
            Distribution::Deterministic { value } if !positive(value) => Err(
                Error::InvalidDistribution(format!("deterministic value must be positive, got {value}")),
            ),
            Distribution::Hyperexponential { p1, mean1, p2, mean2 } => {
                if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) {
                    return Err(Error::InvalidDistribution(format!(
                        "branch probabilities must lie in [0, 1], got {p1} and {p2}"
                    )));
                }
                if (p1 + p2 - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidDistribution(format!(
                        "branch probabilities must sum to 1, got {}",
                        p1 + p2
                    )));
                }
                if !positive(mean1) || !positive(mean2) {
                    return Err(Error::InvalidDistribution(
                        "hyperexponential means must be positive".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Exponential { mean } => mean,
            Distribution::Hyperexponential { p1, mean1, p2, mean2 } => p1 * mean1 + p2 * mean2,
            Distribution::Deterministic { value } => value,
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            Distribution::Exponential { mean } => 2.0 * mean * mean,
            Distribution::Hyperexponential { p1, mean1, p2, mean2 } => {
                2.0 * (p1 * mean1 * mean1 + p2 * mean2 * mean2)
            }
            Distribution::Deterministic { value } => value * value,
        }
    }

    /// Squared coefficient of variation.
    pub fn scv(&self) -> f64 {
        let m = self.mean();
        (self.second_moment() - m * m) / (m * m)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Exponential { mean } => exp_sample(rng, mean),
            Distribution::Hyperexponential { p1, mean1, mean2, .. } => {
                let mean = if rng.random::<f64>() < p1 { mean1 } else { mean2 };
                exp_sample(rng, mean)
            }
            Distribution::Deterministic { value } => value,
        }
    }
}

fn exp_sample<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    // Exp::new only fails for negative rates; callers validate means first.
    let d = Exp::new(1.0 / mean).expect("positive rate");
    // Exp can return exactly 0 with vanishing probability; keep samples positive.
    d.sample(rng).max(f64::MIN_POSITIVE)
}

/// Session arrival process of a class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ArrivalProcess {
    /// Poisson sessions at the class `session_rate`.
    #[default]
    Poisson,
    /// Interrupted Poisson: arrivals at `rate_on` during exponential on
    /// periods, none during exponential off periods. When `rate_on` is omitted
    /// it is chosen so the long-run rate equals the class `session_rate`.
    OnOff {
        mean_on: f64,
        mean_off: f64,
        #[serde(default)]
        rate_on: Option<f64>,
    },
}

impl ArrivalProcess {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ArrivalProcess::Poisson => Ok(()),
            ArrivalProcess::OnOff { mean_on, mean_off, rate_on } => {
                if !(mean_on > 0.0 && mean_off > 0.0) {
                    return Err(Error::InvalidDistribution(
                        "on-off periods must have positive means".into(),
                    ));
                }
                if let Some(r) = rate_on {
                    if !(r >= 0.0 && r.is_finite()) {
                        return Err(Error::InvalidDistribution("rate_on must be nonnegative".into()));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Spacing of job submissions inside a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobSpacing {
    #[default]
    Exponential,
    /// Exactly `1/γ` between jobs.
    Deterministic,
}

#[derive(Debug, Clone, Copy)]
enum Purpose {
    Sessions = 0,
    Jobs = 1,
    Service = 2,
}

/// An independent random stream for one `(class, purpose)` pair.
pub fn substream(seed: u64, class: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class as u64 * 16 + purpose);
    rng
}

/// Sample the gap to the next job of a session of `class`.
pub fn job_interarrival<R: Rng + ?Sized>(class: &ServiceClass, spacing: JobSpacing, rng: &mut R) -> f64 {
    match spacing {
        JobSpacing::Exponential => exp_sample(rng, 1.0 / class.job_rate),
        JobSpacing::Deterministic => 1.0 / class.job_rate,
    }
}

pub fn job_service_time<R: Rng + ?Sized>(class: &ServiceClass, rng: &mut R) -> f64 {
    class.service.sample(rng)
}

#[derive(Debug, Clone)]
struct OnOffState {
    on: bool,
    phase_end: f64,
}

#[derive(Debug, Clone)]
struct ClassArrivals {
    process: ArrivalProcess,
    rate: f64,
    rng: ChaCha8Rng,
    pending: Option<f64>,
    phase: Option<OnOffState>,
}

impl ClassArrivals {
    fn new(class: &ServiceClass, seed: u64) -> Self {
        let process = class.arrivals;
        let mut rng = substream(seed, class.id, Purpose::Sessions as u64);
        let phase = match process {
            ArrivalProcess::OnOff { mean_on, mean_off, .. } => {
                let on = rng.random::<f64>() < mean_on / (mean_on + mean_off);
                let mean = if on { mean_on } else { mean_off };
                Some(OnOffState {
                    on,
                    phase_end: exp_sample(&mut rng, mean),
                })
            }
            ArrivalProcess::Poisson => None,
        };
        let mut arrivals = ClassArrivals {
            process,
            rate: class.session_rate,
            rng,
            pending: None,
            phase,
        };
        arrivals.pending = arrivals.draw(0.0);
        arrivals
    }

    fn draw(&mut self, from: f64) -> Option<f64> {
        match self.process {
            ArrivalProcess::Poisson => {
                if self.rate <= 0.0 {
                    return None;
                }
                Some(from + exp_sample(&mut self.rng, 1.0 / self.rate))
            }
            ArrivalProcess::OnOff { mean_on, mean_off, rate_on } => {
                let rate_on = rate_on.unwrap_or(self.rate * (mean_on + mean_off) / mean_on);
                if rate_on <= 0.0 {
                    return None;
                }
                let phase = self.phase.as_mut().expect("on-off phase state");
                let mut t = from;
                loop {
                    if phase.on {
                        let candidate = t + exp_sample(&mut self.rng, 1.0 / rate_on);
                        if candidate <= phase.phase_end {
                            return Some(candidate);
                        }
                        t = phase.phase_end;
                        phase.on = false;
                        phase.phase_end = t + exp_sample(&mut self.rng, mean_off);
                    } else {
                        t = phase.phase_end;
                        phase.on = true;
                        phase.phase_end = t + exp_sample(&mut self.rng, mean_on);
                    }
                }
            }
        }
    }
}

/// Merged session arrival stream over all classes.
#[derive(Debug, Clone)]
pub struct SessionArrivalStream {
    classes: Vec<ClassArrivals>,
}

impl SessionArrivalStream {
    pub fn new(classes: &[ServiceClass], seed: u64) -> Self {
        let classes = classes.iter().map(|c| ClassArrivals::new(c, seed)).collect();
        SessionArrivalStream { classes }
    }

    /// Earliest pending arrival strictly after `now`, consuming it.
    ///
    /// Returns `None` once no class can ever produce another session.
    pub fn next_session_arrival(&mut self, now: f64) -> Option<(usize, f64)> {
        loop {
            let (class, time) = self
                .classes
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.pending.map(|t| (i, t)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))?;
            let arrivals = &mut self.classes[class];
            arrivals.pending = arrivals.draw(time);
            if time > now {
                return Some((class, time));
            }
        }
    }
}

/// Per-class job spacing and service-time streams.
#[derive(Debug, Clone)]
pub struct JobStreams {
    spacing: Vec<ChaCha8Rng>,
    service: Vec<ChaCha8Rng>,
}

impl JobStreams {
    pub fn new(classes: usize, seed: u64) -> Self {
        JobStreams {
            spacing: (0..classes).map(|i| substream(seed, i, Purpose::Jobs as u64)).collect(),
            service: (0..classes).map(|i| substream(seed, i, Purpose::Service as u64)).collect(),
        }
    }

    pub fn interarrival(&mut self, class: &ServiceClass, spacing: JobSpacing) -> f64 {
        job_interarrival(class, spacing, &mut self.spacing[class.id])
    }

    pub fn service_time(&mut self, class: &ServiceClass) -> f64 {
        job_service_time(class, &mut self.service[class.id])
    }
}
