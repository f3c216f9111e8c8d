//! Analytic toolkit: Erlang formulas, the session-average waiting-time tail
//! and the revenue model behind the threshold admission policy.
//!
//! # Session-average waiting-time tail
//!
//! [`mean_wait_exceedance`] returns the probability that the average of `k`
//! consecutive waiting times in a stationary FIFO M/M/n queue exceeds `x`.
//! Consecutive waits are strongly correlated near saturation, so the tail is
//! computed from the Markov chain of the number in system seen by arrivals:
//!
//! * the wait of an arrival that finds `j >= n` jobs is Erlang with
//!   `j - n + 1` phases of rate `n/b`, independent of everything else given `j`;
//! * the state seen by the next arrival depends on the past only through the
//!   current state, so the first two moments of the sum of `k` waits and the
//!   probability that all `k` waits are zero follow from `k` backward passes
//!   over a truncated state space.
//!
//! States are pooled into a handful of buckets of similar stationary mass and
//! the conditional sum within each bucket is approximated by a zero-inflated
//! gamma with matching moments. For G/G/n inputs every wait is scaled by the
//! two-moment factor `(ca² + cs²)/2`.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, LazyLock, RwLock};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::domain::{ServiceClass, TrafficEstimate};

/// Blocking probability of an `servers`-circuit loss system offered `load` erlangs.
pub fn erlang_b(servers: usize, load: f64) -> f64 {
    if load <= 0.0 {
        return if servers == 0 { 1.0 } else { 0.0 };
    }
    let mut b = 1.0;
    for k in 1..=servers {
        b = load * b / (k as f64 + load * b);
    }
    b
}

/// Probability that an arriving job waits in M/M/n; 1 when the queue is unstable.
pub fn erlang_c(servers: usize, load: f64) -> f64 {
    if load <= 0.0 {
        return 0.0;
    }
    let n = servers as f64;
    if load >= n {
        return 1.0;
    }
    let b = erlang_b(servers, load);
    n * b / (n - load * (1.0 - b))
}

/// Rejection probability of a session threshold `threshold` under session load `load`.
pub fn threshold_blocking(threshold: u32, load: f64) -> f64 {
    erlang_b(threshold as usize, load)
}

/// Traffic offered to one server pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueRegime {
    pub arrival_rate: f64,
    pub mean_service: f64,
    pub servers: usize,
    pub interarrival_scv: f64,
    pub service_scv: f64,
}

impl QueueRegime {
    pub fn markovian(arrival_rate: f64, mean_service: f64, servers: usize) -> Self {
        QueueRegime {
            arrival_rate,
            mean_service,
            servers,
            interarrival_scv: 1.0,
            service_scv: 1.0,
        }
    }

    pub fn from_estimate(est: &TrafficEstimate, arrival_rate: f64, servers: usize) -> Self {
        QueueRegime {
            arrival_rate,
            mean_service: est.mean_service,
            servers,
            interarrival_scv: est.interarrival_scv,
            service_scv: est.service_scv,
        }
    }

    pub fn offered_load(&self) -> f64 {
        self.arrival_rate * self.mean_service
    }

    pub fn is_saturated(&self) -> bool {
        self.arrival_rate > 0.0 && self.offered_load() >= self.servers as f64
    }

    /// Two-moment scaling applied to every waiting time.
    fn wait_scale(&self) -> f64 {
        let s = 0.5 * (self.interarrival_scv + self.service_scv);
        if s.is_finite() && s > 0.0 {
            s
        } else {
            1.0
        }
    }

    /// Stationary delay probability.
    pub fn delay_probability(&self) -> f64 {
        erlang_c(self.servers, self.offered_load())
    }

    /// Mean stationary waiting time.
    pub fn mean_wait(&self) -> f64 {
        if self.arrival_rate <= 0.0 {
            return 0.0;
        }
        if self.is_saturated() {
            return f64::INFINITY;
        }
        let decay = self.servers as f64 / self.mean_service - self.arrival_rate;
        self.wait_scale() * self.delay_probability() / decay
    }

    /// `P(mean of k consecutive waits > x)`.
    pub fn mean_wait_exceedance(&self, x: f64, jobs: u32) -> f64 {
        self.tail_profile(jobs).exceedance(x, jobs)
    }

    /// Precompute the tail for every session length up to `max_jobs`.
    pub fn tail_profile(&self, max_jobs: u32) -> WaitTailProfile {
        WaitTailProfile::new(self, max_jobs)
    }
}

/// Probability that the average of `jobs` consecutive waits exceeds `x`.
///
/// Total on its domain: 1 for unstable pools and negative thresholds, 0 when
/// nothing arrives.
pub fn mean_wait_exceedance(
    x: f64,
    arrival_rate: f64,
    jobs: u32,
    servers: usize,
    mean_service: f64,
    interarrival_scv: f64,
    service_scv: f64,
) -> f64 {
    QueueRegime {
        arrival_rate,
        mean_service,
        servers,
        interarrival_scv,
        service_scv,
    }
    .mean_wait_exceedance(x, jobs)
}

/// Memo of normalized tail profiles for repeated evaluation inside policies.
///
/// Waiting times scale with `b·(ca² + cs²)/2`, so a profile depends only on
/// the load and the server count. Profiles are kept on a grid that is uniform
/// in `−ln(1 − ρ/n)`, fine near saturation where the tail is most sensitive,
/// and interpolated linearly in between.
///
/// Profiles are pure functions of their grid cell, so they are shared by
/// every cache in the process.
#[derive(Debug, Clone)]
pub struct TailCache {
    step: f64,
    max_jobs: u32,
    profiles: HashMap<(usize, i64), Arc<WaitTailProfile>>,
    misses: u64,
}

type SharedKey = (usize, i64, u32, u64);

static SHARED: LazyLock<RwLock<HashMap<SharedKey, Arc<WaitTailProfile>>>> = LazyLock::new(Default::default);

impl TailCache {
    pub const DEFAULT_STEP: f64 = 0.02;
    const CAPACITY: usize = 16_384;

    pub fn new(max_jobs: u32) -> Self {
        Self::with_step(max_jobs, Self::DEFAULT_STEP)
    }

    pub fn with_step(max_jobs: u32, step: f64) -> Self {
        TailCache {
            step,
            max_jobs: max_jobs.max(1),
            profiles: HashMap::new(),
            misses: 0,
        }
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    /// Cached counterpart of [`QueueRegime::mean_wait_exceedance`].
    pub fn exceedance(&mut self, regime: &QueueRegime, x: f64, jobs: u32) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        if regime.arrival_rate <= 0.0 {
            return 0.0;
        }
        if regime.servers == 0 || regime.is_saturated() {
            return 1.0;
        }
        let n = regime.servers;
        let util = regime.offered_load() / n as f64;
        let pos = -(-util).ln_1p() / self.step;
        let lower = pos.floor() as i64;
        let frac = pos - lower as f64;
        let x = x / (regime.mean_service * regime.wait_scale());
        let lo = self.cell(n, lower, x, jobs);
        if frac == 0.0 {
            return lo;
        }
        let hi = self.cell(n, lower + 1, x, jobs);
        lo + frac * (hi - lo)
    }

    fn cell(&mut self, servers: usize, cell: i64, x: f64, jobs: u32) -> f64 {
        if cell <= 0 {
            return 0.0;
        }
        let load = snap_load(servers, cell, self.step);
        if jobs > self.max_jobs {
            return QueueRegime::markovian(load, 1.0, servers).mean_wait_exceedance(x, jobs);
        }
        if let Some(p) = self.profiles.get(&(servers, cell)) {
            return p.exceedance(x, jobs);
        }
        let key = (servers, cell, self.max_jobs, self.step.to_bits());
        let shared = SHARED.read().unwrap_or_else(|e| e.into_inner()).get(&key).cloned();
        let profile = match shared {
            Some(p) => p,
            None => {
                self.misses += 1;
                let p = Arc::new(QueueRegime::markovian(load, 1.0, servers).tail_profile(self.max_jobs));
                let mut map = SHARED.write().unwrap_or_else(|e| e.into_inner());
                if map.len() >= Self::CAPACITY {
                    map.clear();
                }
                map.entry(key).or_insert(p).clone()
            }
        };
        if self.profiles.len() >= Self::CAPACITY {
            self.profiles.clear();
        }
        let value = profile.exceedance(x, jobs);
        self.profiles.insert((servers, cell), profile);
        value
    }
}

fn snap_load(servers: usize, cell: i64, step: f64) -> f64 {
    servers as f64 * -(-(cell as f64) * step).exp_m1()
}

const STATE_TAIL_MASS: f64 = 1e-11;
const MAX_STATES: usize = 4_000;
const BUCKETS: usize = 8;

#[derive(Debug, Clone, Copy, Default)]
struct BucketMoments {
    /// Σ π_j P(all waits zero | j)
    zero: f64,
    /// Σ π_j E[S | j]
    first: f64,
    /// Σ π_j E[S² | j]
    second: f64,
}

#[derive(Debug, Clone)]
enum ProfileKind {
    Never,
    Always,
    Stable {
        delay: f64,
        decay: f64,
        masses: Vec<f64>,
        /// `moments[m - 1][bucket]` for sessions of `m` jobs.
        moments: Vec<Vec<BucketMoments>>,
    },
}

/// Session-average waiting-time tail of one regime for all lengths up to a maximum.
#[derive(Debug, Clone)]
pub struct WaitTailProfile {
    kind: ProfileKind,
    scale: f64,
    max_jobs: u32,
}

impl WaitTailProfile {
    fn new(regime: &QueueRegime, max_jobs: u32) -> Self {
        let scale = regime.wait_scale();
        let kind = if regime.arrival_rate <= 0.0 {
            ProfileKind::Never
        } else if regime.servers == 0 || regime.is_saturated() {
            ProfileKind::Always
        } else {
            stable_profile(regime, max_jobs.max(1))
        };
        WaitTailProfile {
            kind,
            scale,
            max_jobs,
        }
    }

    pub fn max_jobs(&self) -> u32 {
        self.max_jobs
    }

    /// `P(mean of jobs waits > x)`. Panics if `jobs` exceeds the profiled maximum.
    pub fn exceedance(&self, x: f64, jobs: u32) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        match &self.kind {
            ProfileKind::Never => 0.0,
            ProfileKind::Always => 1.0,
            ProfileKind::Stable {
                delay,
                decay,
                masses,
                moments,
            } => {
                let jobs = jobs.max(1);
                let y = x / self.scale;
                if jobs == 1 {
                    return (delay * (-decay * y).exp()).clamp(0.0, 1.0);
                }
                assert!(jobs <= self.max_jobs, "profile holds up to {} jobs", self.max_jobs);
                let total = f64::from(jobs) * y;
                let p: f64 = masses
                    .iter()
                    .zip(&moments[jobs as usize - 1])
                    .map(|(&mass, m)| zero_inflated_gamma_tail(mass, m, total))
                    .sum();
                p.clamp(0.0, 1.0)
            }
        }
    }
}

fn zero_inflated_gamma_tail(mass: f64, m: &BucketMoments, y: f64) -> f64 {
    let positive = mass - m.zero;
    if positive <= mass * 1e-14 || m.first <= 0.0 {
        return 0.0;
    }
    let mean = m.first / positive;
    let var = m.second / positive - mean * mean;
    if var <= 1e-12 * mean * mean {
        return if mean > y { positive } else { 0.0 };
    }
    if y <= 0.0 {
        return positive;
    }
    let shape = mean * mean / var;
    let rate = mean / var;
    positive * gamma_ur(shape, rate * y)
}

fn stable_profile(regime: &QueueRegime, max_jobs: u32) -> ProfileKind {
    let n = regime.servers;
    let nf = n as f64;
    let lam = regime.arrival_rate;
    let b = regime.mean_service;
    let mu = 1.0 / b;
    let load = lam * b;
    let util = load / nf;

    // Stationary distribution of the number in system (seen by arrivals).
    let mut pi = Vec::with_capacity(n + 64);
    let mut term = 1.0_f64;
    let mut total = 0.0;
    let mut j = 0usize;
    loop {
        pi.push(term);
        total += term;
        j += 1;
        term *= if j <= n { load / j as f64 } else { util };
        if (j > n && term < STATE_TAIL_MASS * total) || j >= MAX_STATES {
            break;
        }
    }
    // Two spare states so the arrival shift stays inside the truncation.
    let states = pi.len() + 2;
    pi.resize(states, 0.0);
    for p in &mut pi {
        *p /= total;
    }

    let phase = b / nf;
    let wait_mean: Vec<f64> = (0..states)
        .map(|j| if j >= n { (j - n + 1) as f64 * phase } else { 0.0 })
        .collect();
    let wait_second: Vec<f64> = (0..states)
        .map(|j| {
            if j >= n {
                let r = (j - n + 1) as f64;
                r * (r + 1.0) * phase * phase
            } else {
                0.0
            }
        })
        .collect();
    let death: Vec<f64> = (0..states).map(|l| l.min(n) as f64 * mu).collect();
    let inv: Vec<f64> = death.iter().map(|d| 1.0 / (lam + d)).collect();

    // u = (λI − Q)^{-1} v for the pure-death generator Q.
    let resolvent = |v: &[f64], u: &mut [f64]| {
        u[0] = v[0] / lam;
        for l in 1..states {
            u[l] = (v[l] + death[l] * u[l - 1]) * inv[l];
        }
    };
    let busy_rate = nf * mu;
    let p_arrival = lam / (lam + busy_rate);
    let p_departure = busy_rate / (lam + busy_rate);

    let mut buckets = vec![0usize; states];
    {
        let mut bucket = 0usize;
        let mut filled = 0.0;
        let per = 1.0 / BUCKETS as f64;
        for (j, slot) in buckets.iter_mut().enumerate() {
            *slot = bucket;
            filled += pi[j];
            if j + 1 == n || (j >= n && filled >= per) {
                bucket += 1;
                filled = 0.0;
            }
        }
    }
    let bucket_count = buckets[states - 1] + 1;
    let mut masses = vec![0.0; bucket_count];
    for j in 0..states {
        masses[buckets[j]] += pi[j];
    }

    let mut mean_sum = wait_mean.clone();
    let mut second_sum = wait_second.clone();
    let mut all_zero: Vec<f64> = (0..states).map(|j| if j < n { 1.0 } else { 0.0 }).collect();
    let mut u = vec![0.0; states];
    let mut next_mean = vec![0.0; states];
    let mut next_second = vec![0.0; states];
    let mut next_zero = vec![0.0; states];

    let collect = |zero: &[f64], first: &[f64], second: &[f64]| {
        let mut out = vec![BucketMoments::default(); bucket_count];
        for j in 0..states {
            let m = &mut out[buckets[j]];
            m.zero += pi[j] * zero[j];
            m.first += pi[j] * first[j];
            m.second += pi[j] * second[j];
        }
        out
    };

    let mut moments = Vec::with_capacity(max_jobs as usize);
    moments.push(collect(&all_zero, &mean_sum, &second_sum));
    for _ in 2..=max_jobs {
        // Expectation one arrival ahead: (P v)(j) = λ·u(j+1).
        let shift = |u: &[f64], j: usize| lam * u[(j + 1).min(states - 1)];

        // Cross term E[W_0 · E[S'|N_1] | N_0 = j] along the diagonal l = n + r.
        resolvent(&mean_sum, &mut u);
        let mut cross = vec![0.0; states];
        let mut prev = 0.0;
        for r in 1..states.saturating_sub(n) {
            let l = n + r;
            let cur = lam * u[l] / (lam + busy_rate)
                + p_arrival * mean_sum[l] * r as f64 * phase
                + p_departure * prev;
            cross[l - 1] = cur;
            prev = cur;
        }
        for j in 0..states {
            next_mean[j] = wait_mean[j] + shift(&u, j);
        }

        resolvent(&second_sum, &mut u);
        for j in 0..states {
            next_second[j] = wait_second[j] + 2.0 * cross[j] + shift(&u, j);
        }

        resolvent(&all_zero, &mut u);
        for j in 0..states {
            next_zero[j] = if j < n { shift(&u, j) } else { 0.0 };
        }

        std::mem::swap(&mut mean_sum, &mut next_mean);
        std::mem::swap(&mut second_sum, &mut next_second);
        std::mem::swap(&mut all_zero, &mut next_zero);
        moments.push(collect(&all_zero, &mean_sum, &second_sum));
    }

    ProfileKind::Stable {
        delay: erlang_c(n, load),
        decay: nf / b - lam,
        masses,
        moments,
    }
}

/// Admission threshold on concurrently active sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Threshold {
    Finite(u32),
    Unbounded,
}

impl Threshold {
    pub fn admits(&self, active: usize) -> bool {
        match *self {
            Threshold::Finite(m) => active < m as usize,
            Threshold::Unbounded => true,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Finite(m) => write!(f, "{m}"),
            Threshold::Unbounded => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSearch {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_threshold")]
    pub max_threshold: u32,
    #[serde(default)]
    pub load: ThresholdLoad,
}

/// Job rate used for the penalty term of a candidate threshold `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdLoad {
    /// Mean number of active sessions of the loss system, times `γ`.
    MeanActive,
    /// All `M` sessions active, `M·γ`.
    #[default]
    Full,
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_max_threshold() -> u32 {
    1000
}

impl Default for ThresholdSearch {
    fn default() -> Self {
        ThresholdSearch {
            epsilon: default_epsilon(),
            max_threshold: default_max_threshold(),
            load: ThresholdLoad::default(),
        }
    }
}

/// Revenue rate of one class when at most `threshold` sessions may be active.
///
/// Sessions form a loss system with holding time `k/γ` that sets the
/// admission rate. The job rate behind the penalty term depends on `load`.
pub fn threshold_revenue(
    class: &ServiceClass,
    est: &TrafficEstimate,
    threshold: u32,
    servers: usize,
    load: ThresholdLoad,
) -> f64 {
    let mut exact = |r: &QueueRegime, x: f64, k: u32| r.mean_wait_exceedance(x, k);
    threshold_revenue_parts(class, est, threshold, servers, load, &mut exact).0
}

fn threshold_revenue_parts(
    class: &ServiceClass,
    est: &TrafficEstimate,
    threshold: u32,
    servers: usize,
    model: ThresholdLoad,
    tail: &mut impl FnMut(&QueueRegime, f64, u32) -> f64,
) -> (f64, f64) {
    let load = class.session_load();
    let blocking = threshold_blocking(threshold, load);
    let admitted = class.session_rate * (1.0 - blocking);
    let active = match model {
        ThresholdLoad::MeanActive => load * (1.0 - blocking),
        ThresholdLoad::Full => f64::from(threshold),
    };
    let regime = QueueRegime::from_estimate(est, active * class.job_rate, servers);
    let p = tail(&regime, class.obligation, class.jobs_per_session);
    (admitted * (class.charge - class.penalty * p), p)
}

/// Sequential search for the revenue-maximizing threshold.
///
/// Walks `M = 1, 2, …` and stops at the first `M` whose successor does not
/// improve revenue by at least `epsilon`. If that happens while the penalty
/// probability is still zero, admitting more sessions costs nothing and the
/// threshold is unbounded; the same holds when revenue is still rising at
/// `max_threshold`.
pub fn find_threshold(class: &ServiceClass, est: &TrafficEstimate, servers: usize, search: &ThresholdSearch) -> Threshold {
    let mut exact = |r: &QueueRegime, x: f64, k: u32| r.mean_wait_exceedance(x, k);
    search_threshold(class, est, servers, search, &mut exact)
}

/// [`find_threshold`] with tail evaluations served from `cache`.
pub fn find_threshold_cached(
    class: &ServiceClass,
    est: &TrafficEstimate,
    servers: usize,
    search: &ThresholdSearch,
    cache: &mut TailCache,
) -> Threshold {
    let mut cached = |r: &QueueRegime, x: f64, k: u32| cache.exceedance(r, x, k);
    search_threshold(class, est, servers, search, &mut cached)
}

fn search_threshold(
    class: &ServiceClass,
    est: &TrafficEstimate,
    servers: usize,
    search: &ThresholdSearch,
    tail: &mut impl FnMut(&QueueRegime, f64, u32) -> f64,
) -> Threshold {
    let (mut current, mut p) = threshold_revenue_parts(class, est, 1, servers, search.load, tail);
    for m in 1..search.max_threshold {
        let (next, next_p) = threshold_revenue_parts(class, est, m + 1, servers, search.load, tail);
        let gain = next - current;
        if gain < search.epsilon {
            if gain >= 0.0 && (class.penalty == 0.0 || p == 0.0) {
                return Threshold::Unbounded;
            }
            return Threshold::Finite(m);
        }
        current = next;
        p = next_p;
    }
    Threshold::Unbounded
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{ArrivalProcess, Distribution};

    fn reference_class() -> ServiceClass {
        ServiceClass {
            id: 0,
            charge: 10.0,
            penalty: 10.0,
            obligation: 1.0,
            jobs_per_session: 50,
            job_rate: 2.0,
            session_rate: 0.1,
            weight: 1.0,
            service: Distribution::Exponential { mean: 1.0 },
            arrivals: ArrivalProcess::Poisson,
        }
    }

    fn est() -> TrafficEstimate {
        TrafficEstimate::prior(1.0, 1.0)
    }

    #[test]
    fn erlang_c_known_values() {
        assert!((erlang_c(1, 0.5) - 0.5).abs() < 1e-15);
        assert!((erlang_c(2, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(erlang_c(3, 0.0), 0.0);
        assert_eq!(erlang_c(2, 2.0), 1.0);
        assert_eq!(erlang_c(0, 0.3), 1.0);
    }

    #[test]
    fn erlang_b_known_values() {
        assert_eq!(threshold_blocking(0, 3.0), 1.0);
        assert!((threshold_blocking(1, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(threshold_blocking(4, 0.0), 0.0);
    }

    #[test]
    fn tail_edge_cases() {
        assert_eq!(mean_wait_exceedance(0.5, 3.0, 50, 2, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(mean_wait_exceedance(0.5, 0.0, 50, 2, 1.0, 1.0, 1.0), 0.0);
        assert_eq!(mean_wait_exceedance(0.5, 1.0, 50, 0, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(mean_wait_exceedance(-0.1, 1.0, 10, 4, 1.0, 1.0, 1.0), 1.0);
    }

    #[test]
    fn single_job_tail_is_exact() {
        let r = QueueRegime::markovian(1.0, 1.0, 2);
        let expected = (1.0 / 3.0) * (-(2.0 - 1.0) * 0.7f64).exp();
        assert!((r.mean_wait_exceedance(0.7, 1) - expected).abs() < 1e-15);
    }

    #[test]
    fn two_job_moments_match_direct_expansion() {
        // For M/M/1 the all-zero probability of two consecutive waits is
        // P(N0 = 0)·P(departure before next arrival) = (1 − ρ)·μ/(λ + μ).
        let r = QueueRegime::markovian(0.5, 1.0, 1);
        let p = r.mean_wait_exceedance(0.0, 2);
        let expected = 1.0 - 0.5 * (1.0 / 1.5);
        assert!((p - expected).abs() < 1e-9, "{p} vs {expected}");
    }

    #[test]
    fn profile_agrees_with_direct_calls() {
        let r = QueueRegime::markovian(3.5, 1.0, 5);
        let profile = r.tail_profile(50);
        for k in [2, 7, 30, 50] {
            for x in [0.1, 0.5, 1.0] {
                assert_eq!(profile.exceedance(x, k), r.mean_wait_exceedance(x, k));
            }
        }
    }

    #[test]
    fn wait_scale_stretches_tail() {
        let mm = QueueRegime::markovian(3.0, 1.0, 4);
        let gg = QueueRegime { service_scv: 6.12, ..mm };
        assert!(gg.mean_wait_exceedance(0.5, 20) > mm.mean_wait_exceedance(0.5, 20));
        assert!((gg.mean_wait() / mm.mean_wait() - 3.56).abs() < 1e-12);
    }

    #[test]
    fn zero_penalty_threshold_is_unbounded() {
        let mut c = reference_class();
        c.penalty = 0.0;
        let s = ThresholdSearch::default();
        assert_eq!(find_threshold(&c, &est(), 5, &s), Threshold::Unbounded);
        let revenues: Vec<f64> = (1..=40).map(|m| threshold_revenue(&c, &est(), m, 5, ThresholdLoad::MeanActive)).collect();
        assert!(revenues.windows(2).all(|w| w[1] >= w[0]));
        assert!(revenues[39] <= c.session_rate * c.charge + 1e-12);
        assert!((revenues[39] - c.session_rate * c.charge).abs() < 1e-6);
    }

    #[test]
    fn huge_epsilon_stops_immediately() {
        let s = ThresholdSearch { epsilon: 1e9, ..ThresholdSearch::default() };
        assert_eq!(find_threshold(&reference_class(), &est(), 5, &s), Threshold::Finite(1));
    }

    #[test]
    fn single_threshold_revenue_is_direct_substitution() {
        let c = reference_class();
        let a = c.session_load();
        let b = a / (1.0 + a);
        let g = mean_wait_exceedance(1.0, a * (1.0 - b) * 2.0, 50, 5, 1.0, 1.0, 1.0);
        let expected = 0.1 * (1.0 - b) * (10.0 - 10.0 * g);
        assert!((threshold_revenue(&c, &est(), 1, 5, ThresholdLoad::MeanActive) - expected).abs() < 1e-12);
    }

    #[test]
    fn threshold_admits_strictly_below() {
        assert!(!Threshold::Finite(3).admits(3));
        assert!(Threshold::Finite(3).admits(2));
        assert!(Threshold::Unbounded.admits(usize::MAX));
        assert!(!Threshold::Finite(0).admits(0));
    }
}
