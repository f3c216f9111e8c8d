//! Value types shared by the simulator, the analytic toolkit and the policies.
//!
//! Notation follows the usual SLA revenue model: a class `i` has charge
//! `c`, penalty `r`, obligation `q` (bound on the session-average wait),
//! `k` jobs per session submitted at `γ` jobs per second, and sessions
//! offered at `δ` per second.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RevenueSample;
use crate::workload::{ArrivalProcess, Distribution};

/// Static SLA and traffic contract of one service type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceClass {
    /// Zero-based class index. Config files and CSV headers use `id + 1`.
    #[serde(default)]
    pub id: usize,
    /// Money earned per accepted session.
    pub charge: f64,
    /// Money paid back per session whose mean wait exceeds `obligation`.
    pub penalty: f64,
    /// Maximum allowed session-average waiting time, seconds.
    pub obligation: f64,
    pub jobs_per_session: u32,
    /// Jobs per second submitted by an active session.
    pub job_rate: f64,
    /// Sessions per second offered to the cluster.
    pub session_rate: f64,
    /// Economic importance coefficient used by the offered-loads allocator.
    #[serde(default = "default_weight")]
    pub weight: f64,
    pub service: Distribution,
    #[serde(default)]
    pub arrivals: ArrivalProcess,
}

fn default_weight() -> f64 {
    1.0
}

impl ServiceClass {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::InvalidClass {
                class: self.id + 1,
                reason: reason.to_string(),
            })
        };
        if self.jobs_per_session < 1 {
            return fail("jobs_per_session must be at least 1");
        }
        if !(self.job_rate > 0.0 && self.job_rate.is_finite()) {
            return fail("job_rate must be positive");
        }
        if !(self.obligation > 0.0 && self.obligation.is_finite()) {
            return fail("obligation must be positive");
        }
        if !(self.charge >= 0.0 && self.charge.is_finite()) {
            return fail("charge must be nonnegative");
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return fail("penalty must be nonnegative");
        }
        if !(self.session_rate >= 0.0 && self.session_rate.is_finite()) {
            return fail("session_rate must be nonnegative");
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return fail("weight must be positive");
        }
        self.service.validate()?;
        self.arrivals.validate()
    }

    /// Mean service time `b`.
    pub fn mean_service(&self) -> f64 {
        self.service.mean()
    }

    /// Expected session lifetime `k/γ`.
    pub fn session_holding_time(&self) -> f64 {
        f64::from(self.jobs_per_session) / self.job_rate
    }

    /// Offered session load `A = δ·k/γ`, in concurrently active sessions.
    pub fn session_load(&self) -> f64 {
        self.session_rate * self.session_holding_time()
    }

    /// Offered job load `δ·k·b` in server units, if every session were accepted.
    pub fn offered_load(&self) -> f64 {
        self.session_rate * f64::from(self.jobs_per_session) * self.mean_service()
    }
}

/// Opaque session identifier handed out on acceptance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId(pub u64);

impl SessionId {
    /// Identifier returned for rejected sessions.
    pub const REJECTED: i64 = -1;
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// A live accepted session.
///
/// `jobs_completed` counts jobs whose waiting time is known, i.e. jobs that
/// have started service.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub id: SessionId,
    pub class: usize,
    pub jobs_completed: u32,
    pub jobs_arrived: u32,
    pub wait_sum: f64,
    pub arrival_time: f64,
}

impl SessionState {
    pub fn new(id: SessionId, class: usize, arrival_time: f64) -> Self {
        SessionState {
            id,
            class,
            jobs_completed: 0,
            jobs_arrived: 0,
            wait_sum: 0.0,
            arrival_time,
        }
    }

    /// Record the waiting time of the next job to start service.
    pub fn record_wait(&mut self, wait: f64) {
        debug_assert!(wait >= 0.0);
        self.jobs_completed += 1;
        self.wait_sum += wait;
    }

    /// Running mean wait `u`; zero before the first job has been served.
    pub fn mean_wait(&self) -> f64 {
        session_mean_wait(self)
    }

    pub fn is_complete(&self, class: &ServiceClass) -> bool {
        self.jobs_completed >= class.jobs_per_session
    }
}

pub fn session_mean_wait(s: &SessionState) -> f64 {
    if s.jobs_completed == 0 {
        0.0
    } else {
        s.wait_sum / f64::from(s.jobs_completed)
    }
}

/// Whether a finished session missed its obligation (`W > q`, strictly).
pub fn session_sla_violated(s: &SessionState, class: &ServiceClass) -> Result<bool> {
    if !s.is_complete(class) {
        return Err(Error::SessionIncomplete {
            session: s.id.0,
            class: s.class + 1,
            served: s.jobs_completed,
            required: class.jobs_per_session,
        });
    }
    Ok(s.mean_wait() > class.obligation)
}

/// Windowed traffic statistics of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficEstimate {
    /// Job arrival rate `λ`, jobs per second.
    pub arrival_rate: f64,
    /// Mean service time `b`, seconds.
    pub mean_service: f64,
    /// Interarrival squared coefficient of variation `ca²`.
    pub interarrival_scv: f64,
    /// Service-time squared coefficient of variation `cs²`.
    pub service_scv: f64,
    pub arrival_samples: u64,
    pub service_samples: u64,
}

impl TrafficEstimate {
    pub fn prior(mean_service: f64, service_scv: f64) -> Self {
        TrafficEstimate {
            arrival_rate: 0.0,
            mean_service,
            interarrival_scv: 1.0,
            service_scv,
            arrival_samples: 0,
            service_samples: 0,
        }
    }

    /// Offered load `ρ = λ·b`.
    pub fn offered_load(&self) -> f64 {
        self.arrival_rate * self.mean_service
    }

    /// False until at least two samples of each kind have been seen.
    pub fn is_valid(&self) -> bool {
        self.arrival_samples >= 2 && self.service_samples >= 2
    }
}

/// Where a session's charge is attributed in the time buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attribution {
    /// Charge at acceptance, penalty at completion.
    #[default]
    CashFlow,
    /// Charge and penalty both at completion.
    Completion,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounters {
    pub offered: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub completed: u64,
    pub violated: u64,
    /// Accepted sessions still running at the horizon.
    pub in_flight: u64,
}

impl ClassCounters {
    pub fn sla_met(&self) -> u64 {
        self.completed - self.violated
    }
}

/// Money and session accounting of one run.
///
/// Charges of sessions still in flight at the horizon are moved out of the
/// revenue totals by [`RevenueLedger::close_in_flight`] and reported in
/// `in_flight_charges`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueLedger {
    pub charges: f64,
    pub penalties: f64,
    pub in_flight_charges: f64,
    pub classes: Vec<ClassCounters>,
    pub buckets: Vec<RevenueSample>,
    pub bucket_width: f64,
    pub attribution: Attribution,
    /// Final mean wait of every completed session, per class, in completion order.
    pub session_waits: Vec<Vec<f64>>,
    /// Final mean response time (wait plus service) per completed session.
    pub session_responses: Vec<Vec<f64>>,
}

impl RevenueLedger {
    pub fn new(classes: usize, horizon: f64, bucket_width: f64, attribution: Attribution) -> Self {
        let count = (horizon / bucket_width).ceil().max(1.0) as usize;
        let buckets = (0..count)
            .map(|b| {
                let start = b as f64 * bucket_width;
                RevenueSample::empty(start, (start + bucket_width).min(horizon))
            })
            .collect();
        RevenueLedger {
            charges: 0.0,
            penalties: 0.0,
            in_flight_charges: 0.0,
            classes: vec![ClassCounters::default(); classes],
            buckets,
            bucket_width,
            attribution,
            session_waits: vec![Vec::new(); classes],
            session_responses: vec![Vec::new(); classes],
        }
    }

    pub fn revenue(&self) -> f64 {
        self.charges - self.penalties
    }

    pub fn horizon(&self) -> f64 {
        self.buckets.last().map_or(0.0, |b| b.end)
    }

    fn bucket(&mut self, time: f64) -> &mut RevenueSample {
        let last = self.buckets.len() - 1;
        let idx = ((time / self.bucket_width).floor() as usize).min(last);
        &mut self.buckets[idx]
    }

    pub fn book_arrival(&mut self, class: usize) {
        self.classes[class].offered += 1;
    }

    pub fn book_rejection(&mut self, class: usize, time: f64) {
        self.classes[class].rejected += 1;
        self.bucket(time).rejected += 1;
    }

    pub fn book_acceptance(&mut self, class: usize, charge: f64, time: f64) {
        self.classes[class].accepted += 1;
        let cash_flow = self.attribution == Attribution::CashFlow;
        if cash_flow {
            self.charges += charge;
        }
        let bucket = self.bucket(time);
        bucket.accepted += 1;
        if cash_flow {
            bucket.revenue += charge;
        }
    }

    /// Book the end of a session. `penalty` is `Some` iff the SLA was missed.
    pub fn book_completion(
        &mut self,
        class: usize,
        time: f64,
        charge: f64,
        penalty: Option<f64>,
        mean_wait: f64,
        mean_response: f64,
    ) {
        let counters = &mut self.classes[class];
        counters.completed += 1;
        let completion = self.attribution == Attribution::Completion;
        if completion {
            self.charges += charge;
        }
        if let Some(p) = penalty {
            counters.violated += 1;
            self.penalties += p;
        }
        self.session_waits[class].push(mean_wait);
        self.session_responses[class].push(mean_response);
        let bucket = self.bucket(time);
        if completion {
            bucket.revenue += charge;
        }
        if let Some(p) = penalty {
            bucket.violated += 1;
            bucket.revenue -= p;
        }
    }

    /// Remove a session still running at the horizon from the revenue totals.
    pub fn close_in_flight(&mut self, class: usize, accepted_at: f64, charge: f64) {
        self.classes[class].in_flight += 1;
        self.in_flight_charges += charge;
        if self.attribution == Attribution::CashFlow {
            self.charges -= charge;
            self.bucket(accepted_at).revenue -= charge;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class(k: u32, q: f64) -> ServiceClass {
        ServiceClass {
            id: 0,
            charge: 10.0,
            penalty: 10.0,
            obligation: q,
            jobs_per_session: k,
            job_rate: 2.0,
            session_rate: 0.1,
            weight: 1.0,
            service: Distribution::Exponential { mean: 1.0 },
            arrivals: ArrivalProcess::Poisson,
        }
    }

    fn session_with(waits: &[f64]) -> SessionState {
        let mut s = SessionState::new(SessionId(7), 0, 0.0);
        for &w in waits {
            s.jobs_arrived += 1;
            s.record_wait(w);
        }
        s
    }

    #[test]
    fn empty_session_has_zero_mean() {
        assert_eq!(session_mean_wait(&session_with(&[])), 0.0);
    }

    #[test]
    fn mean_is_arithmetic() {
        assert_eq!(session_mean_wait(&session_with(&[1.0, 3.0])), 2.0);
    }

    #[test]
    fn waits_equal_to_obligation_meet_sla() {
        let q = 1.0;
        let s = session_with(&[q; 50]);
        assert_eq!(s.mean_wait(), q);
        assert!(!session_sla_violated(&s, &class(50, q)).unwrap());
    }

    #[test]
    fn strictly_above_obligation_violates() {
        let q = 1.0;
        let mut waits = vec![q; 50];
        waits[0] += 1e-6;
        assert!(session_sla_violated(&session_with(&waits), &class(50, q)).unwrap());
    }

    #[test]
    fn wait_sum_below_budget_meets_sla() {
        let q = 1.0;
        let mut s = SessionState::new(SessionId(1), 0, 0.0);
        s.jobs_completed = 50;
        s.jobs_arrived = 50;
        s.wait_sum = 49.0 * q;
        assert!((s.mean_wait() - 0.98 * q).abs() < 1e-12);
        assert!(!session_sla_violated(&s, &class(50, q)).unwrap());
    }

    #[test]
    fn incomplete_session_is_an_error() {
        let s = session_with(&[0.0; 3]);
        assert!(matches!(
            session_sla_violated(&s, &class(50, 1.0)),
            Err(Error::SessionIncomplete { served: 3, required: 50, .. })
        ));
    }

    #[test]
    fn class_validation_rejects_bad_fields() {
        assert!(class(50, 1.0).validate().is_ok());
        assert!(class(0, 1.0).validate().is_err());
        assert!(class(50, 0.0).validate().is_err());
        let mut c = class(50, 1.0);
        c.job_rate = 0.0;
        assert!(c.validate().is_err());
        c = class(50, 1.0);
        c.penalty = -1.0;
        assert!(c.validate().is_err());
        c = class(50, 1.0);
        c.weight = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ledger_buckets_partition_horizon() {
        let l = RevenueLedger::new(2, 1300.0, 600.0, Attribution::CashFlow);
        assert_eq!(l.buckets.len(), 3);
        assert_eq!(l.buckets[2].start, 1200.0);
        assert_eq!(l.buckets[2].end, 1300.0);
        for pair in l.buckets.windows(2) {
            assert_eq!(pair[0].end, pair[1].start);
        }
    }

    #[test]
    fn in_flight_charges_leave_revenue() {
        let mut l = RevenueLedger::new(1, 100.0, 50.0, Attribution::CashFlow);
        l.book_acceptance(0, 10.0, 10.0);
        l.book_acceptance(0, 10.0, 60.0);
        l.book_completion(0, 40.0, 10.0, Some(10.0), 2.0, 3.0);
        l.close_in_flight(0, 60.0, 10.0);
        assert_eq!(l.revenue(), 0.0);
        assert_eq!(l.in_flight_charges, 10.0);
        let bucketed: f64 = l.buckets.iter().map(|b| b.revenue).sum();
        assert_eq!(bucketed, l.revenue());
        assert_eq!(l.classes[0].sla_met(), 0);
    }
}
