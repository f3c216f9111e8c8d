//! Server allocation in proportion to weighted offered loads, and the four
//! session admission policies.

use serde::{Deserialize, Serialize};

use crate::domain::{ServiceClass, TrafficEstimate};
use crate::queueing::{find_threshold_cached, QueueRegime, TailCache, Threshold, ThresholdSearch};

/// Target allocation and the unrounded shares it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub target: Vec<usize>,
    pub shares: Vec<f64>,
}

/// Round `N·wᵢ/Σw` half up, then repair the sum one server at a time.
///
/// A deficit goes to the class that lost the most in rounding, a surplus is
/// taken from the class that gained the most; ties go to the lowest index.
/// With no positive weight the servers are split evenly.
pub fn allocate_shares(weighted_loads: &[f64], servers: usize) -> AllocationDecision {
    let m = weighted_loads.len();
    if m == 0 {
        return AllocationDecision {
            target: Vec::new(),
            shares: Vec::new(),
        };
    }
    let clean: Vec<f64> = weighted_loads
        .iter()
        .map(|&w| if w.is_finite() && w > 0.0 { w } else { 0.0 })
        .collect();
    let total: f64 = clean.iter().sum();
    let shares: Vec<f64> = if total > 0.0 {
        clean.iter().map(|w| servers as f64 * w / total).collect()
    } else {
        vec![servers as f64 / m as f64; m]
    };
    let mut target: Vec<usize> = shares.iter().map(|s| (s + 0.5).floor() as usize).collect();
    let mut assigned: usize = target.iter().sum();
    while assigned < servers {
        let i = pick(&shares, &target, |a, b| a > b, |_| true);
        target[i] += 1;
        assigned += 1;
    }
    while assigned > servers {
        let i = pick(&shares, &target, |a, b| a < b, |n| n > 0);
        target[i] -= 1;
        assigned -= 1;
    }
    AllocationDecision { target, shares }
}

fn pick(shares: &[f64], target: &[usize], better: impl Fn(f64, f64) -> bool, eligible: impl Fn(usize) -> bool) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&s, &n)) in shares.iter().zip(target).enumerate() {
        if !eligible(n) {
            continue;
        }
        let remainder = s - n as f64;
        if best.is_none_or(|(_, r)| better(remainder, r)) {
            best = Some((i, remainder));
        }
    }
    best.expect("some class is eligible").0
}

/// Offered-loads allocation from per-class arrival rates and service means.
pub fn allocate_for_rates(rates: &[f64], estimates: &[TrafficEstimate], classes: &[ServiceClass], servers: usize) -> AllocationDecision {
    let weighted: Vec<f64> = rates
        .iter()
        .zip(estimates)
        .zip(classes)
        .map(|((&lam, e), c)| lam * e.mean_service * c.weight)
        .collect();
    allocate_shares(&weighted, servers)
}

/// Offered-loads allocation from the current estimates.
pub fn allocate_offered_loads(estimates: &[TrafficEstimate], classes: &[ServiceClass], servers: usize) -> AllocationDecision {
    let rates: Vec<f64> = estimates.iter().map(|e| e.arrival_rate).collect();
    allocate_for_rates(&rates, estimates, classes, servers)
}

/// Progress of one accepted, not yet complete session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveSession {
    pub class: usize,
    pub jobs_completed: u32,
    pub mean_wait: f64,
}

/// What a policy may look at when deciding.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub now: f64,
    pub classes: &'a [ServiceClass],
    pub servers: usize,
    pub allocation: &'a [usize],
    pub estimates: &'a [TrafficEstimate],
    /// Active sessions per class.
    pub active: &'a [usize],
    pub sessions: &'a [ActiveSession],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionDecision {
    pub accept: bool,
    /// Allocation to apply if the session is accepted.
    pub allocation: Option<AllocationDecision>,
    /// Expected revenue change, for policies that compute one.
    pub delta_revenue: Option<f64>,
}

impl AdmissionDecision {
    pub fn reject() -> Self {
        AdmissionDecision {
            accept: false,
            allocation: None,
            delta_revenue: None,
        }
    }

    pub fn accept(allocation: AllocationDecision) -> Self {
        AdmissionDecision {
            accept: true,
            allocation: Some(allocation),
            delta_revenue: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    AdmitAll,
    Threshold,
    CurrentState,
    LongRun,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::AdmitAll,
        PolicyKind::Threshold,
        PolicyKind::CurrentState,
        PolicyKind::LongRun,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::AdmitAll => "admit-all",
            PolicyKind::Threshold => "threshold",
            PolicyKind::CurrentState => "current-state",
            PolicyKind::LongRun => "long-run",
        }
    }

    pub fn is_heuristic(&self) -> bool {
        *self != PolicyKind::AdmitAll
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown policy {s:?}"))
    }
}

/// Admission policy with its paired allocation rule.
pub trait AdmissionPolicy: Send {
    fn kind(&self) -> PolicyKind;

    /// Decide on a session of `class` arriving now.
    fn admit(&mut self, class: usize, snap: &Snapshot<'_>) -> AdmissionDecision;

    /// Allocation to apply when a session completes.
    fn on_completion(&mut self, snap: &Snapshot<'_>) -> AllocationDecision {
        allocate_offered_loads(snap.estimates, snap.classes, snap.servers)
    }

    /// Called after estimates were refreshed or the allocation changed.
    fn refresh(&mut self, _snap: &Snapshot<'_>) {}
}

pub fn build_policy(kind: PolicyKind, classes: &[ServiceClass], search: ThresholdSearch) -> Box<dyn AdmissionPolicy> {
    match kind {
        PolicyKind::AdmitAll => Box::new(AdmitAll),
        PolicyKind::Threshold => Box::new(ThresholdPolicy::new(classes, search)),
        PolicyKind::CurrentState => Box::new(CurrentState::new(classes)),
        PolicyKind::LongRun => Box::new(LongRun::new(classes)),
    }
}

fn max_jobs(classes: &[ServiceClass]) -> u32 {
    classes.iter().map(|c| c.jobs_per_session).max().unwrap_or(1)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AdmitAll;

impl AdmissionPolicy for AdmitAll {
    fn kind(&self) -> PolicyKind {
        PolicyKind::AdmitAll
    }

    fn admit(&mut self, _class: usize, snap: &Snapshot<'_>) -> AdmissionDecision {
        AdmissionDecision::accept(allocate_offered_loads(snap.estimates, snap.classes, snap.servers))
    }
}

/// Accept while fewer than `Mᵢ` sessions of the class are active.
pub fn admit_threshold(active: usize, threshold: Threshold) -> bool {
    threshold.admits(active)
}

/// Per-class session thresholds, recomputed when a class's server count
/// changes or its estimates are refreshed.
#[derive(Debug, Clone)]
pub struct ThresholdPolicy {
    search: ThresholdSearch,
    thresholds: Vec<Threshold>,
    inputs: Vec<Option<(usize, TrafficEstimate)>>,
    cache: TailCache,
}

impl ThresholdPolicy {
    pub fn new(classes: &[ServiceClass], search: ThresholdSearch) -> Self {
        ThresholdPolicy {
            search,
            thresholds: vec![Threshold::Unbounded; classes.len()],
            inputs: vec![None; classes.len()],
            cache: TailCache::new(max_jobs(classes)),
        }
    }

    pub fn thresholds(&self) -> &[Threshold] {
        &self.thresholds
    }

    fn update(&mut self, snap: &Snapshot<'_>) {
        for (i, class) in snap.classes.iter().enumerate() {
            let key = (snap.allocation[i], snap.estimates[i]);
            if self.inputs[i] == Some(key) {
                continue;
            }
            self.thresholds[i] = find_threshold_cached(class, &key.1, key.0, &self.search, &mut self.cache);
            self.inputs[i] = Some(key);
        }
    }
}

impl AdmissionPolicy for ThresholdPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Threshold
    }

    fn admit(&mut self, class: usize, snap: &Snapshot<'_>) -> AdmissionDecision {
        if self.inputs[class].is_none() {
            self.update(snap);
        }
        if admit_threshold(snap.active[class], self.thresholds[class]) {
            AdmissionDecision::accept(allocate_offered_loads(snap.estimates, snap.classes, snap.servers))
        } else {
            AdmissionDecision::reject()
        }
    }

    fn refresh(&mut self, snap: &Snapshot<'_>) {
        self.update(snap);
    }
}

/// Remaining average-wait budget of a session over its unserved jobs.
///
/// Negative once the session can no longer meet its obligation.
pub fn residual_obligation(class: &ServiceClass, jobs_completed: u32, mean_wait: f64) -> f64 {
    let k = f64::from(class.jobs_per_session);
    let l = f64::from(jobs_completed);
    (class.obligation * k - mean_wait * l) / (k - l)
}

/// Marginal-revenue test on the full system state.
///
/// The arriving session adds `γᵢ` to its class's job rate; the servers are
/// re-split for the perturbed rates, and the change in expected penalties of
/// every running session is charged against the new session's value.
#[derive(Debug, Clone)]
pub struct CurrentState {
    cache: TailCache,
}

impl CurrentState {
    pub fn new(classes: &[ServiceClass]) -> Self {
        CurrentState {
            cache: TailCache::new(max_jobs(classes)),
        }
    }

    /// Expected revenue change of accepting a class-`class` session, and the
    /// allocation that would go with it.
    pub fn delta_revenue(&mut self, class: usize, snap: &Snapshot<'_>) -> (f64, AllocationDecision) {
        let rates: Vec<f64> = snap.estimates.iter().map(|e| e.arrival_rate).collect();
        let mut perturbed = rates.clone();
        perturbed[class] += snap.classes[class].job_rate;
        let next = allocate_for_rates(&perturbed, snap.estimates, snap.classes, snap.servers);

        let regime = |j: usize, lam: f64, n: usize| QueueRegime::from_estimate(&snap.estimates[j], lam, n);
        let c = &snap.classes[class];
        let mut delta = c.charge
            - c.penalty
                * self
                    .cache
                    .exceedance(&regime(class, perturbed[class], next.target[class]), c.obligation, c.jobs_per_session);

        for s in snap.sessions {
            let j = s.class;
            let cj = &snap.classes[j];
            if s.jobs_completed >= cj.jobs_per_session {
                continue;
            }
            let before = (rates[j], snap.allocation[j]);
            let after = (perturbed[j], next.target[j]);
            if before == after {
                continue;
            }
            let x = residual_obligation(cj, s.jobs_completed, s.mean_wait);
            let remaining = cj.jobs_per_session - s.jobs_completed;
            let g_after = self.cache.exceedance(&regime(j, after.0, after.1), x, remaining);
            let g_before = self.cache.exceedance(&regime(j, before.0, before.1), x, remaining);
            delta -= cj.penalty * (g_after - g_before);
        }
        (delta, next)
    }
}

impl AdmissionPolicy for CurrentState {
    fn kind(&self) -> PolicyKind {
        PolicyKind::CurrentState
    }

    fn admit(&mut self, class: usize, snap: &Snapshot<'_>) -> AdmissionDecision {
        let (delta, next) = self.delta_revenue(class, snap);
        AdmissionDecision {
            accept: delta > 0.0,
            allocation: (delta > 0.0).then_some(next),
            delta_revenue: Some(delta),
        }
    }
}

/// Revenue rate implied by holding `active[j]` sessions of every class.
#[derive(Debug, Clone)]
pub struct LongRun {
    cache: TailCache,
}

impl LongRun {
    pub fn new(classes: &[ServiceClass]) -> Self {
        LongRun {
            cache: TailCache::new(max_jobs(classes)),
        }
    }

    /// Long-run revenue rate of the session-count vector `active` under its
    /// own offered-loads allocation.
    pub fn revenue(&mut self, active: &[usize], snap: &Snapshot<'_>) -> (f64, AllocationDecision) {
        let rates: Vec<f64> = active
            .iter()
            .zip(snap.classes)
            .map(|(&l, c)| l as f64 * c.job_rate)
            .collect();
        let alloc = allocate_for_rates(&rates, snap.estimates, snap.classes, snap.servers);
        let mut total = 0.0;
        for (j, c) in snap.classes.iter().enumerate() {
            if active[j] == 0 {
                continue;
            }
            let started = rates[j] / f64::from(c.jobs_per_session);
            let regime = QueueRegime::from_estimate(&snap.estimates[j], rates[j], alloc.target[j]);
            let g = self.cache.exceedance(&regime, c.obligation, c.jobs_per_session);
            total += started * (c.charge - c.penalty * g);
        }
        (total, alloc)
    }
}

impl AdmissionPolicy for LongRun {
    fn kind(&self) -> PolicyKind {
        PolicyKind::LongRun
    }

    fn admit(&mut self, class: usize, snap: &Snapshot<'_>) -> AdmissionDecision {
        let (now, _) = self.revenue(snap.active, snap);
        let mut more = snap.active.to_vec();
        more[class] += 1;
        let (next, alloc) = self.revenue(&more, snap);
        let accept = next > now;
        AdmissionDecision {
            accept,
            allocation: accept.then_some(alloc),
            delta_revenue: Some(next - now),
        }
    }

    fn on_completion(&mut self, snap: &Snapshot<'_>) -> AllocationDecision {
        let rates: Vec<f64> = snap
            .active
            .iter()
            .zip(snap.classes)
            .map(|(&l, c)| l as f64 * c.job_rate)
            .collect();
        allocate_for_rates(&rates, snap.estimates, snap.classes, snap.servers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{ArrivalProcess, Distribution};

    fn class(id: usize, charge: f64, penalty: f64) -> ServiceClass {
        ServiceClass {
            id,
            charge,
            penalty,
            obligation: 1.0,
            jobs_per_session: 50,
            job_rate: 2.0,
            session_rate: 0.1,
            weight: 1.0,
            service: Distribution::Exponential { mean: 1.0 },
            arrivals: ArrivalProcess::Poisson,
        }
    }

    fn estimates(rates: &[f64]) -> Vec<TrafficEstimate> {
        rates
            .iter()
            .map(|&r| TrafficEstimate {
                arrival_rate: r,
                ..TrafficEstimate::prior(1.0, 1.0)
            })
            .collect()
    }

    #[test]
    fn symmetric_loads_split_evenly() {
        assert_eq!(allocate_shares(&[1.0; 4], 20).target, vec![5; 4]);
    }

    #[test]
    fn proportional_rounding() {
        let d = allocate_shares(&[1.0, 2.0, 3.0], 10);
        assert_eq!(d.target, vec![2, 3, 5]);
        assert!((d.shares[0] - 10.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn deficit_goes_to_lowest_index_on_tie() {
        assert_eq!(allocate_shares(&[1.0; 3], 10).target, vec![4, 3, 3]);
    }

    #[test]
    fn surplus_taken_from_most_rounded_up() {
        // 1.5, 1.5, 1.5, 0.5 rounds to 2, 2, 2, 1 = 7 > 5.
        let d = allocate_shares(&[3.0, 3.0, 3.0, 1.0], 5);
        assert_eq!(d.target.iter().sum::<usize>(), 5);
        assert_eq!(d.target, vec![1, 1, 2, 1]);
    }

    #[test]
    fn zero_loads_split_uniformly() {
        assert_eq!(allocate_shares(&[0.0; 3], 10).target, vec![4, 3, 3]);
    }

    #[test]
    fn zero_load_class_may_get_nothing() {
        assert_eq!(allocate_shares(&[1.0, 0.0], 3).target, vec![3, 0]);
    }

    #[test]
    fn threshold_boundary() {
        assert!(!admit_threshold(4, Threshold::Finite(4)));
        assert!(admit_threshold(3, Threshold::Finite(4)));
        assert!(admit_threshold(1_000_000, Threshold::Unbounded));
    }

    fn snapshot<'a>(
        classes: &'a [ServiceClass],
        alloc: &'a [usize],
        est: &'a [TrafficEstimate],
        active: &'a [usize],
        sessions: &'a [ActiveSession],
    ) -> Snapshot<'a> {
        Snapshot {
            now: 0.0,
            classes,
            servers: alloc.iter().sum(),
            allocation: alloc,
            estimates: est,
            active,
            sessions,
        }
    }

    #[test]
    fn current_state_accepts_into_empty_system() {
        let classes = [class(0, 10.0, 10.0)];
        let est = estimates(&[0.0]);
        let snap = snapshot(&classes, &[20], &est, &[0], &[]);
        let d = CurrentState::new(&classes).admit(0, &snap);
        assert!(d.accept);
        assert!((d.delta_revenue.unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(d.allocation.unwrap().target, vec![20]);
    }

    #[test]
    fn current_state_rejects_when_class_gets_no_server() {
        // Class 0 carries all the load; class 1's perturbed share rounds to zero.
        let classes = [class(0, 10.0, 10.0), class(1, 10.0, 10.0)];
        let est = estimates(&[100.0, 0.0]);
        let snap = snapshot(&classes, &[2, 0], &est, &[50, 0], &[]);
        let d = CurrentState::new(&classes).admit(1, &snap);
        assert!(!d.accept);
        assert!(d.delta_revenue.unwrap() <= 0.0);
        assert!(d.allocation.is_none());
    }

    #[test]
    fn doomed_session_does_not_block() {
        let classes = [class(0, 10.0, 10.0)];
        let c = &classes[0];
        // 40 jobs averaging 1.3 exceed the whole 50-job budget of 50.
        assert!(residual_obligation(c, 40, 1.3) < 0.0);
        let doomed = [ActiveSession {
            class: 0,
            jobs_completed: 40,
            mean_wait: 1.3,
        }];
        let est = estimates(&[4.0]);
        let with = CurrentState::new(&classes).admit(0, &snapshot(&classes, &[10], &est, &[1], &doomed));
        let without = CurrentState::new(&classes).admit(0, &snapshot(&classes, &[10], &est, &[1], &[]));
        assert_eq!(with.delta_revenue, without.delta_revenue);
    }

    #[test]
    fn residual_obligation_of_fresh_session_is_q() {
        let c = class(0, 1.0, 1.0);
        assert_eq!(residual_obligation(&c, 0, 0.0), 1.0);
        assert_eq!(residual_obligation(&c, 25, 1.0), 1.0);
    }

    #[test]
    fn long_run_accepts_into_empty_system() {
        let classes = [class(0, 10.0, 10.0)];
        let est = estimates(&[0.0]);
        let d = LongRun::new(&classes).admit(0, &snapshot(&classes, &[20], &est, &[0], &[]));
        assert!(d.accept);
        assert!(d.delta_revenue.unwrap() > 0.0);
    }

    #[test]
    fn long_run_rejects_at_saturation() {
        // Three servers hold less than 3 jobs/s of unit work; a second session brings 4/s.
        let classes = [class(0, 10.0, 10.0)];
        let est = estimates(&[0.0]);
        let d = LongRun::new(&classes).admit(0, &snapshot(&classes, &[3], &est, &[1], &[]));
        let mut lr = LongRun::new(&classes);
        let snap = snapshot(&classes, &[3], &est, &[1], &[]);
        let (r1, _) = lr.revenue(&[1], &snap);
        let (r2, _) = lr.revenue(&[2], &snap);
        assert!((r2 - 0.0).abs() < 1e-12);
        assert!(r1 > 0.0);
        assert!(!d.accept);
    }

    #[test]
    fn long_run_symmetric_under_relabeling() {
        let classes = [class(0, 10.0, 10.0), class(1, 10.0, 10.0)];
        let est = estimates(&[0.0, 0.0]);
        let a = LongRun::new(&classes).admit(0, &snapshot(&classes, &[5, 5], &est, &[3, 5], &[]));
        let b = LongRun::new(&classes).admit(1, &snapshot(&classes, &[5, 5], &est, &[5, 3], &[]));
        assert_eq!(a.accept, b.accept);
        assert_eq!(a.delta_revenue, b.delta_revenue);
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("nope".parse::<PolicyKind>().is_err());
    }
}
