//! Discrete-event simulation of the cluster.
//!
//! Jobs of each class wait in their own FIFO queue and are served without
//! preemption by the servers currently assigned to the class. A reallocated
//! server that is busy keeps serving its job and joins its new class when the
//! job ends. A class with waiting jobs and no servers borrows one, so every
//! accepted session is eventually served. A session completes when its last
//! job starts service, which is when its mean wait is known.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::domain::{session_sla_violated, Attribution, RevenueLedger, ServiceClass, SessionId, SessionState};
use crate::error::{Error, Result};
use crate::estimation::{EstimatorConfig, WindowAccumulator};
use crate::policies::{allocate_shares, ActiveSession, AdmissionPolicy, AllocationDecision, Snapshot};
use crate::workload::{JobSpacing, JobStreams, SessionArrivalStream};

/// Everything a single run needs besides the policy and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub servers: usize,
    pub classes: Vec<ServiceClass>,
    pub horizon: f64,
    pub bucket_width: f64,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub spacing: JobSpacing,
    #[serde(default)]
    pub attribution: Attribution,
    /// Allocation before the first decision; an even split when absent.
    #[serde(default)]
    pub initial_allocation: Option<Vec<usize>>,
    /// No sessions arrive after this time. Once the system is empty the run
    /// stops, so every accepted session can be followed to its end.
    #[serde(default)]
    pub arrival_cutoff: Option<f64>,
    /// Verify the structural invariants after every event.
    #[serde(default)]
    pub check_invariants: bool,
    /// Keep a record of every event.
    #[serde(default)]
    pub trace: bool,
}

impl SimConfig {
    pub fn new(servers: usize, classes: Vec<ServiceClass>, horizon: f64) -> Self {
        SimConfig {
            servers,
            classes,
            horizon,
            bucket_width: 600.0_f64.min(horizon),
            estimator: EstimatorConfig::default(),
            spacing: JobSpacing::default(),
            attribution: Attribution::default(),
            initial_allocation: None,
            arrival_cutoff: None,
            check_invariants: false,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.servers == 0 {
            return Err(Error::InvalidConfig("cluster needs at least one server".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("at least one service class is required".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.bucket_width.is_finite() && self.bucket_width > 0.0) {
            return Err(Error::InvalidConfig(format!("bucket width must be positive, got {}", self.bucket_width)));
        }
        let est = &self.estimator;
        if !(est.smoothing > 0.0 && est.smoothing <= 1.0) {
            return Err(Error::InvalidConfig(format!("smoothing must lie in (0, 1], got {}", est.smoothing)));
        }
        if !(est.timer > 0.0 && est.max_stale > 0.0) {
            return Err(Error::InvalidConfig("estimator periods must be positive".into()));
        }
        if let Some(p) = &est.pinned_service {
            if p.len() != self.classes.len() || p.iter().any(|b| !(*b > 0.0)) {
                return Err(Error::InvalidConfig("pinned service means need one positive value per class".into()));
            }
        }
        for (i, c) in self.classes.iter().enumerate() {
            c.validate().map_err(|e| match e {
                Error::InvalidClass { reason, .. } => Error::InvalidClass { class: i, reason },
                other => other,
            })?;
        }
        if let Some(a) = &self.initial_allocation {
            check_allocation(a, self.classes.len(), self.servers)?;
        }
        Ok(())
    }
}

fn check_allocation(target: &[usize], classes: usize, servers: usize) -> Result<()> {
    if target.len() != classes || target.iter().sum::<usize>() != servers {
        return Err(Error::AllocationMismatch {
            target: target.to_vec(),
            servers,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    SessionArrival,
    Admission,
    JobArrival,
    ServiceStart,
    ServiceCompletion,
    SessionCompletion,
    Allocation,
    WindowBoundary,
}

/// One line of the event trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub server: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accept: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_revenue: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Vec<usize>>,
}

impl TraceRecord {
    fn new(time: f64, kind: EventKind) -> Self {
        TraceRecord {
            time,
            kind,
            class: None,
            session: None,
            server: None,
            accept: None,
            delta_revenue: None,
            allocation: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub events: u64,
    pub session_arrivals: u64,
    pub job_arrivals: Vec<u64>,
    pub service_starts: Vec<u64>,
    pub service_completions: Vec<u64>,
    pub policy_invocations: u64,
    pub allocation_changes: u64,
    pub max_queue: Vec<usize>,
    pub final_allocation: Vec<usize>,
    pub end_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub ledger: RevenueLedger,
    pub summary: EventSummary,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    SessionArrival(usize),
    JobArrival(usize),
    ServiceCompletion(usize),
    Timer,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so that the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    slot: usize,
    session: u64,
    arrival: f64,
    service: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Idle,
    Busy { class: usize, session: u64, end: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Server {
    assigned: usize,
    status: Status,
}

#[derive(Debug, Clone)]
struct Session {
    state: SessionState,
    accepted_at: f64,
    response_sum: f64,
}

/// Policy view built from disjoint fields so the policy itself stays borrowable.
macro_rules! snapshot {
    ($sim:ident, $sessions:expr) => {
        Snapshot {
            now: $sim.now,
            classes: &$sim.classes,
            servers: $sim.cfg.servers,
            allocation: &$sim.allocation,
            estimates: $sim.estimator.estimates(),
            active: &$sim.active,
            sessions: $sessions,
        }
    };
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    classes: Vec<ServiceClass>,
    policy: &'a mut dyn AdmissionPolicy,
    now: f64,
    seq: u64,
    heap: BinaryHeap<Event>,
    sessions_in: SessionArrivalStream,
    jobs: JobStreams,
    estimator: WindowAccumulator,
    ledger: RevenueLedger,
    summary: EventSummary,
    trace: Vec<TraceRecord>,
    queues: Vec<VecDeque<Job>>,
    servers: Vec<Server>,
    idle: Vec<Vec<usize>>,
    allocation: Vec<usize>,
    slots: Vec<Option<Session>>,
    free: Vec<usize>,
    active: Vec<usize>,
    next_id: u64,
    finished: Vec<usize>,
    arrivals_open: bool,
}

/// Simulate one run to the horizon and return its ledger.
pub fn run(cfg: &SimConfig, policy: &mut dyn AdmissionPolicy, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg, policy, seed);
    sim.execute()?;
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, policy: &'a mut dyn AdmissionPolicy, seed: u64) -> Self {
        let classes: Vec<ServiceClass> = cfg
            .classes
            .iter()
            .enumerate()
            .map(|(i, c)| ServiceClass { id: i, ..c.clone() })
            .collect();
        let m = classes.len();
        let allocation = cfg
            .initial_allocation
            .clone()
            .unwrap_or_else(|| allocate_shares(&vec![0.0; m], cfg.servers).target);
        let mut servers = Vec::with_capacity(cfg.servers);
        let mut idle = vec![Vec::new(); m];
        for (class, &n) in allocation.iter().enumerate() {
            for _ in 0..n {
                idle[class].push(servers.len());
                servers.push(Server {
                    assigned: class,
                    status: Status::Idle,
                });
            }
        }
        for list in &mut idle {
            list.reverse();
        }
        Sim {
            cfg,
            sessions_in: SessionArrivalStream::new(&classes, seed),
            jobs: JobStreams::new(m, seed),
            estimator: WindowAccumulator::new(&classes, cfg.estimator.clone()),
            ledger: RevenueLedger::new(m, cfg.horizon, cfg.bucket_width, cfg.attribution),
            summary: EventSummary {
                job_arrivals: vec![0; m],
                service_starts: vec![0; m],
                service_completions: vec![0; m],
                max_queue: vec![0; m],
                ..EventSummary::default()
            },
            classes,
            policy,
            now: 0.0,
            seq: 0,
            heap: BinaryHeap::new(),
            trace: Vec::new(),
            queues: vec![VecDeque::new(); m],
            servers,
            idle,
            allocation,
            slots: Vec::new(),
            free: Vec::new(),
            active: vec![0; m],
            next_id: 0,
            finished: Vec::new(),
            arrivals_open: true,
        }
    }

    fn schedule(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn record(&mut self, rec: TraceRecord) {
        if self.cfg.trace {
            self.trace.push(rec);
        }
    }

    fn execute(&mut self) -> Result<()> {
        self.schedule_next_session();
        let timer = self.cfg.estimator.timer;
        if timer <= self.cfg.horizon {
            self.schedule(timer, Kind::Timer);
        }
        while let Some(ev) = self.heap.pop() {
            if ev.time > self.cfg.horizon {
                break;
            }
            debug_assert!(ev.time >= self.now);
            self.now = ev.time;
            self.summary.events += 1;
            match ev.kind {
                Kind::SessionArrival(class) => self.on_session_arrival(class),
                Kind::JobArrival(slot) => self.on_job_arrival(slot),
                Kind::ServiceCompletion(server) => self.on_service_completion(server),
                Kind::Timer => self.on_timer(),
            }
            self.settle();
            if self.cfg.check_invariants {
                self.check_invariants()?;
            }
            if self.drained() {
                break;
            }
        }
        Ok(())
    }

    fn drained(&self) -> bool {
        self.cfg.arrival_cutoff.is_some()
            && !self.arrivals_open
            && self.free.len() == self.slots.len()
            && self.servers.iter().all(|s| s.status == Status::Idle)
    }

    fn schedule_next_session(&mut self) {
        if let Some((class, time)) = self.sessions_in.next_session_arrival(self.now) {
            let cutoff = self.cfg.arrival_cutoff.unwrap_or(f64::INFINITY);
            if time <= cutoff && time <= self.cfg.horizon {
                self.schedule(time, Kind::SessionArrival(class));
                return;
            }
        }
        self.arrivals_open = false;
    }

    fn active_sessions(&self) -> Vec<ActiveSession> {
        self.slots
            .iter()
            .flatten()
            .map(|s| ActiveSession {
                class: s.state.class,
                jobs_completed: s.state.jobs_completed,
                mean_wait: s.state.mean_wait(),
            })
            .collect()
    }

    fn on_session_arrival(&mut self, class: usize) {
        self.schedule_next_session();
        self.summary.session_arrivals += 1;
        self.summary.policy_invocations += 1;
        self.ledger.book_arrival(class);
        self.estimator.publish_estimates(self.now);
        let sessions = self.active_sessions();
        let snap = snapshot!(self, &sessions);
        let decision = self.policy.admit(class, &snap);
        let mut rec = TraceRecord::new(self.now, EventKind::Admission);
        rec.class = Some(class);
        rec.accept = Some(decision.accept);
        rec.delta_revenue = decision.delta_revenue;
        if !decision.accept {
            self.record(rec);
            self.ledger.book_rejection(class, self.now);
            return;
        }
        let id = self.next_id;
        self.next_id += 1;
        rec.session = Some(id);
        self.record(rec);
        let session = Session {
            state: SessionState::new(SessionId(id), class, self.now),
            accepted_at: self.now,
            response_sum: 0.0,
        };
        let slot = match self.free.pop() {
            Some(s) => {
                self.slots[s] = Some(session);
                s
            }
            None => {
                self.slots.push(Some(session));
                self.slots.len() - 1
            }
        };
        self.active[class] += 1;
        self.ledger.book_acceptance(class, self.classes[class].charge, self.now);
        self.schedule(self.now, Kind::JobArrival(slot));
        if let Some(alloc) = decision.allocation {
            self.apply_allocation(&alloc);
        }
    }

    fn on_job_arrival(&mut self, slot: usize) {
        let session = self.slots[slot].as_mut().expect("job of a live session");
        let class = session.state.class;
        session.state.jobs_arrived += 1;
        let more = session.state.jobs_arrived < self.classes[class].jobs_per_session;
        let id = session.state.id.0;
        let service = self.jobs.service_time(&self.classes[class]);
        self.queues[class].push_back(Job {
            slot,
            session: id,
            arrival: self.now,
            service,
        });
        self.summary.job_arrivals[class] += 1;
        let q = self.queues[class].len();
        if q > self.summary.max_queue[class] {
            self.summary.max_queue[class] = q;
        }
        self.estimator.record_job_arrival(class, self.now);
        let mut rec = TraceRecord::new(self.now, EventKind::JobArrival);
        rec.class = Some(class);
        rec.session = Some(id);
        self.record(rec);
        if more {
            let gap = self.jobs.interarrival(&self.classes[class], self.cfg.spacing);
            self.schedule(self.now + gap, Kind::JobArrival(slot));
        }
    }

    fn on_service_completion(&mut self, server: usize) {
        let s = &mut self.servers[server];
        let Status::Busy { class, session, .. } = s.status else {
            unreachable!("completion on an idle server");
        };
        s.status = Status::Idle;
        let assigned = s.assigned;
        self.idle[assigned].push(server);
        self.summary.service_completions[class] += 1;
        let mut rec = TraceRecord::new(self.now, EventKind::ServiceCompletion);
        rec.class = Some(class);
        rec.session = Some(session);
        rec.server = Some(server);
        self.record(rec);
    }

    fn on_timer(&mut self) {
        self.estimator.publish_estimates(self.now);
        let sessions = self.active_sessions();
        let snap = snapshot!(self, &sessions);
        self.policy.refresh(&snap);
        self.record(TraceRecord::new(self.now, EventKind::WindowBoundary));
        let next = self.now + self.cfg.estimator.timer;
        if next <= self.cfg.horizon {
            self.schedule(next, Kind::Timer);
        }
    }

    /// Start every job that has an idle server of its class, then close the
    /// sessions whose last job just started.
    fn settle(&mut self) {
        loop {
            self.lend_to_starved();
            for class in 0..self.classes.len() {
                self.dispatch(class);
            }
            if self.finished.is_empty() {
                break;
            }
            let done = std::mem::take(&mut self.finished);
            for slot in done {
                self.complete_session(slot);
            }
        }
    }

    fn dispatch(&mut self, class: usize) {
        while !self.queues[class].is_empty() {
            let Some(server) = self.idle[class].pop() else {
                break;
            };
            let job = self.queues[class].pop_front().expect("nonempty queue");
            let end = self.now + job.service;
            self.servers[server].status = Status::Busy {
                class,
                session: job.session,
                end,
            };
            self.schedule(end, Kind::ServiceCompletion(server));
            self.estimator.record_service(class, job.service);
            self.summary.service_starts[class] += 1;
            let wait = self.now - job.arrival;
            let session = self.slots[job.slot].as_mut().expect("job of a live session");
            session.state.record_wait(wait);
            session.response_sum += wait + job.service;
            if session.state.is_complete(&self.classes[class]) {
                self.finished.push(job.slot);
            }
            let mut rec = TraceRecord::new(self.now, EventKind::ServiceStart);
            rec.class = Some(class);
            rec.session = Some(job.session);
            rec.server = Some(server);
            self.record(rec);
        }
    }

    fn complete_session(&mut self, slot: usize) {
        let session = self.slots[slot].take().expect("live session");
        self.free.push(slot);
        let class = session.state.class;
        self.active[class] -= 1;
        let c = &self.classes[class];
        let violated = session_sla_violated(&session.state, c).expect("session is complete");
        let jobs = f64::from(session.state.jobs_completed);
        self.ledger.book_completion(
            class,
            self.now,
            c.charge,
            violated.then_some(c.penalty),
            session.state.mean_wait(),
            session.response_sum / jobs,
        );
        let mut rec = TraceRecord::new(self.now, EventKind::SessionCompletion);
        rec.class = Some(class);
        rec.session = Some(session.state.id.0);
        rec.accept = Some(!violated);
        self.record(rec);

        self.summary.policy_invocations += 1;
        self.estimator.publish_estimates(self.now);
        let sessions = self.active_sessions();
        let snap = snapshot!(self, &sessions);
        let alloc = self.policy.on_completion(&snap);
        self.apply_allocation(&alloc);
        for class in 0..self.classes.len() {
            self.dispatch(class);
        }
    }

    /// Give one server to every class that has waiting jobs but no servers.
    ///
    /// The lender is the class with the most servers that can spare one,
    /// preferring an empty queue, then the lowest index.
    fn lend_to_starved(&mut self) {
        let m = self.classes.len();
        let starved: Vec<usize> = (0..m)
            .filter(|&c| self.allocation[c] == 0 && !self.queues[c].is_empty())
            .collect();
        if starved.is_empty() {
            return;
        }
        let mut target = self.allocation.clone();
        let mut changed = false;
        for class in starved {
            let lender = (0..m)
                .filter(|&d| target[d] > 1 || (target[d] == 1 && self.queues[d].is_empty()))
                .max_by_key(|&d| (target[d], self.queues[d].is_empty(), std::cmp::Reverse(d)));
            if let Some(d) = lender {
                target[d] -= 1;
                target[class] += 1;
                changed = true;
            }
        }
        if changed {
            let shares = target.iter().map(|&n| n as f64).collect();
            self.apply_allocation(&AllocationDecision { target, shares });
        }
    }

    /// Move servers toward `target`: idle ones at once, busy ones after their job.
    fn apply_allocation(&mut self, decision: &AllocationDecision) {
        let target = &decision.target;
        debug_assert_eq!(target.iter().sum::<usize>(), self.cfg.servers);
        if *target == self.allocation {
            return;
        }
        let m = self.classes.len();
        let mut released = Vec::new();
        for class in 0..m {
            let mut surplus = self.allocation[class].saturating_sub(target[class]);
            while surplus > 0 {
                match self.idle[class].pop() {
                    Some(s) => released.push(s),
                    None => break,
                }
                surplus -= 1;
            }
            if surplus > 0 {
                // Busy servers already draining away are not assigned here, so
                // every server found is serving this class or draining into it.
                let busy: Vec<usize> = (0..self.servers.len())
                    .filter(|&s| self.servers[s].assigned == class && self.servers[s].status != Status::Idle)
                    .collect();
                released.extend(busy.into_iter().rev().take(surplus));
            }
        }
        released.sort_unstable();
        let mut it = released.into_iter();
        for class in 0..m {
            let deficit = target[class].saturating_sub(self.allocation[class]);
            for _ in 0..deficit {
                let s = it.next().expect("released servers cover every deficit");
                self.servers[s].assigned = class;
                if self.servers[s].status == Status::Idle {
                    self.idle[class].push(s);
                }
            }
        }
        debug_assert!(it.next().is_none());
        for list in &mut self.idle {
            list.sort_unstable_by(|a, b| b.cmp(a));
        }
        self.allocation.clone_from(target);
        self.summary.allocation_changes += 1;
        let mut rec = TraceRecord::new(self.now, EventKind::Allocation);
        rec.allocation = Some(target.clone());
        self.record(rec);
        let sessions = self.active_sessions();
        let snap = snapshot!(self, &sessions);
        self.policy.refresh(&snap);
    }

    fn check_invariants(&self) -> Result<()> {
        let fail = |what: String| {
            Err(Error::InvariantViolated {
                time: self.now,
                what,
            })
        };
        if self.allocation.iter().sum::<usize>() != self.cfg.servers {
            return fail(format!("allocation {:?} does not sum to {}", self.allocation, self.cfg.servers));
        }
        let mut counts = vec![0usize; self.classes.len()];
        for s in &self.servers {
            counts[s.assigned] += 1;
        }
        if counts != self.allocation {
            return fail(format!("servers assigned {counts:?}, allocation {:?}", self.allocation));
        }
        for (class, q) in self.queues.iter().enumerate() {
            if !q.is_empty() && !self.idle[class].is_empty() {
                return fail(format!("class {class} has idle servers and {} waiting jobs", q.len()));
            }
        }
        for (class, list) in self.idle.iter().enumerate() {
            for &s in list {
                if self.servers[s].status != Status::Idle || self.servers[s].assigned != class {
                    return fail(format!("server {s} listed idle for class {class}"));
                }
            }
        }
        let idle_total: usize = self.idle.iter().map(Vec::len).sum();
        let idle_actual = self.servers.iter().filter(|s| s.status == Status::Idle).count();
        if idle_total != idle_actual {
            return fail(format!("{idle_actual} idle servers but {idle_total} listed"));
        }
        for (i, s) in self.servers.iter().enumerate() {
            if let Status::Busy { end, .. } = s.status {
                if end < self.now {
                    return fail(format!("server {i} still busy after its job ended at {end}"));
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> RunOutput {
        for slot in self.slots.iter().flatten() {
            let class = slot.state.class;
            self.ledger
                .close_in_flight(class, slot.accepted_at, self.classes[class].charge);
        }
        self.summary.final_allocation = self.allocation.clone();
        self.summary.end_time = self.now;
        RunOutput {
            ledger: self.ledger,
            summary: self.summary,
            trace: self.trace,
        }
    }
}
