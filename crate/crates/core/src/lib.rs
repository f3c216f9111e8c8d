//! Simulator for session admission control and server allocation in a
//! cluster that sells service under per-session SLAs.
//!
//! A provider runs `N` identical servers shared by `m` classes of traffic.
//! Clients open sessions; a session is a burst of `k` jobs submitted at rate
//! `γ`. Each accepted session earns a charge and costs a penalty when the
//! average waiting time of its jobs exceeds the obligation. An admission
//! policy decides which sessions to accept and how to split the servers
//! among classes so that net revenue per second is maximized.
//!
//! Modules, bottom up:
//!
//! - [`domain`]: classes, sessions, estimates and the revenue ledger
//! - [`workload`]: distributions and seeded arrival streams
//! - [`queueing`]: Erlang formulas, the session-mean wait tail `g`, thresholds
//! - [`estimation`]: windowed traffic estimates
//! - [`policies`]: Admit-All, Threshold, Current-State and Long-Run
//! - [`engine`]: the discrete-event simulation
//! - [`metrics`]: revenue rates, confidence intervals, wait histograms
//! - [`harness`]: declarative experiments, sweeps and CSV output
//!
//! ```
//! use slasim::{run, build_policy, PolicyKind, ServiceClass, SimConfig};
//! use slasim::queueing::ThresholdSearch;
//! use slasim::workload::{ArrivalProcess, Distribution};
//!
//! let class = ServiceClass {
//!     id: 0,
//!     charge: 10.0,
//!     penalty: 10.0,
//!     obligation: 1.0,
//!     jobs_per_session: 20,
//!     job_rate: 2.0,
//!     session_rate: 0.05,
//!     weight: 1.0,
//!     service: Distribution::Exponential { mean: 1.0 },
//!     arrivals: ArrivalProcess::Poisson,
//! };
//! let cfg = SimConfig::new(4, vec![class], 600.0);
//! let mut policy = build_policy(PolicyKind::LongRun, &cfg.classes, ThresholdSearch::default());
//! let out = run(&cfg, policy.as_mut(), 1).unwrap();
//! assert!(out.ledger.classes[0].offered > 0);
//! ```

pub mod domain;
pub mod engine;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod metrics;
pub mod policies;
pub mod queueing;
pub mod workload;

pub use domain::{RevenueLedger, ServiceClass, TrafficEstimate};
pub use engine::{run, RunOutput, SimConfig};
pub use error::{Error, Result};
pub use harness::{run_experiment, ExperimentConfig};
pub use policies::{build_policy, AdmissionPolicy, PolicyKind};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/workload.md")]
    mod workload {}
    #[doc = include_str!("../../../book/src/waiting.md")]
    mod waiting {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/policies.md")]
    mod policies {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
