use slasim::queueing::ThresholdSearch;
use slasim::workload::{ArrivalProcess, Distribution};
use slasim::{build_policy, run, PolicyKind, ServiceClass, SimConfig};

fn classes() -> Vec<ServiceClass> {
    [(0.06, 2.0), (0.03, 1.0)]
        .iter()
        .enumerate()
        .map(|(id, &(delta, gamma))| ServiceClass {
            id,
            charge: 10.0,
            penalty: 10.0,
            obligation: 1.0,
            jobs_per_session: 20,
            job_rate: gamma,
            session_rate: delta,
            weight: 1.0,
            service: Distribution::Exponential { mean: 1.0 },
            arrivals: ArrivalProcess::Poisson,
        })
        .collect()
}

fn config() -> SimConfig {
    let mut cfg = SimConfig::new(5, classes(), 1.0e6);
    cfg.arrival_cutoff = Some(1200.0);
    cfg.check_invariants = true;
    cfg
}

const ALL: [PolicyKind; 4] = [PolicyKind::AdmitAll, PolicyKind::Threshold, PolicyKind::CurrentState, PolicyKind::LongRun];

#[test]
fn drained_runs_conserve_sessions_and_jobs() {
    let cfg = config();
    for kind in ALL {
        let mut policy = build_policy(kind, &cfg.classes, ThresholdSearch::default());
        let out = run(&cfg, policy.as_mut(), 11).unwrap();
        for (i, c) in out.ledger.classes.iter().enumerate() {
            assert_eq!(c.offered, c.accepted + c.rejected, "{kind:?}");
            assert_eq!(c.accepted, c.completed, "{kind:?} class {i}");
            assert_eq!(c.in_flight, 0);
            let jobs = c.accepted * cfg.classes[i].jobs_per_session as u64;
            assert_eq!(out.summary.job_arrivals[i], jobs);
            assert_eq!(out.summary.service_completions[i], jobs);
            assert_eq!(out.ledger.session_waits[i].len() as u64, c.completed);
        }
        assert_eq!(out.summary.final_allocation.iter().sum::<usize>(), cfg.servers);
        let expected = 10.0 * out.ledger.classes.iter().map(|c| c.completed - c.violated).sum::<u64>() as f64;
        assert!((out.ledger.charges - out.ledger.penalties - expected).abs() < 1e-6);
    }
}

#[test]
fn admit_all_accepts_everything() {
    let cfg = config();
    let mut policy = build_policy(PolicyKind::AdmitAll, &cfg.classes, ThresholdSearch::default());
    let out = run(&cfg, policy.as_mut(), 3).unwrap();
    assert!(out.ledger.classes.iter().all(|c| c.rejected == 0 && c.offered > 0));
}

#[test]
fn same_seed_same_run() {
    let cfg = config();
    for kind in ALL {
        let a = run(&cfg, build_policy(kind, &cfg.classes, ThresholdSearch::default()).as_mut(), 5).unwrap();
        let b = run(&cfg, build_policy(kind, &cfg.classes, ThresholdSearch::default()).as_mut(), 5).unwrap();
        assert_eq!(a.ledger, b.ledger);
        assert_eq!(a.summary, b.summary);
        let c = run(&cfg, build_policy(kind, &cfg.classes, ThresholdSearch::default()).as_mut(), 6).unwrap();
        assert_ne!(a.ledger, c.ledger);
    }
}
