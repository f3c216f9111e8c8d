use proptest::prelude::*;

use slasim::domain::{Attribution, RevenueLedger, ServiceClass, TrafficEstimate};
use slasim::estimation::{EstimatorConfig, WindowAccumulator};
use slasim::metrics::{confidence_interval, WaitPdf};
use slasim::policies::{admit_threshold, allocate_shares};
use slasim::queueing::{
    erlang_c, find_threshold_cached, mean_wait_exceedance, threshold_blocking, threshold_revenue, TailCache,
    Threshold, ThresholdLoad, ThresholdSearch,
};
use slasim::workload::{ArrivalProcess, Distribution};

fn class(charge: f64, penalty: f64, k: u32, gamma: f64, delta: f64) -> ServiceClass {
    ServiceClass {
        id: 0,
        charge,
        penalty,
        obligation: 1.0,
        jobs_per_session: k,
        job_rate: gamma,
        session_rate: delta,
        weight: 1.0,
        service: Distribution::Exponential { mean: 1.0 },
        arrivals: ArrivalProcess::Poisson,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tail_is_a_probability(x in 0.0f64..4.0, util in 0.0f64..1.2, k in 1u32..60, n in 0usize..12, scv in 0.0f64..8.0) {
        let g = mean_wait_exceedance(x, util * n as f64, k, n, 1.0, 1.0, scv);
        prop_assert!((0.0..=1.0).contains(&g), "g = {g}");
    }

    #[test]
    fn tail_monotone_in_obligation(x in 0.05f64..3.0, dx in 0.01f64..1.0, util in 0.05f64..0.95, k in 1u32..60, n in 1usize..12) {
        let lam = util * n as f64;
        let lo = mean_wait_exceedance(x, lam, k, n, 1.0, 1.0, 1.0);
        let hi = mean_wait_exceedance(x + dx, lam, k, n, 1.0, 1.0, 1.0);
        prop_assert!(hi <= lo + 1e-9, "{lo} then {hi}");
    }

    #[test]
    fn tail_monotone_in_rate(x in 0.05f64..3.0, util in 0.05f64..0.9, du in 0.01f64..0.1, k in 1u32..60, n in 1usize..12) {
        let lo = mean_wait_exceedance(x, util * n as f64, k, n, 1.0, 1.0, 1.0);
        let hi = mean_wait_exceedance(x, (util + du) * n as f64, k, n, 1.0, 1.0, 1.0);
        prop_assert!(hi + 1e-9 >= lo, "{lo} then {hi}");
    }

    #[test]
    fn tail_monotone_in_servers(x in 0.05f64..3.0, lam in 0.1f64..8.0, k in 1u32..60, n in 1usize..12) {
        let few = mean_wait_exceedance(x, lam, k, n, 1.0, 1.0, 1.0);
        let more = mean_wait_exceedance(x, lam, k, n + 1, 1.0, 1.0, 1.0);
        prop_assert!(more <= few + 1e-9, "{few} then {more}");
    }

    #[test]
    fn erlang_c_monotone(n in 1usize..30, a in 0.0f64..30.0, da in 0.0f64..2.0) {
        let c = erlang_c(n, a);
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!(erlang_c(n, a + da) + 1e-12 >= c);
        prop_assert!(erlang_c(n + 1, a) <= c + 1e-12);
    }

    #[test]
    fn blocking_falls_with_capacity(m in 0u32..50, a in 0.0f64..40.0) {
        let b = threshold_blocking(m, a);
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!(threshold_blocking(m + 1, a) <= b + 1e-12);
    }

    #[test]
    fn allocation_sums_to_cluster(loads in prop::collection::vec(0.0f64..10.0, 1..8), n in 1usize..64) {
        let d = allocate_shares(&loads, n);
        prop_assert_eq!(d.target.iter().sum::<usize>(), n);
        for (t, s) in d.target.iter().zip(&d.shares) {
            prop_assert!((*t as f64 - s).abs() < 2.0);
        }
    }

    #[test]
    fn allocation_scale_invariant(loads in prop::collection::vec(0.01f64..10.0, 1..8), n in 1usize..64, e in -8i32..8) {
        let scaled: Vec<f64> = loads.iter().map(|w| w * 2f64.powi(e)).collect();
        prop_assert_eq!(allocate_shares(&loads, n).target, allocate_shares(&scaled, n).target);
    }

    #[test]
    fn allocation_permutation_equivariant(loads in prop::collection::vec(0.01f64..10.0, 2..8), n in 1usize..64, shift in 0usize..8) {
        let m = loads.len();
        let rotated: Vec<f64> = (0..m).map(|i| loads[(i + shift) % m]).collect();
        let base = allocate_shares(&loads, n).target;
        let rot = allocate_shares(&rotated, n).target;
        for i in 0..m {
            prop_assert_eq!(rot[i], base[(i + shift) % m]);
        }
    }

    #[test]
    fn threshold_admission_monotone(active in 1usize..500, m in 0u32..500) {
        if admit_threshold(active, Threshold::Finite(m)) {
            prop_assert!(admit_threshold(active - 1, Threshold::Finite(m)));
        }
    }

    #[test]
    fn estimates_stay_finite(
        arrivals in prop::collection::vec(0.0f64..5.0, 0..200),
        services in prop::collection::vec(0.0f64..20.0, 0..200),
        publish in prop::collection::vec(0.0f64..5.0, 1..30),
    ) {
        let c = class(1.0, 1.0, 5, 2.0, 0.1);
        let mut acc = WindowAccumulator::new(&[c], EstimatorConfig::default());
        let mut t = 0.0;
        let mut a = arrivals.iter();
        let mut s = services.iter();
        for gap in publish {
            for _ in 0..7 {
                if let Some(g) = a.next() {
                    t += g;
                    acc.record_job_arrival(0, t);
                }
                if let Some(d) = s.next() {
                    acc.record_service(0, *d);
                }
            }
            t += gap;
            let e = acc.publish_estimates(t)[0];
            let fields = [e.arrival_rate, e.mean_service, e.interarrival_scv, e.service_scv];
            prop_assert!(fields.iter().all(|v| v.is_finite() && *v >= 0.0), "{e:?}");
        }
    }

    #[test]
    fn bucket_revenue_adds_up(
        events in prop::collection::vec((0.0f64..1000.0, 0usize..3, 0.0f64..20.0, prop::option::of(0.0f64..30.0)), 0..100),
        completion in any::<bool>(),
    ) {
        let attribution = if completion { Attribution::Completion } else { Attribution::CashFlow };
        let mut l = RevenueLedger::new(3, 1000.0, 90.0, attribution);
        for &(t, c, charge, penalty) in &events {
            l.book_acceptance(c, charge, t * 0.5);
            l.book_completion(c, t, charge, penalty, 0.0, 0.0);
        }
        let buckets: f64 = l.buckets.iter().map(|b| b.revenue).sum();
        prop_assert!((buckets - l.revenue()).abs() < 1e-6);
    }

    #[test]
    fn pdf_has_unit_mass(waits in prop::collection::vec(0.0f64..5.0, 1..300), bin in 0.01f64..1.0) {
        let pdf = WaitPdf::from_waits(&waits, bin);
        prop_assert_eq!(pdf.total() as usize, waits.len());
        let mass: f64 = pdf.density().iter().map(|(_, d)| d * bin).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn interval_contains_mean(xs in prop::collection::vec(-10.0f64..10.0, 2..40)) {
        let ci = confidence_interval(&xs).unwrap();
        prop_assert!(ci.half_width >= 0.0);
        prop_assert!(ci.contains(ci.mean));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn threshold_search_matches_scan(
        delta in 0.02f64..0.4,
        k in 5u32..60,
        gamma in 0.5f64..3.0,
        charge in 1.0f64..20.0,
        ratio in 0.5f64..3.0,
        n in 1usize..16,
        full in any::<bool>(),
    ) {
        let c = class(charge, charge * ratio, k, gamma, delta);
        let est = TrafficEstimate::prior(1.0, 1.0);
        let load = if full { ThresholdLoad::Full } else { ThresholdLoad::MeanActive };
        let search = ThresholdSearch { max_threshold: 80, load, ..ThresholdSearch::default() };
        let revenue: Vec<f64> = (1..=search.max_threshold).map(|m| threshold_revenue(&c, &est, m, n, load)).collect();
        let peak = (0..revenue.len()).max_by(|&a, &b| revenue[a].total_cmp(&revenue[b]).then(b.cmp(&a))).unwrap();
        let unimodal = revenue[..=peak].windows(2).all(|w| w[1] >= w[0] - 1e-12)
            && revenue[peak..].windows(2).all(|w| w[1] <= w[0] + 1e-12);
        prop_assume!(unimodal);
        let mut cache = TailCache::new(k);
        let found = find_threshold_cached(&c, &est, n, &search, &mut cache);
        match found {
            Threshold::Finite(m) => {
                let r = revenue[m as usize - 1];
                prop_assert!(r >= revenue[peak] - 1e-3 * revenue[peak].abs().max(1.0),
                    "found M={m} with {r}, scan peak M={} with {}", peak + 1, revenue[peak]);
            }
            Threshold::Unbounded => {
                let tail = &revenue[revenue.len() / 2..];
                prop_assert!(tail.windows(2).all(|w| w[1] >= w[0] - 1e-6), "unbounded but revenue falls");
            }
        }
    }
}
