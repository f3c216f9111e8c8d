use statrs::distribution::{ContinuousCDF, StudentsT};

use slasim::metrics::t_quantile_975;
use slasim::queueing::{erlang_c, find_threshold, threshold_blocking, threshold_revenue, Threshold, ThresholdSearch};
use slasim::workload::{ArrivalProcess, Distribution};
use slasim::{ServiceClass, TrafficEstimate};

#[test]
fn t_table_matches_students_t() {
    for df in 1..=30 {
        let t = StudentsT::new(0.0, 1.0, df as f64).unwrap().inverse_cdf(0.975);
        assert!((t_quantile_975(df) - t).abs() < 1e-3, "df={df}: {} vs {t}", t_quantile_975(df));
    }
    assert!((t_quantile_975(1000) - 1.96).abs() < 1e-3);
}

/// Erlang-C from the birth–death balance equations of M/M/n.
fn erlang_c_balance(n: usize, a: f64) -> f64 {
    let mut p = vec![1.0f64];
    for i in 1..=n {
        p.push(p[i - 1] * a / i as f64);
    }
    let head: f64 = p[..n].iter().sum();
    let tail = p[n] / (1.0 - a / n as f64);
    tail / (head + tail)
}

#[test]
fn erlang_c_matches_balance_equations() {
    for n in 1..=12 {
        for util in [0.05, 0.25, 0.5, 0.75, 0.95] {
            let a = util * n as f64;
            assert!((erlang_c(n, a) - erlang_c_balance(n, a)).abs() < 1e-12);
        }
    }
}

#[test]
fn loss_system_matches_product_form() {
    // M/M/5/5 with A = 2: (2^5/5!) / Σ 2^j/j!
    let terms: Vec<f64> = (0..=5).scan(1.0, |t, j| {
        if j > 0 {
            *t *= 2.0 / j as f64;
        }
        Some(*t)
    }).collect();
    let expected = terms[5] / terms.iter().sum::<f64>();
    assert!((threshold_blocking(5, 2.0) - expected).abs() < 1e-12);
}

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

#[test]
fn reference_class_revenue_is_unimodal() {
    let c = reference_class();
    let est = TrafficEstimate::prior(1.0, 1.0);
    let search = ThresholdSearch::default();
    let r: Vec<f64> = (1..=40).map(|m| threshold_revenue(&c, &est, m, 5, search.load)).collect();
    let peak = (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
    assert!(r[..=peak].windows(2).all(|w| w[1] >= w[0]));
    assert!(r[peak..].windows(2).all(|w| w[1] <= w[0] + 1e-12));
    // Five servers carry at most about two sessions at two jobs per second.
    assert_eq!(peak + 1, 2);
    // B(2, 2.5) = 3.125 / 6.625, so at most δ(1 − B)·c = 0.5283 per second.
    let admitted = 0.1 * (1.0 - 3.125 / 6.625);
    assert!(r[peak] < admitted * 10.0);
    assert!((r[peak] - 0.4454).abs() < 1e-4, "peak revenue {}", r[peak]);
    assert_eq!(find_threshold(&c, &est, 5, &search), Threshold::Finite(2));
}
