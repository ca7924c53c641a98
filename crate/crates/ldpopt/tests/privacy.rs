mod common;

use common::*;
use ldpopt::optimizers::{gd_step_baseline, initial_states, GdParams, StepSize, WeightMode};
use ldpopt::privacy::{
    compose_pure, compose_strong, compose_strong_homogeneous, gamma_bound, gamma_bound_corrected, gamma_exact,
    gamma_monte_carlo, interval_laplace_mass, realized_epsilon, step_loss, step_loss_grid, LedgerEntry,
};
use ldpopt::{NoiseSchedule, PrivacyLedger, StepLossQuery};
use proptest::prelude::*;

/// Composite Simpson on `[lo, hi]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(lo) + inner + f(hi)) * h / 3.0
}

/// Loss recomputed from Simpson masses; an oracle independent of the closed form.
fn loss_by_quadrature(q: &StepLossQuery) -> f64 {
    let s = q.alpha * q.sensitivity;
    let mass = |a: f64| simpson(|y| (-q.beta * (q.realized_value - y).abs()).exp(), a, a + q.omega, 20_000);
    let base = mass(q.interval_lo).ln();
    (base - mass(q.interval_lo + s).ln()).abs().max((base - mass(q.interval_lo - s).ln()).abs())
}

fn query() -> impl Strategy<Value = StepLossQuery> {
    (-5.0f64..5.0, -2.0f64..2.0, 0.01f64..3.0, 0.1f64..20.0, 0.001f64..1.0, 0.001f64..0.5).prop_map(|(x, a, w, b, al, s)| {
        StepLossQuery { realized_value: x, interval_lo: a, omega: w, beta: b, alpha: al, sensitivity: s }
    })
}

proptest! {
    #[test]
    fn step_loss_never_exceeds_worst_case(q in query()) {
        let e = step_loss(&q).unwrap();
        prop_assert!(e >= 0.0 && e <= q.worst_case() * (1.0 + 1e-12));
        if q.omega > q.alpha * q.sensitivity
            && q.realized_value > q.interval_lo + q.alpha * q.sensitivity
            && q.realized_value < q.interval_lo + q.omega - q.alpha * q.sensitivity
        {
            prop_assert!(e < q.worst_case());
        }
    }

    #[test]
    fn step_loss_is_translation_and_reflection_invariant(q in query(), c in -10.0f64..10.0) {
        let e = step_loss(&q).unwrap();
        let moved = StepLossQuery { realized_value: q.realized_value + c, interval_lo: q.interval_lo + c, ..q };
        let mirrored = StepLossQuery { realized_value: -q.realized_value, interval_lo: -q.interval_lo - q.omega, ..q };
        let tol = 1e-9 * q.worst_case().max(1e-12);
        prop_assert!((step_loss(&moved).unwrap() - e).abs() <= tol);
        prop_assert!((step_loss(&mirrored).unwrap() - e).abs() <= tol);
    }

    #[test]
    fn endpoint_shifts_attain_the_maximum(q in query()) {
        let e = step_loss(&q).unwrap();
        let grid = step_loss_grid(&q, 401).unwrap();
        prop_assert!(grid <= e * (1.0 + 1e-10) + 1e-15);
        prop_assert!(grid >= e * (1.0 - 1e-10) - 1e-15);
    }
}

#[test]
fn closed_form_mass_matches_quadrature() {
    for &(x, a, b, beta) in &[(0.3, 0.0, 1.0, 2.0), (-1.0, 0.0, 0.5, 5.0), (2.0, -1.0, 1.0, 0.7), (0.0, 0.0, 3.0, 10.0)] {
        let exact = interval_laplace_mass(x, a, b, beta).unwrap();
        let num = simpson(|y| (-beta * (x - y).abs()).exp(), a, x.clamp(a, b), 20_000)
            + simpson(|y| (-beta * (x - y).abs()).exp(), x.clamp(a, b), b, 20_000);
        assert!((exact - num).abs() < 1e-12, "{exact} vs {num}");
    }
    let far = interval_laplace_mass(0.0, -1e4, 1e4, 3.0).unwrap();
    assert!((far - 2.0 / 3.0).abs() < 1e-14);
}

#[test]
fn step_loss_matches_quadrature_oracle() {
    let cases = [
        StepLossQuery { realized_value: 0.4, interval_lo: 0.0, omega: 1.0, beta: 3.0, alpha: 0.5, sensitivity: 0.1 },
        StepLossQuery { realized_value: -0.7, interval_lo: 0.0, omega: 0.8, beta: 6.0, alpha: 1.0, sensitivity: 0.02 },
        StepLossQuery { realized_value: 1.1, interval_lo: 0.2, omega: 0.6, beta: 9.0, alpha: 0.1, sensitivity: 0.3 },
    ];
    for q in &cases {
        let got = step_loss(q).unwrap();
        assert!((got - loss_by_quadrature(q)).abs() < 1e-9 * q.worst_case().max(1.0), "{q:?}");
    }
}

#[test]
fn gamma_decreases_with_width_and_bounds_hold() {
    let ab = 0.001;
    for &beta in &[2.0, 5.0, 10.0] {
        let mut last = f64::INFINITY;
        for i in 1..=10 {
            let omega = 0.1 * i as f64;
            let exact = gamma_exact(omega, beta, ab).unwrap();
            assert!(exact > 0.0 && exact <= 1.0);
            assert!(exact < last);
            last = exact;
            assert!(gamma_bound_corrected(omega, beta, ab).unwrap() >= exact - 1e-9);
            assert!(gamma_bound(omega, beta, ab).unwrap() <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn monte_carlo_agrees_with_quadrature() {
    for &(omega, beta) in &[(0.2, 3.0), (0.6, 8.0), (1.0, 2.0)] {
        let exact = gamma_exact(omega, beta, 0.001).unwrap();
        let (mean, se) = gamma_monte_carlo(omega, beta, 0.001, 200_000, 3).unwrap();
        assert!((mean - exact).abs() <= 4.0 * se, "ω={omega} β={beta}: {mean} ± {se} vs {exact}");
    }
}

#[test]
fn fixed_weight_run_records_worst_case_entries() {
    let fs = ridge_instance();
    let params = GdParams::new(StepSize::Geometric { base: 0.5, ratio: 0.9 }, WeightMode::FixedAverage, 1);
    let w = vec![vec![1.0 / AGENTS as f64; AGENTS]; AGENTS];
    let beta = 4.0;
    let noise = NoiseSchedule::laplace_constant(beta, 2);
    let sens = 0.01;
    let mut s = initial_states::<f64>(AGENTS, DIM, 0, &[1.0; AGENTS], 1);
    let mut trace = Vec::new();
    for k in 0..12 {
        let (next, rec) = gd_step_baseline(&s, &w, None, &params, &fs, &noise, k, true).unwrap();
        s = next;
        trace.push(rec);
    }
    let ledger = realized_epsilon(&trace, sens).unwrap();
    assert_eq!(ledger.entries.len(), 12 * AGENTS * DIM);
    assert!(ledger.entries.iter().all(|e| e.realized == e.worst));
    let expect: f64 = (1..=12).map(|t| 0.5 * 0.9f64.powi(t) * beta * sens).sum::<f64>() * DIM as f64;
    let summary = ledger.summary(None).unwrap();
    assert!((summary.pure_total - expect).abs() < 1e-12 * expect);
    assert_eq!(summary.mean_ratio, 1.0);
    assert!(realized_epsilon(&trace, sens).is_ok());
    let noiseless = gd_step_baseline(&s, &w, None, &params, &fs, &NoiseSchedule::none(), 0, true).unwrap().1;
    assert!(realized_epsilon(&[noiseless], sens).is_err());
}

#[test]
fn composition_reference_cases() {
    assert_eq!(compose_pure(&[]).unwrap(), 0.0);
    assert_eq!(compose_strong(&[], 1e-5).unwrap(), 0.0);
    let e: f64 = 0.3;
    let one = compose_strong(&[e], (-1.0f64).exp()).unwrap();
    let hand = e * (e.exp() - 1.0) / (e.exp() + 1.0) + (2.0 * e * e).sqrt();
    assert!((one - hand).abs() < 1e-15);
    let many = vec![0.01; 1000];
    assert!((compose_pure(&many).unwrap() - 10.0).abs() < 1e-12);
    let strong = compose_strong(&many, 1e-5).unwrap();
    assert!(strong < 10.0);
    assert!((strong - compose_strong_homogeneous(0.01, 1000, 1e-5)).abs() < 1e-12);
    assert!(compose_strong(&[0.1], 1.0).is_err());
    assert!(compose_pure(&[-0.1]).is_err());
}

#[test]
fn ledger_csv_roundtrip_with_and_without_agent_column() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = PrivacyLedger {
        entries: (0..6)
            .map(|j| LedgerEntry { k: j / 2 + 1, agent: j % 2, l: j % 3, realized: 0.01 * j as f64, worst: 0.05 })
            .collect(),
    };
    let path = dir.path().join("ledger.csv");
    ledger.write_csv(&path).unwrap();
    let back = PrivacyLedger::read_csv(&path).unwrap();
    assert_eq!(back, ledger);
    assert_eq!(back.summary(Some(1e-5)).unwrap(), ledger.summary(Some(1e-5)).unwrap());

    let single = dir.path().join("single.csv");
    std::fs::write(&single, "k,l,realized_eps,worst_eps\n1,1,0.1,0.2\n2,1,0.05,0.2\n").unwrap();
    let one = PrivacyLedger::read_csv(&single).unwrap();
    assert!(one.entries.iter().all(|e| e.agent == 0));
    assert!((one.summary(None).unwrap().pure_total - 0.15).abs() < 1e-15);

    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "k,l,realized_eps\n1,1,0.1\n").unwrap();
    assert!(matches!(PrivacyLedger::read_csv(&broken), Err(ldpopt::Error::Ingestion(_))));
}
