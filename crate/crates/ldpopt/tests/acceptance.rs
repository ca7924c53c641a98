//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported but do not fail the process unless
//! `LDPOPT_ACCEPTANCE_STRICT=1` is set, so that `cargo test` stays usable
//! while known gaps are tracked.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::*;
use ldpopt::harness::{run_dimension_study, run_experiment, solve_reference, summarize, DimStudyConfig, ExperimentConfig};
use ldpopt::noise::calibrate_relaxed;
use ldpopt::objectives::{Link, ObjectiveSpec};
use ldpopt::optimizers::{
    admm_exact_step, admm_first_order_step, g_norm, gd_step_baseline, initial_states, noisy_envelope, rcd_step,
    validate_admm_params, ConstraintSystem, ExchangeChannel, GdParams, StepSize, WeightMode,
};
use ldpopt::privacy::{
    compose_strong, gamma_bound, gamma_bound_corrected, gamma_monte_carlo, interval_laplace_mass, step_loss,
};
use ldpopt::quadrature::integrate_pieces;
use ldpopt::rng::stream;
use ldpopt::secretshare::{aggregate_exchange, split, FixedPointCodec};
use ldpopt::{AdmmVariant, Mechanism, NoiseSchedule, ObjectiveKind, StepLossQuery, Topology, ValidationOutcome};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(tag: u64) -> impl Rng {
    stream(20_240_917, 1000 + tag, 0, 0)
}

fn c1_step_bound() -> Outcome {
    let mut r = rng(1);
    let (mut over, mut not_strict, mut inside) = (0, 0, 0);
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..100_000 {
        let omega = if r.random_bool(0.1) { 0.0 } else { 10f64.powf(r.random_range(-3.0..1.0)) };
        let q = StepLossQuery {
            realized_value: r.random_range(-5.0..5.0),
            interval_lo: r.random_range(-3.0..2.0),
            omega,
            beta: 10f64.powf(r.random_range(-1.0..1.0)),
            alpha: 10f64.powf(r.random_range(-2.0..0.0)),
            sensitivity: 10f64.powf(r.random_range(-3.0..0.0)),
        };
        let loss = step_loss(&q).unwrap();
        let cap = q.worst_case();
        worst_excess = worst_excess.max(loss - cap);
        if loss > cap + 1e-12 {
            over += 1;
        }
        let x = q.realized_value;
        if omega > 0.0 && x > q.interval_lo && x < q.interval_lo + omega {
            inside += 1;
            if loss >= cap || loss.is_nan() {
                not_strict += 1;
            }
        }
    }
    outcome(
        over == 0 && not_strict == 0,
        format!("10^5 queries, {over} above cap, {not_strict}/{inside} interior not strict, max excess {worst_excess:.2e}"),
    )
}

fn c2_amplification() -> Outcome {
    let ab = 0.001;
    let omegas: Vec<f64> = (1..=10).map(|i| 0.1 * i as f64).collect();
    let betas: Vec<f64> = (2..=10).map(f64::from).collect();
    let grid: Vec<Vec<f64>> =
        omegas.iter().map(|&w| betas.iter().map(|&b| gamma_bound(w, b, ab).unwrap()).collect()).collect();
    let below_one = grid.iter().flatten().all(|&g| g < 1.0);
    let mut monotone = true;
    for i in 0..omegas.len() {
        for j in 0..betas.len() {
            if i + 1 < omegas.len() && grid[i + 1][j] > grid[i][j] + 1e-12 {
                monotone = false;
            }
            if j + 1 < betas.len() && grid[i][j + 1] > grid[i][j] + 1e-12 {
                monotone = false;
            }
        }
    }
    let coarse_w = [0.1, 0.4, 0.7, 1.0];
    let coarse_b = [2.0, 14.0 / 3.0, 22.0 / 3.0, 10.0];
    let (mut violations, mut corrected_violations) = (0, 0);
    let mut worst_z = f64::NEG_INFINITY;
    for (i, &w) in coarse_w.iter().enumerate() {
        for (j, &b) in coarse_b.iter().enumerate() {
            let (mean, se) = gamma_monte_carlo(w, b, ab, 10_000_000, (4 * i + j) as u64).unwrap();
            let bound = gamma_bound(w, b, ab).unwrap();
            worst_z = worst_z.max((mean - bound) / se);
            if mean > bound + 3.0 * se {
                violations += 1;
            }
            if mean > gamma_bound_corrected(w, b, ab).unwrap() + 3.0 * se {
                corrected_violations += 1;
            }
        }
    }
    outcome(
        below_one && monotone && violations == 0,
        format!(
            "bound<1: {below_one}, monotone: {monotone}, MC above bound+3se at {violations}/16 (max z {worst_z:.1}); \
             corrected bound violated at {corrected_violations}/16"
        ),
    )
}

fn c3_reduction() -> Outcome {
    let cfg = ExperimentConfig::load(config_path("example_a.toml")).unwrap();
    let reports = run_experiment(&cfg).unwrap();
    let summary = summarize(&cfg, &reports);
    let ratio = summary.arms.iter().find(|a| a.label == "primary").and_then(|a| a.mean_privacy_ratio).unwrap();
    outcome((0.55..=0.85).contains(&ratio), format!("mean realized/worst ratio {ratio:.4} (band [0.55, 0.85])"))
}

fn c4_linear_convergence() -> Outcome {
    let fs = ridge_instance();
    let sys = ConstraintSystem::Consensus(Topology::complete(AGENTS));
    let reference = solve_reference(&fs, &sys).unwrap();
    let prof = profiles(&fs);
    let mut pass = true;
    let mut parts = Vec::new();
    for (variant, params) in [(AdmmVariant::Exact, exact_params()), (AdmmVariant::FirstOrder, first_order_params())] {
        let ValidationOutcome::Valid { p } = validate_admm_params(&params, &prof, &sys, variant).unwrap() else {
            pass = false;
            parts.push(format!("{variant:?}: parameters rejected"));
            continue;
        };
        let mut states = initial_states::<f64>(AGENTS, DIM, DIM, &params.d_constants, 3);
        let mut g = g_norm(&states, &reference, &params.d_constants, params.zeta, &sys).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..100 {
            let none = NoiseSchedule::none();
            states = match variant {
                AdmmVariant::Exact => admm_exact_step(&states, &params, &sys, &fs, &none, k),
                AdmmVariant::FirstOrder => admm_first_order_step(&states, &params, &sys, &fs, &none, k),
            }
            .unwrap()
            .0;
            let next = g_norm(&states, &reference, &params.d_constants, params.zeta, &sys).unwrap();
            worst = worst.max(next / g);
            g = next;
        }
        let bound = 1.0 / (1.0 + p);
        pass &= worst <= bound;
        parts.push(format!("{variant:?}: max ratio {worst:.4} vs 1/(1+p) {bound:.4}"));
    }
    outcome(pass, parts.join("; "))
}

fn c5_randomization_free() -> Outcome {
    let cfg = ExperimentConfig::load(config_path("example_d.toml")).unwrap();
    let summary = summarize(&cfg, &run_experiment(&cfg).unwrap());
    let arm = |l: &str| summary.arms.iter().find(|a| a.label == l).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (rand, fixed) in [("primary", "admm_fixed"), ("gd_random", "gd_fixed")] {
        let (a, b) = (arm(rand), arm(fixed));
        let rel = (a.final_objective_gap - b.final_objective_gap).abs() / b.final_objective_gap;
        pass &= rel <= 0.01;
        let (la, lb) = (a.mean_accuracy.last().unwrap(), b.mean_accuracy.last().unwrap());
        parts.push(format!(
            "{rand} vs {fixed}: gaps {:.3e}/{:.3e} rel {rel:.3} (log-accuracy {la:.3}/{lb:.3})",
            a.final_objective_gap, b.final_objective_gap
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c6_dgd_rate() -> Outcome {
    let fs = ridge_instance();
    let sys = ConstraintSystem::Consensus(Topology::complete(AGENTS));
    let star = solve_reference(&fs, &sys).unwrap().primal[0].clone();
    let f_star: f64 = fs.iter().map(|f| f.evaluate(&star).unwrap()).sum();
    let c = 2.0;
    let params = GdParams::new(StepSize::InvSqrt { c }, WeightMode::FixedAverage, 0);
    let weights = vec![vec![1.0 / AGENTS as f64; AGENTS]; AGENTS];
    let n = AGENTS as f64;
    let mut pass = true;
    let mut parts = Vec::new();
    let mut first_scaled = None;
    for horizon in [100usize, 400, 1600] {
        let mut states = initial_states::<f64>(AGENTS, DIM, 0, &[1.0; AGENTS], 3);
        let init: f64 = states.iter().map(|s| dist_sq(&s.primal, &star)).sum();
        let mut running = vec![0.0; DIM];
        let mut g_sq: f64 = 0.0;
        for k in 0..horizon {
            let mean: Vec<f64> = (0..DIM).map(|l| states.iter().map(|s| s.primal[l]).sum::<f64>() / n).collect();
            running.iter_mut().zip(&mean).for_each(|(r, m)| *r += m / horizon as f64);
            for f in &fs {
                g_sq = g_sq.max(f.gradient(&mean).unwrap().iter().map(|v| v * v).sum());
            }
            states = gd_step_baseline(&states, &weights, None, &params, &fs, &NoiseSchedule::none(), k, true).unwrap().0;
        }
        let gap = fs.iter().map(|f| f.evaluate(&running).unwrap()).sum::<f64>() - f_star;
        let kf = horizon as f64;
        let bound = (c * kf.sqrt() * init + n / c * (kf.ln() + 2.0) * (kf + 1.0).sqrt() * g_sq) / kf;
        let scaled = gap * kf.sqrt();
        let c_fit = *first_scaled.get_or_insert(scaled);
        pass &= gap <= bound && scaled <= c_fit * (1.0 + 1e-9);
        parts.push(format!("K={horizon}: gap {gap:.3e} bound {bound:.3e} gap*sqrtK {scaled:.3e}"));
    }
    outcome(pass, parts.join("; "))
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn c7_noisy_envelope() -> Outcome {
    let fs = ridge_instance();
    let sys = ConstraintSystem::Consensus(Topology::complete(AGENTS));
    let reference = solve_reference(&fs, &sys).unwrap();
    let params = first_order_params();
    let p = validate_admm_params(&params, &profiles(&fs), &sys, AdmmVariant::FirstOrder).unwrap().contraction().unwrap();
    let sigma_min: Vec<f64> = (0..AGENTS).map(|i| sys.singular_sq(i).0).collect();
    let (mut under, mut total) = (0usize, 0usize);
    for seed in 0..10u64 {
        let noise = NoiseSchedule::laplace_geometric(1.0, 1.02, 100 + seed);
        let mut states = initial_states::<f64>(AGENTS, DIM, DIM, &params.d_constants, seed);
        let g0 = g_norm(&states, &reference, &params.d_constants, params.zeta, &sys).unwrap();
        let mut trace = vec![g0];
        let mut noise_sq = Vec::new();
        for k in 0..100 {
            let (next, rec) = admm_first_order_step(&states, &params, &sys, &fs, &noise, k).unwrap();
            states = next;
            noise_sq.push(rec.noise.iter().map(|v| v.iter().map(|x| x * x).sum()).collect::<Vec<f64>>());
            trace.push(g_norm(&states, &reference, &params.d_constants, params.zeta, &sys).unwrap());
        }
        let env = noisy_envelope(g0, p, 0.5, params.zeta, &params.d_constants, &sigma_min, &noise_sq).unwrap();
        for k in 1..trace.len() {
            total += 1;
            under += usize::from(trace[k] <= env[k]);
        }
    }
    let frac = under as f64 / total as f64;
    outcome(frac >= 0.95, format!("{under}/{total} iterations under the envelope ({:.1}%)", 100.0 * frac))
}

fn c8_secret_sharing() -> Outcome {
    let codec = FixedPointCodec::default();
    let mut r = rng(8);
    let mut recon_err: f64 = 0.0;
    let mut recon_ok = true;
    for n in [3usize, 5, 10] {
        for trial in 0..200u64 {
            let secrets: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| r.random_range(-50.0..50.0)).collect()).collect();
            let bundles: Vec<_> = secrets
                .iter()
                .enumerate()
                .map(|(i, s)| split(&codec.encode(s).unwrap(), n, i, trial, &codec).unwrap())
                .collect();
            let total = aggregate_exchange(&bundles, &codec).unwrap();
            for l in 0..4 {
                let exact: f64 = secrets.iter().map(|s| s[l]).sum();
                let err = (total[l] - exact).abs();
                recon_err = recon_err.max(err);
                recon_ok &= err <= n as f64 / (2.0 * codec.scale());
            }
        }
    }

    let fs = ridge_instance();
    let sys = ConstraintSystem::Consensus(Topology::complete(AGENTS));
    let plain = first_order_params();
    let shared = ldpopt::AdmmParams { exchange: ExchangeChannel::SecretShared { scale_bits: 16, seed: 5 }, ..plain.clone() };
    let horizon = 50;
    let (mut a, mut b) = (
        initial_states::<f64>(AGENTS, DIM, DIM, &plain.d_constants, 2),
        initial_states::<f64>(AGENTS, DIM, DIM, &plain.d_constants, 2),
    );
    for k in 0..horizon {
        a = admm_first_order_step(&a, &plain, &sys, &fs, &NoiseSchedule::none(), k).unwrap().0;
        b = admm_first_order_step(&b, &shared, &sys, &fs, &NoiseSchedule::none(), k).unwrap().0;
    }
    let drift = a.iter().zip(&b).flat_map(|(x, y)| x.primal.iter().zip(&y.primal).map(|(u, v)| (u - v).abs())).fold(0.0, f64::max);
    let drift_cap = (horizon * AGENTS) as f64 / (2.0 * codec.scale());

    let (stat5, df5) = collusion_statistic(5, &[2, 3, 4]);
    let (stat3, df3) = collusion_statistic(3, &[2]);
    let crit = |df: f64| ChiSquared::new(df).unwrap().inverse_cdf(0.99);
    let indist = stat5 <= crit(df5) && stat3 <= crit(df3);
    outcome(
        recon_ok && drift <= drift_cap && indist,
        format!(
            "reconstruction max err {recon_err:.2e}; shared vs plain drift {drift:.2e} (cap {drift_cap:.2e}); \
             chi2 N=5 {stat5:.1}/{:.1}, N=3 {stat3:.1}/{:.1}",
            crit(df5),
            crit(df3)
        ),
    )
}

/// Two worlds where the honest agents 0 and 1 hold different secrets with
/// the same sum. Histograms the coalition's view of agent 0 (the share it
/// received from agent 0 and agent 0's broadcast) in each world.
fn collusion_statistic(n: usize, colluders: &[usize]) -> (f64, f64) {
    let codec = FixedPointCodec::default();
    let p = codec.modulus() as f64;
    let receiver = colluders[0];
    let bins = 10usize;
    let histogram = |secrets: [f64; 2], offset: u64| {
        let mut h = vec![0u64; bins * bins];
        for trial in 0..100_000u64 {
            let bundles: Vec<_> = (0..n)
                .map(|i| {
                    let v = if i < 2 { secrets[i] } else { 0.7 * i as f64 };
                    split(&codec.encode(&[v]).unwrap(), n, i, offset + trial, &codec).unwrap()
                })
                .collect();
            let seen = bundles[0].shares[receiver][0] as f64 / p;
            let broadcast = codec.sum(bundles.iter().map(|b| b.shares[0].as_slice()), 1)[0] as f64 / p;
            let cell = |u: f64| ((u * bins as f64) as usize).min(bins - 1);
            h[cell(seen) * bins + cell(broadcast)] += 1;
        }
        h
    };
    let a = histogram([1.5, -0.5], 0);
    let b = histogram([-2.25, 3.25], 1 << 32);
    chi_square_two_sample(&a, &b)
}

fn c9_composition() -> Outcome {
    let cases: [(&[f64], f64, f64); 3] = [
        (&[0.1, 0.2, 0.3], 1e-5, 1.865_038_939_004_244_5),
        (&[0.01; 100], 1e-6, 0.530_652_135_309_443_2),
        (&[1.0, 0.5], 0.01, 3.977_646_700_669_420_2),
    ];
    let mut worst: f64 = 0.0;
    for (eps, delta, expect) in cases {
        let hand: f64 = eps.iter().map(|&e| (e.exp() - 1.0) * e / (e.exp() + 1.0)).sum::<f64>()
            + (-2.0 * eps.iter().map(|e| e * e).sum::<f64>() * delta.ln()).sqrt();
        worst = worst.max((compose_strong(eps, delta).unwrap() - expect).abs()).max((hand - expect).abs());
    }
    let mut within = true;
    let mut landed = Vec::new();
    for (mech, eps, delta, k, d) in
        [(Mechanism::Laplace, 1.0, 1e-5, 100, 14), (Mechanism::Laplace, 5.0, 1e-6, 50, 3), (Mechanism::Gaussian, 2.0, 1e-5, 200, 10)]
    {
        let cal = calibrate_relaxed(eps, delta, k, d, 0.01, mech, |t| 1.0 / t as f64, 1).unwrap();
        let total = compose_strong(&vec![cal.eps_step; cal.terms], cal.delta_composition).unwrap();
        within &= total >= 0.999 * eps && total <= eps;
        landed.push(format!("{:.5}", total / eps));
    }
    outcome(worst <= 1e-12 && within, format!("max formula error {worst:.1e}; calibrated totals / ε = [{}]", landed.join(", ")))
}

fn c10_dimension_study() -> Outcome {
    let cfg = DimStudyConfig::load(config_path("dimstudy.toml")).unwrap();
    let rows = run_dimension_study(&cfg).unwrap();
    let (first, last) = (rows.first().unwrap(), rows.last().unwrap());
    let gauss = last.gaussian_gap / first.gaussian_gap;
    let lap = last.laplace_gap.unwrap() / first.laplace_gap.unwrap();
    outcome(
        first.dim == 10 && last.dim == 1000 && gauss <= 2.0 && lap >= 5.0,
        format!("Gaussian gap ratio d=1000/d=10 {gauss:.3} (≤ 2); Laplace contrast ratio {lap:.1} (≥ 5)"),
    )
}

fn c11_oracles() -> Outcome {
    let mut r = rng(11);
    let mut worst_mass: f64 = 0.0;
    for _ in 0..10_000 {
        let a = r.random_range(-3.0..3.0);
        let b = a + 10f64.powf(r.random_range(-3.0..1.0));
        let x = r.random_range(-6.0..6.0);
        let beta = 10f64.powf(r.random_range(-1.0..1.5));
        let mut pts = vec![a, b];
        if x > a && x < b {
            pts.insert(1, x);
        }
        let quad = integrate_pieces(|y| (-beta * (x - y).abs()).exp(), &pts, 0.0, 1e-13).value;
        let closed = interval_laplace_mass(x, a, b, beta).unwrap();
        worst_mass = worst_mass.max((closed - quad).abs() / quad);
    }

    let kinds = [
        ObjectiveKind::LogisticL2,
        ObjectiveKind::RidgeQuadratic,
        ObjectiveKind::GeneralizedLinear(Link::Logistic),
        ObjectiveKind::GeneralizedLinear(Link::Squared),
        ObjectiveKind::GeneralizedLinear(Link::Huber { delta: 0.5 }),
    ];
    let mut worst_grad: f64 = 0.0;
    for kind in kinds {
        for _ in 0..100 {
            let (rows, d) = (r.random_range(3..15), r.random_range(2..8));
            let data: Vec<Vec<f64>> = (0..rows).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let labels = (0..rows)
                .map(|_| match kind {
                    ObjectiveKind::LogisticL2 | ObjectiveKind::GeneralizedLinear(Link::Logistic) => f64::from(r.random_range(0..2)),
                    _ => r.random_range(-2.0..2.0),
                })
                .collect();
            let f = ObjectiveSpec::new(kind, ldpopt::Matrix::from_rows(&data).unwrap(), labels, r.random_range(0.0..1.0)).unwrap();
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let g = f.gradient(&x).unwrap();
            let h = 1e-6;
            let fd: Vec<f64> = (0..d)
                .map(|l| {
                    let (mut up, mut dn) = (x.clone(), x.clone());
                    up[l] += h;
                    dn[l] -= h;
                    (f.evaluate(&up).unwrap() - f.evaluate(&dn).unwrap()) / (2.0 * h)
                })
                .collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
            worst_grad = worst_grad.max(dist_sq(&g, &fd).sqrt() / norm);
        }
    }

    let fs = ridge_instance();
    let f = &fs[0];
    let mut counts = [0u64; DIM];
    let mut x = vec![0.0; DIM];
    for k in 0..10_000 {
        let (next, l) = rcd_step(&x, f, 10.0, &NoiseSchedule::none(), k, 0, 42).unwrap();
        x = next;
        counts[l] += 1;
    }
    let expect = 10_000.0 / DIM as f64;
    let chi: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let crit = ChiSquared::new((DIM - 1) as f64).unwrap().inverse_cdf(0.99);

    outcome(
        worst_mass <= 1e-10 && worst_grad <= 1e-5 && chi <= crit,
        format!("mass rel err {worst_mass:.1e}; gradient rel err {worst_grad:.1e}; RCD chi2 {chi:.1}/{crit:.1}"),
    )
}

type Criterion = (&'static str, u64, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("per-step privacy bound", 10, c1_step_bound),
        ("amplification figure", 300, c2_amplification),
        ("privacy loss reduction", 120, c3_reduction),
        ("ADMM linear convergence", 30, c4_linear_convergence),
        ("randomization is free", 120, c5_randomization_free),
        ("DGD rate", 60, c6_dgd_rate),
        ("noisy contraction envelope", 120, c7_noisy_envelope),
        ("secret sharing", 180, c8_secret_sharing),
        ("composition correctness", 1, c9_composition),
        ("dimension study", 300, c10_dimension_study),
        ("oracle equivalences", 60, c11_oracles),
    ];
    let only: Option<usize> = std::env::var("LDPOPT_ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (idx, (name, limit, run)) in criteria.iter().enumerate() {
        let id = idx + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed < Duration::from_secs(*limit);
        failed += usize::from(!pass);
        println!(
            "{} {id:>2} {name}: {} [{:.2} s, limit {limit} s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {failed} criteria failing");
    if failed > 0 && std::env::var("LDPOPT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
