#![allow(dead_code)]

use std::path::PathBuf;

use ldpopt::harness::{generate_synthetic, SyntheticParams};
use ldpopt::objectives::{derive_profiles, ObjectiveSpec};
use ldpopt::optimizers::{AdmmParams, ExchangeChannel, PenaltyLaw};
use ldpopt::{ConvexityProfile, ObjectiveKind};

pub const AGENTS: usize = 5;
pub const DIM: usize = 10;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// Ridge consensus instance with rows shrunk so the local curvature
/// stays close to the ridge term (m ≈ 1.04, M ≈ 1.46).
pub fn ridge_instance() -> Vec<ObjectiveSpec<f64>> {
    let mut fs = generate_synthetic(&SyntheticParams {
        dim: DIM,
        agents: AGENTS,
        samples_per_agent: 20,
        kind: ObjectiveKind::RidgeQuadratic,
        reg: 1.0,
        flip_prob: 0.1,
        planted: None,
        intrinsic_dim: None,
        seed: 11,
    })
    .unwrap();
    for f in fs.iter_mut() {
        f.samples.data.iter_mut().for_each(|v| *v *= 0.3);
    }
    fs
}

pub fn profiles(fs: &[ObjectiveSpec<f64>]) -> Vec<ConvexityProfile> {
    fs.iter().map(|f| derive_profiles(f, false).unwrap().0).collect()
}

pub fn exact_params() -> AdmmParams {
    AdmmParams {
        zeta: 0.038,
        d_constants: vec![0.56; AGENTS],
        alpha: 83.5,
        rho0: 0.056,
        penalty: PenaltyLaw::Randomized { lo: 0.0083, hi: 0.0164 },
        penalty_seed: 1,
        exchange: ExchangeChannel::Plain,
    }
}

pub fn first_order_params() -> AdmmParams {
    AdmmParams {
        zeta: 0.027,
        d_constants: vec![5.6; AGENTS],
        alpha: 100.0,
        rho0: 0.039,
        penalty: PenaltyLaw::Randomized { lo: 0.0027, hi: 0.0033 },
        penalty_seed: 1,
        exchange: ExchangeChannel::Plain,
    }
}

/// Two-sample chi-square homogeneity statistic for equal-size samples,
/// with its degrees of freedom (non-empty cells minus one).
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> (f64, f64) {
    let mut stat = 0.0;
    let mut cells = 0;
    for (&x, &y) in a.iter().zip(b) {
        if x + y > 0 {
            stat += (x as f64 - y as f64).powi(2) / (x + y) as f64;
            cells += 1;
        }
    }
    (stat, (cells - 1) as f64)
}
