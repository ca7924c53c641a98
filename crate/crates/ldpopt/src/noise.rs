//! Perturbation mechanisms and per-iteration schedules.
//!
//! Laplace noise uses the inverse-scale convention: density
//! `(β/2) exp(-β|y|)`, so a larger `β` means less noise and the geometric
//! schedule `β_t = 1.02^t` is a diminishing-noise schedule.
//!
//! Schedules are indexed by the step number `t ≥ 1`: the update producing
//! `x^{k+1}` uses `β_{k+1}` (or `σ_{k+1}`).

use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::privacy::compose_strong_homogeneous;
use crate::rng::{self, domain};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Laplace,
    Gaussian,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant { value: f64 },
    /// `base · ratio^t`.
    Geometric { base: f64, ratio: f64 },
    /// `values[t - 1]` for `t = 1..=values.len()`.
    Calibrated { values: Vec<f64> },
}

/// Mechanism plus its parameter sequence: `β_t` for Laplace, `σ_t` for
/// Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub mechanism: Mechanism,
    pub kind: ScheduleKind,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraw<T> {
    pub iteration: usize,
    pub agent: usize,
    pub vector: Vec<T>,
}

impl NoiseSchedule {
    pub fn none() -> Self {
        Self { mechanism: Mechanism::None, kind: ScheduleKind::Constant { value: 0.0 }, seed: 0 }
    }

    pub fn laplace_geometric(base: f64, ratio: f64, seed: u64) -> Self {
        Self { mechanism: Mechanism::Laplace, kind: ScheduleKind::Geometric { base, ratio }, seed }
    }

    pub fn laplace_constant(beta: f64, seed: u64) -> Self {
        Self { mechanism: Mechanism::Laplace, kind: ScheduleKind::Constant { value: beta }, seed }
    }

    pub fn gaussian_constant(sigma: f64, seed: u64) -> Self {
        Self { mechanism: Mechanism::Gaussian, kind: ScheduleKind::Constant { value: sigma }, seed }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_none(&self) -> bool {
        self.mechanism == Mechanism::None
    }

    /// Number of scheduled steps, `None` when unbounded.
    pub fn horizon(&self) -> Option<usize> {
        match &self.kind {
            ScheduleKind::Calibrated { values } => Some(values.len()),
            _ => None,
        }
    }

    pub fn parameter(&self, t: usize) -> Result<f64> {
        let v = match &self.kind {
            ScheduleKind::Constant { value } => *value,
            ScheduleKind::Geometric { base, ratio } => base * ratio.powi(t as i32),
            ScheduleKind::Calibrated { values } => {
                if t == 0 || t > values.len() {
                    return invalid(format!("step {t} outside calibrated horizon 1..={}", values.len()));
                }
                values[t - 1]
            }
        };
        match self.mechanism {
            Mechanism::Laplace if !(v > 0.0 && v.is_finite()) => invalid(format!("β_{t} = {v} is not positive")),
            Mechanism::Gaussian if !(v >= 0.0 && v.is_finite()) => invalid(format!("σ_{t} = {v} is negative")),
            _ => Ok(v),
        }
    }

    /// `β_t` when the mechanism is Laplace.
    pub fn inverse_scale(&self, t: usize) -> Option<f64> {
        match self.mechanism {
            Mechanism::Laplace => self.parameter(t).ok(),
            _ => None,
        }
    }

    /// `E[Δ²]` per coordinate at step `t`.
    pub fn variance(&self, t: usize) -> Result<f64> {
        Ok(match self.mechanism {
            Mechanism::Laplace => 2.0 / self.parameter(t)?.powi(2),
            Mechanism::Gaussian => self.parameter(t)?.powi(2),
            Mechanism::None => 0.0,
        })
    }
}

/// `dim` independent draws for agent `agent` at step `t`; a pure function
/// of `(seed, t, agent, dim)`.
pub fn sample<T: Scalar>(schedule: &NoiseSchedule, t: usize, agent: usize, dim: usize) -> Result<NoiseDraw<T>> {
    let vector = match schedule.mechanism {
        Mechanism::None => vec![T::zero(); dim],
        Mechanism::Laplace => {
            let beta = schedule.parameter(t)?;
            let mut rng = rng::stream(schedule.seed, domain::NOISE, t as u64, agent as u64);
            (0..dim)
                .map(|_| {
                    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
                    T::lit(-u.signum() * (-2.0 * u.abs()).ln_1p() / beta)
                })
                .collect()
        }
        Mechanism::Gaussian => {
            let sigma = schedule.parameter(t)?;
            let mut rng = rng::stream(schedule.seed, domain::NOISE, t as u64, agent as u64);
            (0..dim).map(|_| T::lit(sigma * rng.sample::<f64, _>(StandardNormal))).collect()
        }
    };
    Ok(NoiseDraw { iteration: t, agent, vector })
}

/// Pure ε-LDP Laplace calibration: `β_t = ε / (α_t B K d)`, so the worst
/// case total `Σ_t d α_t β_t B` equals `ε`.
pub fn calibrate_pure_laplace(
    epsilon: f64,
    iterations: usize,
    dim: usize,
    sensitivity: f64,
    step_scale: impl Fn(usize) -> f64,
    seed: u64,
) -> Result<NoiseSchedule> {
    if !(epsilon > 0.0) || iterations == 0 || dim == 0 || sensitivity < 0.0 {
        return invalid("calibration needs ε > 0, K ≥ 1, d ≥ 1, B ≥ 0");
    }
    if sensitivity == 0.0 {
        return Ok(NoiseSchedule::none());
    }
    let kd = (iterations * dim) as f64;
    let values = (1..=iterations)
        .map(|t| {
            let a = step_scale(t);
            if a > 0.0 {
                Ok(epsilon / (a * sensitivity * kd))
            } else {
                invalid(format!("step scale α_{t} must be positive"))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseSchedule { mechanism: Mechanism::Laplace, kind: ScheduleKind::Calibrated { values }, seed })
}

/// Result of an (ε, δ) calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxedCalibration {
    pub schedule: NoiseSchedule,
    /// Loss charged to each composed release.
    pub eps_step: f64,
    /// Number of composed releases: `K·d` coordinates for Laplace, `K`
    /// vectors for Gaussian.
    pub terms: usize,
    /// δ passed to strong composition.
    pub delta_composition: f64,
    /// δ charged to each Gaussian release.
    pub delta_step: f64,
}

impl RelaxedCalibration {
    pub fn composed_total(&self) -> f64 {
        if self.terms == 1 {
            self.eps_step
        } else {
            compose_strong_homogeneous(self.eps_step, self.terms, self.delta_composition)
        }
    }
}

/// (ε, δ) calibration under strong composition. The per-release budget is
/// the largest value whose composed total stays at or below `ε`, found by
/// bisection.
///
/// Laplace composes `K·d` coordinate releases with `β_t = ε_s / (α_t B∞)`.
/// Gaussian composes `K` vector releases; `δ/2` goes to composition and
/// `δ/(2K)` to each release, with `σ_t = α_t B₂ √(2 ln(1.25/δ_s)) / ε_s`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_relaxed(
    epsilon: f64,
    delta: f64,
    iterations: usize,
    dim: usize,
    sensitivity: f64,
    mechanism: Mechanism,
    step_scale: impl Fn(usize) -> f64,
    seed: u64,
) -> Result<RelaxedCalibration> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid("δ must lie in (0, 1)");
    }
    if !(epsilon > 0.0) || iterations == 0 || dim == 0 || !(sensitivity > 0.0) {
        return invalid("calibration needs ε > 0, K ≥ 1, d ≥ 1, B > 0");
    }
    let (terms, delta_composition, delta_step) = match mechanism {
        Mechanism::Laplace => (iterations * dim, delta, 0.0),
        Mechanism::Gaussian if iterations == 1 => (1, 0.0, delta),
        Mechanism::Gaussian => (iterations, delta / 2.0, delta / (2.0 * iterations as f64)),
        Mechanism::None => return invalid("relaxed calibration needs a noise mechanism"),
    };
    let eps_step = if terms == 1 { epsilon } else { solve_step_budget(epsilon, terms, delta_composition)? };
    let values = (1..=iterations)
        .map(|t| {
            let a = step_scale(t);
            if !(a > 0.0) {
                return invalid(format!("step scale α_{t} must be positive"));
            }
            Ok(match mechanism {
                Mechanism::Laplace => eps_step / (a * sensitivity),
                _ => a * sensitivity * (2.0 * (1.25 / delta_step).ln()).sqrt() / eps_step,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if mechanism == Mechanism::Gaussian && eps_step > 1.0 {
        return Err(Error::Validation(format!("Gaussian calibration needs per-release ε ≤ 1, got {eps_step}")));
    }
    Ok(RelaxedCalibration {
        schedule: NoiseSchedule { mechanism, kind: ScheduleKind::Calibrated { values }, seed },
        eps_step,
        terms,
        delta_composition,
        delta_step,
    })
}

fn solve_step_budget(epsilon: f64, terms: usize, delta: f64) -> Result<f64> {
    let total = |e: f64| compose_strong_homogeneous(e, terms, delta);
    let mut hi = epsilon;
    while total(hi) < epsilon {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) <= epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if !(lo > 0.0) || total(lo) < 0.999 * epsilon {
        return Err(Error::Validation(format!("ε = {epsilon} is infeasible for {terms} composed releases")));
    }
    Ok(lo)
}
