//! Private decentralized ADMM and gradient schemes, random coordinate
//! descent, and the parameter checks behind their convergence guarantees.
//!
//! Every ADMM variant splits an agent's update into a randomized aggregate
//! of round-`k` states, a deterministic offset (dual and gradient terms
//! scaled by `1/D`), and noise. In consensus mode the aggregate of each
//! coordinate is uniform on a segment, which the accountant consumes.
//!
//! Consensus constraints are edge differences `x_i - x_j = 0` for each edge
//! `(i, j)`, `i < j`. The edge duals are never stored: agent `i` keeps
//! `λ_i = A_iᵀλ` and updates it with `λ_i ← λ_i - ζ Σ_{j∈N_i}(x_i - x_j)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::graphnet::{exchange_round, ExchangeMode, Topology};
use crate::linalg::{singular_range, solve_spd, solve_spd_many, Matrix};
use crate::noise::{sample, NoiseSchedule};
use crate::objectives::{ConvexityProfile, ObjectiveKind, ObjectiveSpec, Link};
use crate::rng::{self, domain};
use crate::scalar::{axpy, dist2_sq, mean_vec, norm2_sq, Scalar};
use crate::secretshare::{aggregate_exchange, split, FixedPointCodec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState<T> {
    pub agent_id: usize,
    pub primal: Vec<T>,
    /// Consensus: `A_iᵀλ ∈ ℝ^d`. General: the shared multiplier `λ ∈ ℝ^p`.
    pub dual: Vec<T>,
    pub penalty_constant: T,
}

/// `x⁰` uniform in `[-1, 1]^d`, zero duals.
pub fn initial_states<T: Scalar>(n: usize, d: usize, dual_dim: usize, penalty: &[f64], seed: u64) -> Vec<AgentState<T>> {
    (0..n)
        .map(|i| {
            let mut r = rng::stream(seed, domain::INIT, i as u64, 0);
            AgentState {
                agent_id: i,
                primal: (0..d).map(|_| T::lit(r.random_range(-1.0..=1.0))).collect(),
                dual: vec![T::zero(); dual_dim],
                penalty_constant: T::lit(penalty.get(i).copied().unwrap_or(1.0)),
            }
        })
        .collect()
}

/// Linear coupling `Σ_i A_i x_i = c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ConstraintSystem<T> {
    Consensus(Topology),
    General { blocks: Vec<Matrix<T>>, rhs: Vec<T> },
}

impl<T: Scalar> ConstraintSystem<T> {
    pub fn agents(&self) -> usize {
        match self {
            Self::Consensus(t) => t.node_count(),
            Self::General { blocks, .. } => blocks.len(),
        }
    }

    pub fn dual_dim(&self, d: usize) -> usize {
        match self {
            Self::Consensus(_) => d,
            Self::General { rhs, .. } => rhs.len(),
        }
    }

    /// `(σ_max², σ_min²)` of `A_i`.
    pub fn singular_sq(&self, i: usize) -> (f64, f64) {
        match self {
            Self::Consensus(t) => {
                let deg = t.degree(i) as f64;
                (deg, deg)
            }
            Self::General { blocks, .. } => {
                let (hi, lo) = singular_range(&blocks[i]);
                (hi * hi, lo * lo)
            }
        }
    }

    /// Explicit edge-incidence blocks of a consensus system.
    pub fn consensus_blocks(topology: &Topology, d: usize) -> Self {
        let rows = topology.edges().len() * d;
        let mut blocks = vec![Matrix::zeros(rows, d); topology.node_count()];
        for (e, &(a, b)) in topology.edges().iter().enumerate() {
            for l in 0..d {
                blocks[a].set(e * d + l, l, T::one());
                blocks[b].set(e * d + l, l, -T::one());
            }
        }
        Self::General { blocks, rhs: vec![T::zero(); rows] }
    }
}

/// How `(N_i-adjusted) ρ̄` and `Γ` are drawn each step.
///
/// Relative laws draw a weight fraction `w`, then `ρ = w·D/σ²_max` and
/// `Γ = D·I - A_iᵀρA_i`; in consensus this is `deg·ρ̄ = w·D`, `Γ = (1-w)D`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum PenaltyLaw {
    /// `w ~ U(lo, hi)` per coordinate (consensus) or per row (general).
    Randomized { lo: f64, hi: f64 },
    Fixed { weight: f64 },
    /// `ρ_t = rho0·ratio^t`, `Γ_t = ρ_t·σ²_max`, so `D_t = 2ρ_tσ²_max`.
    Increasing { rho0: f64, ratio: f64 },
    /// `ρ ~ U(lo, hi)` in absolute units; draws with `Γ ≤ 0` are redrawn.
    Absolute { lo: f64, hi: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "channel", rename_all = "snake_case")]
pub enum ExchangeChannel {
    #[default]
    Plain,
    /// Aggregates are exchanged through additive secret sharing.
    SecretShared { scale_bits: u32, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmParams {
    pub zeta: f64,
    pub d_constants: Vec<f64>,
    /// Free constant of the admissible-range analysis.
    pub alpha: f64,
    pub rho0: f64,
    pub penalty: PenaltyLaw,
    pub penalty_seed: u64,
    #[serde(default)]
    pub exchange: ExchangeChannel,
}

impl AdmmParams {
    /// Penalty constant `D_i` in force at step `t`.
    pub fn penalty_constant<T: Scalar>(&self, system: &ConstraintSystem<T>, i: usize, t: usize) -> f64 {
        match self.penalty {
            PenaltyLaw::Increasing { rho0, ratio } => 2.0 * rho0 * ratio.powi(t as i32) * system.singular_sq(i).0,
            _ => self.d_constants[i],
        }
    }

    /// Range `[ρ_lo, ρ_hi]` of agent `i`'s penalty entries.
    pub fn penalty_interval<T: Scalar>(&self, system: &ConstraintSystem<T>, i: usize) -> (f64, f64) {
        let s2 = system.singular_sq(i).0;
        let dc = self.d_constants[i];
        match self.penalty {
            PenaltyLaw::Randomized { lo, hi } => (lo * dc / s2, hi * dc / s2),
            PenaltyLaw::Fixed { weight } => (weight * dc / s2, weight * dc / s2),
            PenaltyLaw::Increasing { rho0, .. } => (rho0, f64::INFINITY),
            PenaltyLaw::Absolute { lo, hi } => (lo, hi),
        }
    }

    fn weight_bounds<T: Scalar>(&self, system: &ConstraintSystem<T>, i: usize, t: usize) -> (f64, f64) {
        let dc = self.penalty_constant(system, i, t);
        let s2 = system.singular_sq(i).0;
        match self.penalty {
            PenaltyLaw::Randomized { lo, hi } => (lo, hi),
            PenaltyLaw::Fixed { weight } => (weight, weight),
            PenaltyLaw::Increasing { .. } => (0.5, 0.5),
            PenaltyLaw::Absolute { lo, hi } => (lo * s2 / dc, hi * s2 / dc),
        }
    }

    /// Weight fractions `w` for `count` entries of agent `i` at step `t`.
    fn draw_weights<T: Scalar>(&self, system: &ConstraintSystem<T>, i: usize, t: usize, count: usize) -> Result<Vec<f64>> {
        let (lo, hi) = self.weight_bounds(system, i, t);
        if !(lo <= hi && lo >= 0.0) {
            return invalid(format!("penalty interval [{lo}, {hi}] is not a valid weight range"));
        }
        let mut r = rng::stream(self.penalty_seed, domain::PENALTY, t as u64, i as u64);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut tries = 0;
            loop {
                let w = if lo == hi { lo } else { r.random_range(lo..hi) };
                if w > 0.0 && w < 1.0 {
                    out.push(w);
                    break;
                }
                tries += 1;
                if tries > 1000 || lo == hi {
                    return Err(Error::Validation(format!(
                        "penalty draws leave no positive Γ (weight range [{lo}, {hi}])"
                    )));
                }
            }
        }
        Ok(out)
    }
}

/// Everything one step exposes to the accountant and to tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<T> {
    /// Round index `k`; the record describes `x^{k+1}`.
    pub iteration: usize,
    /// Released states `x^{k+1}`.
    pub primal: Vec<Vec<T>>,
    /// Randomized aggregate before offsets and noise.
    pub aggregate: Vec<Vec<T>>,
    /// Segment `τ` swept by the aggregate, per agent and coordinate.
    pub interval: Option<Vec<Vec<(T, T)>>>,
    /// Deterministic term added to the aggregate.
    pub offset: Vec<Vec<T>>,
    pub noise: Vec<Vec<T>>,
    /// `α`: `1/D_i` for ADMM, `η_t` for gradient schemes.
    pub step_scale: Vec<T>,
    /// `β_{k+1}` when the noise is Laplace.
    pub inverse_scale: Option<f64>,
}

struct Prepared<T> {
    aggregate: Vec<Vec<T>>,
    interval: Option<Vec<Vec<(T, T)>>>,
    dual_term: Vec<Vec<T>>,
    d: Vec<f64>,
}

fn shared_sum<T: Scalar>(vectors: &[Vec<T>], scale_bits: u32, seed: u64, round: usize) -> Result<Vec<T>> {
    let codec = FixedPointCodec::new(scale_bits)?;
    let n = vectors.len();
    let bundles = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let enc = codec.encode(&v.iter().map(|x| x.f64()).collect::<Vec<_>>())?;
            split(&enc, n, i, rng::derive_seed(seed, domain::SHARE, round as u64), &codec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate_exchange(&bundles, &codec)?.into_iter().map(T::lit).collect())
}

/// Sum of neighbor states per agent, through the configured channel.
fn neighbor_sums<T: Scalar>(topology: &Topology, xs: &[Vec<T>], channel: ExchangeChannel, round: usize) -> Result<Vec<Vec<T>>> {
    match channel {
        ExchangeChannel::Plain => {
            let mb = exchange_round(topology, xs, ExchangeMode::Neighbors, round)?;
            Ok((0..xs.len())
                .map(|i| {
                    let mut s = vec![T::zero(); xs[i].len()];
                    for (_, v) in mb.inbox(i) {
                        axpy(T::one(), v, &mut s);
                    }
                    s
                })
                .collect())
        }
        ExchangeChannel::SecretShared { scale_bits, seed } => {
            if !topology.is_complete() {
                return invalid("secret-shared consensus exchange needs a complete graph");
            }
            let total = shared_sum(xs, scale_bits, seed, round)?;
            Ok(xs.iter().map(|x| total.iter().zip(x).map(|(&s, &v)| s - v).collect()).collect())
        }
    }
}

fn general_total<T: Scalar>(blocks: &[Matrix<T>], xs: &[Vec<T>], channel: ExchangeChannel, round: usize) -> Result<Vec<T>> {
    let parts: Vec<Vec<T>> = blocks.iter().zip(xs).map(|(a, x)| a.matvec(x)).collect();
    match channel {
        ExchangeChannel::Plain => {
            let mut s = vec![T::zero(); parts[0].len()];
            parts.iter().for_each(|p| axpy(T::one(), p, &mut s));
            Ok(s)
        }
        ExchangeChannel::SecretShared { scale_bits, seed } => shared_sum(&parts, scale_bits, seed, round),
    }
}

fn prepare<T: Scalar>(
    states: &[AgentState<T>],
    params: &AdmmParams,
    system: &ConstraintSystem<T>,
    k: usize,
) -> Result<Prepared<T>> {
    let n = system.agents();
    check_dim(n, states.len())?;
    check_dim(n, params.d_constants.len())?;
    let t = k + 1;
    let xs: Vec<Vec<T>> = states.iter().map(|s| s.primal.clone()).collect();
    let dim = xs[0].len();
    let d: Vec<f64> = (0..n).map(|i| params.penalty_constant(system, i, t)).collect();
    match system {
        ConstraintSystem::Consensus(topology) => {
            let sums = neighbor_sums(topology, &xs, params.exchange, 2 * k)?;
            let (lo_w, hi_w): (Vec<f64>, Vec<f64>) = (0..n).map(|i| params.weight_bounds(system, i, t)).unzip();
            let mut aggregate = Vec::with_capacity(n);
            let mut interval = Vec::with_capacity(n);
            for i in 0..n {
                let deg = T::from_usize_exact(topology.degree(i));
                let w = params.draw_weights(system, i, t, dim)?;
                let mut agg = Vec::with_capacity(dim);
                let mut tau = Vec::with_capacity(dim);
                for l in 0..dim {
                    let x = xs[i][l];
                    let pull = sums[i][l] / deg - x;
                    agg.push(x + T::lit(w[l]) * pull);
                    let (a, b) = (x + T::lit(lo_w[i]) * pull, x + T::lit(hi_w[i]) * pull);
                    tau.push((a.min(b), a.max(b)));
                }
                aggregate.push(agg);
                interval.push(tau);
            }
            let dual_term = states.iter().map(|s| s.dual.clone()).collect();
            Ok(Prepared { aggregate, interval: Some(interval), dual_term, d })
        }
        ConstraintSystem::General { blocks, rhs } => {
            let total = general_total(blocks, &xs, params.exchange, 2 * k)?;
            let mut aggregate = Vec::with_capacity(n);
            let mut dual_term = Vec::with_capacity(n);
            for i in 0..n {
                let a = &blocks[i];
                let s2 = system.singular_sq(i).0;
                let own = a.matvec(&xs[i]);
                // r_{-i} = Σ_{j≠i} A_j x_j - c
                let r_minus: Vec<T> = (0..rhs.len()).map(|r| total[r] - own[r] - rhs[r]).collect();
                let w = params.draw_weights(system, i, t, rhs.len())?;
                let rho: Vec<T> = w.iter().map(|&w| T::lit(w * d[i] / s2)).collect();
                // D·agg = Γ x_i - Aᵀρ r_{-i} = D x_i - Aᵀρ(A x_i + r_{-i})
                let weighted: Vec<T> = (0..rhs.len()).map(|r| rho[r] * (own[r] + r_minus[r])).collect();
                let pull = a.t_matvec(&weighted);
                let di = T::lit(d[i]);
                aggregate.push(xs[i].iter().zip(&pull).map(|(&x, &p)| x - p / di).collect());
                dual_term.push(a.t_matvec(&states[i].dual));
            }
            Ok(Prepared { aggregate, interval: None, dual_term, d })
        }
    }
}

fn finish<T: Scalar>(
    states: &[AgentState<T>],
    params: &AdmmParams,
    system: &ConstraintSystem<T>,
    noise: &NoiseSchedule,
    k: usize,
    prep: Prepared<T>,
    offset: Vec<Vec<T>>,
) -> Result<(Vec<AgentState<T>>, IterationRecord<T>)> {
    let n = states.len();
    let t = k + 1;
    let dim = states[0].primal.len();
    let mut noise_vecs = Vec::with_capacity(n);
    let mut primal = Vec::with_capacity(n);
    for i in 0..n {
        let dv = sample::<T>(noise, t, i, dim)?.vector;
        primal.push((0..dim).map(|l| prep.aggregate[i][l] + offset[i][l] + dv[l]).collect::<Vec<T>>());
        noise_vecs.push(dv);
    }
    let zeta = T::lit(params.zeta);
    let mut next: Vec<AgentState<T>> = states.to_vec();
    match system {
        ConstraintSystem::Consensus(topology) => {
            let sums = neighbor_sums(topology, &primal, params.exchange, 2 * k + 1)?;
            for i in 0..n {
                let deg = T::from_usize_exact(topology.degree(i));
                for l in 0..dim {
                    next[i].dual[l] -= zeta * (deg * primal[i][l] - sums[i][l]);
                }
            }
        }
        ConstraintSystem::General { blocks, rhs } => {
            let total = general_total(blocks, &primal, params.exchange, 2 * k + 1)?;
            for s in next.iter_mut() {
                for r in 0..rhs.len() {
                    s.dual[r] -= zeta * (total[r] - rhs[r]);
                }
            }
        }
    }
    for i in 0..n {
        next[i].primal = primal[i].clone();
        next[i].penalty_constant = T::lit(prep.d[i]);
    }
    let record = IterationRecord {
        iteration: k,
        primal,
        aggregate: prep.aggregate,
        interval: prep.interval,
        offset,
        noise: noise_vecs,
        step_scale: prep.d.iter().map(|&d| T::lit(1.0 / d)).collect(),
        inverse_scale: noise.inverse_scale(t),
    };
    Ok((next, record))
}

/// Closed-form linearized update: `x = agg + (λ_i - ∇f_i(x_i))/D_i + Δ`.
pub fn admm_first_order_step<T: Scalar>(
    states: &[AgentState<T>],
    params: &AdmmParams,
    system: &ConstraintSystem<T>,
    objectives: &[ObjectiveSpec<T>],
    noise: &NoiseSchedule,
    k: usize,
) -> Result<(Vec<AgentState<T>>, IterationRecord<T>)> {
    check_dim(states.len(), objectives.len())?;
    let prep = prepare(states, params, system, k)?;
    let offset = (0..states.len())
        .map(|i| {
            let g = objectives[i].gradient(&states[i].primal)?;
            let di = T::lit(prep.d[i]);
            Ok(g.iter().zip(&prep.dual_term[i]).map(|(&g, &u)| (u - g) / di).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    finish(states, params, system, noise, k, prep, offset)
}

/// Exact proximal update: `x` minimizes
/// `f_i(x) - uᵀx + (D/2)‖x - agg‖²` with `u` the dual term.
pub fn admm_exact_step<T: Scalar>(
    states: &[AgentState<T>],
    params: &AdmmParams,
    system: &ConstraintSystem<T>,
    objectives: &[ObjectiveSpec<T>],
    noise: &NoiseSchedule,
    k: usize,
) -> Result<(Vec<AgentState<T>>, IterationRecord<T>)> {
    check_dim(states.len(), objectives.len())?;
    let prep = prepare(states, params, system, k)?;
    let offset = (0..states.len())
        .map(|i| {
            let f = &objectives[i];
            let (agg, u, d) = (&prep.aggregate[i], &prep.dual_term[i], prep.d[i]);
            let x = if is_quadratic(f) {
                solve_prox_quadratic(f, agg, u, d)?
            } else {
                solve_prox_newton(f, agg, u, d, &states[i].primal)?
            };
            Ok(x.iter().zip(agg).map(|(&x, &a)| x - a).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    finish(states, params, system, noise, k, prep, offset)
}

fn is_quadratic<T>(f: &ObjectiveSpec<T>) -> bool {
    matches!(f.kind, ObjectiveKind::RidgeQuadratic | ObjectiveKind::GeneralizedLinear(Link::Squared))
}

fn newton_tolerance<T: Scalar>() -> f64 {
    1e-10f64.max(1e3 * T::epsilon().f64())
}

/// Gradient of the proximal subproblem.
pub fn prox_gradient<T: Scalar>(f: &ObjectiveSpec<T>, x: &[T], agg: &[T], u: &[T], d: f64) -> Result<Vec<T>> {
    let mut g = f.gradient(x)?;
    let dd = T::lit(d);
    for l in 0..g.len() {
        g[l] += dd * (x[l] - agg[l]) - u[l];
    }
    Ok(g)
}

/// `(∇²f + D·I) x = D·agg + u - ∇f(0)` for quadratic `f`.
pub fn solve_prox_quadratic<T: Scalar>(f: &ObjectiveSpec<T>, agg: &[T], u: &[T], d: f64) -> Result<Vec<T>> {
    let zero = vec![T::zero(); agg.len()];
    let mut h = f.hessian(&zero)?;
    let g0 = f.gradient(&zero)?;
    let dd = T::lit(d);
    for a in 0..agg.len() {
        h.data[a * agg.len() + a] += dd;
    }
    let rhs: Vec<T> = (0..agg.len()).map(|l| dd * agg[l] + u[l] - g0[l]).collect();
    solve_spd(&h, &rhs)
}

/// Damped Newton on the proximal subproblem; gradient tolerance `1e-10`,
/// at most 100 steps.
pub fn solve_prox_newton<T: Scalar>(f: &ObjectiveSpec<T>, agg: &[T], u: &[T], d: f64, start: &[T]) -> Result<Vec<T>> {
    let tol = newton_tolerance::<T>();
    let dd = T::lit(d);
    let value = |x: &[T]| -> Result<T> {
        Ok(f.evaluate(x)? + T::lit(0.5) * dd * dist2_sq(x, agg) - x.iter().zip(u).map(|(&a, &b)| a * b).sum::<T>())
    };
    let mut x = start.to_vec();
    for _ in 0..100 {
        let g = prox_gradient(f, &x, agg, u, d)?;
        if norm2_sq(&g).f64().sqrt() <= tol {
            return Ok(x);
        }
        let mut h = f.hessian(&x)?;
        for a in 0..x.len() {
            h.data[a * x.len() + a] += dd;
        }
        let step = solve_spd(&h, &g)?;
        let slope: T = g.iter().zip(&step).map(|(&a, &b)| a * b).sum();
        let f0 = value(&x)?;
        let gn = norm2_sq(&g).f64().sqrt();
        let mut s = T::one();
        for _ in 0..60 {
            let cand: Vec<T> = x.iter().zip(&step).map(|(&a, &b)| a - s * b).collect();
            // Near the optimum value differences drown in rounding, so a
            // shrinking gradient also counts as progress.
            let shrinks = norm2_sq(&prox_gradient(f, &cand, agg, u, d)?).f64().sqrt() <= (1.0 - 0.5 * s.f64()) * gn;
            if shrinks || value(&cand)? <= f0 - T::lit(1e-4) * s * slope {
                x = cand;
                break;
            }
            s *= T::lit(0.5);
        }
    }
    let g = prox_gradient(f, &x, agg, u, d)?;
    if norm2_sq(&g).f64().sqrt() <= tol {
        Ok(x)
    } else {
        Err(Error::NonConvergence(format!("proximal Newton stalled at gradient norm {:e}", norm2_sq(&g).f64().sqrt())))
    }
}

/// Optimum `u* = (x*, λ*)`; duals in the same per-agent form as
/// [`AgentState::dual`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference<T> {
    pub primal: Vec<Vec<T>>,
    pub dual: Vec<Vec<T>>,
    pub objective: f64,
}

/// `Σ D_i‖x_i - x_i*‖² + (1/ζ)‖λ - λ*‖²`, with `λ` the constraint-space
/// multiplier. In consensus mode the edge multiplier norm is recovered from
/// the per-agent duals through the graph Laplacian pseudo-inverse.
pub fn g_norm<T: Scalar>(
    states: &[AgentState<T>],
    reference: &Reference<T>,
    d_constants: &[f64],
    zeta: f64,
    system: &ConstraintSystem<T>,
) -> Result<f64> {
    check_dim(reference.primal.len(), states.len())?;
    check_dim(d_constants.len(), states.len())?;
    let primal: f64 = states
        .iter()
        .zip(&reference.primal)
        .zip(d_constants)
        .map(|((s, r), &d)| d * dist2_sq(&s.primal, r).f64())
        .sum();
    let dual = match system {
        ConstraintSystem::Consensus(topology) => {
            let n = states.len();
            let dim = states[0].dual.len();
            let mut lap = Matrix::<f64>::zeros(n, n);
            for &(a, b) in topology.edges() {
                lap.data[a * n + a] += 1.0;
                lap.data[b * n + b] += 1.0;
                lap.data[a * n + b] -= 1.0;
                lap.data[b * n + a] -= 1.0;
            }
            lap.data.iter_mut().for_each(|v| *v += 1.0 / n as f64);
            let deltas: Vec<Vec<f64>> = (0..dim)
                .map(|l| (0..n).map(|i| (states[i].dual[l] - reference.dual[i][l]).f64()).collect())
                .collect();
            let mus = solve_spd_many(&lap, &deltas)?;
            deltas.iter().zip(&mus).map(|(d, m)| d.iter().zip(m).map(|(a, b)| a * b).sum::<f64>()).sum()
        }
        ConstraintSystem::General { .. } => dist2_sq(&states[0].dual, &reference.dual[0]).f64(),
    };
    Ok(primal + dual / zeta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmmVariant {
    Exact,
    FirstOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ValidationOutcome {
    Valid { p: f64 },
    Invalid { inequality: String, detail: String },
}

impl ValidationOutcome {
    pub fn contraction(&self) -> Option<f64> {
        match self {
            Self::Valid { p } => Some(*p),
            Self::Invalid { .. } => None,
        }
    }
}

/// Checks the admissible parameter range of the linear-convergence
/// theorems against the worst draw of the penalty interval and returns the
/// guaranteed contraction `p`.
///
/// The analysis states smoothness as `‖∇f(x) - ∇f(y)‖² ≤ M‖x - y‖²`, so
/// `M` here is the square of the profile's gradient Lipschitz constant.
pub fn validate_admm_params<T: Scalar>(
    params: &AdmmParams,
    profiles: &[ConvexityProfile],
    system: &ConstraintSystem<T>,
    variant: AdmmVariant,
) -> Result<ValidationOutcome> {
    let n = system.agents();
    check_dim(n, profiles.len())?;
    check_dim(n, params.d_constants.len())?;
    let bad = |inequality: &str, detail: String| {
        Ok(ValidationOutcome::Invalid { inequality: inequality.into(), detail })
    };
    if let PenaltyLaw::Increasing { .. } = params.penalty {
        return bad("penalty", "time-varying D_i is outside the admissible-range analysis".into());
    }
    let (alpha, zeta, rho0) = (params.alpha, params.zeta, params.rho0);
    if !(alpha > 0.0 && zeta > 0.0 && rho0 > 0.0) {
        return bad("positive", "α, ζ and ρ⁰ must be positive".into());
    }
    let nf = n as f64;
    let (strong_factor, m_extra, grad_factor) = match variant {
        AdmmVariant::Exact => (2.0, false, 5.0),
        AdmmVariant::FirstOrder => (1.0, true, 10.0),
    };
    struct Agent {
        m: f64,
        msq: f64,
        d: f64,
        s2max: f64,
        s2min: f64,
        rmax: f64,
        rdev: f64,
    }
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let (s2max, s2min) = system.singular_sq(i);
        let (lo, hi) = params.penalty_interval(system, i);
        let m = profiles[i].strong_convexity;
        if !(m > 0.0) {
            return bad("strong_convexity", format!("agent {} has m = {m}", i + 1));
        }
        agents.push(Agent {
            m,
            msq: profiles[i].smoothness.powi(2),
            d: params.d_constants[i],
            s2max,
            s2min,
            rmax: hi,
            rdev: (hi - rho0).abs().max((lo - rho0).abs()),
        });
    }
    for (i, a) in agents.iter().enumerate() {
        let cap = strong_factor * a.m / (nf * a.rmax.powi(2) * a.s2max + a.rdev.powi(2) * a.s2max);
        if !(alpha < cap) {
            return bad("alpha", format!("agent {}: α = {alpha} must be below {cap}", i + 1));
        }
    }
    for (i, a) in agents.iter().enumerate() {
        let extra = if m_extra { a.msq } else { 0.0 };
        let floor = (a.rmax * a.s2max).max(nf * a.s2max / alpha + extra);
        if !(a.d > floor) {
            return bad("d_constant", format!("agent {}: D = {} must exceed {floor}", i + 1, a.d));
        }
    }
    if !(rho0 > nf / (2.0 * alpha)) {
        return bad("rho0", format!("ρ⁰ = {rho0} must exceed {}", nf / (2.0 * alpha)));
    }
    if !(zeta < 2.0 * rho0 - nf / alpha) {
        return bad("zeta", format!("ζ = {zeta} must be below {}", 2.0 * rho0 - nf / alpha));
    }
    let coupling: f64 = agents.iter().map(|a| a.rmax.powi(2) * a.s2max / a.s2min).sum();
    let mut p = f64::INFINITY;
    for a in &agents {
        let first = (strong_factor * a.m - alpha * nf * a.rmax.powi(2) * a.s2max - alpha * a.rdev.powi(2) * a.s2max)
            / (grad_factor * a.msq / (zeta * nf * a.s2min) + a.d);
        let extra = if m_extra { a.msq } else { 0.0 };
        let dsq = if m_extra { a.d * a.d + 2.0 * a.msq } else { a.d * a.d };
        let second = (a.d - nf * a.s2max / alpha - extra)
            / (5.0 * dsq / (zeta * nf * a.s2min) + 5.0 * a.s2max / zeta * coupling);
        p = p.min(first).min(second);
    }
    let third_den: f64 = agents.iter().map(|a| 5.0 * (a.rmax.powi(2) / (zeta * zeta) + 1.0 / nf) * a.s2max / a.s2min).sum();
    p = p.min((2.0 * rho0 / zeta - nf / (alpha * zeta) - 1.0) / third_den);
    if !(p > 0.0) {
        return bad("contraction", format!("derived p = {p} is not positive"));
    }
    Ok(ValidationOutcome::Valid { p })
}

/// Noisy contraction envelope `a^k g₀ + R^k`, `k = 0..=K`, with
/// `a = 1/(1 + (1-ε̂)p)` and `R^k = a(R^{k-1} + Σ_i c_i‖Δ_i^k‖²)`,
/// `c_i = 6pD_i²/(ζNσ²_{i,min}) + D_i/(ε̂p)`.
pub fn noisy_envelope(
    g0: f64,
    p: f64,
    eps_hat: f64,
    zeta: f64,
    d_constants: &[f64],
    sigma_min_sq: &[f64],
    noise_sq: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if !(p > 0.0 && eps_hat > 0.0 && eps_hat < 1.0 && zeta > 0.0) {
        return invalid("envelope needs p > 0, ε̂ ∈ (0, 1), ζ > 0");
    }
    let n = d_constants.len();
    check_dim(n, sigma_min_sq.len())?;
    let a = 1.0 / (1.0 + (1.0 - eps_hat) * p);
    let c: Vec<f64> = (0..n)
        .map(|i| 6.0 * p * d_constants[i].powi(2) / (zeta * n as f64 * sigma_min_sq[i]) + d_constants[i] / (eps_hat * p))
        .collect();
    let mut out = Vec::with_capacity(noise_sq.len() + 1);
    out.push(g0);
    let (mut r, mut ak) = (0.0, 1.0);
    for step in noise_sq {
        check_dim(n, step.len())?;
        r = a * (r + c.iter().zip(step).map(|(c, q)| c * q).sum::<f64>());
        ak *= a;
        out.push(ak * g0 + r);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepSize {
    /// `η_t = 1/(c√t)`.
    InvSqrt { c: f64 },
    /// `η_t = base·ratio^t`.
    Geometric { base: f64, ratio: f64 },
    Constant { eta: f64 },
}

impl StepSize {
    pub fn eta(&self, t: usize) -> f64 {
        match *self {
            StepSize::InvSqrt { c } => 1.0 / (c * (t.max(1) as f64).sqrt()),
            StepSize::Geometric { base, ratio } => base * ratio.powi(t as i32),
            StepSize::Constant { eta } => eta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Algorithm2Pair,
    Algorithm2StarNeighbors,
    FixedAverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdParams {
    pub step: StepSize,
    pub weight_mode: WeightMode,
    /// Range of the random weight `w`; `(0, 1)` in the published schemes.
    pub weight_interval: (f64, f64),
    pub weight_seed: u64,
}

impl GdParams {
    pub fn new(step: StepSize, weight_mode: WeightMode, weight_seed: u64) -> Self {
        Self { step, weight_mode, weight_interval: (0.0, 1.0), weight_seed }
    }

    fn weights(&self, t: usize, agent: usize, count: usize) -> Vec<f64> {
        let (lo, hi) = self.weight_interval;
        let mut r = rng::stream(self.weight_seed, domain::WEIGHT, t as u64, agent as u64);
        (0..count).map(|_| if lo == hi { lo } else { r.random_range(lo..hi) }).collect()
    }
}

fn gd_finish<T: Scalar>(
    states: &[AgentState<T>],
    noise: &NoiseSchedule,
    k: usize,
    eta: f64,
    aggregate: Vec<Vec<T>>,
    interval: Option<Vec<Vec<(T, T)>>>,
    offset: Vec<Vec<T>>,
) -> Result<(Vec<AgentState<T>>, IterationRecord<T>)> {
    let t = k + 1;
    let mut next = states.to_vec();
    let mut noise_vecs = Vec::with_capacity(states.len());
    let mut primal = Vec::with_capacity(states.len());
    for (i, s) in next.iter_mut().enumerate() {
        let dv = sample::<T>(noise, t, i, s.primal.len())?.vector;
        let x: Vec<T> = (0..dv.len()).map(|l| aggregate[i][l] + offset[i][l] + dv[l]).collect();
        s.primal = x.clone();
        primal.push(x);
        noise_vecs.push(dv);
    }
    let record = IterationRecord {
        iteration: k,
        primal,
        aggregate,
        interval,
        offset,
        noise: noise_vecs,
        step_scale: vec![T::lit(eta); states.len()],
        inverse_scale: noise.inverse_scale(t),
    };
    Ok((next, record))
}

/// Pair with the largest ℓ1 distance; ties go to the lexicographically
/// smallest pair.
pub fn max_divergence_pair<T: Scalar>(xs: &[Vec<T>]) -> (usize, usize) {
    let mut best = (0, 1);
    let mut best_d = T::neg_infinity();
    for a in 0..xs.len() {
        for b in a + 1..xs.len() {
            let d: T = xs[a].iter().zip(&xs[b]).map(|(&u, &v)| (u - v).abs()).sum();
            if d > best_d {
                best_d = d;
                best = (a, b);
            }
        }
    }
    best
}

/// Randomized pair aggregation over a complete exchange, gradient taken at
/// the exact mean of the round-`k` states.
pub fn gd_step_algorithm2<T: Scalar>(
    states: &[AgentState<T>],
    params: &GdParams,
    objectives: &[ObjectiveSpec<T>],
    noise: &NoiseSchedule,
    k: usize,
) -> Result<(Vec<AgentState<T>>, IterationRecord<T>)> {
    let n = states.len();
    check_dim(n, objectives.len())?;
    if n < 2 {
        return invalid("Algorithm 2 needs at least two agents");
    }
    let t = k + 1;
    let eta = params.step.eta(t);
    let topo = Topology::complete(n);
    let xs: Vec<Vec<T>> = states.iter().map(|s| s.primal.clone()).collect();
    let mb = exchange_round(&topo, &xs, ExchangeMode::Complete, k)?;
    let dim = xs[0].len();
    let nt = T::from_usize_exact(n);
    let two = T::lit(2.0);
    let (lo, hi) = params.weight_interval;
    let mut aggregate = Vec::with_capacity(n);
    let mut interval = Vec::with_capacity(n);
    let mut offset = Vec::with_capacity(n);
    for i in 0..n {
        // Agent i sees its own state plus the mailbox.
        let mut view: Vec<Vec<T>> = vec![Vec::new(); n];
        view[i] = xs[i].clone();
        for (j, v) in mb.inbox(i) {
            view[j] = v.to_vec();
        }
        let (p, q) = max_divergence_pair(&view);
        let mean = mean_vec(&view);
        let mut rest = vec![T::zero(); dim];
        for (j, v) in view.iter().enumerate() {
            if j != p && j != q {
                axpy(T::one() / nt, v, &mut rest);
            }
        }
        let w = params.weights(t, i, dim);
        let at = |l: usize, w: f64| rest[l] + two / nt * (view[q][l] + T::lit(w) * (view[p][l] - view[q][l]));
        aggregate.push((0..dim).map(|l| at(l, w[l])).collect());
        interval.push(
            (0..dim)
                .map(|l| {
                    let (a, b) = (at(l, lo), at(l, hi));
                    (a.min(b), a.max(b))
                })
                .collect(),
        );
        let g = objectives[i].gradient(&mean)?;
        offset.push(g.iter().map(|&g| -T::lit(eta) * g).collect());
    }
    gd_finish(states, noise, k, eta, aggregate, Some(interval), offset)
}

/// Per-coordinate uniform point between the neighborhood minimum and
/// maximum, gradient at the agent's own state.
pub fn gd_step_algorithm2star<T: Scalar>(
    states: &[AgentState<T>],
    params: &GdParams,
    objectives: &[ObjectiveSpec<T>],
    noise: &NoiseSchedule,
    k: usize,
    topology: &Topology,
) -> Result<(Vec<AgentState<T>>, IterationRecord<T>)> {
    let n = states.len();
    check_dim(n, objectives.len())?;
    check_dim(topology.node_count(), n)?;
    let t = k + 1;
    let eta = params.step.eta(t);
    let xs: Vec<Vec<T>> = states.iter().map(|s| s.primal.clone()).collect();
    let mb = exchange_round(topology, &xs, ExchangeMode::Neighbors, k)?;
    let dim = xs[0].len();
    let mut aggregate = Vec::with_capacity(n);
    let mut interval = Vec::with_capacity(n);
    let mut offset = Vec::with_capacity(n);
    for i in 0..n {
        let inbox = mb.inbox(i);
        let w = params.weights(t, i, dim);
        let mut agg = Vec::with_capacity(dim);
        let mut tau = Vec::with_capacity(dim);
        for l in 0..dim {
            let (mut lo, mut hi) = (xs[i][l], xs[i][l]);
            for (_, v) in &inbox {
                lo = lo.min(v[l]);
                hi = hi.max(v[l]);
            }
            let wl = T::lit(w[l]);
            agg.push(wl * lo + (T::one() - wl) * hi);
            tau.push((lo, hi));
        }
        aggregate.push(agg);
        interval.push(tau);
        let g = objectives[i].gradient(&xs[i])?;
        offset.push(g.iter().map(|&g| -T::lit(eta) * g).collect());
    }
    gd_finish(states, noise, k, eta, aggregate, Some(interval), offset)
}

/// Fixed mixing `x_i ← Σ_j W_ij x_j - η∇f_i(·) + Δ`. The gradient point is
/// `x_i` unless `gradient_at_mean` is set.
#[allow(clippy::too_many_arguments)]
pub fn gd_step_baseline<T: Scalar>(
    states: &[AgentState<T>],
    weights: &[Vec<f64>],
    topology: Option<&Topology>,
    params: &GdParams,
    objectives: &[ObjectiveSpec<T>],
    noise: &NoiseSchedule,
    k: usize,
    gradient_at_mean: bool,
) -> Result<(Vec<AgentState<T>>, IterationRecord<T>)> {
    let n = states.len();
    check_dim(n, objectives.len())?;
    check_dim(n, weights.len())?;
    for (i, row) in weights.iter().enumerate() {
        check_dim(n, row.len())?;
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return invalid(format!("weight row {} is not stochastic", i + 1));
        }
        if let Some(topo) = topology {
            for (j, &w) in row.iter().enumerate() {
                if w != 0.0 && j != i && topo.neighbors(i).binary_search(&j).is_err() {
                    return invalid(format!("weight ({}, {}) is off the graph", i + 1, j + 1));
                }
            }
        }
    }
    let t = k + 1;
    let eta = params.step.eta(t);
    let xs: Vec<Vec<T>> = states.iter().map(|s| s.primal.clone()).collect();
    let mean = mean_vec(&xs);
    let dim = xs[0].len();
    let mut aggregate = Vec::with_capacity(n);
    let mut offset = Vec::with_capacity(n);
    for i in 0..n {
        let mut agg = vec![T::zero(); dim];
        for (j, &w) in weights[i].iter().enumerate() {
            if w != 0.0 {
                axpy(T::lit(w), &xs[j], &mut agg);
            }
        }
        aggregate.push(agg);
        let g = objectives[i].gradient(if gradient_at_mean { &mean } else { &xs[i] })?;
        offset.push(g.iter().map(|&g| -T::lit(eta) * g).collect());
    }
    gd_finish(states, noise, k, eta, aggregate, None, offset)
}

/// One random-coordinate step with `η = 1/M̂` for agent `agent`. Returns
/// the new state and the updated coordinate.
pub fn rcd_step<T: Scalar>(
    x: &[T],
    objective: &ObjectiveSpec<T>,
    coordinate_smoothness: f64,
    noise: &NoiseSchedule,
    k: usize,
    agent: usize,
    seed: u64,
) -> Result<(Vec<T>, usize)> {
    if !(coordinate_smoothness > 0.0) {
        return invalid("coordinate smoothness must be positive");
    }
    let d = x.len();
    let l = rng::stream(seed, domain::COORD, k as u64, agent as u64).random_range(0..d);
    let g = objective.gradient(x)?;
    let dv = sample::<T>(noise, k + 1, agent, 1)?.vector[0];
    let mut out = x.to_vec();
    out[l] = out[l] - T::lit(1.0 / coordinate_smoothness) * g[l] + dv;
    Ok((out, l))
}
