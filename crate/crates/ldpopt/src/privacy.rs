//! Local privacy accountant.
//!
//! A released coordinate is Laplace(β) noise around a mean that is uniform
//! on an interval `[a, a+ω]`. Replacing one local sample shifts that
//! interval by at most `t = ±α·B∞`, and the per-step loss is the largest
//! absolute log-ratio of the two output densities at the observed value.
//! Accounting runs in `f64` regardless of the optimizer scalar.

use std::path::Path;

use rand::Rng;
use rand_distr::Open01;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optimizers::IterationRecord;
use crate::quadrature::{integrate, integrate_pieces};
use crate::rng::{self, domain};
use crate::scalar::Scalar;

/// `∫_a^b exp(-β|x - y|) dy` in closed form.
pub fn interval_laplace_mass(x: f64, a: f64, b: f64, beta: f64) -> Result<f64> {
    Ok(log_interval_laplace_mass(x, a, b, beta)?.exp())
}

/// Natural log of [`interval_laplace_mass`], evaluated without cancellation.
pub fn log_interval_laplace_mass(x: f64, a: f64, b: f64, beta: f64) -> Result<f64> {
    if b < a {
        return invalid(format!("interval [{a}, {b}] is reversed"));
    }
    if !(beta > 0.0) {
        return invalid("β must be positive");
    }
    Ok(log_mass(x, a, b, beta))
}

fn log_mass(x: f64, a: f64, b: f64, beta: f64) -> f64 {
    if a == b {
        return f64::NEG_INFINITY;
    }
    if x <= a || x >= b {
        let dist = if x <= a { a - x } else { x - b };
        -beta * dist + (-(-beta * (b - a)).exp_m1()).ln() - beta.ln()
    } else {
        (-(-beta * (x - a)).exp_m1() - (-beta * (b - x)).exp_m1()).ln() - beta.ln()
    }
}

/// One released coordinate and the interval its mean was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLossQuery {
    pub realized_value: f64,
    /// Left end `a` of the interval `[a, a+ω]`.
    pub interval_lo: f64,
    pub omega: f64,
    pub beta: f64,
    pub alpha: f64,
    pub sensitivity: f64,
}

impl StepLossQuery {
    pub fn worst_case(&self) -> f64 {
        self.alpha * self.beta * self.sensitivity
    }

    fn validate(&self) -> Result<()> {
        if !(self.omega >= 0.0 && self.beta > 0.0 && self.alpha * self.sensitivity >= 0.0) {
            return invalid(format!("bad step-loss query {self:?}"));
        }
        Ok(())
    }

    fn log_ratio(&self, t: f64) -> f64 {
        let (x, a, w, b) = (self.realized_value, self.interval_lo, self.omega, self.beta);
        if w == 0.0 {
            b * ((x - a - t).abs() - (x - a).abs())
        } else if x <= a.min(a + t) {
            b * t
        } else if x >= (a + w).max(a + w + t) {
            -b * t
        } else {
            log_mass(x, a, a + w, b) - log_mass(x, a + t, a + w + t, b)
        }
    }
}

/// Realized per-coordinate loss; never above `α·β·B∞`.
pub fn step_loss(q: &StepLossQuery) -> Result<f64> {
    q.validate()?;
    let s = q.alpha * q.sensitivity;
    if s == 0.0 {
        return Ok(0.0);
    }
    Ok(q.log_ratio(s).abs().max(q.log_ratio(-s).abs()))
}

/// Maximizes over a uniform grid of shifts in `[-αB∞, αB∞]`. Used to
/// confirm that the endpoints attain the maximum.
pub fn step_loss_grid(q: &StepLossQuery, points: usize) -> Result<f64> {
    q.validate()?;
    let s = q.alpha * q.sensitivity;
    let n = points.max(2);
    Ok((0..n)
        .map(|i| q.log_ratio(-s + 2.0 * s * i as f64 / (n - 1) as f64).abs())
        .fold(0.0, f64::max))
}

fn check_gamma_args(omega: f64, beta: f64, alpha_b: f64) -> Result<()> {
    if !(alpha_b > 0.0 && beta > 0.0) {
        return invalid("need β > 0 and αB∞ > 0");
    }
    if !(omega > alpha_b) {
        return invalid(format!("ω = {omega} must exceed αB∞ = {alpha_b}"));
    }
    Ok(())
}

/// Closed-form-inner bound on `γ = E[ε/(αβB∞)]` for an interval of width
/// `ω`:
///
/// `γ ≤ (1/s)·log(e^s (1 - 2 I₁) + 2 I₂)`, `s = αβB∞`,
///
/// with `I₁`, `I₂` the mass of `Φ(x,y) = (β/2ω) e^{-β|x-y|}` for `x` in the
/// left half-region `[0, (ω-αB∞)/2]` and `y` over `[0, ω]` and
/// `[-αB∞, ω-αB∞]` respectively. Computed as
/// `log1p(expm1(s) - 2J)/s` with `J = e^s I₁ - I₂` integrated directly.
pub fn gamma_bound(omega: f64, beta: f64, alpha_b: f64) -> Result<f64> {
    check_gamma_args(omega, beta, alpha_b)?;
    gamma_left_region(omega, beta, alpha_b, |x| {
        log_mass(x, -alpha_b, omega - alpha_b, beta) - log_mass(x, 0.0, omega, beta)
    })
}

/// Same construction as [`gamma_bound`] but the left half-region uses the
/// larger of the two shifted ratios `m₋/m₀` and `m₀/m₊`, which makes it a
/// true upper bound on `γ`. By log-concavity of the shifted mass the second
/// ratio always dominates there.
pub fn gamma_bound_corrected(omega: f64, beta: f64, alpha_b: f64) -> Result<f64> {
    check_gamma_args(omega, beta, alpha_b)?;
    gamma_left_region(omega, beta, alpha_b, |x| {
        let l0 = log_mass(x, 0.0, omega, beta);
        let minus = log_mass(x, -alpha_b, omega - alpha_b, beta) - l0;
        let plus = l0 - log_mass(x, alpha_b, omega + alpha_b, beta);
        minus.max(plus)
    })
}

fn gamma_left_region(omega: f64, beta: f64, alpha_b: f64, log_ratio: impl Fn(f64) -> f64) -> Result<f64> {
    let s = alpha_b * beta;
    let h = 0.5 * (omega - alpha_b);
    let c = beta / (2.0 * omega);
    let j = integrate(
        |x| {
            let lr = log_ratio(x);
            c * (log_mass(x, 0.0, omega, beta) + lr).exp() * (s - lr).exp_m1()
        },
        0.0,
        h,
        1e-15,
        1e-13,
    );
    Ok((s.exp_m1() - 2.0 * j.value).ln_1p() / s)
}

/// `E[ε]/(αβB∞)` under the mixture model, by quadrature over the observed
/// value. Outside `[-αB∞, ω+αB∞]` the loss equals the worst case.
pub fn gamma_exact(omega: f64, beta: f64, alpha_b: f64) -> Result<f64> {
    if !(omega > 0.0 && beta > 0.0 && alpha_b > 0.0) {
        return invalid("need ω, β, αB∞ > 0");
    }
    let s = alpha_b * beta;
    let c = beta / (2.0 * omega);
    let mut pts = vec![-alpha_b, 0.0, alpha_b, omega - alpha_b, 0.5 * omega, omega, omega + alpha_b];
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let loss = |x: f64| {
        let q = StepLossQuery { realized_value: x, interval_lo: 0.0, omega, beta, alpha: 1.0, sensitivity: alpha_b };
        q.log_ratio(alpha_b).abs().max(q.log_ratio(-alpha_b).abs())
    };
    let inside = integrate_pieces(|x| c * log_mass(x, 0.0, omega, beta).exp() * loss(x), &pts, 1e-16, 1e-13);
    let mass_in = integrate_pieces(|x| c * log_mass(x, 0.0, omega, beta).exp(), &pts, 1e-16, 1e-13);
    Ok((inside.value + s * (1.0 - mass_in.value)) / s)
}

/// Monte Carlo estimate of `γ` with its standard error.
pub fn gamma_monte_carlo(omega: f64, beta: f64, alpha_b: f64, draws: usize, seed: u64) -> Result<(f64, f64)> {
    if !(omega >= 0.0 && beta > 0.0 && alpha_b > 0.0) || draws < 2 {
        return invalid("need ω ≥ 0, β > 0, αB∞ > 0 and at least two draws");
    }
    const CHUNK: usize = 1 << 16;
    let s = alpha_b * beta;
    let chunks = draws.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut r = rng::stream(seed, domain::MONTE_CARLO, ci as u64, 0);
            let n = CHUNK.min(draws - ci * CHUNK);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let y = omega * r.random::<f64>();
                let u: f64 = r.sample::<f64, _>(Open01) - 0.5;
                let x = y - u.signum() * (-2.0 * u.abs()).ln_1p() / beta;
                let q = StepLossQuery { realized_value: x, interval_lo: 0.0, omega, beta, alpha: 1.0, sensitivity: alpha_b };
                let v = q.log_ratio(alpha_b).abs().max(q.log_ratio(-alpha_b).abs()) / s;
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |acc, &(a, b)| (acc.0 + a, acc.1 + b));
    let n = draws as f64;
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

pub fn compose_pure(entries: &[f64]) -> Result<f64> {
    if entries.iter().any(|&e| !(e >= 0.0)) {
        return invalid("privacy losses must be non-negative");
    }
    Ok(neumaier_sum(entries.iter().copied()))
}

/// `Σ (e^ε - 1)ε/(e^ε + 1) + sqrt(-2 Σ ε² log δ)`.
pub fn compose_strong(entries: &[f64], delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid("δ must lie in (0, 1)");
    }
    if entries.iter().any(|&e| !(e >= 0.0)) {
        return invalid("privacy losses must be non-negative");
    }
    let advantage = neumaier_sum(entries.iter().map(|&e| e * (0.5 * e).tanh()));
    let squares = neumaier_sum(entries.iter().map(|&e| e * e));
    Ok(advantage + (-2.0 * squares * delta.ln()).sqrt())
}

/// [`compose_strong`] for `count` copies of `eps`.
pub fn compose_strong_homogeneous(eps: f64, count: usize, delta: f64) -> f64 {
    let n = count as f64;
    n * eps * (0.5 * eps).tanh() + (-2.0 * n * eps * eps * delta.ln()).sqrt()
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// Step number `t = k + 1`.
    pub k: usize,
    pub agent: usize,
    /// Coordinate, 0-based.
    pub l: usize,
    pub realized: f64,
    pub worst: f64,
}

impl LedgerEntry {
    pub fn ratio(&self) -> f64 {
        if self.worst > 0.0 {
            self.realized / self.worst
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTotals {
    pub agent: usize,
    pub realized_pure: f64,
    pub worst_pure: f64,
    pub realized_strong: Option<f64>,
    pub mean_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    /// Largest per-agent realized pure total.
    pub pure_total: f64,
    /// Largest per-agent worst-case total.
    pub worst_total: f64,
    /// Largest per-agent strong-composition total, when δ is set.
    pub strong_total: Option<f64>,
    pub delta: Option<f64>,
    /// Mean of realized / worst over all entries.
    pub mean_ratio: f64,
    pub agents: Vec<AgentTotals>,
}

/// Per-(step, agent, coordinate) losses. Each agent's guarantee is the
/// composition of its own entries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub entries: Vec<LedgerEntry>,
}

impl PrivacyLedger {
    pub fn summary(&self, delta: Option<f64>) -> Result<LedgerSummary> {
        let agents = self.entries.iter().map(|e| e.agent).max().map_or(0, |m| m + 1);
        let mut per: Vec<Vec<&LedgerEntry>> = vec![Vec::new(); agents];
        for e in &self.entries {
            per[e.agent].push(e);
        }
        let mut totals = Vec::new();
        for (agent, es) in per.iter().enumerate().filter(|(_, es)| !es.is_empty()) {
            let realized: Vec<f64> = es.iter().map(|e| e.realized).collect();
            totals.push(AgentTotals {
                agent,
                realized_pure: compose_pure(&realized)?,
                worst_pure: compose_pure(&es.iter().map(|e| e.worst).collect::<Vec<_>>())?,
                realized_strong: delta.map(|d| compose_strong(&realized, d)).transpose()?,
                mean_ratio: neumaier_sum(es.iter().map(|e| e.ratio())) / es.len() as f64,
            });
        }
        let max_of = |f: &dyn Fn(&AgentTotals) -> f64| totals.iter().map(f).fold(0.0, f64::max);
        Ok(LedgerSummary {
            pure_total: max_of(&|t| t.realized_pure),
            worst_total: max_of(&|t| t.worst_pure),
            strong_total: delta.map(|_| max_of(&|t| t.realized_strong.unwrap_or(0.0))),
            delta,
            mean_ratio: if self.entries.is_empty() {
                1.0
            } else {
                neumaier_sum(self.entries.iter().map(|e| e.ratio())) / self.entries.len() as f64
            },
            agents: totals,
        })
    }

    /// Columns `k,agent,l,realized_eps,worst_eps,ratio`; agent and `l` are
    /// 1-based.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "agent", "l", "realized_eps", "worst_eps", "ratio"])?;
        for e in &self.entries {
            w.write_record(&[
                e.k.to_string(),
                (e.agent + 1).to_string(),
                (e.l + 1).to_string(),
                format!("{:e}", e.realized),
                format!("{:e}", e.worst),
                format!("{:e}", e.ratio()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format of [`write_csv`](Self::write_csv). The `agent`
    /// column is optional; without it every row belongs to agent 1.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let ingest = |m: String| Error::Ingestion(m);
        let mut r = csv::Reader::from_path(path).map_err(|e| ingest(e.to_string()))?;
        let headers = r.headers().map_err(|e| ingest(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (k, l, re, wo) = match (col("k"), col("l"), col("realized_eps"), col("worst_eps")) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => return Err(ingest("ledger needs columns k, l, realized_eps, worst_eps".into())),
        };
        let agent = col("agent");
        let mut entries = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| ingest(e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| ingest(format!("row {}: bad number in column {}", line + 2, &headers[i])))
            };
            let idx = |i: usize| -> Result<usize> {
                let v = num(i)?;
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize - 1)
                } else {
                    Err(ingest(format!("row {}: index must be a positive integer", line + 2)))
                }
            };
            let e = LedgerEntry {
                k: num(k)? as usize,
                agent: agent.map(idx).transpose()?.unwrap_or(0),
                l: idx(l)?,
                realized: num(re)?,
                worst: num(wo)?,
            };
            if !(e.realized >= 0.0 && e.worst >= 0.0) {
                return Err(ingest(format!("row {}: negative loss", line + 2)));
            }
            entries.push(e);
        }
        Ok(Self { entries })
    }
}

/// Builds the ledger of a Laplace-perturbed run. Records without interval
/// data (fixed-weight baselines) contribute worst-case entries.
pub fn realized_epsilon<T: Scalar>(trajectory: &[IterationRecord<T>], sensitivity: f64) -> Result<PrivacyLedger> {
    let mut entries = Vec::new();
    for rec in trajectory {
        let beta = rec
            .inverse_scale
            .ok_or_else(|| Error::InvalidArgument(format!("step {} carries no Laplace noise", rec.iteration + 1)))?;
        for (i, x) in rec.primal.iter().enumerate() {
            let alpha = rec.step_scale[i].f64();
            for (l, &xl) in x.iter().enumerate() {
                let worst = alpha * beta * sensitivity;
                let realized = match &rec.interval {
                    Some(tau) => {
                        let (lo, hi) = tau[i][l];
                        let shift = rec.offset[i][l].f64();
                        step_loss(&StepLossQuery {
                            realized_value: xl.f64(),
                            interval_lo: lo.f64() + shift,
                            omega: (hi - lo).f64(),
                            beta,
                            alpha,
                            sensitivity,
                        })?
                        .min(worst)
                    }
                    None => worst,
                };
                entries.push(LedgerEntry { k: rec.iteration + 1, agent: i, l, realized, worst });
            }
        }
    }
    Ok(PrivacyLedger { entries })
}
