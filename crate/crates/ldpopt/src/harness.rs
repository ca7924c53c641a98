//! Experiment orchestration: reference optima, synthetic data, TOML
//! configurations, replicated runs with CSV/JSON artifacts, and the
//! dimension-scaling study.
//!
//! Every random choice in a run is keyed by the master seed. Replication
//! `r` derives its own seed, from which the graph, the data split, the
//! initial states, the penalty draws and the noise are keyed by domain.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, invalid, Error, Result};
use crate::graphnet::{generate_random_graph, Topology};
use crate::linalg::{solve, solve_spd, Matrix};
use crate::noise::{calibrate_pure_laplace, calibrate_relaxed, sample, Mechanism, NoiseSchedule, ScheduleKind};
use crate::objectives::{derive_profiles, ingest_csv, CategoricalEncoding, IngestOptions, Link, ObjectiveKind, ObjectiveSpec};
use crate::optimizers::{
    admm_exact_step, admm_first_order_step, g_norm, gd_step_algorithm2, gd_step_algorithm2star, gd_step_baseline,
    initial_states, rcd_step, validate_admm_params, AdmmParams, AdmmVariant, AgentState, ConstraintSystem,
    ExchangeChannel, GdParams, IterationRecord, PenaltyLaw, Reference, StepSize, ValidationOutcome, WeightMode,
};
use crate::privacy::{realized_epsilon, LedgerEntry, LedgerSummary, PrivacyLedger};
use crate::rng::{self, domain};
use crate::scalar::{axpy, dist2_sq, mean_vec, norm2_sq, Scalar};

fn reference_tolerance<T: Scalar>() -> f64 {
    1e-12f64.max(1e4 * T::epsilon().f64())
}

/// Optimum of `Σ_i f_i(x_i)` subject to the coupling constraints.
///
/// Consensus mode runs Newton on `Σ_i f_i` and sets `λ_i* = ∇f_i(x*)`.
/// General mode runs Newton on the KKT system of the equality-constrained
/// problem.
pub fn solve_reference<T: Scalar>(objectives: &[ObjectiveSpec<T>], system: &ConstraintSystem<T>) -> Result<Reference<T>> {
    check_dim(system.agents(), objectives.len())?;
    if objectives.is_empty() {
        return invalid("no objectives");
    }
    match system {
        ConstraintSystem::Consensus(_) => consensus_reference(objectives),
        ConstraintSystem::General { blocks, rhs } => general_reference(objectives, blocks, rhs),
    }
}

fn total_value<T: Scalar>(objectives: &[ObjectiveSpec<T>], x: &[T]) -> Result<T> {
    objectives.iter().map(|f| f.evaluate(x)).sum()
}

fn consensus_reference<T: Scalar>(objectives: &[ObjectiveSpec<T>]) -> Result<Reference<T>> {
    let d = objectives[0].dimension();
    let tol = reference_tolerance::<T>();
    let gradient = |x: &[T]| -> Result<Vec<T>> {
        let mut g = vec![T::zero(); d];
        for f in objectives {
            axpy(T::one(), &f.gradient(x)?, &mut g);
        }
        Ok(g)
    };
    let mut x = vec![T::zero(); d];
    let mut converged = false;
    for _ in 0..200 {
        let g = gradient(&x)?;
        let gn = norm2_sq(&g).f64().sqrt();
        if gn <= tol {
            converged = true;
            break;
        }
        let mut h = Matrix::zeros(d, d);
        for f in objectives {
            axpy(T::one(), &f.hessian(&x)?.data, &mut h.data);
        }
        let step = solve_spd(&h, &g)?;
        let slope: T = g.iter().zip(&step).map(|(&a, &b)| a * b).sum();
        let f0 = total_value(objectives, &x)?;
        let mut s = T::one();
        let mut moved = false;
        for _ in 0..60 {
            let cand: Vec<T> = x.iter().zip(&step).map(|(&a, &b)| a - s * b).collect();
            let shrinks = norm2_sq(&gradient(&cand)?).f64().sqrt() <= (1.0 - 0.5 * s.f64()) * gn;
            if shrinks || total_value(objectives, &cand)? <= f0 - T::lit(1e-4) * s * slope {
                x = cand;
                moved = true;
                break;
            }
            s *= T::lit(0.5);
        }
        if !moved {
            break;
        }
    }
    let gn = norm2_sq(&gradient(&x)?).f64().sqrt();
    if !converged && gn > tol {
        return Err(Error::NonConvergence(format!("reference Newton stopped at gradient norm {gn:e}")));
    }
    let dual = objectives.iter().map(|f| f.gradient(&x)).collect::<Result<Vec<_>>>()?;
    Ok(Reference {
        primal: vec![x.clone(); objectives.len()],
        dual,
        objective: total_value(objectives, &x)?.f64(),
    })
}

fn general_reference<T: Scalar>(objectives: &[ObjectiveSpec<T>], blocks: &[Matrix<T>], rhs: &[T]) -> Result<Reference<T>> {
    let p = rhs.len();
    let dims: Vec<usize> = objectives.iter().map(|f| f.dimension()).collect();
    for (a, &d) in blocks.iter().zip(&dims) {
        check_dim(p, a.rows)?;
        check_dim(d, a.cols)?;
    }
    let offsets: Vec<usize> = dims.iter().scan(0, |acc, &d| {
        let o = *acc;
        *acc += d;
        Some(o)
    }).collect();
    let n_tot: usize = dims.iter().sum();
    let size = n_tot + p;
    let tol = reference_tolerance::<T>();
    let mut xs: Vec<Vec<T>> = dims.iter().map(|&d| vec![T::zero(); d]).collect();
    let mut lambda = vec![T::zero(); p];
    let residual = |xs: &[Vec<T>], lambda: &[T]| -> Result<Vec<T>> {
        let mut r = Vec::with_capacity(size);
        let mut prim: Vec<T> = rhs.iter().map(|&c| -c).collect();
        for (i, f) in objectives.iter().enumerate() {
            let g = f.gradient(&xs[i])?;
            let at = blocks[i].t_matvec(lambda);
            r.extend(g.iter().zip(&at).map(|(&g, &a)| g - a));
            axpy(T::one(), &blocks[i].matvec(&xs[i]), &mut prim);
        }
        r.extend(prim);
        Ok(r)
    };
    let mut res = residual(&xs, &lambda)?;
    for _ in 0..200 {
        let rn = norm2_sq(&res).f64().sqrt();
        if rn <= tol {
            break;
        }
        let mut kkt = Matrix::zeros(size, size);
        for (i, f) in objectives.iter().enumerate() {
            let h = f.hessian(&xs[i])?;
            let o = offsets[i];
            for a in 0..dims[i] {
                for b in 0..dims[i] {
                    kkt.set(o + a, o + b, h.get(a, b));
                }
                for r in 0..p {
                    let v = blocks[i].get(r, a);
                    kkt.set(o + a, n_tot + r, -v);
                    kkt.set(n_tot + r, o + a, v);
                }
            }
        }
        let step = solve(&kkt, &res)?;
        let mut s = T::one();
        let mut moved = false;
        for _ in 0..60 {
            let cand_x: Vec<Vec<T>> = (0..xs.len())
                .map(|i| xs[i].iter().enumerate().map(|(a, &v)| v - s * step[offsets[i] + a]).collect())
                .collect();
            let cand_l: Vec<T> = lambda.iter().enumerate().map(|(r, &v)| v - s * step[n_tot + r]).collect();
            let cand_r = residual(&cand_x, &cand_l)?;
            if norm2_sq(&cand_r).f64().sqrt() < rn {
                xs = cand_x;
                lambda = cand_l;
                res = cand_r;
                moved = true;
                break;
            }
            s *= T::lit(0.5);
        }
        if !moved {
            break;
        }
    }
    let rn = norm2_sq(&res).f64().sqrt();
    if rn > tol {
        return Err(Error::NonConvergence(format!("KKT Newton stopped at residual {rn:e}")));
    }
    let objective = objectives.iter().zip(&xs).map(|(f, x)| f.evaluate(x).map(|v| v.f64())).sum::<Result<f64>>()?;
    Ok(Reference { primal: xs, dual: vec![lambda; objectives.len()], objective })
}

/// Synthetic classification or regression data from a planted predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub dim: usize,
    pub agents: usize,
    pub samples_per_agent: usize,
    pub kind: ObjectiveKind,
    #[serde(default = "default_reg")]
    pub reg: f64,
    #[serde(default)]
    pub flip_prob: f64,
    /// Predictor generating the labels; random unit vector when absent.
    #[serde(default)]
    pub planted: Option<Vec<f64>>,
    /// Rows live in the first `intrinsic_dim` coordinates; all of them
    /// when absent.
    #[serde(default)]
    pub intrinsic_dim: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_reg() -> f64 {
    1.0
}

/// Unit-norm rows, labels `sign(zᵀw)` flipped with probability
/// `flip_prob`; `{0, 1}` for the logistic loss and `±1` otherwise.
pub fn generate_synthetic(params: &SyntheticParams) -> Result<Vec<ObjectiveSpec<f64>>> {
    let (d, n, b) = (params.dim, params.agents, params.samples_per_agent);
    if d == 0 || n == 0 || b == 0 {
        return invalid("synthetic data needs positive dim, agents and samples");
    }
    let r = params.intrinsic_dim.unwrap_or(d);
    if r == 0 || r > d {
        return invalid(format!("intrinsic dimension {r} outside 1..={d}"));
    }
    if !(0.0..=1.0).contains(&params.flip_prob) {
        return invalid("flip probability outside [0, 1]");
    }
    let planted = match &params.planted {
        Some(w) => {
            check_dim(d, w.len())?;
            w.clone()
        }
        None => {
            let mut g = rng::stream(params.seed, domain::DATA, u64::MAX, 0);
            let mut w: Vec<f64> = (0..r).map(|_| g.sample(StandardNormal)).collect();
            let norm = norm2_sq(&w).sqrt();
            w.iter_mut().for_each(|v| *v /= norm);
            w.resize(d, 0.0);
            w
        }
    };
    (0..n)
        .map(|i| {
            let mut g = rng::stream(params.seed, domain::DATA, i as u64, 0);
            let mut rows = Vec::with_capacity(b);
            let mut labels = Vec::with_capacity(b);
            for _ in 0..b {
                let mut z: Vec<f64> = (0..r).map(|_| g.sample(StandardNormal)).collect();
                let norm = norm2_sq(&z).sqrt();
                z.iter_mut().for_each(|v| *v /= norm);
                z.resize(d, 0.0);
                let mut s = if crate::scalar::dot(&z, &planted) >= 0.0 { 1.0 } else { -1.0 };
                if params.flip_prob > 0.0 && g.random::<f64>() < params.flip_prob {
                    s = -s;
                }
                labels.push(if params.kind == ObjectiveKind::LogisticL2 { (s + 1.0) / 2.0 } else { s });
                rows.push(z);
            }
            ObjectiveSpec::new(params.kind, Matrix::from_rows(&rows)?, labels, params.reg)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub agents: usize,
    /// Edge count of a random connected graph; the complete graph when
    /// absent.
    #[serde(default)]
    pub edges: Option<usize>,
    /// Fixes the graph across replications.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Edge-list file, overriding `edges`.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSource {
    Synthetic {
        dim: usize,
        samples_per_agent: usize,
        kind: ObjectiveKind,
        #[serde(default = "default_reg")]
        reg: f64,
        #[serde(default)]
        flip_prob: f64,
        #[serde(default)]
        intrinsic_dim: Option<usize>,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default)]
        per_agent: Option<usize>,
        #[serde(default)]
        categorical: CategoricalEncoding,
        #[serde(default = "default_reg")]
        reg: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmConfig {
    pub zeta: f64,
    /// Penalty constant `D_i`, shared by all agents.
    pub d: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub rho0: Option<f64>,
    pub penalty: PenaltyLaw,
    #[serde(default)]
    pub exchange: ExchangeChannel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    #[default]
    Metropolis,
    /// `W = 11ᵀ/N`; needs the complete graph.
    Uniform,
}

fn unit_interval() -> (f64, f64) {
    (0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    AdmmExact(AdmmConfig),
    AdmmFirstOrder(AdmmConfig),
    DgdBaseline {
        step: StepSize,
        #[serde(default)]
        mixing: Mixing,
        #[serde(default)]
        gradient_at_mean: bool,
    },
    GdAlgorithm2 {
        step: StepSize,
        #[serde(default = "unit_interval")]
        weight_interval: (f64, f64),
    },
    GdAlgorithm2star {
        step: StepSize,
        #[serde(default = "unit_interval")]
        weight_interval: (f64, f64),
    },
    Rcd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub epsilon: f64,
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    pub mechanism: Mechanism,
    /// Overrides the sensitivity derived from the data.
    #[serde(default)]
    pub sensitivity: Option<f64>,
    #[serde(default)]
    pub schedule: Option<ScheduleKind>,
    #[serde(default)]
    pub budget: Option<Budget>,
    #[serde(default = "yes")]
    pub replacement_model: bool,
    /// δ for the strong-composition total in the summary.
    #[serde(default)]
    pub report_delta: Option<f64>,
}

fn yes() -> bool {
    true
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::None,
            sensitivity: None,
            schedule: None,
            budget: None,
            replacement_model: true,
            report_delta: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub label: String,
    pub optimizer: OptimizerConfig,
    /// Per-arm noise settings; the experiment's when absent.
    #[serde(default)]
    pub privacy: Option<PrivacyConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub iterations: usize,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub waive_validation: bool,
    pub topology: TopologyConfig,
    pub objective: ObjectiveSource,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub privacy: PrivacyConfig,
    /// Comparison arms run on the same instances.
    #[serde(default)]
    pub baselines: Vec<Arm>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    /// Parses TOML and resolves relative file paths against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(base) = base {
            if let ObjectiveSource::Csv { path, .. } = &mut cfg.objective {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
            if let Some(f) = &mut cfg.topology.file {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.topology.agents == 0 {
            return Err(Error::Config("topology needs at least one agent".into()));
        }
        for p in std::iter::once(&self.privacy).chain(self.baselines.iter().filter_map(|a| a.privacy.as_ref())) {
            match (p.mechanism, &p.schedule, &p.budget) {
                (Mechanism::None, None, None) => {}
                (Mechanism::None, _, _) => {
                    return Err(Error::Config("a noise schedule or budget needs a mechanism".into()))
                }
                (_, Some(_), None) | (_, None, Some(_)) => {}
                _ => return Err(Error::Config("give exactly one of privacy.schedule and privacy.budget".into())),
            }
        }
        Ok(())
    }

    /// Primary arm followed by the baselines.
    pub fn arms(&self) -> Vec<Arm> {
        std::iter::once(Arm { label: "primary".into(), optimizer: self.optimizer.clone(), privacy: None })
            .chain(self.baselines.iter().cloned())
            .collect()
    }
}

/// One replication of one arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub arm: String,
    pub replication: usize,
    pub seed: u64,
    /// `log10(‖x_i^k - x_i*‖ / d)`, indexed `[k][i]` for `k = 0..=K`.
    pub accuracy: Vec<Vec<f64>>,
    /// `F(x̄^k) - F*` at the network average; for RCD, the mean over
    /// agents of the local gaps.
    pub objective_gap: Vec<f64>,
    /// `‖u^k - u*‖²_G`; empty for gradient schemes.
    pub gnorm: Vec<f64>,
    pub ledger: Option<PrivacyLedger>,
    pub privacy: Option<LedgerSummary>,
    /// Contraction factor from parameter validation, when run.
    pub contraction: Option<f64>,
    /// Not written to disk, so artifacts stay byte-identical across runs.
    #[serde(skip)]
    pub wall_clock_secs: f64,
    pub input_hash: String,
}

/// SHA-256 over `blob <len>\0<bytes>`, as git hashes objects.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn input_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut bytes = serde_json::to_vec(cfg)?;
    if let ObjectiveSource::Csv { path, .. } = &cfg.objective {
        bytes.extend(fs::read(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?);
    }
    if let Some(f) = &cfg.topology.file {
        bytes.extend(fs::read(f)?);
    }
    Ok(content_hash(&bytes))
}

/// Graph and data of one replication.
pub struct Instance {
    pub topology: Topology,
    pub objectives: Vec<ObjectiveSpec<f64>>,
}

pub fn build_instance(cfg: &ExperimentConfig, rep_seed: u64) -> Result<Instance> {
    let n = cfg.topology.agents;
    let topology = if let Some(f) = &cfg.topology.file {
        Topology::read_edge_list(f)?
    } else {
        match cfg.topology.edges {
            None => Topology::complete(n),
            Some(m) => {
                let seed = cfg.topology.seed.unwrap_or_else(|| rng::derive_seed(rep_seed, domain::GRAPH, 0));
                generate_random_graph(n, m, seed)?
            }
        }
    };
    if topology.node_count() != n {
        return Err(Error::Config(format!("graph has {} nodes, config says {n}", topology.node_count())));
    }
    let data_seed = rng::derive_seed(rep_seed, domain::DATA, 0);
    let objectives = match &cfg.objective {
        ObjectiveSource::Synthetic { dim, samples_per_agent, kind, reg, flip_prob, intrinsic_dim } => {
            generate_synthetic(&SyntheticParams {
                dim: *dim,
                agents: n,
                samples_per_agent: *samples_per_agent,
                kind: *kind,
                reg: *reg,
                flip_prob: *flip_prob,
                planted: None,
                intrinsic_dim: *intrinsic_dim,
                seed: data_seed,
            })?
        }
        ObjectiveSource::Csv { path, label_column, per_agent, categorical, reg } => {
            let mut opts = IngestOptions::new(label_column.clone(), n);
            opts.per_agent = *per_agent;
            opts.categorical = *categorical;
            opts.reg_coeff = *reg;
            opts.seed = data_seed;
            ingest_csv(path, &opts)?
        }
    };
    Ok(Instance { topology, objectives })
}

fn step_scale_fn(opt: &OptimizerConfig, topology: &Topology, coordinate_eta: f64) -> Box<dyn Fn(usize) -> f64 + Send + Sync> {
    match opt.clone() {
        OptimizerConfig::AdmmExact(a) | OptimizerConfig::AdmmFirstOrder(a) => match a.penalty {
            PenaltyLaw::Increasing { rho0, ratio } => {
                let min_deg = (0..topology.node_count()).map(|i| topology.degree(i)).min().unwrap_or(1).max(1) as f64;
                Box::new(move |t| 1.0 / (2.0 * rho0 * ratio.powi(t as i32) * min_deg))
            }
            _ => Box::new(move |_| 1.0 / a.d),
        },
        OptimizerConfig::DgdBaseline { step, .. }
        | OptimizerConfig::GdAlgorithm2 { step, .. }
        | OptimizerConfig::GdAlgorithm2star { step, .. } => Box::new(move |t| step.eta(t)),
        OptimizerConfig::Rcd => Box::new(move |_| coordinate_eta),
    }
}

/// Noise schedule of an arm plus the sensitivity the accountant uses.
fn build_noise(
    privacy: &PrivacyConfig,
    opt: &OptimizerConfig,
    inst: &Instance,
    iterations: usize,
    seed: u64,
) -> Result<(NoiseSchedule, f64)> {
    if privacy.mechanism == Mechanism::None {
        return Ok((NoiseSchedule::none(), 0.0));
    }
    let profiles = inst
        .objectives
        .iter()
        .map(|f| derive_profiles(f, privacy.replacement_model))
        .collect::<Result<Vec<_>>>()?;
    let sensitivity = privacy.sensitivity.unwrap_or_else(|| {
        profiles
            .iter()
            .map(|(_, s)| if privacy.mechanism == Mechanism::Gaussian { s.b_two } else { s.b_inf })
            .fold(0.0, f64::max)
    });
    let coord_eta = 1.0 / profiles.iter().map(|(c, _)| c.coordinate_smoothness).fold(0.0, f64::max);
    let dim = if matches!(opt, OptimizerConfig::Rcd) { 1 } else { inst.objectives[0].dimension() };
    let schedule = match (&privacy.schedule, &privacy.budget) {
        (Some(kind), None) => NoiseSchedule { mechanism: privacy.mechanism, kind: kind.clone(), seed },
        (None, Some(b)) => {
            if !sensitivity.is_finite() {
                return Err(Error::Validation("budget calibration needs a finite sensitivity".into()));
            }
            let scale = step_scale_fn(opt, &inst.topology, coord_eta);
            match (privacy.mechanism, b.delta) {
                (Mechanism::Laplace, None) => calibrate_pure_laplace(b.epsilon, iterations, dim, sensitivity, scale, seed)?,
                (mech, Some(delta)) => calibrate_relaxed(b.epsilon, delta, iterations, dim, sensitivity, mech, scale, seed)?.schedule,
                (Mechanism::Gaussian, None) => return Err(Error::Config("Gaussian budgets need δ".into())),
                (Mechanism::None, _) => unreachable!(),
            }
        }
        _ => return Err(Error::Config("give exactly one of privacy.schedule and privacy.budget".into())),
    };
    Ok((schedule, sensitivity))
}

fn accuracy_row(xs: &[Vec<f64>], reference: &[Vec<f64>]) -> Vec<f64> {
    xs.iter()
        .zip(reference)
        .map(|(x, r)| (dist2_sq(x, r).sqrt() / x.len() as f64).max(f64::MIN_POSITIVE).log10())
        .collect()
}

fn consensus_gap(objectives: &[ObjectiveSpec<f64>], xs: &[Vec<f64>], f_star: f64) -> Result<f64> {
    Ok(total_value(objectives, &mean_vec(xs))? - f_star)
}

/// Runs every arm for every replication. Replications run in parallel;
/// the output order is arm-major, then replication.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunReport>> {
    cfg.validate()?;
    let hash = input_hash(cfg)?;
    let arms = cfg.arms();
    let per_rep: Vec<Vec<RunReport>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let rep_seed = rng::derive_seed(cfg.seed, domain::REPLICATION, r as u64);
            let inst = build_instance(cfg, rep_seed)?;
            let reference = solve_reference(&inst.objectives, &ConstraintSystem::Consensus(inst.topology.clone()))?;
            arms.iter()
                .map(|arm| {
                    let started = Instant::now();
                    let privacy = arm.privacy.as_ref().unwrap_or(&cfg.privacy);
                    let mut report = run_arm(cfg, arm, privacy, &inst, &reference, rep_seed)?;
                    report.replication = r;
                    report.input_hash = hash.clone();
                    report.wall_clock_secs = started.elapsed().as_secs_f64();
                    Ok(report)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(arms.len() * cfg.replications);
    for a in 0..arms.len() {
        for rep in &per_rep {
            out.push(rep[a].clone());
        }
    }
    Ok(out)
}

fn run_arm(
    cfg: &ExperimentConfig,
    arm: &Arm,
    privacy: &PrivacyConfig,
    inst: &Instance,
    reference: &Reference<f64>,
    rep_seed: u64,
) -> Result<RunReport> {
    let n = inst.objectives.len();
    let d = inst.objectives[0].dimension();
    let k_max = cfg.iterations;
    let noise_seed = rng::derive_seed(rep_seed, domain::NOISE, 0);
    let (noise, sensitivity) = build_noise(privacy, &arm.optimizer, inst, k_max, noise_seed)?;
    let laplace = noise.mechanism == Mechanism::Laplace;
    let init_seed = rng::derive_seed(rep_seed, domain::INIT, 0);
    let weight_seed = rng::derive_seed(rep_seed, domain::WEIGHT, 0);
    let mut report = RunReport {
        arm: arm.label.clone(),
        replication: 0,
        seed: rep_seed,
        accuracy: Vec::with_capacity(k_max + 1),
        objective_gap: Vec::with_capacity(k_max + 1),
        gnorm: Vec::new(),
        ledger: None,
        privacy: None,
        contraction: None,
        wall_clock_secs: 0.0,
        input_hash: String::new(),
    };
    let mut ledger = PrivacyLedger::default();
    let mut record_privacy = |rec: &IterationRecord<f64>| -> Result<()> {
        if laplace {
            ledger.entries.extend(realized_epsilon(std::slice::from_ref(rec), sensitivity)?.entries);
        }
        Ok(())
    };
    match &arm.optimizer {
        OptimizerConfig::AdmmExact(a) | OptimizerConfig::AdmmFirstOrder(a) => {
            let exact = matches!(arm.optimizer, OptimizerConfig::AdmmExact(_));
            let system = ConstraintSystem::Consensus(inst.topology.clone());
            let params = AdmmParams {
                zeta: a.zeta,
                d_constants: vec![a.d; n],
                alpha: a.alpha.unwrap_or(f64::NAN),
                rho0: a.rho0.unwrap_or(f64::NAN),
                penalty: a.penalty,
                penalty_seed: rng::derive_seed(rep_seed, domain::PENALTY, 0),
                exchange: a.exchange,
            };
            if !cfg.waive_validation {
                if a.alpha.is_none() || a.rho0.is_none() {
                    return Err(Error::Validation("validation needs alpha and rho0 (or waive_validation)".into()));
                }
                let profiles = inst
                    .objectives
                    .iter()
                    .map(|f| derive_profiles(f, privacy.replacement_model).map(|p| p.0))
                    .collect::<Result<Vec<_>>>()?;
                let variant = if exact { AdmmVariant::Exact } else { AdmmVariant::FirstOrder };
                match validate_admm_params(&params, &profiles, &system, variant)? {
                    ValidationOutcome::Valid { p } => report.contraction = Some(p),
                    ValidationOutcome::Invalid { inequality, detail } => {
                        return Err(Error::Validation(format!("{inequality}: {detail}")))
                    }
                }
            }
            let mut states: Vec<AgentState<f64>> = initial_states(n, d, d, &params.d_constants, init_seed);
            let observe = |states: &[AgentState<f64>], report: &mut RunReport| -> Result<()> {
                let xs: Vec<Vec<f64>> = states.iter().map(|s| s.primal.clone()).collect();
                report.accuracy.push(accuracy_row(&xs, &reference.primal));
                report.objective_gap.push(consensus_gap(&inst.objectives, &xs, reference.objective)?);
                report.gnorm.push(g_norm(states, reference, &params.d_constants, params.zeta, &system)?);
                Ok(())
            };
            observe(&states, &mut report)?;
            for k in 0..k_max {
                let (next, rec) = if exact {
                    admm_exact_step(&states, &params, &system, &inst.objectives, &noise, k)?
                } else {
                    admm_first_order_step(&states, &params, &system, &inst.objectives, &noise, k)?
                };
                record_privacy(&rec)?;
                states = next;
                observe(&states, &mut report)?;
            }
        }
        OptimizerConfig::DgdBaseline { .. } | OptimizerConfig::GdAlgorithm2 { .. } | OptimizerConfig::GdAlgorithm2star { .. } => {
            let mut states: Vec<AgentState<f64>> = initial_states(n, d, 0, &vec![1.0; n], init_seed);
            let observe = |states: &[AgentState<f64>], report: &mut RunReport| -> Result<()> {
                let xs: Vec<Vec<f64>> = states.iter().map(|s| s.primal.clone()).collect();
                report.accuracy.push(accuracy_row(&xs, &reference.primal));
                report.objective_gap.push(consensus_gap(&inst.objectives, &xs, reference.objective)?);
                Ok(())
            };
            observe(&states, &mut report)?;
            let weights = match &arm.optimizer {
                OptimizerConfig::DgdBaseline { mixing: Mixing::Uniform, .. } => {
                    if !inst.topology.is_complete() {
                        return Err(Error::Config("uniform mixing needs the complete graph".into()));
                    }
                    vec![vec![1.0 / n as f64; n]; n]
                }
                _ => inst.topology.metropolis_weights(),
            };
            for k in 0..k_max {
                let (next, rec) = match &arm.optimizer {
                    OptimizerConfig::DgdBaseline { step, gradient_at_mean, .. } => {
                        let p = GdParams::new(*step, WeightMode::FixedAverage, weight_seed);
                        gd_step_baseline(&states, &weights, Some(&inst.topology), &p, &inst.objectives, &noise, k, *gradient_at_mean)?
                    }
                    OptimizerConfig::GdAlgorithm2 { step, weight_interval } => {
                        let mut p = GdParams::new(*step, WeightMode::Algorithm2Pair, weight_seed);
                        p.weight_interval = *weight_interval;
                        gd_step_algorithm2(&states, &p, &inst.objectives, &noise, k)?
                    }
                    OptimizerConfig::GdAlgorithm2star { step, weight_interval } => {
                        let mut p = GdParams::new(*step, WeightMode::Algorithm2StarNeighbors, weight_seed);
                        p.weight_interval = *weight_interval;
                        gd_step_algorithm2star(&states, &p, &inst.objectives, &noise, k, &inst.topology)?
                    }
                    _ => unreachable!(),
                };
                record_privacy(&rec)?;
                states = next;
                observe(&states, &mut report)?;
            }
        }
        OptimizerConfig::Rcd => {
            let locals = inst
                .objectives
                .iter()
                .map(|f| solve_reference(std::slice::from_ref(f), &ConstraintSystem::Consensus(Topology::complete(1))))
                .collect::<Result<Vec<_>>>()?;
            let local_ref: Vec<Vec<f64>> = locals.iter().map(|r| r.primal[0].clone()).collect();
            let m_hat = inst
                .objectives
                .iter()
                .map(|f| derive_profiles(f, false).map(|p| p.0.coordinate_smoothness))
                .collect::<Result<Vec<_>>>()?;
            let mut xs: Vec<Vec<f64>> = initial_states::<f64>(n, d, 0, &vec![1.0; n], init_seed)
                .into_iter()
                .map(|s| s.primal)
                .collect();
            let observe = |xs: &[Vec<f64>], report: &mut RunReport| -> Result<()> {
                report.accuracy.push(accuracy_row(xs, &local_ref));
                let mut gap = 0.0;
                for (i, x) in xs.iter().enumerate() {
                    gap += inst.objectives[i].evaluate(x)? - locals[i].objective;
                }
                report.objective_gap.push(gap / n as f64);
                Ok(())
            };
            observe(&xs, &mut report)?;
            let coord_seed = rng::derive_seed(rep_seed, domain::COORD, 0);
            for k in 0..k_max {
                let beta = noise.inverse_scale(k + 1);
                for i in 0..n {
                    let (x, l) = rcd_step(&xs[i], &inst.objectives[i], m_hat[i], &noise, k, i, coord_seed)?;
                    xs[i] = x;
                    if let Some(beta) = beta {
                        let worst = beta * sensitivity / m_hat[i];
                        ledger.entries.push(LedgerEntry { k: k + 1, agent: i, l, realized: worst, worst });
                    }
                }
                observe(&xs, &mut report)?;
            }
        }
    }
    if laplace {
        report.privacy = Some(ledger.summary(privacy.report_delta)?);
        report.ledger = Some(ledger);
    }
    Ok(report)
}

/// Per-arm aggregate over replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub label: String,
    /// Agent-averaged accuracy per `k`: mean, min and max over replications.
    pub mean_accuracy: Vec<f64>,
    pub min_accuracy: Vec<f64>,
    pub max_accuracy: Vec<f64>,
    pub mean_objective_gap: Vec<f64>,
    pub final_objective_gap: f64,
    pub mean_privacy_ratio: Option<f64>,
    pub mean_realized_total: Option<f64>,
    pub mean_worst_total: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub input_hash: String,
    pub config: ExperimentConfig,
    pub arms: Vec<ArmSummary>,
}

pub fn summarize(cfg: &ExperimentConfig, reports: &[RunReport]) -> ExperimentSummary {
    let mut arms = Vec::new();
    for arm in cfg.arms() {
        let runs: Vec<&RunReport> = reports.iter().filter(|r| r.arm == arm.label).collect();
        if runs.is_empty() {
            continue;
        }
        let steps = runs[0].accuracy.len();
        let agent_mean = |r: &RunReport, k: usize| r.accuracy[k].iter().sum::<f64>() / r.accuracy[k].len() as f64;
        let over = |f: &dyn Fn(&RunReport) -> f64| runs.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut mean_accuracy = Vec::with_capacity(steps);
        let mut min_accuracy = Vec::with_capacity(steps);
        let mut max_accuracy = Vec::with_capacity(steps);
        let mut mean_gap = Vec::with_capacity(steps);
        for k in 0..steps {
            let acc = over(&|r| agent_mean(r, k));
            mean_accuracy.push(mean(&acc));
            min_accuracy.push(acc.iter().copied().fold(f64::INFINITY, f64::min));
            max_accuracy.push(acc.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            mean_gap.push(mean(&over(&|r| r.objective_gap[k])));
        }
        let privacy: Vec<&LedgerSummary> = runs.iter().filter_map(|r| r.privacy.as_ref()).collect();
        let pmean = |f: &dyn Fn(&LedgerSummary) -> f64| {
            (!privacy.is_empty()).then(|| privacy.iter().map(|p| f(p)).sum::<f64>() / privacy.len() as f64)
        };
        arms.push(ArmSummary {
            label: arm.label.clone(),
            final_objective_gap: *mean_gap.last().unwrap_or(&f64::NAN),
            mean_accuracy,
            min_accuracy,
            max_accuracy,
            mean_objective_gap: mean_gap,
            mean_privacy_ratio: pmean(&|p| p.mean_ratio),
            mean_realized_total: pmean(&|p| p.pure_total),
            mean_worst_total: pmean(&|p| p.worst_total),
        });
    }
    ExperimentSummary {
        name: cfg.name.clone(),
        input_hash: reports.first().map(|r| r.input_hash.clone()).unwrap_or_default(),
        config: cfg.clone(),
        arms,
    }
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

/// Writes per-run traces (`k,agent,accuracy,gnorm,gap`), per-run ledgers,
/// the band summary (`arm,k,mean_accuracy,min_accuracy,max_accuracy,mean_gap`)
/// and the JSON summary. Returns the written paths in order.
pub fn write_artifacts(cfg: &ExperimentConfig, reports: &[RunReport], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for r in reports {
        let stem = format!("{}_{}_rep{:02}", cfg.name, r.arm, r.replication);
        let path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["k", "agent", "accuracy", "gnorm", "gap"])?;
        for (k, row) in r.accuracy.iter().enumerate() {
            let gn = r.gnorm.get(k).map(|&g| fmt(g)).unwrap_or_default();
            for (i, &a) in row.iter().enumerate() {
                w.write_record(&[k.to_string(), (i + 1).to_string(), fmt(a), gn.clone(), fmt(r.objective_gap[k])])?;
            }
        }
        w.flush()?;
        written.push(path);
        if let Some(ledger) = &r.ledger {
            let path = dir.join(format!("{stem}_ledger.csv"));
            ledger.write_csv(&path)?;
            written.push(path);
        }
    }
    let summary = summarize(cfg, reports);
    let path = dir.join(format!("{}_summary.csv", cfg.name));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["arm", "k", "mean_accuracy", "min_accuracy", "max_accuracy", "mean_gap"])?;
    for a in &summary.arms {
        for k in 0..a.mean_accuracy.len() {
            w.write_record(&[
                a.label.clone(),
                k.to_string(),
                fmt(a.mean_accuracy[k]),
                fmt(a.min_accuracy[k]),
                fmt(a.max_accuracy[k]),
                fmt(a.mean_objective_gap[k]),
            ])?;
        }
    }
    w.flush()?;
    written.push(path);
    let path = dir.join(format!("{}_summary.json", cfg.name));
    fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    written.push(path);
    Ok(written)
}

/// Setup of the dimension-scaling study. Rows span a fixed
/// `intrinsic_dim`-dimensional subspace, so the noiseless problem is the
/// same for every ambient `d` and only the perturbation changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimStudyConfig {
    pub dims: Vec<usize>,
    pub agents: usize,
    pub samples_per_agent: usize,
    pub intrinsic_dim: usize,
    #[serde(default = "default_huber")]
    pub huber_delta: f64,
    #[serde(default)]
    pub reg: f64,
    #[serde(default)]
    pub flip_prob: f64,
    pub iterations: usize,
    pub replications: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    #[serde(default = "yes")]
    pub laplace_contrast: bool,
}

fn default_huber() -> f64 {
    1.0
}

impl DimStudyConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimStudyRow {
    pub dim: usize,
    pub noiseless_gap: f64,
    /// Mean final gap over replications with Gaussian noise.
    pub gaussian_gap: f64,
    pub gaussian_sigma: f64,
    /// Same with ℓ∞-calibrated pure Laplace noise.
    pub laplace_gap: Option<f64>,
    pub laplace_scale: Option<f64>,
}

pub fn dimension_study_objectives(cfg: &DimStudyConfig, dim: usize) -> Result<Vec<ObjectiveSpec<f64>>> {
    let objectives = generate_synthetic(&SyntheticParams {
        dim,
        agents: cfg.agents,
        samples_per_agent: cfg.samples_per_agent,
        kind: ObjectiveKind::GeneralizedLinear(Link::Huber { delta: cfg.huber_delta }),
        reg: cfg.reg,
        flip_prob: cfg.flip_prob,
        planted: None,
        intrinsic_dim: Some(cfg.intrinsic_dim),
        seed: cfg.seed,
    })?;
    if objectives.iter().any(|f| f.max_row_norm() > 1.0 + 1e-9) {
        return invalid("dimension study needs rows with norm ≤ 1");
    }
    Ok(objectives)
}

/// Averaged gradient scheme `x_i^{k+1} = x̄^k - η∇f_i(x̄^k) + Δ_i^{k+1}`.
/// Returns `F(x̄^k) - F*` for `k = 0..=K`, with `F` the agent average.
pub fn averaged_gradient_gaps(
    objectives: &[ObjectiveSpec<f64>],
    eta: f64,
    iterations: usize,
    noise: &NoiseSchedule,
    f_star: f64,
) -> Result<Vec<f64>> {
    let n = objectives.len();
    let d = objectives[0].dimension();
    let value = |x: &[f64]| -> Result<f64> { Ok(total_value(objectives, x)? / n as f64) };
    let mut mean = vec![0.0; d];
    let mut gaps = vec![value(&mean)? - f_star];
    for k in 0..iterations {
        let mut xs = Vec::with_capacity(n);
        for (i, f) in objectives.iter().enumerate() {
            let g = f.gradient(&mean)?;
            let dv = sample::<f64>(noise, k + 1, i, d)?.vector;
            xs.push((0..d).map(|l| mean[l] - eta * g[l] + dv[l]).collect::<Vec<f64>>());
        }
        mean = mean_vec(&xs);
        gaps.push(value(&mean)? - f_star);
    }
    Ok(gaps)
}

/// Final utility gap versus ambient dimension under a fixed budget:
/// Gaussian noise calibrated in ℓ2, and optionally pure Laplace noise
/// calibrated in ℓ∞ over all `K·d` coordinates.
pub fn run_dimension_study(cfg: &DimStudyConfig) -> Result<Vec<DimStudyRow>> {
    if cfg.replications == 0 || cfg.iterations == 0 || cfg.dims.is_empty() {
        return invalid("dimension study needs replications, iterations and dims");
    }
    let base = dimension_study_objectives(cfg, cfg.intrinsic_dim)?;
    let reference = solve_reference(&base, &ConstraintSystem::Consensus(Topology::complete(base.len())))?;
    let f_star = reference.objective / base.len() as f64;
    let profiles = base.iter().map(|f| derive_profiles(f, true)).collect::<Result<Vec<_>>>()?;
    let smooth = profiles.iter().map(|(c, _)| c.smoothness).fold(0.0, f64::max);
    let eta = 1.0 / smooth;
    let b_two = profiles.iter().map(|(_, s)| s.b_two).fold(0.0, f64::max);
    let b_inf = profiles.iter().map(|(_, s)| s.b_inf).fold(0.0, f64::max);
    cfg.dims
        .iter()
        .map(|&dim| {
            if dim < cfg.intrinsic_dim {
                return invalid(format!("dimension {dim} below the intrinsic {}", cfg.intrinsic_dim));
            }
            let objectives = dimension_study_objectives(cfg, dim)?;
            let noiseless = *averaged_gradient_gaps(&objectives, eta, cfg.iterations, &NoiseSchedule::none(), f_star)?
                .last()
                .unwrap();
            let replicate = |schedule: &NoiseSchedule| -> Result<f64> {
                let gaps = (0..cfg.replications)
                    .into_par_iter()
                    .map(|r| {
                        let s = schedule.clone().with_seed(rng::derive_seed(cfg.seed, domain::REPLICATION, r as u64));
                        averaged_gradient_gaps(&objectives, eta, cfg.iterations, &s, f_star).map(|g| *g.last().unwrap())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
            };
            let gauss = calibrate_relaxed(cfg.epsilon, cfg.delta, cfg.iterations, dim, b_two, Mechanism::Gaussian, |_| eta, 0)?;
            let gaussian_sigma = gauss.schedule.parameter(1)?;
            let gaussian_gap = replicate(&gauss.schedule)?;
            let (laplace_gap, laplace_scale) = if cfg.laplace_contrast {
                let lap = calibrate_pure_laplace(cfg.epsilon, cfg.iterations, dim, b_inf, |_| eta, 0)?;
                (Some(replicate(&lap)?), Some(1.0 / lap.parameter(1)?))
            } else {
                (None, None)
            };
            Ok(DimStudyRow { dim, noiseless_gap: noiseless, gaussian_gap, gaussian_sigma, laplace_gap, laplace_scale })
        })
        .collect()
}

/// CSV with header `d,noiseless_gap,gaussian_gap,gaussian_sigma,laplace_gap,laplace_scale`.
pub fn write_dimension_table(rows: &[DimStudyRow], path: impl AsRef<Path>) -> Result<()> {
    write_dimension_csv(rows, fs::File::create(path)?)
}

pub fn write_dimension_csv(rows: &[DimStudyRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["d", "noiseless_gap", "gaussian_gap", "gaussian_sigma", "laplace_gap", "laplace_scale"])?;
    for r in rows {
        w.write_record(&[
            r.dim.to_string(),
            fmt(r.noiseless_gap),
            fmt(r.gaussian_gap),
            fmt(r.gaussian_sigma),
            r.laplace_gap.map(fmt).unwrap_or_default(),
            r.laplace_scale.map(fmt).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
