//! Local convex objectives, their curvature constants and sensitivity
//! bounds, plus CSV ingestion for tabular data.
//!
//! Generalized-linear losses are averaged over the local samples and carry
//! an additive `reg/2 ‖x‖²` term. Ridge uses the plain sum of squares.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{sym_eigen_range, Matrix};
use crate::rng::{self, domain};
use crate::scalar::{axpy, dot, norm2_sq, Scalar};

/// Scalar link `φ(u, ℓ)` of a generalized-linear loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "link", rename_all = "snake_case")]
pub enum Link {
    /// `log(1 + exp(-y u))` with `y = 2ℓ - 1`.
    Logistic,
    /// `½ (u - ℓ)²`.
    Squared,
    /// Huber loss of the residual `u - ℓ`.
    Huber { delta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    LogisticL2,
    RidgeQuadratic,
    GeneralizedLinear(Link),
}

impl ObjectiveKind {
    fn link(self) -> Link {
        match self {
            ObjectiveKind::LogisticL2 => Link::Logistic,
            ObjectiveKind::RidgeQuadratic => Link::Squared,
            ObjectiveKind::GeneralizedLinear(l) => l,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec<T> {
    pub kind: ObjectiveKind,
    /// One sample per row.
    pub samples: Matrix<T>,
    pub labels: Vec<T>,
    pub reg_coeff: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityProfile {
    pub strong_convexity: f64,
    pub smoothness: f64,
    pub coordinate_smoothness: f64,
    pub gradient_bound_l2: f64,
    pub gradient_bound_l1: f64,
    pub sample_bound_l2: f64,
    pub lipschitz_scalar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub b_inf: f64,
    pub b_one: f64,
    pub b_two: f64,
    pub b_coord: f64,
}

fn softplus<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl Link {
    fn value<T: Scalar>(self, u: T, label: T) -> T {
        match self {
            Link::Logistic => softplus(-sign_label(label) * u),
            Link::Squared => T::lit(0.5) * (u - label) * (u - label),
            Link::Huber { delta } => {
                let (r, d) = (u - label, T::lit(delta));
                if r.abs() <= d {
                    T::lit(0.5) * r * r
                } else {
                    d * (r.abs() - T::lit(0.5) * d)
                }
            }
        }
    }

    fn derivative<T: Scalar>(self, u: T, label: T) -> T {
        match self {
            Link::Logistic => {
                let y = sign_label(label);
                -y * sigmoid(-y * u)
            }
            Link::Squared => u - label,
            Link::Huber { delta } => {
                let d = T::lit(delta);
                (u - label).max(-d).min(d)
            }
        }
    }

    fn curvature<T: Scalar>(self, u: T, label: T) -> T {
        match self {
            Link::Logistic => {
                let s = sigmoid(u);
                s * (T::one() - s)
            }
            Link::Squared => T::one(),
            Link::Huber { delta } => {
                if (u - label).abs() <= T::lit(delta) {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    /// `sup φ''`.
    fn max_curvature(self) -> f64 {
        match self {
            Link::Logistic => 0.25,
            Link::Squared | Link::Huber { .. } => 1.0,
        }
    }

    /// `sup |φ'|`.
    fn max_slope(self) -> f64 {
        match self {
            Link::Logistic => 1.0,
            Link::Squared => f64::INFINITY,
            Link::Huber { delta } => delta,
        }
    }
}

/// Labels in {0, 1} become ±1.
fn sign_label<T: Scalar>(label: T) -> T {
    T::lit(2.0) * label - T::one()
}

impl<T: Scalar> ObjectiveSpec<T> {
    pub fn new(kind: ObjectiveKind, samples: Matrix<T>, labels: Vec<T>, reg_coeff: T) -> Result<Self> {
        if samples.rows == 0 || samples.cols == 0 {
            return invalid("objective needs at least one sample and one feature");
        }
        check_dim(samples.rows, labels.len())?;
        if reg_coeff < T::zero() {
            return invalid("regularization must be non-negative");
        }
        if kind.link() == Link::Logistic && labels.iter().any(|&l| l != T::zero() && l != T::one()) {
            return invalid("logistic labels must be 0 or 1");
        }
        if let Link::Huber { delta } = kind.link() {
            if !(delta > 0.0) {
                return invalid("Huber threshold must be positive");
            }
        }
        Ok(Self { kind, samples, labels, reg_coeff })
    }

    pub fn dimension(&self) -> usize {
        self.samples.cols
    }

    pub fn sample_count(&self) -> usize {
        self.samples.rows
    }

    /// Weight on the data term: `1/b` for averaged losses, 1 for ridge.
    fn data_weight(&self) -> T {
        match self.kind {
            ObjectiveKind::RidgeQuadratic => T::one(),
            _ => T::one() / T::from_usize_exact(self.sample_count()),
        }
    }

    pub fn evaluate(&self, x: &[T]) -> Result<T> {
        check_dim(self.dimension(), x.len())?;
        let link = self.kind.link();
        let data: T = (0..self.sample_count())
            .map(|j| link.value(dot(self.samples.row(j), x), self.labels[j]))
            .sum();
        Ok(self.data_weight() * data + T::lit(0.5) * self.reg_coeff * norm2_sq(x))
    }

    pub fn gradient(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim(self.dimension(), x.len())?;
        let link = self.kind.link();
        let w = self.data_weight();
        let mut g: Vec<T> = x.iter().map(|&v| self.reg_coeff * v).collect();
        for j in 0..self.sample_count() {
            let z = self.samples.row(j);
            let s = link.derivative(dot(z, x), self.labels[j]);
            axpy(w * s, z, &mut g);
        }
        Ok(g)
    }

    pub fn hessian(&self, x: &[T]) -> Result<Matrix<T>> {
        check_dim(self.dimension(), x.len())?;
        let d = self.dimension();
        let link = self.kind.link();
        let w = self.data_weight();
        let mut h = Matrix::zeros(d, d);
        for j in 0..self.sample_count() {
            let z = self.samples.row(j);
            let c = w * link.curvature(dot(z, x), self.labels[j]);
            if c == T::zero() {
                continue;
            }
            for a in 0..d {
                let ca = c * z[a];
                for b in 0..d {
                    h.data[a * d + b] += ca * z[b];
                }
            }
        }
        for a in 0..d {
            h.data[a * d + a] += self.reg_coeff;
        }
        Ok(h)
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.sample_count())
            .map(|j| norm2_sq(self.samples.row(j)).f64().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Curvature constants and sensitivity bounds.
///
/// Under the one-sample replacement model on normalized data the infinity
/// sensitivity is `sup|φ'| / b`, so `1/b` for the logistic loss.
pub fn derive_profiles<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    sample_replacement_model: bool,
) -> Result<(ConvexityProfile, SensitivityProfile)> {
    let b = spec.sample_count() as f64;
    let reg = spec.reg_coeff.f64();
    let max_norm2 = spec.max_row_norm();
    if sample_replacement_model && max_norm2 > 1.0 + 1e-9 {
        return Err(Error::Validation(format!(
            "replacement model needs rows with norm ≤ 1, found {max_norm2}"
        )));
    }
    let max_norm1 = (0..spec.sample_count())
        .map(|j| spec.samples.row(j).iter().map(|v| v.f64().abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let gram = spec.samples.gram();
    let (gram_lo, gram_hi) = sym_eigen_range(&gram);
    let gram_diag_max = (0..spec.dimension()).map(|a| gram.get(a, a).f64()).fold(0.0, f64::max);
    let link = spec.kind.link();
    let w = spec.data_weight().f64();
    let kappa = link.max_curvature();
    let data_floor = if link == Link::Squared { gram_lo.max(0.0) } else { 0.0 };
    let lip = link.max_slope();
    let convexity = ConvexityProfile {
        strong_convexity: reg + w * data_floor,
        smoothness: reg + w * kappa * gram_hi,
        coordinate_smoothness: reg + w * kappa * gram_diag_max,
        gradient_bound_l2: lip * max_norm2,
        gradient_bound_l1: lip * max_norm1,
        sample_bound_l2: max_norm2,
        lipschitz_scalar: lip,
    };
    let factor = if sample_replacement_model { 1.0 } else { 2.0 };
    let sensitivity = match spec.kind {
        ObjectiveKind::RidgeQuadratic => SensitivityProfile {
            b_inf: f64::INFINITY,
            b_one: f64::INFINITY,
            b_two: f64::INFINITY,
            b_coord: f64::INFINITY,
        },
        _ => {
            let max_inf = if sample_replacement_model {
                1.0
            } else {
                (0..spec.sample_count())
                    .flat_map(|j| spec.samples.row(j).iter().map(|v| v.f64().abs()))
                    .fold(0.0, f64::max)
            };
            let b_inf = factor * lip * max_inf / b;
            SensitivityProfile {
                b_inf,
                b_one: factor * lip * max_norm1 / b,
                b_two: factor * lip * max_norm2 / b,
                b_coord: b_inf,
            }
        }
    };
    Ok((convexity, sensitivity))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalEncoding {
    #[default]
    OneHot,
    /// Index of the value in sorted order, one column per attribute.
    Ordinal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub label_column: String,
    pub normalize: bool,
    pub agents: usize,
    /// Rows per agent; `None` splits every usable row evenly.
    pub per_agent: Option<usize>,
    pub seed: u64,
    pub missing_token: String,
    pub categorical: CategoricalEncoding,
    pub reg_coeff: f64,
}

impl IngestOptions {
    pub fn new(label_column: impl Into<String>, agents: usize) -> Self {
        Self {
            label_column: label_column.into(),
            normalize: true,
            agents,
            per_agent: None,
            seed: 0,
            missing_token: "?".into(),
            categorical: CategoricalEncoding::OneHot,
            reg_coeff: 1.0,
        }
    }
}

/// Reads a headed CSV into one logistic objective per agent.
pub fn ingest_csv(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Vec<ObjectiveSpec<f64>>> {
    let fail = |m: String| Error::Ingestion(m);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| fail(e.to_string()))?;
    let headers: Vec<String> = reader.headers().map_err(|e| fail(e.to_string()))?.iter().map(String::from).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == &opts.label_column)
        .ok_or_else(|| fail(format!("unknown label column '{}'", opts.label_column)))?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(fail(format!("ragged row with {} fields", rec.len())));
        }
        if rec.iter().any(|f| f.is_empty() || f == opts.missing_token) {
            continue;
        }
        rows.push(rec.iter().map(String::from).collect());
    }
    if opts.agents == 0 {
        return Err(fail("need at least one agent".into()));
    }
    let per_agent = opts.per_agent.unwrap_or(rows.len() / opts.agents);
    if per_agent == 0 || rows.len() < per_agent * opts.agents {
        return Err(fail(format!(
            "{} usable rows cannot fill {} agents",
            rows.len(),
            opts.agents
        )));
    }

    let labels = map_labels(rows.iter().map(|r| r[label_idx].as_str()))?;
    let mut features: Vec<Vec<f64>> = vec![Vec::new(); rows.len()];
    for (c, name) in headers.iter().enumerate() {
        if c == label_idx {
            continue;
        }
        let parsed: Option<Vec<f64>> = rows.iter().map(|r| r[c].parse::<f64>().ok()).collect();
        match parsed {
            Some(vals) => {
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(fail(format!("non-finite value in column '{name}'")));
                }
                features.iter_mut().zip(vals).for_each(|(f, v)| f.push(v));
            }
            None => {
                let levels: BTreeSet<&str> = rows.iter().map(|r| r[c].as_str()).collect();
                let index: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, &v)| (v, i)).collect();
                for (f, r) in features.iter_mut().zip(&rows) {
                    let at = index[r[c].as_str()];
                    match opts.categorical {
                        CategoricalEncoding::OneHot => {
                            f.extend((0..levels.len()).map(|i| if i == at { 1.0 } else { 0.0 }))
                        }
                        CategoricalEncoding::Ordinal => f.push(at as f64),
                    }
                }
            }
        }
    }
    let d = features[0].len();
    if d == 0 {
        return Err(fail("no feature columns".into()));
    }
    if opts.normalize {
        normalize_columns_then_rows(&mut features);
    }

    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng::stream(opts.seed, domain::DATA, 0, 0));
    (0..opts.agents)
        .map(|i| {
            let idx = &order[i * per_agent..(i + 1) * per_agent];
            let samples = Matrix::from_rows(&idx.iter().map(|&r| features[r].clone()).collect::<Vec<_>>())?;
            let y = idx.iter().map(|&r| labels[r]).collect();
            ObjectiveSpec::new(ObjectiveKind::LogisticL2, samples, y, opts.reg_coeff)
        })
        .collect()
}

/// Two label values; the greater in string order maps to 0. With income
/// labels this sends the higher bracket to 0. Numeric 0/1 labels are kept.
fn map_labels<'a>(values: impl Iterator<Item = &'a str>) -> Result<Vec<f64>> {
    let raw: Vec<&str> = values.map(|v| v.trim_end_matches('.')).collect();
    let distinct: BTreeSet<&str> = raw.iter().copied().collect();
    if distinct.len() > 2 || distinct.is_empty() {
        return Err(Error::Ingestion(format!("label column needs two values, found {}", distinct.len())));
    }
    let numeric = distinct.iter().all(|v| matches!(v.parse::<f64>(), Ok(x) if x == 0.0 || x == 1.0));
    if numeric {
        return Ok(raw.iter().map(|v| v.parse::<f64>().expect("checked numeric")).collect());
    }
    let top = *distinct.iter().next_back().expect("non-empty");
    Ok(raw.iter().map(|&v| if v == top { 0.0 } else { 1.0 }).collect())
}

/// Min-max scales every column to [0, 1], then scales rows to unit norm.
/// Rows that are zero after column scaling stay zero.
pub fn normalize_columns_then_rows(rows: &mut [Vec<f64>]) {
    let d = rows.first().map_or(0, Vec::len);
    for c in 0..d {
        let lo = rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for r in rows.iter_mut() {
            r[c] = if span > 0.0 { (r[c] - lo) / span } else { 0.0 };
        }
    }
    for r in rows.iter_mut() {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            r.iter_mut().for_each(|v| *v /= n);
        }
    }
}
