//! Mean models, the pseudo-value estimating equation and its Newton solver.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::pseudo::PseudoValues;

/// Inverse link `h` mapping the linear predictor to the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    #[default]
    Logit,
    Cloglog,
}

impl Link {
    /// `(h(x), h'(x), h''(x))`.
    pub fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            Link::Identity => (x, 1.0, 0.0),
            Link::Logit => {
                let mu = if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                };
                let d1 = mu * (1.0 - mu);
                (mu, d1, d1 * (1.0 - 2.0 * mu))
            }
            Link::Cloglog => {
                let ex = x.exp();
                let mu = -(-ex).exp_m1();
                if !ex.is_finite() {
                    return (1.0, 0.0, 0.0);
                }
                let d1 = (x - ex).exp();
                (mu, d1, d1 * (1.0 - ex))
            }
        }
    }

    /// Linear predictor giving mean `mu`.
    pub fn linear_predictor(self, mu: f64) -> f64 {
        match self {
            Link::Identity => mu,
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Cloglog => (-(-mu).ln_1p()).ln(),
        }
    }

    pub fn is_bounded(self) -> bool {
        !matches!(self, Link::Identity)
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Logit => "logit",
            Link::Cloglog => "cloglog",
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Link::Identity),
            "logit" | "logit_inverse" => Ok(Link::Logit),
            "cloglog" | "cloglog_inverse" => Ok(Link::Cloglog),
            other => Err(Error::InvalidArgument(format!("unknown link `{other}`"))),
        }
    }
}

/// Choice of the weight vector `A(β, Z)` in the estimating equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AKind {
    /// `A = ∂μ/∂β`.
    #[default]
    Dmu,
    /// `A = Z`.
    Design,
}

impl AKind {
    pub fn name(self) -> &'static str {
        match self {
            AKind::Dmu => "dmu",
            AKind::Design => "design",
        }
    }
}

impl fmt::Display for AKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dmu" => Ok(AKind::Dmu),
            "design" | "z" => Ok(AKind::Design),
            other => Err(Error::InvalidArgument(format!("unknown A kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MeanModel {
    pub link: Link,
    pub a_kind: AKind,
}

impl MeanModel {
    pub fn new(link: Link, a_kind: AKind) -> Self {
        MeanModel { link, a_kind }
    }

    /// Scalar factor `a` with `A(β, z) = a·z`.
    fn a_scale(&self, dmu: f64) -> f64 {
        match self.a_kind {
            AKind::Dmu => dmu,
            AKind::Design => 1.0,
        }
    }
}

/// `(μ(βᵀz), ∂μ/∂β)`.
pub fn mu_eval(model: &MeanModel, beta: &DVector<f64>, z: &[f64]) -> (f64, DVector<f64>) {
    let x: f64 = beta.iter().zip(z).map(|(b, v)| b * v).sum();
    let (mu, d1, _) = model.link.eval(x);
    (mu, DVector::from_iterator(z.len(), z.iter().map(|v| d1 * v)))
}

/// `U = Σ w_k A_k (θ_k − μ_k)` and its exact Jacobian `∂U/∂β`.
pub fn estimating_fn(
    model: &MeanModel,
    beta: &DVector<f64>,
    design: &DesignMatrix,
    values: &[f64],
    weights: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let x = design.matrix();
    let eta = x * beta;
    let n = x.nrows();
    let mut cu = vec![0.0; n];
    let mut cj = vec![0.0; n];
    for k in 0..n {
        let w = weights[k];
        if w == 0.0 {
            continue;
        }
        let (mu, d1, d2) = model.link.eval(eta[k]);
        let r = values[k] - mu;
        match model.a_kind {
            AKind::Dmu => {
                cu[k] = w * d1 * r;
                cj[k] = w * (d2 * r - d1 * d1);
            }
            AKind::Design => {
                cu[k] = w * r;
                cj[k] = -w * d1;
            }
        }
    }
    (x.tr_mul(&DVector::from_vec(cu)), weighted_gram(x, &cj))
}

/// `Σ_k c_k z_k z_kᵀ`.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, c: &[f64]) -> DMatrix<f64> {
    let q = x.ncols();
    let mut out = DMatrix::zeros(q, q);
    for a in 0..q {
        let ca = x.column(a);
        for b in a..q {
            let cb = x.column(b);
            let v: f64 = c
                .iter()
                .zip(ca.iter().zip(cb.iter()))
                .map(|(w, (u, v))| w * u * v)
                .sum();
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// `M̂ = (1/W) Σ w_k A_k (∂μ_k/∂β)ᵀ` with `W = Σ w_k`.
///
/// Sign convention: positive, so `J = −W·M̂` when all residuals vanish.
pub fn m_hat(
    model: &MeanModel,
    beta: &DVector<f64>,
    design: &DesignMatrix,
    weights: Option<&[f64]>,
) -> DMatrix<f64> {
    let x = design.matrix();
    let eta = x * beta;
    let n = x.nrows();
    let mut total = 0.0;
    let c: Vec<f64> = (0..n)
        .map(|k| {
            let w = weights.map_or(1.0, |w| w[k]);
            total += w;
            if w == 0.0 {
                return 0.0;
            }
            let (_, d1, _) = model.link.eval(eta[k]);
            w * model.a_scale(d1) * d1
        })
        .collect();
    weighted_gram(x, &c) / total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on `‖U/W‖∞`.
    pub tolerance: f64,
    pub step_tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-10,
            step_tolerance: 1e-12,
            max_iterations: 100,
            max_halvings: 30,
        }
    }
}

/// Root of the estimating equation without the pseudo-value bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct RootSolution {
    pub beta: DVector<f64>,
    pub iterations: usize,
    /// `‖U(β)/W‖∞` at the returned point.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    pub m_hat: DMatrix<f64>,
    pub pseudo: PseudoValues,
    pub model: MeanModel,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.pseudo.len()
    }
}

fn check_rank(design: &DesignMatrix, weights: &[f64]) -> Result<()> {
    let (n, q) = (design.n(), design.q());
    let active = weights.iter().filter(|&&w| w > 0.0).count();
    if q == 0 || q > active {
        return Err(Error::DegenerateDesign(format!(
            "{q} columns for {active} observations with positive weight"
        )));
    }
    let mask: Vec<f64> = (0..n).map(|k| f64::from(u8::from(weights[k] > 0.0))).collect();
    let gram = weighted_gram(design.matrix(), &mask);
    let eig = gram.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    // Singular-value ratio of the design is the square root of this ratio.
    if !(max > 0.0) || min <= 1e-20 * max {
        return Err(Error::DegenerateDesign("design matrix is not of full column rank".into()));
    }
    Ok(())
}

fn initial_beta(model: &MeanModel, design: &DesignMatrix, values: &[f64], weights: &[f64]) -> DVector<f64> {
    let mut beta = DVector::zeros(design.q());
    if design.has_intercept() {
        let total: f64 = weights.iter().sum();
        let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
        let start = if model.link.is_bounded() {
            mean.clamp(0.02, 0.98)
        } else {
            mean
        };
        beta[0] = model.link.linear_predictor(start);
    }
    beta
}

fn newton_direction(j: &DMatrix<f64>, u: &DVector<f64>) -> Option<DVector<f64>> {
    let solve = |m: DMatrix<f64>| {
        m.lu()
            .solve(&(-u))
            .filter(|d| d.iter().all(|v| v.is_finite()))
    };
    solve(j.clone()).or_else(|| {
        let q = j.nrows() as f64;
        let trace = j.trace();
        let lambda = if trace != 0.0 { 1e-8 * trace / q } else { 1e-8 };
        solve(j + DMatrix::identity(j.nrows(), j.ncols()) * lambda)
    })
}

/// Smallest eigenvalue of `−J`, measured against the weighted Gram matrix
/// of the design, that a root must have. Below it the iterate sits on a
/// saturated plateau where `U` vanishes only because the fitted means do
/// (separation, or a spurious root far from the data), not at a solution.
pub const MIN_RELATIVE_CURVATURE: f64 = 1e-12;

fn certify(j: &DMatrix<f64>, design: &DesignMatrix, weights: &[f64], root: RootSolution) -> Result<RootSolution> {
    let gram = weighted_gram(design.matrix(), weights);
    let curvature = gram.cholesky().and_then(|chol| {
        let l = chol.l();
        let left = l.solve_lower_triangular(j)?;
        let k = l.solve_lower_triangular(&left.transpose())?;
        Some(((&k + k.transpose()) * -0.5).symmetric_eigenvalues().min())
    });
    match curvature {
        Some(c) if c >= MIN_RELATIVE_CURVATURE => Ok(root),
        c => Err(Error::Conditioning(format!(
            "estimating equation is flat at the solution (relative curvature {:e}); the fitted means are saturated",
            c.unwrap_or(0.0)
        ))),
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Damped Newton iteration on `U(β) = 0`.
pub fn solve_root(
    model: &MeanModel,
    design: &DesignMatrix,
    values: &[f64],
    weights: Option<&[f64]>,
    init: Option<&DVector<f64>>,
    options: &SolverOptions,
) -> Result<RootSolution> {
    let n = design.n();
    if values.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} responses for {n} design rows",
            values.len()
        )));
    }
    let ones;
    let weights = match weights {
        Some(w) => {
            if w.len() != n || w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument(
                    "weights must be nonnegative with one entry per row".into(),
                ));
            }
            w
        }
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    check_rank(design, weights)?;
    let total: f64 = weights.iter().sum();
    let mut beta = match init {
        Some(b) if b.len() == design.q() => b.clone(),
        Some(b) => {
            return Err(Error::InvalidArgument(format!(
                "initial value has length {}, design has {} columns",
                b.len(),
                design.q()
            )))
        }
        None => initial_beta(model, design, values, weights),
    };
    let (mut u, mut j) = estimating_fn(model, &beta, design, values, weights);
    let mut residual = inf_norm(&u) / total;
    let fail = |iterations: usize, residual: f64, beta: &DVector<f64>| Error::NonConvergence {
        iterations,
        residual,
        last_iterate: beta.iter().copied().collect(),
    };
    for iteration in 0..options.max_iterations {
        if residual <= options.tolerance {
            return certify(&j, design, weights, RootSolution {
                beta,
                iterations: iteration,
                residual,
            });
        }
        let delta = newton_direction(&j, &u).ok_or_else(|| fail(iteration, residual, &beta))?;
        let norm0 = u.norm();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let candidate = &beta + &delta * step;
            let (uc, jc) = estimating_fn(model, &candidate, design, values, weights);
            if uc.iter().all(|v| v.is_finite()) && uc.norm() < norm0 {
                accepted = Some((candidate, uc, jc));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, uc, jc)) = accepted else {
            return Err(fail(iteration + 1, residual, &beta));
        };
        beta = candidate;
        u = uc;
        j = jc;
        residual = inf_norm(&u) / total;
        if step * inf_norm(&delta) < options.step_tolerance {
            // A vanishing step is only accepted as convergence when the
            // residual test also holds.
            if residual <= options.tolerance {
                return certify(&j, design, weights, RootSolution {
                    beta,
                    iterations: iteration + 1,
                    residual,
                });
            }
            return Err(fail(iteration + 1, residual, &beta));
        }
    }
    if residual <= options.tolerance {
        return certify(&j, design, weights, RootSolution {
            beta,
            iterations: options.max_iterations,
            residual,
        });
    }
    Err(fail(options.max_iterations, residual, &beta))
}

/// Fit `β̂` to pseudo-values with default solver options.
pub fn solve(
    model: &MeanModel,
    design: &DesignMatrix,
    pseudo: &PseudoValues,
    weights: Option<&[f64]>,
    init: Option<&DVector<f64>>,
) -> Result<FitResult> {
    solve_with(model, design, pseudo, weights, init, &SolverOptions::default())
}

pub fn solve_with(
    model: &MeanModel,
    design: &DesignMatrix,
    pseudo: &PseudoValues,
    weights: Option<&[f64]>,
    init: Option<&DVector<f64>>,
    options: &SolverOptions,
) -> Result<FitResult> {
    let root = solve_root(model, design, pseudo.values(), weights, init, options)?;
    let m_hat = m_hat(model, &root.beta, design, weights);
    Ok(FitResult {
        beta_hat: root.beta,
        m_hat,
        pseudo: pseudo.clone(),
        model: *model,
        iterations: root.iterations,
        converged: true,
        residual: root.residual,
    })
}
