//! Estimators of the estimating-function covariance and sandwich assembly.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{DesignMatrix, Dataset};
use crate::error::{Error, Result};
use crate::functional::EmpiricalDistribution;
use crate::gee::{weighted_gram, FitResult, MeanModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovKind {
    Hw,
    Hc3,
    Pv,
    BootstrapEmpirical,
}

impl CovKind {
    pub fn name(self) -> &'static str {
        match self {
            CovKind::Hw => "hw",
            CovKind::Hc3 => "hc3",
            CovKind::Pv => "pv",
            CovKind::BootstrapEmpirical => "bootstrap",
        }
    }
}

impl fmt::Display for CovKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CovKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hw" => Ok(CovKind::Hw),
            "hc3" => Ok(CovKind::Hc3),
            "pv" => Ok(CovKind::Pv),
            "bootstrap" | "bootstrap_empirical" => Ok(CovKind::BootstrapEmpirical),
            other => Err(Error::InvalidArgument(format!("unknown covariance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub kind: CovKind,
    pub sigma: DMatrix<f64>,
    /// `M̂⁻¹ Σ̂ M̂⁻ᵀ`, the asymptotic covariance of `√n(β̂ − β₀)`.
    pub sandwich: DMatrix<f64>,
}

impl CovarianceEstimate {
    pub fn new(kind: CovKind, sigma: DMatrix<f64>, m_hat: &DMatrix<f64>) -> Result<Self> {
        let sandwich = sandwich(m_hat, &sigma)?;
        Ok(CovarianceEstimate {
            kind,
            sigma,
            sandwich,
        })
    }

    /// `sqrt(diag(sandwich) / n)`.
    pub fn standard_errors(&self, n: usize) -> Vec<f64> {
        self.sandwich
            .diagonal()
            .iter()
            .map(|v| (v / n as f64).sqrt())
            .collect()
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `M̂⁻¹ Σ̂ M̂⁻ᵀ`, symmetrized.
pub fn sandwich(m_hat: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m_hat.is_square() || m_hat.shape() != sigma.shape() {
        return Err(Error::InvalidArgument(format!(
            "M̂ is {:?}, Σ̂ is {:?}",
            m_hat.shape(),
            sigma.shape()
        )));
    }
    let sv = m_hat.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if !(min > 0.0) || max / min >= 1e12 {
        return Err(Error::Conditioning(format!(
            "M̂ condition number {:e}",
            max / min
        )));
    }
    let inv = m_hat
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("M̂ is singular".into()))?;
    Ok(symmetrize(&(&inv * sigma * inv.transpose())))
}

/// Per-row quantities at `β`: the scalar `a_k` with `A_k = a_k z_k`, the
/// mean `μ_k`.
pub(crate) fn row_terms(model: &MeanModel, beta: &DVector<f64>, design: &DesignMatrix) -> (Vec<f64>, Vec<f64>) {
    let eta = design.matrix() * beta;
    eta.iter()
        .map(|&x| {
            let (mu, d1, _) = model.link.eval(x);
            let a = match model.a_kind {
                crate::gee::AKind::Dmu => d1,
                crate::gee::AKind::Design => 1.0,
            };
            (a, mu)
        })
        .unzip()
}

/// `(1/W) Σ w_k c_k A_k A_kᵀ r_k²` with optional per-row inflation `c_k`.
pub(crate) fn hw_meat(
    model: &MeanModel,
    beta: &DVector<f64>,
    design: &DesignMatrix,
    values: &[f64],
    weights: Option<&[f64]>,
    inflation: Option<&[f64]>,
) -> DMatrix<f64> {
    let (a, mu) = row_terms(model, beta, design);
    let mut total = 0.0;
    let c: Vec<f64> = (0..design.n())
        .map(|k| {
            let w = weights.map_or(1.0, |w| w[k]);
            total += w;
            let r = values[k] - mu[k];
            w * a[k] * a[k] * r * r * inflation.map_or(1.0, |f| f[k])
        })
        .collect();
    weighted_gram(design.matrix(), &c) / total
}

/// Diagonal of `X (Σ w_j z_j z_jᵀ)⁻¹ Xᵀ`, scaled by nothing: `d_kk = z_kᵀ G⁻¹ z_k`.
pub fn leverages(design: &DesignMatrix, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = design.n();
    let w: Vec<f64> = (0..n).map(|k| weights.map_or(1.0, |w| w[k])).collect();
    let gram = weighted_gram(design.matrix(), &w);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Leverage("XᵀX is singular".into()))?;
    let eig = gram.symmetric_eigenvalues();
    if eig.min() <= 1e-14 * eig.max() {
        return Err(Error::Leverage("XᵀX is numerically singular".into()));
    }
    let x = design.matrix();
    // G⁻¹ Xᵀ column by column.
    let solved = chol.solve(&x.transpose());
    Ok((0..n)
        .map(|k| x.row(k).iter().zip(solved.column(k).iter()).map(|(a, b)| a * b).sum())
        .collect())
}

/// `(1 − d_kk)⁻²` inflation, rejecting leverages at or above one on rows
/// with positive weight.
pub(crate) fn hc3_inflation(d: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    d.iter()
        .enumerate()
        .map(|(k, &dk)| {
            if weights.is_some_and(|w| w[k] == 0.0) {
                return Ok(0.0);
            }
            if !(dk < 1.0 - 1e-10) {
                return Err(Error::Leverage(format!("leverage of row {k} is {dk}")));
            }
            Ok((1.0 - dk).powi(-2))
        })
        .collect()
}

pub fn sigma_hw(fit: &FitResult, design: &DesignMatrix) -> Result<CovarianceEstimate> {
    let sigma = hw_meat(&fit.model, &fit.beta_hat, design, fit.pseudo.values(), None, None);
    CovarianceEstimate::new(CovKind::Hw, sigma, &fit.m_hat)
}

pub fn sigma_hc3(fit: &FitResult, design: &DesignMatrix) -> Result<CovarianceEstimate> {
    let d = leverages(design, None)?;
    let inflation = hc3_inflation(&d, None)?;
    let sigma = hw_meat(
        &fit.model,
        &fit.beta_hat,
        design,
        fit.pseudo.values(),
        None,
        Some(&inflation),
    );
    CovarianceEstimate::new(CovKind::Hc3, sigma, &fit.m_hat)
}

/// Corrected plug-in meat from precomputed functional derivatives at `F_n`:
/// `phi = φ(F_n)`, `d1[k] = φ'(δ_{X_k} − F_n)` and `d2` the row-major matrix
/// of `φ''(δ_{X_k} − F_n, δ_{X_j} − F_n)`.
pub fn pv_meat(
    model: &MeanModel,
    beta: &DVector<f64>,
    design: &DesignMatrix,
    phi: f64,
    d1: &[f64],
    d2: &[f64],
) -> Result<DMatrix<f64>> {
    let n = design.n();
    if d1.len() != n || d2.len() != n * n {
        return Err(Error::InvalidArgument(
            "derivative arrays do not match the design".into(),
        ));
    }
    let x = design.matrix();
    let (a, mu) = row_terms(model, beta, design);
    // ĥ₁(X_k) = (1/n) Σ_j a_j z_j φ''(k, j)
    let aw = DMatrix::from_fn(n, n, |k, j| a[j] * d2[k * n + j]);
    let h1 = (aw * x) / n as f64;
    let mut g = h1;
    for k in 0..n {
        let s = a[k] * (phi + d1[k] - mu[k]);
        for c in 0..design.q() {
            g[(k, c)] += s * x[(k, c)];
        }
    }
    Ok(symmetrize(&(g.transpose() * &g / n as f64)))
}

pub fn sigma_pv(fit: &FitResult, design: &DesignMatrix, dataset: &Dataset) -> Result<CovarianceEstimate> {
    let marks = dataset.marks();
    if marks.len() != design.n() {
        return Err(Error::InvalidArgument(
            "dataset and design have different row counts".into(),
        ));
    }
    let prepared = fit
        .pseudo
        .functional()
        .prepare(&EmpiricalDistribution::uniform(marks.clone())?)?;
    let d1: Vec<f64> = marks.iter().map(|m| prepared.d1(m)).collect();
    let d2 = prepared.second_derivative_matrix(&marks);
    let sigma = pv_meat(&fit.model, &fit.beta_hat, design, prepared.value(), &d1, &d2)?;
    CovarianceEstimate::new(CovKind::Pv, sigma, &fit.m_hat)
}

/// Estimate of the requested kind; the bootstrap kind is produced by the
/// bootstrap module instead.
pub fn estimate(
    kind: CovKind,
    fit: &FitResult,
    design: &DesignMatrix,
    dataset: &Dataset,
) -> Result<CovarianceEstimate> {
    match kind {
        CovKind::Hw => sigma_hw(fit, design),
        CovKind::Hc3 => sigma_hc3(fit, design),
        CovKind::Pv => sigma_pv(fit, design, dataset),
        CovKind::BootstrapEmpirical => Err(Error::InvalidArgument(
            "the bootstrap covariance needs a bootstrap configuration".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::Functional;
    use crate::gee::{AKind, Link};
    use crate::pseudo::PseudoValues;

    fn fit_at(beta: Vec<f64>, values: Vec<f64>, model: MeanModel, design: &DesignMatrix) -> FitResult {
        let beta = DVector::from_vec(beta);
        FitResult {
            m_hat: crate::gee::m_hat(&model, &beta, design, None),
            beta_hat: beta,
            pseudo: PseudoValues::from_values(values, Functional::km(1.0)).unwrap(),
            model,
            iterations: 0,
            converged: true,
            residual: 0.0,
        }
    }

    fn design(rows: &[&[f64]]) -> DesignMatrix {
        let q = rows[0].len();
        let m = DMatrix::from_fn(rows.len(), q, |i, j| rows[i][j]);
        DesignMatrix::new(m, (0..q).map(|j| format!("x{j}")).collect(), false).unwrap()
    }

    #[test]
    fn sandwich_identities() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(sandwich(&DMatrix::identity(2, 2), &s).unwrap(), s);
        let out = sandwich(&(DMatrix::identity(2, 2) * 2.0), &DMatrix::identity(2, 2)).unwrap();
        assert!((out - DMatrix::identity(2, 2) * 0.25).amax() < 1e-15);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(sandwich(&singular, &s), Err(Error::Conditioning(_))));
    }

    #[test]
    fn hw_hand_average() {
        let x = design(&[&[1.0], &[1.0]]);
        let model = MeanModel::new(Link::Identity, AKind::Design);
        let fit = fit_at(vec![0.0], vec![1.0, -1.0], model, &x);
        let hw = sigma_hw(&fit, &x).unwrap();
        assert!((hw.sigma[(0, 0)] - 1.0).abs() < 1e-15);
        let zero = fit_at(vec![0.5], vec![0.5, 0.5], model, &x);
        assert_eq!(sigma_hw(&zero, &x).unwrap().sigma[(0, 0)], 0.0);
    }

    #[test]
    fn balanced_design_hc3_is_scaled_hw() {
        // Two groups of three: every leverage is q/n = 1/3.
        let rows: Vec<Vec<f64>> = (0..6).map(|k| if k < 3 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = design(&refs);
        let d = leverages(&x, None).unwrap();
        assert!(d.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-14));
        let model = MeanModel::new(Link::Logit, AKind::Dmu);
        let fit = fit_at(vec![0.1, -0.2], vec![0.0, 1.0, 0.4, 1.2, -0.1, 0.5], model, &x);
        let hw = sigma_hw(&fit, &x).unwrap();
        let hc3 = sigma_hc3(&fit, &x).unwrap();
        let factor = (1.0f64 - 1.0 / 3.0).powi(-2);
        assert!((hc3.sigma - hw.sigma * factor).amax() < 1e-14);
    }

    #[test]
    fn saturated_design_has_degenerate_leverage() {
        let x = design(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let model = MeanModel::new(Link::Identity, AKind::Design);
        let fit = fit_at(vec![0.0, 0.0], vec![0.3, 0.6], model, &x);
        assert!(matches!(sigma_hc3(&fit, &x), Err(Error::Leverage(_))));
    }

    #[test]
    fn mean_indicator_pv_equals_hw() {
        use crate::data::{SurvivalRecord, Status};
        let times = [0.5, 1.5, 2.0, 3.0, 0.8, 4.0];
        let records: Vec<_> = times
            .iter()
            .enumerate()
            .map(|(k, &t)| SurvivalRecord {
                time: t,
                status: if k % 2 == 0 { Status::Event } else { Status::Censored },
                covariates: Default::default(),
            })
            .collect();
        let ds = Dataset::new(records, vec![]).unwrap();
        let x = design(&[&[1.0, 0.1], &[1.0, 0.7], &[1.0, -0.3], &[1.0, 1.5], &[1.0, 0.0], &[1.0, 0.9]]);
        let f = Functional::mean_indicator(1.0);
        let pseudo = crate::pseudo::jackknife_pseudo(&ds, &f).unwrap();
        let model = MeanModel::new(Link::Logit, AKind::Design);
        let fit = crate::gee::solve(&model, &x, &pseudo, None, None).unwrap();
        let hw = sigma_hw(&fit, &x).unwrap();
        let pv = sigma_pv(&fit, &x, &ds).unwrap();
        assert!((hw.sigma - pv.sigma).amax() < 1e-14);
    }
}
