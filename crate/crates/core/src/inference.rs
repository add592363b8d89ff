//! Wald-type tests of linear hypotheses `Cβ = b`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceEstimate;
use crate::error::{Error, Result};
use crate::gee::FitResult;

/// Moore–Penrose pseudoinverse; singular values below
/// `rel_tol·σ_max` are treated as zero. Returns the numerical rank as well.
pub fn pinv(h: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let (r, c) = h.shape();
    if r == 0 || c == 0 {
        return (DMatrix::zeros(c, r), 0);
    }
    // Eigenpairs of [[0, H], [Hᵀ, 0]] are (±σ, (u, ±v)/√2). nalgebra's
    // bidiagonal SVD can return a wrong factorization for exactly
    // rank-deficient input; the symmetric solver does not.
    let mut aug = DMatrix::zeros(r + c, r + c);
    aug.view_mut((0, r), (r, c)).copy_from(h);
    aug.view_mut((r, 0), (c, r)).copy_from(&h.transpose());
    let eig = aug.symmetric_eigen();
    let max = eig.eigenvalues.amax();
    if !(max > 0.0) {
        return (DMatrix::zeros(c, r), 0);
    }
    let mut out = DMatrix::zeros(c, r);
    let mut rank = 0;
    for (i, &s) in eig.eigenvalues.iter().enumerate() {
        if s > rel_tol * max {
            rank += 1;
            let w = eig.eigenvectors.column(i);
            out += w.rows(r, c) * w.rows(0, r).transpose() * (2.0 / s);
        }
    }
    (out, rank)
}

/// Default relative tolerance for [`pinv`].
pub const PINV_TOLERANCE: f64 = 1e-10;

fn rank(m: &DMatrix<f64>) -> usize {
    pinv(m, PINV_TOLERANCE).1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    c: DMatrix<f64>,
    b: DVector<f64>,
    label: String,
}

impl Hypothesis {
    /// Checks that `Cβ = b` has a solution, i.e. `rank([C|b]) = rank(C)`.
    pub fn new(c: DMatrix<f64>, b: DVector<f64>, label: impl Into<String>) -> Result<Self> {
        if c.nrows() == 0 || c.ncols() == 0 {
            return Err(Error::Hypothesis("C must have at least one row".into()));
        }
        if b.len() != c.nrows() {
            return Err(Error::Hypothesis(format!(
                "C has {} rows but b has {} entries",
                c.nrows(),
                b.len()
            )));
        }
        if c.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Hypothesis("non-finite entry".into()));
        }
        let augmented = DMatrix::from_fn(c.nrows(), c.ncols() + 1, |i, j| {
            if j < c.ncols() {
                c[(i, j)]
            } else {
                b[i]
            }
        });
        if rank(&augmented) != rank(&c) {
            return Err(Error::Hypothesis("the system Cβ = b is inconsistent".into()));
        }
        Ok(Hypothesis {
            c,
            b,
            label: label.into(),
        })
    }

    /// `H₀: β_j = 0` for each listed coefficient index.
    pub fn coefficients_zero(indices: &[usize], q: usize, label: impl Into<String>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&j| j >= q) {
            return Err(Error::Hypothesis(format!("coefficient {bad} out of range for q = {q}")));
        }
        let c = DMatrix::from_fn(indices.len(), q, |i, j| f64::from(u8::from(indices[i] == j)));
        Hypothesis::new(c, DVector::zeros(indices.len()), label)
    }

    /// Parse rows of `C`, a line containing `|`, then the entries of `b`
    /// (one per line or space separated). Without a `|` line `b = 0`.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str, label: impl Into<String>) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut b: Option<Vec<f64>> = None;
        let number = |tok: &str| {
            tok.parse::<f64>()
                .map_err(|_| Error::Hypothesis(format!("cannot parse `{tok}` as a number")))
        };
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line == "|" {
                if b.is_some() {
                    return Err(Error::Hypothesis("more than one `|` separator".into()));
                }
                b = Some(Vec::new());
                continue;
            }
            let values = line
                .split(|ch: char| ch.is_whitespace() || ch == ',')
                .filter(|t| !t.is_empty())
                .map(number)
                .collect::<Result<Vec<f64>>>()?;
            match b.as_mut() {
                Some(bv) => bv.extend(values),
                None => rows.push(values),
            }
        }
        let p = rows.len();
        if p == 0 {
            return Err(Error::Hypothesis("no rows in C".into()));
        }
        let q = rows[0].len();
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::Hypothesis("rows of C have different lengths".into()));
        }
        let b = b.unwrap_or_else(|| vec![0.0; p]);
        Hypothesis::new(
            DMatrix::from_fn(p, q, |i, j| rows[i][j]),
            DVector::from_vec(b),
            label,
        )
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn rows(&self) -> usize {
        self.c.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Asymptotic,
    Bootstrap,
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestMethod::Asymptotic => "asymptotic",
            TestMethod::Bootstrap => "bootstrap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub label: String,
    pub statistic: f64,
    pub rank_c: usize,
    pub p_value: f64,
    pub method: TestMethod,
    pub alpha: f64,
    /// χ² quantile or bootstrap quantile compared against the statistic.
    pub critical_value: f64,
    pub reject: bool,
}

/// `T = n (Cβ − b)ᵀ (C V Cᵀ)⁺ (Cβ − b)` and the numerical rank of `C V Cᵀ`.
pub fn wald_from_parts(
    beta: &DVector<f64>,
    sandwich: &DMatrix<f64>,
    n: usize,
    hyp: &Hypothesis,
) -> Result<(f64, usize)> {
    if hyp.c.ncols() != beta.len() || sandwich.nrows() != beta.len() {
        return Err(Error::Hypothesis(format!(
            "C has {} columns but the fit has {} coefficients",
            hyp.c.ncols(),
            beta.len()
        )));
    }
    let diff = &hyp.c * beta - &hyp.b;
    Ok(quadratic_statistic(&diff, &hyp.c, sandwich, n))
}

/// `n · dᵀ (C V Cᵀ)⁺ d` and the rank of `C V Cᵀ`.
pub fn quadratic_statistic(
    diff: &DVector<f64>,
    c: &DMatrix<f64>,
    sandwich: &DMatrix<f64>,
    n: usize,
) -> (f64, usize) {
    let middle = c * sandwich * c.transpose();
    let middle = (&middle + middle.transpose()) * 0.5;
    let (inv, rank) = pinv(&middle, PINV_TOLERANCE);
    let t = n as f64 * (diff.transpose() * inv * diff)[(0, 0)];
    (t.max(0.0), rank)
}

pub fn wald_statistic(fit: &FitResult, cov: &CovarianceEstimate, hyp: &Hypothesis) -> Result<(f64, usize)> {
    wald_from_parts(&fit.beta_hat, &cov.sandwich, fit.n(), hyp)
}

/// `ln Γ(df/2)`, exact up to rounding for integer and half-integer arguments.
fn ln_gamma_half(df: u32) -> f64 {
    if df % 2 == 0 {
        (1..df / 2).map(|i| (i as f64).ln()).sum()
    } else {
        0.5 * std::f64::consts::PI.ln() + (0..df / 2).map(|i| (i as f64 + 0.5).ln()).sum::<f64>()
    }
}

/// Regularized incomplete gamma functions `(P(a, x), Q(a, x))`.
fn incomplete_gamma(a: f64, x: f64, ln_gamma_a: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    let prefactor = (-x + a * x.ln() - ln_gamma_a).exp();
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        for k in 1..10_000 {
            term *= x / (a + k as f64);
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        let p = sum * prefactor;
        (p, 1.0 - p)
    } else {
        // Modified Lentz evaluation of the continued fraction for Q.
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = prefactor * h;
        (1.0 - q, q)
    }
}

/// Upper tail `P(χ²_df > x)`.
pub fn chisq_sf(x: f64, df: u32) -> f64 {
    assert!(df > 0, "degrees of freedom must be positive");
    if !(x > 0.0) {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    incomplete_gamma(df as f64 / 2.0, x / 2.0, ln_gamma_half(df)).1
}

pub fn chisq_cdf(x: f64, df: u32) -> f64 {
    assert!(df > 0, "degrees of freedom must be positive");
    if !(x > 0.0) {
        return 0.0;
    }
    incomplete_gamma(df as f64 / 2.0, x / 2.0, ln_gamma_half(df)).0
}

/// `x` with `P(χ²_df ≤ x) = p`, by bisection.
pub fn chisq_quantile(p: f64, df: u32) -> f64 {
    assert!((0.0..1.0).contains(&p), "probability must lie in [0, 1)");
    if p == 0.0 {
        return 0.0;
    }
    let upper = 1.0 - p;
    let mut hi = df as f64 + 10.0;
    while chisq_sf(hi, df) > upper {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // Compare on whichever tail is better resolved.
        let above = if p < 0.5 {
            chisq_cdf(mid, df) > p
        } else {
            chisq_sf(mid, df) < upper
        };
        if above {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Asymptotic χ² test at level `alpha`.
pub fn run_test(fit: &FitResult, cov: &CovarianceEstimate, hyp: &Hypothesis, alpha: f64) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} outside (0, 1)")));
    }
    let (statistic, rank_c) = wald_statistic(fit, cov, hyp)?;
    if rank_c == 0 {
        return Err(Error::Hypothesis("C V Cᵀ has rank zero".into()));
    }
    let critical_value = chisq_quantile(1.0 - alpha, rank_c as u32);
    Ok(TestResult {
        label: hyp.label.clone(),
        statistic,
        rank_c,
        p_value: chisq_sf(statistic, rank_c as u32),
        method: TestMethod::Asymptotic,
        alpha,
        critical_value,
        reject: statistic > critical_value,
    })
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `sample` and a continuous `cdf`.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
