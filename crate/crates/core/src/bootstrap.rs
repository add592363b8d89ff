//! Multinomial bootstrap of `(pseudo-value, covariate)` pairs.
//!
//! Pseudo-values are computed once on the original sample and frozen; each
//! replicate re-solves the estimating equation with multinomial weights.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{hc3_inflation, hw_meat, leverages, sandwich, CovKind, CovarianceEstimate};
use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::gee::{self, FitResult, SolverOptions};
use crate::inference::{quadratic_statistic, wald_statistic, Hypothesis, TestMethod, TestResult};
use crate::rng::SeedStream;

/// Covariance used to studentize the replicate statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    #[default]
    Hw,
    Hc3,
}

impl fmt::Display for Standardization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Standardization::Hw => "hw",
            Standardization::Hc3 => "hc3",
        })
    }
}

impl FromStr for Standardization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hw" => Ok(Standardization::Hw),
            "hc3" => Ok(Standardization::Hc3),
            other => Err(Error::InvalidArgument(format!("unknown standardization `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    /// Redraws allowed per replicate after a failed attempt.
    pub retry_limit: usize,
    pub standardization: Standardization,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            alpha: 0.05,
            retry_limit: 5,
            standardization: Standardization::Hw,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 100 {
            return Err(Error::InvalidArgument(format!(
                "at least 100 bootstrap replicates required, got {}",
                self.replicates
            )));
        }
        if self.retry_limit > 20 {
            return Err(Error::InvalidArgument(format!(
                "retry limit {} exceeds 20",
                self.retry_limit
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReplicate {
    pub weights: Vec<u32>,
    pub beta_b: DVector<f64>,
    /// NaN until a statistic has been evaluated.
    pub statistic_b: f64,
    pub converged: bool,
}

/// Multinomial `(n; 1/n, …, 1/n)` counts from `n` uniform index draws.
pub fn draw_weights<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<u32> {
    let mut w = vec![0u32; n];
    for _ in 0..n {
        w[rng.random_range(0..n)] += 1;
    }
    w
}

fn as_f64(weights: &[u32]) -> Vec<f64> {
    weights.iter().map(|&w| f64::from(w)).collect()
}

/// Weighted re-fit warm-started at `β̂`.
pub fn bootstrap_fit(fit: &FitResult, design: &DesignMatrix, weights: &[u32]) -> BootstrapReplicate {
    let w = as_f64(weights);
    let root = gee::solve_root(
        &fit.model,
        design,
        fit.pseudo.values(),
        Some(&w),
        Some(&fit.beta_hat),
        &SolverOptions::default(),
    );
    match root {
        Ok(r) => BootstrapReplicate {
            weights: weights.to_vec(),
            beta_b: r.beta,
            statistic_b: f64::NAN,
            converged: true,
        },
        Err(_) => BootstrapReplicate {
            weights: weights.to_vec(),
            beta_b: fit.beta_hat.clone(),
            statistic_b: f64::NAN,
            converged: false,
        },
    }
}

/// `(M̂^B)⁻¹ Σ̂^B (M̂^B)⁻ᵀ` on the weighted resample.
pub fn replicate_sandwich(
    fit: &FitResult,
    design: &DesignMatrix,
    replicate: &BootstrapReplicate,
    standardization: Standardization,
) -> Result<DMatrix<f64>> {
    if !replicate.converged {
        return Err(Error::NonConvergence {
            iterations: 0,
            residual: f64::NAN,
            last_iterate: replicate.beta_b.iter().copied().collect(),
        });
    }
    let w = as_f64(&replicate.weights);
    let values = fit.pseudo.values();
    let m = gee::m_hat(&fit.model, &replicate.beta_b, design, Some(&w));
    let sigma = match standardization {
        Standardization::Hw => hw_meat(&fit.model, &replicate.beta_b, design, values, Some(&w), None),
        Standardization::Hc3 => {
            let d = leverages(design, Some(&w))?;
            let inflation = hc3_inflation(&d, Some(&w))?;
            hw_meat(&fit.model, &replicate.beta_b, design, values, Some(&w), Some(&inflation))
        }
    };
    sandwich(&m, &sigma)
}

/// `n (C(β̂^B − β̂))ᵀ (C V^B Cᵀ)⁺ C(β̂^B − β̂)`.
pub fn bootstrap_statistic(
    replicate: &BootstrapReplicate,
    fit: &FitResult,
    design: &DesignMatrix,
    hyp: &Hypothesis,
    standardization: Standardization,
) -> Result<f64> {
    let v = replicate_sandwich(fit, design, replicate, standardization)?;
    Ok(centered_statistic(replicate, fit, hyp, &v))
}

fn centered_statistic(replicate: &BootstrapReplicate, fit: &FitResult, hyp: &Hypothesis, v: &DMatrix<f64>) -> f64 {
    let diff = hyp.c() * (&replicate.beta_b - &fit.beta_hat);
    quadratic_statistic(&diff, hyp.c(), v, fit.n()).0
}

/// Replicates shared by several hypotheses and standardizations.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSet {
    /// `β̂^B` of every successful replicate, in replicate order.
    pub betas: Vec<DVector<f64>>,
    /// `statistics[h][s]` lists the successful replicates' statistics for
    /// hypothesis `h` and standardization `s`.
    pub statistics: Vec<Vec<Vec<f64>>>,
    pub requested: usize,
    /// Replicates that failed on every attempt.
    pub failures: usize,
    /// Extra draws spent on retries.
    pub redraws: usize,
}

/// Draw `config.replicates` replicates. A replicate succeeds when its fit
/// converges and every requested statistic is finite; otherwise fresh
/// weights are drawn up to `retry_limit` times.
pub fn replicate_set(
    fit: &FitResult,
    design: &DesignMatrix,
    hyps: &[Hypothesis],
    standardizations: &[Standardization],
    config: &BootstrapConfig,
) -> Result<ReplicateSet> {
    config.validate()?;
    let stream = SeedStream::new(config.seed);
    let n = design.n();
    let outcomes: Vec<(Option<(DVector<f64>, Vec<Vec<f64>>)>, usize)> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            for attempt in 0..=config.retry_limit {
                let mut rng = stream.child(r as u64).child(attempt as u64).rng();
                let weights = draw_weights(&mut rng, n);
                let rep = bootstrap_fit(fit, design, &weights);
                if !rep.converged {
                    continue;
                }
                let sandwiches: Result<Vec<DMatrix<f64>>> = standardizations
                    .iter()
                    .map(|&s| replicate_sandwich(fit, design, &rep, s))
                    .collect();
                let Ok(sandwiches) = sandwiches else { continue };
                let stats: Vec<Vec<f64>> = hyps
                    .iter()
                    .map(|h| sandwiches.iter().map(|v| centered_statistic(&rep, fit, h, v)).collect())
                    .collect();
                if stats.iter().flatten().all(|t| t.is_finite()) {
                    return (Some((rep.beta_b, stats)), attempt);
                }
            }
            (None, config.retry_limit)
        })
        .collect();

    let failures = outcomes.iter().filter(|o| o.0.is_none()).count();
    if failures * 5 > config.replicates {
        return Err(Error::BootstrapUnstable {
            failed: failures,
            requested: config.replicates,
        });
    }
    let redraws = outcomes.iter().map(|o| o.1).sum();
    let mut statistics = vec![vec![Vec::with_capacity(config.replicates); standardizations.len()]; hyps.len()];
    let mut betas = Vec::with_capacity(config.replicates);
    for (beta, stats) in outcomes.into_iter().filter_map(|o| o.0) {
        for (h, row) in stats.into_iter().enumerate() {
            for (s, t) in row.into_iter().enumerate() {
                statistics[h][s].push(t);
            }
        }
        betas.push(beta);
    }
    Ok(ReplicateSet {
        betas,
        statistics,
        requested: config.replicates,
        failures,
        redraws,
    })
}

/// Order statistic `⌈(B+1)(1−α)⌉` (1-based, clipped to `B`).
pub fn bootstrap_quantile(statistics: &[f64], alpha: f64) -> Result<f64> {
    if statistics.is_empty() {
        return Err(Error::InvalidArgument("no replicate statistics".into()));
    }
    let mut sorted = statistics.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len();
    let index = (((b + 1) as f64) * (1.0 - alpha)).ceil() as usize;
    Ok(sorted[index.clamp(1, b) - 1])
}

/// Decision of the bootstrap test given the original-sample statistic.
pub fn bootstrap_decision(statistic: f64, rank_c: usize, statistics: &[f64], alpha: f64, label: &str) -> Result<TestResult> {
    let critical_value = bootstrap_quantile(statistics, alpha)?;
    let exceed = statistics.iter().filter(|&&t| t >= statistic).count();
    Ok(TestResult {
        label: label.to_owned(),
        statistic,
        rank_c,
        p_value: (1 + exceed) as f64 / (statistics.len() + 1) as f64,
        method: TestMethod::Bootstrap,
        alpha,
        critical_value,
        reject: statistic > critical_value,
    })
}

/// `T_n` standardized by `cov` (the corrected estimator in the intended use)
/// compared with the bootstrap quantile of the replicate statistics.
pub fn bootstrap_test(
    fit: &FitResult,
    design: &DesignMatrix,
    cov: &CovarianceEstimate,
    hyp: &Hypothesis,
    config: &BootstrapConfig,
) -> Result<TestResult> {
    let (statistic, rank_c) = wald_statistic(fit, cov, hyp)?;
    let set = replicate_set(fit, design, std::slice::from_ref(hyp), &[config.standardization], config)?;
    bootstrap_decision(statistic, rank_c, &set.statistics[0][0], config.alpha, hyp.label())
}

/// Empirical covariance of `√n(β̂^B − β̂)` as `sandwich`, with
/// `sigma = M̂ S M̂ᵀ`. It targets the Huber–White limit, not the covariance
/// of `√n(β̂ − β₀)` under censoring; for diagnostics only.
pub fn bootstrap_covariance(fit: &FitResult, design: &DesignMatrix, config: &BootstrapConfig) -> Result<CovarianceEstimate> {
    let set = replicate_set(fit, design, &[], &[], config)?;
    Ok(empirical_covariance(fit, &set.betas))
}

pub fn empirical_covariance(fit: &FitResult, betas: &[DVector<f64>]) -> CovarianceEstimate {
    let q = fit.beta_hat.len();
    let mut s = DMatrix::zeros(q, q);
    for b in betas {
        let d = b - &fit.beta_hat;
        s += &d * d.transpose();
    }
    s *= fit.n() as f64 / betas.len().max(1) as f64;
    let sigma = &fit.m_hat * &s * fit.m_hat.transpose();
    CovarianceEstimate {
        kind: CovKind::BootstrapEmpirical,
        sigma,
        sandwich: s,
    }
}
