//! Jackknife pseudo-observations and their second-order essential part.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::functional::{Direction, EmpiricalDistribution, Functional, ObservationMark};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoValues {
    values: Vec<f64>,
    functional: Functional,
    /// `φ(F_n)`.
    full_estimate: f64,
}

impl PseudoValues {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn functional(&self) -> Functional {
        self.functional
    }

    pub fn t0(&self) -> f64 {
        self.functional.t0()
    }

    pub fn full_estimate(&self) -> f64 {
        self.full_estimate
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Wrap externally computed values, e.g. responses of a fully observed
    /// outcome.
    pub fn from_values(values: Vec<f64>, functional: Functional) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "pseudo-values must be finite and nonempty".into(),
            ));
        }
        let full_estimate = values.iter().sum::<f64>() / values.len() as f64;
        Ok(PseudoValues {
            values,
            functional,
            full_estimate,
        })
    }
}

fn loo_error(k: usize, e: Error) -> Error {
    match e {
        Error::EstimandUndefined(msg) => {
            Error::EstimandUndefined(format!("leave-one-out sample {k}: {msg}"))
        }
        other => other,
    }
}

/// `θ̂_{n,k} = n φ(F_n) − (n−1) φ(F_n^{(k)})`, never clipped to `[0, 1]`.
///
/// Kaplan–Meier uses an `O(n·m)` incremental pass over the event grid;
/// other functionals fall back to [`jackknife_pseudo_naive`].
pub fn jackknife_pseudo(dataset: &Dataset, functional: &Functional) -> Result<PseudoValues> {
    match *functional {
        Functional::KmSurvival { t0, boundary } => {
            let marks = dataset.marks();
            let full = functional.value(&EmpiricalDistribution::uniform(marks.clone())?)?;
            let n = marks.len();
            let admits = |t: f64| match boundary {
                crate::functional::Boundary::Inclusive => t <= t0,
                crate::functional::Boundary::Exclusive => t < t0,
            };
            // Event grid with integer counts.
            let mut times: Vec<f64> = marks
                .iter()
                .filter(|m| m.is_event && admits(m.time))
                .map(|m| m.time)
                .collect();
            times.sort_by(f64::total_cmp);
            times.dedup();
            let events: Vec<f64> = times
                .iter()
                .map(|&s| marks.iter().filter(|m| m.is_event && m.time == s).count() as f64)
                .collect();
            let mut sorted: Vec<f64> = marks.iter().map(|m| m.time).collect();
            sorted.sort_by(f64::total_cmp);
            let risk_count = |s: f64| (n - sorted.partition_point(|&t| t < s)) as f64;
            let at_risk: Vec<f64> = times.iter().map(|&s| risk_count(s)).collect();
            let risk_t0 = risk_count(t0);

            let values = marks
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    if risk_t0 - f64::from(u8::from(m.time >= t0)) <= 0.0 {
                        return Err(Error::EstimandUndefined(format!(
                            "leave-one-out sample {k}: no mass at risk at t0 = {t0}"
                        )));
                    }
                    let mut s_k = 1.0;
                    for ((&s, &d), &y) in times.iter().zip(&events).zip(&at_risk) {
                        let y_k = y - f64::from(u8::from(m.time >= s));
                        let d_k = d - f64::from(u8::from(m.is_event && m.time == s));
                        s_k *= 1.0 - d_k / y_k;
                    }
                    Ok(n as f64 * full - (n - 1) as f64 * s_k)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PseudoValues {
                values,
                functional: *functional,
                full_estimate: full,
            })
        }
        Functional::MeanIndicator { .. } => jackknife_pseudo_naive(dataset, functional),
    }
}

/// Reference path: re-evaluates the functional on every leave-one-out
/// distribution.
pub fn jackknife_pseudo_naive(dataset: &Dataset, functional: &Functional) -> Result<PseudoValues> {
    let full_f = EmpiricalDistribution::uniform(dataset.marks())?;
    let full = functional.value(&full_f)?;
    let n = dataset.n() as f64;
    let values = (0..dataset.n())
        .into_par_iter()
        .map(|k| {
            let loo = full_f.leave_one_out(k)?;
            let v = functional.value(&loo).map_err(|e| loo_error(k, e))?;
            Ok(n * full - (n - 1.0) * v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PseudoValues {
        values,
        functional: *functional,
        full_estimate: full,
    })
}

/// Plug-in essential part
/// `θ̂*_{n,k} = φ(F_n) + φ'(δ_{X_k} − F_n) + φ''(δ_{X_k} − F_n, F_n^{(k)} − F_n)`
/// and the remainder `θ̂_{n,k} − θ̂*_{n,k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssentialDecomposition {
    pub essential: Vec<f64>,
    pub remainder: Vec<f64>,
}

impl EssentialDecomposition {
    /// `√n · max_k |remainder_k|`.
    pub fn scaled_max_remainder(&self) -> f64 {
        let n = self.remainder.len() as f64;
        n.sqrt() * self.remainder.iter().fold(0.0_f64, |a, r| a.max(r.abs()))
    }
}

pub fn essential_part(
    dataset: &Dataset,
    functional: &Functional,
    pseudo: &PseudoValues,
) -> Result<EssentialDecomposition> {
    if pseudo.len() != dataset.n() {
        return Err(Error::InvalidArgument(format!(
            "{} pseudo-values for {} records",
            pseudo.len(),
            dataset.n()
        )));
    }
    let marks = dataset.marks();
    let n = marks.len();
    let prepared = functional.prepare(&EmpiricalDistribution::uniform(marks.clone())?)?;
    let phi = prepared.value();
    let scale = 1.0 / (n - 1) as f64;
    let essential: Vec<f64> = marks
        .par_iter()
        .map(|x: &ObservationMark| {
            // F_n^{(k)} − F_n = (F_n − δ_{X_k}) / (n − 1)
            let loo_shift = Direction {
                base: scale,
                atoms: vec![(*x, -scale)],
            };
            let jet = prepared.directional(&Direction::toward(*x), Some(&loo_shift));
            phi + jet.e1 + jet.e12
        })
        .collect();
    let remainder = pseudo
        .values()
        .iter()
        .zip(&essential)
        .map(|(v, e)| v - e)
        .collect();
    Ok(EssentialDecomposition {
        essential,
        remainder,
    })
}
