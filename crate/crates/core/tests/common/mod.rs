//! Helpers shared by the integration suites: small dataset builders and
//! independent reference implementations.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pseudoreg::data::{encode_design, CovariateValue, Dataset, DesignMatrix, DesignSpec, Status, SurvivalRecord, Term};
use pseudoreg::functional::ObservationMark;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

/// Numeric covariates named `x1, x2, …`.
pub fn dataset(times: &[f64], events: &[bool], covariates: &[Vec<f64>]) -> Dataset {
    let p = covariates.first().map_or(0, Vec::len);
    let names: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    let records = times
        .iter()
        .zip(events)
        .zip(covariates)
        .map(|((&time, &event), z)| SurvivalRecord {
            time,
            status: if event { Status::Event } else { Status::Censored },
            covariates: names
                .iter()
                .cloned()
                .zip(z.iter().map(|&v| CovariateValue::Number(v)))
                .collect::<BTreeMap<_, _>>(),
        })
        .collect();
    Dataset::new(records, names).unwrap()
}

pub fn linear_design(ds: &Dataset) -> DesignMatrix {
    let spec = DesignSpec::with_intercept(ds.covariate_names().iter().cloned().map(Term::Numeric).collect());
    encode_design(ds, &spec).unwrap()
}

/// Exponential event times with a covariate effect, uniform censoring on
/// `(0, bound)`, one normal and one binary covariate. Returns the data and a
/// time point below which at least a fifth of the subjects are still
/// followed.
pub fn censored_sample<R: Rng + ?Sized>(rng: &mut R, n: usize, bound: Option<f64>) -> (Dataset, f64) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    let mut covs = Vec::with_capacity(n);
    for _ in 0..n {
        let z1: f64 = normal.sample(rng);
        let z2 = f64::from(u8::from(rng.random_bool(0.5)));
        let rate = (0.3 * z1 - 0.4 * z2).exp();
        let t: f64 = Exp::new(rate).unwrap().sample(rng);
        let c = bound.map_or(f64::INFINITY, |b| rng.random_range(0.0..b));
        times.push(t.min(c).max(1e-9));
        events.push(t <= c);
        covs.push(vec![z1, z2]);
    }
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let t0 = sorted[(0.6 * n as f64) as usize];
    (dataset(&times, &events, &covs), t0)
}

/// Product-limit estimate written out directly: events before censorings at
/// tied times, product over event times `≤ t0`.
pub fn product_limit(marks: &[ObservationMark], t0: f64) -> f64 {
    let mut times: Vec<f64> = marks.iter().filter(|m| m.is_event && m.time <= t0).map(|m| m.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut s = 1.0;
    for t in times {
        let at_risk = marks.iter().filter(|m| m.time >= t).count() as f64;
        let deaths = marks.iter().filter(|m| m.is_event && m.time == t).count() as f64;
        s *= 1.0 - deaths / at_risk;
    }
    s
}

/// Logistic regression by iteratively reweighted least squares, solved with
/// normal equations. Fully independent of the crate's solver.
pub fn irls_logistic(x: &DMatrix<f64>, y: &[f64], tol: f64) -> DVector<f64> {
    let (n, q) = x.shape();
    let mut beta = DVector::zeros(q);
    for _ in 0..200 {
        let mut xtwx = DMatrix::zeros(q, q);
        let mut xtwz = DVector::zeros(q);
        for i in 0..n {
            let eta: f64 = (0..q).map(|j| x[(i, j)] * beta[j]).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            let w = p * (1.0 - p);
            let z = eta + (y[i] - p) / w;
            for a in 0..q {
                xtwz[a] += x[(i, a)] * w * z;
                for b in 0..q {
                    xtwx[(a, b)] += x[(i, a)] * w * x[(i, b)];
                }
            }
        }
        let next = xtwx.lu().solve(&xtwz).expect("IRLS normal equations");
        let change = (&next - &beta).amax();
        beta = next;
        if change < tol {
            break;
        }
    }
    beta
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
