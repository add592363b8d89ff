//! Estimand functionals on weighted empirical distributions of
//! `(time, event)` marks, with exact first- and second-order directional
//! derivatives.
//!
//! The Kaplan–Meier survival probability at `t₀` is a rational function of
//! the mark weights, so pushing [`HyperDual`] weights through the
//! product-limit formula yields exact Gateaux derivatives along any
//! signed-measure direction.

mod jet;

pub use jet::HyperDual;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ weights = 1`.
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One subject's observed `(time, event)` pair. The counting process is
/// `N(t) = 1{time ≤ t, event}` and the at-risk process `Y(t) = 1{time ≥ t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationMark {
    pub time: f64,
    pub is_event: bool,
}

impl ObservationMark {
    pub fn new(time: f64, is_event: bool) -> Result<Self> {
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "observation time must be positive and finite, got {time}"
            )));
        }
        Ok(ObservationMark { time, is_event })
    }

    pub fn event(time: f64) -> Self {
        ObservationMark { time, is_event: true }
    }

    pub fn censored(time: f64) -> Self {
        ObservationMark { time, is_event: false }
    }
}

/// Weighted average of point masses over marks.
///
/// Public constructors require a probability vector. Signed weights only
/// arise inside the finite-difference oracle's mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    marks: Vec<ObservationMark>,
    weights: Vec<f64>,
}

impl EmpiricalDistribution {
    /// `F_n = (1/n) Σ δ_{X_k}`.
    pub fn uniform(marks: Vec<ObservationMark>) -> Result<Self> {
        if marks.is_empty() {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        let w = 1.0 / marks.len() as f64;
        let weights = vec![w; marks.len()];
        Ok(EmpiricalDistribution { marks, weights })
    }

    pub fn with_weights(marks: Vec<ObservationMark>, weights: Vec<f64>) -> Result<Self> {
        if marks.is_empty() || marks.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} marks but {} weights",
                marks.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(EmpiricalDistribution { marks, weights })
    }

    /// Leave-one-out average `F_n^{(k)}`: mark `k` keeps its slot with weight 0.
    pub fn leave_one_out(&self, k: usize) -> Result<Self> {
        let n = self.marks.len();
        if n < 2 || k >= n {
            return Err(Error::InvalidArgument(format!(
                "cannot leave out index {k} of {n}"
            )));
        }
        let w = 1.0 / (n - 1) as f64;
        let weights = (0..n).map(|i| if i == k { 0.0 } else { w }).collect();
        Ok(EmpiricalDistribution {
            marks: self.marks.clone(),
            weights,
        })
    }

    /// `F + Σ_i ε_i (δ_{x_i} − F)`. The result may carry negative weights.
    fn mixture(&self, perturbations: &[(ObservationMark, f64)]) -> Self {
        let total_eps: f64 = perturbations.iter().map(|(_, e)| e).sum();
        let mut marks = self.marks.clone();
        let mut weights: Vec<f64> = self.weights.iter().map(|w| w * (1.0 - total_eps)).collect();
        for &(x, eps) in perturbations {
            marks.push(x);
            weights.push(eps);
        }
        EmpiricalDistribution { marks, weights }
    }

    pub fn marks(&self) -> &[ObservationMark] {
        &self.marks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    /// `Σ_x w_x 1{time_x ≥ t}`.
    pub fn at_risk(&self, t: f64) -> f64 {
        self.marks
            .iter()
            .zip(&self.weights)
            .filter(|(m, _)| m.time >= t)
            .map(|(_, w)| w)
            .sum()
    }
}

/// Whether an event at exactly `t₀` enters the product-limit estimate.
///
/// `Inclusive` gives `Ŝ(t₀)`, the right-continuous estimate of `P(T > t₀)`;
/// `Exclusive` gives the left limit `Ŝ(t₀−)`, i.e. `P(T ≥ t₀)`. The two
/// only differ when an event is recorded exactly at `t₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Inclusive,
    Exclusive,
}

impl Boundary {
    #[inline]
    fn admits(self, time: f64, t0: f64) -> bool {
        match self {
            Boundary::Inclusive => time <= t0,
            Boundary::Exclusive => time < t0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// Product-limit survival probability at `t0`.
    KmSurvival { t0: f64, boundary: Boundary },
    /// `Σ w_x 1{time_x > t0}`, linear in the distribution.
    MeanIndicator { t0: f64 },
}

impl Functional {
    pub fn km(t0: f64) -> Self {
        Functional::KmSurvival {
            t0,
            boundary: Boundary::Inclusive,
        }
    }

    pub fn km_with_boundary(t0: f64, boundary: Boundary) -> Self {
        Functional::KmSurvival { t0, boundary }
    }

    pub fn mean_indicator(t0: f64) -> Self {
        Functional::MeanIndicator { t0 }
    }

    pub fn t0(&self) -> f64 {
        match *self {
            Functional::KmSurvival { t0, .. } | Functional::MeanIndicator { t0 } => t0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Functional::KmSurvival { .. } => "km_survival",
            Functional::MeanIndicator { .. } => "mean_indicator",
        }
    }

    fn validate(&self) -> Result<()> {
        let t0 = self.t0();
        if !(t0.is_finite() && t0 > 0.0) {
            return Err(Error::InvalidArgument(format!("t0 must be positive, got {t0}")));
        }
        Ok(())
    }

    /// Precompute everything that depends only on the base distribution.
    pub fn prepare(&self, f: &EmpiricalDistribution) -> Result<PreparedFunctional> {
        PreparedFunctional::new(*self, f.marks(), f.weights())
    }

    pub fn value(&self, f: &EmpiricalDistribution) -> Result<f64> {
        Ok(self.prepare(f)?.value())
    }

    /// `φ'_F(δ_x − F)`.
    pub fn d1(&self, f: &EmpiricalDistribution, x: &ObservationMark) -> Result<f64> {
        Ok(self.prepare(f)?.d1(x))
    }

    /// `φ''_F(δ_{x₁} − F, δ_{x₂} − F)`.
    pub fn d2(
        &self,
        f: &EmpiricalDistribution,
        x1: &ObservationMark,
        x2: &ObservationMark,
    ) -> Result<f64> {
        Ok(self.prepare(f)?.d2(x1, x2))
    }
}

/// Signed measure `base·F + Σ c_i δ_{x_i}` used as a perturbation direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub base: f64,
    pub atoms: Vec<(ObservationMark, f64)>,
}

impl Direction {
    /// `δ_x − F`.
    pub fn toward(x: ObservationMark) -> Self {
        Direction {
            base: -1.0,
            atoms: vec![(x, 1.0)],
        }
    }

    /// `Σ_i c_i (δ_{x_i} − F)`.
    pub fn combination(terms: impl IntoIterator<Item = (ObservationMark, f64)>) -> Self {
        let atoms: Vec<_> = terms.into_iter().collect();
        let base = -atoms.iter().map(|(_, c)| c).sum::<f64>();
        Direction { base, atoms }
    }

    fn event_mass_at(&self, s: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|(m, _)| m.is_event && m.time == s)
            .map(|(_, c)| c)
            .sum()
    }

    fn risk_mass_at(&self, s: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|(m, _)| m.time >= s)
            .map(|(_, c)| c)
            .sum()
    }

    fn survivor_mass(&self, t0: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|(m, _)| m.time > t0)
            .map(|(_, c)| c)
            .sum()
    }
}

/// Base quantities of the product-limit formula at the distinct event times
/// inside the horizon.
#[derive(Debug, Clone)]
struct EventGrid {
    times: Vec<f64>,
    events: Vec<f64>,
    at_risk: Vec<f64>,
}

/// `Y(s) = Σ w 1{time ≥ s}` for arbitrary `s`.
#[derive(Debug, Clone)]
struct RiskLookup {
    sorted_times: Vec<f64>,
    suffix: Vec<f64>,
}

impl RiskLookup {
    fn new(marks: &[ObservationMark], weights: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..marks.len()).collect();
        order.sort_by(|&a, &b| marks[a].time.total_cmp(&marks[b].time));
        let sorted_times: Vec<f64> = order.iter().map(|&i| marks[i].time).collect();
        let mut suffix = vec![0.0; order.len() + 1];
        for (pos, &i) in order.iter().enumerate().rev() {
            suffix[pos] = suffix[pos + 1] + weights[i];
        }
        RiskLookup {
            sorted_times,
            suffix,
        }
    }

    fn at(&self, s: f64) -> f64 {
        let idx = self.sorted_times.partition_point(|&t| t < s);
        self.suffix[idx]
    }
}

/// A functional bound to a base distribution `F`, ready for repeated value
/// and derivative queries.
#[derive(Debug, Clone)]
pub struct PreparedFunctional {
    functional: Functional,
    grid: EventGrid,
    risk: RiskLookup,
    value: f64,
}

impl PreparedFunctional {
    fn new(functional: Functional, marks: &[ObservationMark], weights: &[f64]) -> Result<Self> {
        functional.validate()?;
        let t0 = functional.t0();
        let risk = RiskLookup::new(marks, weights);
        match functional {
            Functional::KmSurvival { boundary, .. } => {
                let mass_at_t0 = risk.at(t0);
                if !(mass_at_t0 > 0.0) {
                    return Err(Error::EstimandUndefined(format!(
                        "no mass at risk at t0 = {t0}"
                    )));
                }
                let grid = event_grid(marks, weights, t0, boundary, &risk);
                if grid.at_risk.iter().any(|&y| !(y > 0.0)) {
                    return Err(Error::EstimandUndefined(format!(
                        "nonpositive risk set before t0 = {t0}"
                    )));
                }
                let value = grid
                    .events
                    .iter()
                    .zip(&grid.at_risk)
                    .map(|(d, y)| 1.0 - d / y)
                    .product();
                Ok(PreparedFunctional {
                    functional,
                    grid,
                    risk,
                    value,
                })
            }
            Functional::MeanIndicator { .. } => {
                let value = marks
                    .iter()
                    .zip(weights)
                    .filter(|(m, _)| m.time > t0)
                    .map(|(_, w)| w)
                    .sum();
                Ok(PreparedFunctional {
                    functional,
                    grid: EventGrid {
                        times: Vec::new(),
                        events: Vec::new(),
                        at_risk: Vec::new(),
                    },
                    risk,
                    value,
                })
            }
        }
    }

    pub fn functional(&self) -> Functional {
        self.functional
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn d1(&self, x: &ObservationMark) -> f64 {
        self.directional(&Direction::toward(*x), None).e1
    }

    pub fn d2(&self, x1: &ObservationMark, x2: &ObservationMark) -> f64 {
        self.directional(&Direction::toward(*x1), Some(&Direction::toward(*x2)))
            .e12
    }

    /// `φ(F + ε·first + η·second)` as a jet in `(ε, η)` at `ε = η = 0`.
    /// The `e1` component is the first derivative along `first`, `e12` the
    /// mixed second derivative.
    pub fn directional(&self, first: &Direction, second: Option<&Direction>) -> HyperDual {
        let empty = Direction {
            base: 0.0,
            atoms: Vec::new(),
        };
        let second = second.unwrap_or(&empty);
        match self.functional {
            Functional::MeanIndicator { t0 } => {
                let scale = HyperDual::linear(1.0, first.base, second.base);
                scale * self.value
                    + HyperDual::linear(0.0, first.survivor_mass(t0), second.survivor_mass(t0))
            }
            Functional::KmSurvival { t0, boundary } => {
                let scale = HyperDual::linear(1.0, first.base, second.base);
                let mut extra: Vec<f64> = first
                    .atoms
                    .iter()
                    .chain(&second.atoms)
                    .filter(|(m, c)| {
                        m.is_event
                            && *c != 0.0
                            && boundary.admits(m.time, t0)
                            && self.grid.times.binary_search_by(|t| t.total_cmp(&m.time)).is_err()
                    })
                    .map(|(m, _)| m.time)
                    .collect();
                let mut product = HyperDual::ONE;
                let mut factor = |s: f64, d0: f64, y0: f64| {
                    let d = scale * d0
                        + HyperDual::linear(0.0, first.event_mass_at(s), second.event_mass_at(s));
                    let y = scale * y0
                        + HyperDual::linear(0.0, first.risk_mass_at(s), second.risk_mass_at(s));
                    product *= HyperDual::ONE - d / y;
                };
                if extra.is_empty() {
                    for i in 0..self.grid.times.len() {
                        factor(self.grid.times[i], self.grid.events[i], self.grid.at_risk[i]);
                    }
                } else {
                    // Atoms with event times off the base grid contribute
                    // factors whose base value is 1.
                    extra.sort_by(f64::total_cmp);
                    extra.dedup();
                    let mut points: Vec<(f64, f64, f64)> = (0..self.grid.times.len())
                        .map(|i| (self.grid.times[i], self.grid.events[i], self.grid.at_risk[i]))
                        .collect();
                    points.extend(extra.iter().map(|&s| (s, 0.0, self.risk.at(s))));
                    points.sort_by(|a, b| a.0.total_cmp(&b.0));
                    for (s, d0, y0) in points {
                        factor(s, d0, y0);
                    }
                }
                product
            }
        }
    }

    /// Matrix of `φ''_F(δ_{x_i} − F, δ_{x_j} − F)` over all pairs of `marks`,
    /// row-major. Symmetric by construction: only the upper triangle is
    /// evaluated.
    pub fn second_derivative_matrix(&self, marks: &[ObservationMark]) -> Vec<f64> {
        use rayon::prelude::*;
        let n = marks.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i..n).map(|j| self.d2(&marks[i], &marks[j])).collect())
            .collect();
        let mut out = vec![0.0; n * n];
        for (i, row) in rows.into_iter().enumerate() {
            for (offset, v) in row.into_iter().enumerate() {
                let j = i + offset;
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }
}

fn event_grid(
    marks: &[ObservationMark],
    weights: &[f64],
    t0: f64,
    boundary: Boundary,
    risk: &RiskLookup,
) -> EventGrid {
    let mut events: Vec<(f64, f64)> = marks
        .iter()
        .zip(weights)
        .filter(|(m, w)| m.is_event && **w != 0.0 && boundary.admits(m.time, t0))
        .map(|(m, w)| (m.time, *w))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut grid = EventGrid {
        times: Vec::new(),
        events: Vec::new(),
        at_risk: Vec::new(),
    };
    for (t, w) in events {
        if grid.times.last() == Some(&t) {
            *grid.events.last_mut().unwrap() += w;
        } else {
            grid.times.push(t);
            grid.events.push(w);
            grid.at_risk.push(risk.at(t));
        }
    }
    grid
}

pub fn km_value(f: &EmpiricalDistribution, t0: f64) -> Result<f64> {
    Functional::km(t0).value(f)
}

pub fn km_d1(f: &EmpiricalDistribution, x: &ObservationMark, t0: f64) -> Result<f64> {
    Functional::km(t0).d1(f, x)
}

pub fn km_d2(
    f: &EmpiricalDistribution,
    x1: &ObservationMark,
    x2: &ObservationMark,
    t0: f64,
) -> Result<f64> {
    Functional::km(t0).d2(f, x1, x2)
}

pub fn mean_value(f: &EmpiricalDistribution, t0: f64) -> Result<f64> {
    Functional::mean_indicator(t0).value(f)
}

pub fn mean_d1(f: &EmpiricalDistribution, x: &ObservationMark, t0: f64) -> Result<f64> {
    Functional::mean_indicator(t0).d1(f, x)
}

pub fn mean_d2(
    f: &EmpiricalDistribution,
    x1: &ObservationMark,
    x2: &ObservationMark,
    t0: f64,
) -> Result<f64> {
    Functional::mean_indicator(t0).d2(f, x1, x2)
}

/// Classical closed form of the first-order Kaplan–Meier influence function,
///
/// `φ'(δ_x − F) = −Ŝ(t₀) [ 1{x event in horizon} / (Y(t_x) − D(t_x))
///                         − Σ_{s ≤ t_x} D(s) / (Y(s)(Y(s) − D(s))) ]`,
///
/// with the sum over event times in the horizon. Undefined when some risk
/// set is exhausted (`Y = D`).
pub fn km_influence_closed_form(
    f: &EmpiricalDistribution,
    x: &ObservationMark,
    t0: f64,
    boundary: Boundary,
) -> Result<f64> {
    let prepared = Functional::km_with_boundary(t0, boundary).prepare(f)?;
    let grid = &prepared.grid;
    let mut cumulative = 0.0;
    for i in 0..grid.times.len() {
        let (d, y) = (grid.events[i], grid.at_risk[i]);
        if y - d <= 0.0 {
            return Err(Error::EstimandUndefined(
                "risk set exhausted; closed-form influence undefined".into(),
            ));
        }
        if grid.times[i] <= x.time {
            cumulative += d / (y * (y - d));
        }
    }
    let jump = if x.is_event && boundary.admits(x.time, t0) {
        let pos = grid.times.binary_search_by(|t| t.total_cmp(&x.time));
        let (d, y) = match pos {
            Ok(i) => (grid.events[i], grid.at_risk[i]),
            Err(_) => (0.0, prepared.risk.at(x.time)),
        };
        1.0 / (y - d)
    } else {
        0.0
    };
    Ok(-prepared.value() * (jump - cumulative))
}

/// Central finite-difference estimate of the first (one mark) or mixed
/// second (two marks) directional derivative along `δ_x − F`, built only
/// from functional values on reweighted distributions.
pub fn fd_directional(
    functional: &Functional,
    f: &EmpiricalDistribution,
    directions: &[ObservationMark],
    step: f64,
) -> Result<f64> {
    if !(step > 0.0 && step < 0.1) {
        return Err(Error::Oracle(format!("step {step} outside (0, 0.1)")));
    }
    let eval = |perturbations: &[(ObservationMark, f64)]| -> Result<f64> {
        let mixed = f.mixture(perturbations);
        PreparedFunctional::new(*functional, &mixed.marks, &mixed.weights)
            .map(|p| p.value())
            .map_err(|e| Error::Oracle(format!("perturbed distribution invalid: {e}")))
    };
    match directions {
        [x] => {
            let plus = eval(&[(*x, step)])?;
            let minus = eval(&[(*x, -step)])?;
            Ok((plus - minus) / (2.0 * step))
        }
        [x1, x2] => {
            let pp = eval(&[(*x1, step), (*x2, step)])?;
            let pm = eval(&[(*x1, step), (*x2, -step)])?;
            let mp = eval(&[(*x1, -step), (*x2, step)])?;
            let mm = eval(&[(*x1, -step), (*x2, -step)])?;
            Ok((pp - pm - mp + mm) / (4.0 * step * step))
        }
        _ => Err(Error::Oracle(format!(
            "expected one or two directions, got {}",
            directions.len()
        ))),
    }
}
