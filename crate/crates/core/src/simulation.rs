//! Weibull data generators with a correctly specified survival model at
//! `t0`, the replication runner and rejection-rate aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Open01};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_decision, replicate_set, BootstrapConfig, Standardization};
use crate::covariance::{sigma_hc3, sigma_hw, sigma_pv, CovarianceEstimate};
use crate::data::{CovariateValue, Dataset, DesignMatrix, Status, SurvivalRecord};
use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::gee::{self, AKind, Link, MeanModel};
use crate::inference::{run_test, wald_statistic, Hypothesis};
use crate::pseudo::jackknife_pseudo;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateScheme {
    /// Treatment indicator, four-level cell type, normal age.
    VeteranLike,
    /// Two binary factors, their product and a uniform covariate.
    Interaction,
}

impl CovariateScheme {
    /// Columns of the encoded design, intercept included.
    pub fn column_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            CovariateScheme::VeteranLike => &["(Intercept)", "z1", "celltype2", "celltype3", "celltype4", "age"],
            CovariateScheme::Interaction => &["(Intercept)", "z1", "z2", "z1:z2", "z4"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn q(self) -> usize {
        self.column_names().len()
    }

    fn raw_names(self) -> &'static [&'static str] {
        match self {
            CovariateScheme::VeteranLike => &["z1", "celltype", "age"],
            CovariateScheme::Interaction => &["z1", "z2", "z3", "z4"],
        }
    }

    /// Hypotheses of the corresponding study.
    pub fn default_hypotheses(self) -> Vec<HypothesisSpec> {
        let unit = |q: usize, rows: &[usize]| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|&j| (0..q).map(|i| f64::from(u8::from(i == j))).collect())
                .collect()
        };
        let q = self.q();
        let spec = |label: &str, rows: &[usize]| HypothesisSpec {
            label: label.into(),
            c: unit(q, rows),
            b: None,
        };
        match self {
            CovariateScheme::VeteranLike => vec![spec("H1", &[1]), spec("H2", &[2, 3, 4])],
            CovariateScheme::Interaction => {
                vec![spec("H1", &[1]), spec("H2", &[1, 3]), spec("H3", &[1, 2, 3])]
            }
        }
    }

    /// Encoded design row for one raw covariate row.
    pub fn design_row(self, raw: &[f64]) -> Vec<f64> {
        match self {
            CovariateScheme::VeteranLike => {
                let cell = raw[1];
                vec![
                    1.0,
                    raw[0],
                    f64::from(u8::from(cell == 2.0)),
                    f64::from(u8::from(cell == 3.0)),
                    f64::from(u8::from(cell == 4.0)),
                    raw[2],
                ]
            }
            CovariateScheme::Interaction => vec![1.0, raw[0], raw[1], raw[2], raw[3]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestVariant {
    /// Asymptotic test with the corrected covariance.
    Corr,
    Hw,
    Hc3,
    /// Bootstrap quantile, replicates standardized by Huber–White.
    BHw,
    BHc3,
}

impl TestVariant {
    pub const ALL: [TestVariant; 5] = [
        TestVariant::Corr,
        TestVariant::Hw,
        TestVariant::BHw,
        TestVariant::Hc3,
        TestVariant::BHc3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestVariant::Corr => "corr",
            TestVariant::Hw => "hw",
            TestVariant::Hc3 => "hc3",
            TestVariant::BHw => "b_hw",
            TestVariant::BHc3 => "b_hc3",
        }
    }

    fn standardization(self) -> Option<Standardization> {
        match self {
            TestVariant::BHw => Some(Standardization::Hw),
            TestVariant::BHc3 => Some(Standardization::Hc3),
            _ => None,
        }
    }
}

impl fmt::Display for TestVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TestVariant::ALL
            .into_iter()
            .find(|t| t.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown test variant `{s}`")))
    }
}

/// Linear hypothesis in serializable form; `b` defaults to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    pub label: String,
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Option<Vec<f64>>,
}

impl HypothesisSpec {
    pub fn build(&self, q: usize) -> Result<Hypothesis> {
        let p = self.c.len();
        if p == 0 || self.c.iter().any(|r| r.len() != q) {
            return Err(Error::Hypothesis(format!(
                "hypothesis `{}` must have rows of length {q}",
                self.label
            )));
        }
        let c = DMatrix::from_fn(p, q, |i, j| self.c[i][j]);
        let b = DVector::from_vec(self.b.clone().unwrap_or_else(|| vec![0.0; p]));
        Hypothesis::new(c, b, self.label.clone())
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_retry() -> usize {
    5
}

fn default_tests() -> Vec<TestVariant> {
    TestVariant::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub scheme: CovariateScheme,
    pub n: usize,
    /// Upper end of the uniform censoring distribution; `None` means no
    /// censoring.
    #[serde(default)]
    pub censoring_bound: Option<f64>,
    pub shape: f64,
    pub t0: f64,
    pub beta0: Vec<f64>,
    #[serde(default)]
    pub link: Link,
    #[serde(default)]
    pub a_kind: AKind,
    #[serde(default = "default_tests")]
    pub tests: Vec<TestVariant>,
    /// Empty means the scheme's default hypotheses.
    #[serde(default)]
    pub hypotheses: Vec<HypothesisSpec>,
    pub n_sim: usize,
    pub bootstrap_replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_retry")]
    pub retry_limit: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    /// `β₀ = (2.5, δ₁, δ₂, 0, 0, −0.04)`, shape 0.85, `t0 = 90`.
    pub fn veteran_like(n: usize, censoring_bound: Option<f64>, delta1: f64, delta2: f64) -> Self {
        ScenarioConfig {
            name: format!("veteran_like_n{n}_{}_d{delta1}_{delta2}", bound_label(censoring_bound)),
            scheme: CovariateScheme::VeteranLike,
            n,
            censoring_bound,
            shape: 0.85,
            t0: 90.0,
            beta0: vec![2.5, delta1, delta2, 0.0, 0.0, -0.04],
            link: Link::Logit,
            a_kind: AKind::Dmu,
            tests: default_tests(),
            hypotheses: Vec::new(),
            n_sim: 2000,
            bootstrap_replicates: 500,
            alpha: 0.05,
            retry_limit: default_retry(),
            seed: 1,
        }
    }

    /// `β₀ = (0.3, 0, 0, δ, 0.1)`, shape 2, `t0 = 1`.
    pub fn interaction(n: usize, censoring_bound: Option<f64>, delta: f64) -> Self {
        ScenarioConfig {
            name: format!("interaction_n{n}_{}_d{delta}", bound_label(censoring_bound)),
            scheme: CovariateScheme::Interaction,
            n,
            censoring_bound,
            shape: 2.0,
            t0: 1.0,
            beta0: vec![0.3, 0.0, 0.0, delta, 0.1],
            link: Link::Logit,
            a_kind: AKind::Dmu,
            tests: default_tests(),
            hypotheses: Vec::new(),
            n_sim: 2000,
            bootstrap_replicates: 500,
            alpha: 0.05,
            retry_limit: default_retry(),
            seed: 1,
        }
    }

    /// Effect sizes read off `β₀`: `(δ₁, δ₂)` or `(δ)`.
    pub fn effects(&self) -> Vec<f64> {
        match self.scheme {
            CovariateScheme::VeteranLike => vec![self.beta0[1], self.beta0[2]],
            CovariateScheme::Interaction => vec![self.beta0[3]],
        }
    }

    pub fn model(&self) -> MeanModel {
        MeanModel::new(self.link, self.a_kind)
    }

    pub fn functional(&self) -> Functional {
        Functional::km(self.t0)
    }

    pub fn hypotheses(&self) -> Result<Vec<Hypothesis>> {
        let specs = if self.hypotheses.is_empty() {
            self.scheme.default_hypotheses()
        } else {
            self.hypotheses.clone()
        };
        specs.iter().map(|h| h.build(self.scheme.q())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.scheme.q();
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.beta0.len() != q {
            return bad(format!("β₀ has length {}, scheme needs {q}", self.beta0.len()));
        }
        if self.n < q + 1 {
            return bad(format!("n = {} is below q + 1 = {}", self.n, q + 1));
        }
        if !(self.shape > 0.0 && self.shape.is_finite()) {
            return bad(format!("shape must be positive, got {}", self.shape));
        }
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return bad(format!("t0 must be positive, got {}", self.t0));
        }
        if let Some(b) = self.censoring_bound {
            if !(b > 0.0) {
                return bad(format!("censoring bound must be positive, got {b}"));
            }
        }
        if self.n_sim == 0 {
            return bad("n_sim must be positive".into());
        }
        if self.tests.is_empty() {
            return bad("no tests requested".into());
        }
        if self.tests.iter().any(|t| t.standardization().is_some()) {
            self.bootstrap_config(0).validate()?;
        } else if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} outside (0, 1)", self.alpha));
        }
        self.hypotheses()?;
        Ok(())
    }

    fn bootstrap_config(&self, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.bootstrap_replicates,
            alpha: self.alpha,
            retry_limit: self.retry_limit,
            standardization: Standardization::Hw,
            seed,
        }
    }

    /// Stream of replication `rep`, keyed by base seed, scenario name and
    /// replication index.
    pub fn rep_stream(&self, rep: usize) -> SeedStream {
        SeedStream::new(self.seed).child(fnv1a(self.name.as_bytes())).child(rep as u64)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn bound_label(b: Option<f64>) -> String {
    b.map_or_else(|| "inf".to_string(), |v| format!("{v}"))
}

/// Raw covariates, one row per subject (see [`CovariateScheme`]).
pub fn gen_covariates<R: Rng + ?Sized>(rng: &mut R, scheme: CovariateScheme, n: usize) -> Vec<Vec<f64>> {
    let age = Normal::new(58.0, 10.5).expect("valid normal parameters");
    (0..n)
        .map(|_| match scheme {
            CovariateScheme::VeteranLike => {
                let z1 = f64::from(u8::from(rng.random_bool(0.5)));
                let cell = f64::from(rng.random_range(1u8..=4));
                vec![z1, cell, age.sample(rng)]
            }
            CovariateScheme::Interaction => {
                let z1 = f64::from(u8::from(rng.random_bool(0.5)));
                let z2 = f64::from(u8::from(rng.random_bool(0.5)));
                let z4: f64 = rng.random();
                vec![z1, z2, z1 * z2, z4]
            }
        })
        .collect()
}

/// Weibull scale making `P(T > t0) = mu` for shape `a`.
pub fn weibull_scale(mu: f64, a: f64, t0: f64) -> f64 {
    t0 * (-mu.ln()).powf(-1.0 / a)
}

/// Event time with `P(T > t0 | z) = h(β₀ᵀz)`.
pub fn gen_survival<R: Rng + ?Sized>(
    rng: &mut R,
    z: &[f64],
    beta0: &[f64],
    a: f64,
    t0: f64,
    link: Link,
) -> Result<f64> {
    let x: f64 = z.iter().zip(beta0).map(|(u, b)| u * b).sum();
    let mu = link.eval(x).0;
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Generator(format!(
            "μ(β₀ᵀz) = {mu} outside (0, 1)"
        )));
    }
    let u: f64 = Open01.sample(rng);
    Ok(weibull_scale(mu, a, t0) * (-u.ln()).powf(1.0 / a))
}

/// Uniform `(0, bound)` censoring time, or `∞` without a bound.
pub fn gen_censoring<R: Rng + ?Sized>(rng: &mut R, bound: Option<f64>) -> f64 {
    match bound {
        None => f64::INFINITY,
        Some(b) => {
            let u: f64 = Open01.sample(rng);
            u * b
        }
    }
}

/// `(min(T, C), 1{T ≤ C})`.
pub fn observe(event_time: f64, censoring_time: f64) -> (f64, Status) {
    if event_time <= censoring_time {
        (event_time, Status::Event)
    } else {
        (censoring_time, Status::Censored)
    }
}

/// One simulated dataset and its encoded design.
pub fn generate<R: Rng + ?Sized>(rng: &mut R, config: &ScenarioConfig) -> Result<(Dataset, DesignMatrix)> {
    let raw = gen_covariates(rng, config.scheme, config.n);
    let rows: Vec<Vec<f64>> = raw.iter().map(|r| config.scheme.design_row(r)).collect();
    let names = config.scheme.raw_names();
    let mut records = Vec::with_capacity(config.n);
    for (r, z) in raw.iter().zip(&rows) {
        let t = gen_survival(rng, z, &config.beta0, config.shape, config.t0, config.link)?;
        let c = gen_censoring(rng, config.censoring_bound);
        let (time, status) = observe(t, c);
        let covariates: BTreeMap<String, CovariateValue> = names
            .iter()
            .zip(r)
            .map(|(name, &v)| (name.to_string(), CovariateValue::Number(v)))
            .collect();
        records.push(SurvivalRecord {
            time,
            status,
            covariates,
        });
    }
    let dataset = Dataset::new(records, names.iter().map(|s| s.to_string()).collect())?;
    let q = config.scheme.q();
    let matrix = DMatrix::from_fn(config.n, q, |i, j| rows[i][j]);
    let design = DesignMatrix::new(matrix, config.scheme.column_names(), true)?;
    Ok((dataset, design))
}

/// Decisions of one replication, indexed `[hypothesis][test]`; `None`
/// marks a failed test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub fit_failed: bool,
    pub censored_fraction: f64,
    pub decisions: Vec<Vec<Option<bool>>>,
}

/// Generate, fit and test replication `rep`.
pub fn run_replication(config: &ScenarioConfig, hyps: &[Hypothesis], rep: usize) -> RepOutcome {
    let stream = config.rep_stream(rep);
    let mut data_rng = stream.child(0).rng();
    let failed = |censored_fraction: f64| RepOutcome {
        rep,
        fit_failed: true,
        censored_fraction,
        decisions: vec![vec![None; config.tests.len()]; hyps.len()],
    };
    let Ok((dataset, design)) = generate(&mut data_rng, config) else {
        return failed(f64::NAN);
    };
    let censored_fraction = dataset.censored_count() as f64 / dataset.n() as f64;
    let Ok(pseudo) = jackknife_pseudo(&dataset, &config.functional()) else {
        return failed(censored_fraction);
    };
    let Ok(fit) = gee::solve(&config.model(), &design, &pseudo, None, None) else {
        return failed(censored_fraction);
    };

    let needs = |pred: fn(&TestVariant) -> bool| config.tests.iter().any(pred);
    let pv = needs(|t| matches!(t, TestVariant::Corr | TestVariant::BHw | TestVariant::BHc3))
        .then(|| sigma_pv(&fit, &design, &dataset));
    let hw = needs(|t| *t == TestVariant::Hw).then(|| sigma_hw(&fit, &design));
    let hc3 = needs(|t| *t == TestVariant::Hc3).then(|| sigma_hc3(&fit, &design));

    let standardizations: Vec<Standardization> = config
        .tests
        .iter()
        .filter_map(|t| t.standardization())
        .collect();
    let replicates = if standardizations.is_empty() {
        None
    } else {
        let seed: u64 = stream.child(1).rng().random();
        Some(replicate_set(&fit, &design, hyps, &standardizations, &config.bootstrap_config(seed)))
    };

    let asymptotic = |cov: &Option<Result<CovarianceEstimate>>, h: &Hypothesis| -> Option<bool> {
        let cov = cov.as_ref()?.as_ref().ok()?;
        run_test(&fit, cov, h, config.alpha).ok().map(|r| r.reject)
    };
    let decisions = hyps
        .iter()
        .enumerate()
        .map(|(hi, h)| {
            config
                .tests
                .iter()
                .map(|&t| match t {
                    TestVariant::Corr => asymptotic(&pv, h),
                    TestVariant::Hw => asymptotic(&hw, h),
                    TestVariant::Hc3 => asymptotic(&hc3, h),
                    TestVariant::BHw | TestVariant::BHc3 => {
                        let cov = pv.as_ref()?.as_ref().ok()?;
                        let set = replicates.as_ref()?.as_ref().ok()?;
                        let si = standardizations.iter().position(|&s| Some(s) == t.standardization())?;
                        let (stat, rank) = wald_statistic(&fit, cov, h).ok()?;
                        bootstrap_decision(stat, rank, &set.statistics[hi][si], config.alpha, h.label())
                            .ok()
                            .map(|r| r.reject)
                    }
                })
                .collect()
        })
        .collect();
    RepOutcome {
        rep,
        fit_failed: false,
        censored_fraction,
        decisions,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub hypothesis: String,
    pub test: TestVariant,
    pub rejections: usize,
    /// Replications with a decision.
    pub valid: usize,
    /// Replications whose fit or test failed.
    pub failures: usize,
}

impl CellSummary {
    pub fn rate(&self) -> f64 {
        if self.valid == 0 {
            f64::NAN
        } else {
            self.rejections as f64 / self.valid as f64
        }
    }

    /// `√(r(1−r)/valid)`.
    pub fn mc_se(&self) -> f64 {
        let r = self.rate();
        (r * (1.0 - r) / self.valid as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: ScenarioConfig,
    /// Replication indices covered, in order.
    pub reps: Vec<usize>,
    pub fit_failures: usize,
    pub mean_censored_fraction: f64,
    pub cells: Vec<CellSummary>,
    pub outcomes: Vec<RepOutcome>,
}

impl SimulationReport {
    fn from_outcomes(config: &ScenarioConfig, hyps: &[Hypothesis], outcomes: Vec<RepOutcome>) -> Self {
        let fit_failures = outcomes.iter().filter(|o| o.fit_failed).count();
        let fractions: Vec<f64> = outcomes
            .iter()
            .map(|o| o.censored_fraction)
            .filter(|f| f.is_finite())
            .collect();
        let mean_censored_fraction = fractions.iter().sum::<f64>() / fractions.len().max(1) as f64;
        let mut cells = Vec::new();
        for (hi, h) in hyps.iter().enumerate() {
            for (ti, &test) in config.tests.iter().enumerate() {
                let decisions = outcomes.iter().map(|o| o.decisions[hi][ti]);
                let rejections = decisions.clone().filter(|d| *d == Some(true)).count();
                let valid = decisions.clone().filter(Option::is_some).count();
                cells.push(CellSummary {
                    hypothesis: h.label().to_owned(),
                    test,
                    rejections,
                    valid,
                    failures: outcomes.len() - valid,
                });
            }
        }
        SimulationReport {
            config: config.clone(),
            reps: outcomes.iter().map(|o| o.rep).collect(),
            fit_failures,
            mean_censored_fraction,
            cells,
            outcomes,
        }
    }

    /// More than 2% of the fits failed.
    pub fn flagged(&self) -> bool {
        self.fit_failures * 50 > self.reps.len()
    }

    pub fn cell(&self, hypothesis: &str, test: TestVariant) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.hypothesis == hypothesis && c.test == test)
    }

    /// Union of two disjoint replication ranges of the same scenario.
    pub fn merge(&self, other: &SimulationReport) -> Result<SimulationReport> {
        if self.config != other.config {
            return Err(Error::InvalidArgument("cannot merge reports of different scenarios".into()));
        }
        if self.reps.iter().any(|r| other.reps.contains(r)) {
            return Err(Error::InvalidArgument("replication ranges overlap".into()));
        }
        let mut outcomes: Vec<RepOutcome> = self.outcomes.iter().chain(&other.outcomes).cloned().collect();
        outcomes.sort_by_key(|o| o.rep);
        let hyps = self.config.hypotheses()?;
        Ok(SimulationReport::from_outcomes(&self.config, &hyps, outcomes))
    }
}

/// All `n_sim` replications.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SimulationReport> {
    run_scenario_reps(config, 0..config.n_sim)
}

/// A sub-range of replications; any range reproduces exactly the outcomes
/// of the full run.
pub fn run_scenario_reps(config: &ScenarioConfig, reps: Range<usize>) -> Result<SimulationReport> {
    config.validate()?;
    let hyps = config.hypotheses()?;
    let outcomes: Vec<RepOutcome> = reps
        .into_par_iter()
        .map(|rep| run_replication(config, &hyps, rep))
        .collect();
    Ok(SimulationReport::from_outcomes(config, &hyps, outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub scheme: CovariateScheme,
    pub n: usize,
    /// Censoring bound, `inf` without censoring.
    pub censoring: String,
    pub delta_1: f64,
    pub delta_2: Option<f64>,
    pub hypothesis: String,
    pub test: TestVariant,
    pub rejections: usize,
    pub valid: usize,
    pub rate: f64,
    pub mc_se: f64,
    pub failures: usize,
    pub fit_failures: usize,
    pub flagged: bool,
    pub censored_fraction: f64,
}

/// Long-format table ordered by `(n, censoring, δ)`, infinite censoring
/// bound last.
pub fn aggregate(reports: &[SimulationReport]) -> Vec<AggregateRow> {
    let mut ordered: Vec<&SimulationReport> = reports.iter().collect();
    let key = |r: &SimulationReport| {
        (
            r.config.n,
            r.config.censoring_bound.unwrap_or(f64::INFINITY),
            r.config.effects(),
        )
    };
    ordered.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then_with(|| {
                ka.2.iter()
                    .zip(&kb.2)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    ordered
        .into_iter()
        .flat_map(|r| {
            let effects = r.config.effects();
            r.cells.iter().map(move |c| AggregateRow {
                scenario: r.config.name.clone(),
                scheme: r.config.scheme,
                n: r.config.n,
                censoring: bound_label(r.config.censoring_bound),
                delta_1: effects[0],
                delta_2: effects.get(1).copied(),
                hypothesis: c.hypothesis.clone(),
                test: c.test,
                rejections: c.rejections,
                valid: c.valid,
                rate: c.rate(),
                mc_se: c.mc_se(),
                failures: c.failures,
                fit_failures: r.fit_failures,
                flagged: r.flagged(),
                censored_fraction: r.mean_censored_fraction,
            })
        })
        .collect()
}

pub fn write_csv<W: std::io::Write>(rows: &[AggregateRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// A configuration file holds one scenario or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioFile {
    One(ScenarioConfig),
    Many(Vec<ScenarioConfig>),
}

impl ScenarioFile {
    pub fn into_scenarios(self) -> Vec<ScenarioConfig> {
        match self {
            ScenarioFile::One(c) => vec![c],
            ScenarioFile::Many(v) => v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weibull_scale_reference() {
        // 138.51815 to five decimals.
        assert!((weibull_scale(0.5, 0.85, 90.0) - 138.517).abs() < 2e-3);
    }

    #[test]
    fn interaction_column_is_product() {
        let mut rng = SeedStream::new(3).rng();
        for row in gen_covariates(&mut rng, CovariateScheme::Interaction, 500) {
            assert_eq!(row[2], row[0] * row[1]);
        }
    }

    #[test]
    fn identity_link_outside_unit_interval_is_rejected() {
        let mut rng = SeedStream::new(3).rng();
        let err = gen_survival(&mut rng, &[1.0], &[1.5], 1.0, 1.0, Link::Identity).unwrap_err();
        assert!(matches!(err, Error::Generator(_)));
    }

    #[test]
    fn no_censoring_means_all_events() {
        let mut config = ScenarioConfig::veteran_like(50, None, 0.0, 0.0);
        config.n_sim = 1;
        let mut rng = config.rep_stream(0).child(0).rng();
        let (ds, design) = generate(&mut rng, &config).unwrap();
        assert_eq!(ds.censored_count(), 0);
        assert_eq!(design.q(), 6);
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = ScenarioConfig::interaction(80, Some(3.0), 1.0);
        let text = serde_json::to_string(&config).unwrap();
        let back: ScenarioFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_scenarios(), vec![config]);
    }

    #[test]
    fn split_ranges_merge_to_full_run() {
        let mut config = ScenarioConfig::veteran_like(60, Some(365.0), 0.0, 0.0);
        config.n_sim = 6;
        config.tests = vec![TestVariant::Corr, TestVariant::Hw];
        let full = run_scenario(&config).unwrap();
        let a = run_scenario_reps(&config, 0..2).unwrap();
        let b = run_scenario_reps(&config, 2..6).unwrap();
        assert_eq!(a.merge(&b).unwrap(), full);
    }
}
