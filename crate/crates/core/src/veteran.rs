//! The bundled veteran lung-cancer trial data and its 90-day survival
//! analysis.

use crate::covariance::{self, CovKind, CovarianceEstimate};
use crate::data::{encode_design, read_csv, CsvSchema, Dataset, DesignMatrix, DesignSpec, Term};
use crate::error::{Error, Result};
use crate::functional::{Boundary, Functional};
use crate::gee::{self, AKind, FitResult, Link, MeanModel};
use crate::inference::{run_test, Hypothesis, TestResult};
use crate::pseudo::jackknife_pseudo;

pub const VETERAN_CSV: &str = include_str!("../data/veteran.csv");

pub const VETERAN_T0: f64 = 90.0;

pub const PRESET_NAMES: [&str; 2] = ["veteran-trt", "veteran-celltype"];

pub fn veteran_schema() -> CsvSchema {
    CsvSchema {
        factors: vec!["trt".into(), "celltype".into()],
        numeric: vec!["age".into()],
        ..CsvSchema::default()
    }
}

pub fn veteran_dataset() -> Result<Dataset> {
    read_csv(VETERAN_CSV.as_bytes(), &veteran_schema())
}

/// Intercept, treatment (standard = reference), cell type (squamous =
/// reference) and age.
pub fn veteran_design_spec() -> DesignSpec {
    DesignSpec::with_intercept(vec![
        Term::Factor {
            column: "trt".into(),
            reference: "1".into(),
            levels: Some(vec!["1".into(), "2".into()]),
        },
        Term::Factor {
            column: "celltype".into(),
            reference: "squamous".into(),
            levels: Some(
                ["squamous", "smallcell", "adeno", "large"]
                    .map(String::from)
                    .to_vec(),
            ),
        },
        Term::Numeric("age".into()),
    ])
}

pub fn veteran_design(dataset: &Dataset) -> Result<DesignMatrix> {
    encode_design(dataset, &veteran_design_spec())
}

/// Survival past 90 days; an event on day 90 counts as not surviving it.
pub fn veteran_functional() -> Functional {
    Functional::km_with_boundary(VETERAN_T0, Boundary::Exclusive)
}

pub fn veteran_model() -> MeanModel {
    MeanModel::new(Link::Logit, AKind::Dmu)
}

/// Named hypotheses for the six-column veteran design: no treatment effect,
/// or no cell-type effect.
pub fn preset(name: &str, q: usize) -> Result<Hypothesis> {
    if q != 6 {
        return Err(Error::Hypothesis(format!(
            "preset `{name}` needs the six-column veteran design, got q = {q}"
        )));
    }
    match name {
        "veteran-trt" => Hypothesis::coefficients_zero(&[1], q, name),
        "veteran-celltype" => Hypothesis::coefficients_zero(&[2, 3, 4], q, name),
        other => Err(Error::Hypothesis(format!(
            "unknown preset `{other}` (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct VeteranAnalysis {
    pub dataset: Dataset,
    pub design: DesignMatrix,
    pub fit: FitResult,
    /// PV, HW and HC3, in that order.
    pub covariances: Vec<CovarianceEstimate>,
    /// Both presets under each covariance, in covariance order.
    pub tests: Vec<(CovKind, TestResult)>,
}

pub fn veteran_analysis(alpha: f64) -> Result<VeteranAnalysis> {
    let dataset = veteran_dataset()?;
    let design = veteran_design(&dataset)?;
    let pseudo = jackknife_pseudo(&dataset, &veteran_functional())?;
    let fit = gee::solve(&veteran_model(), &design, &pseudo, None, None)?;
    let covariances = [CovKind::Pv, CovKind::Hw, CovKind::Hc3]
        .into_iter()
        .map(|k| covariance::estimate(k, &fit, &design, &dataset))
        .collect::<Result<Vec<_>>>()?;
    let mut tests = Vec::new();
    for cov in &covariances {
        for name in PRESET_NAMES {
            let hyp = preset(name, design.q())?;
            tests.push((cov.kind, run_test(&fit, cov, &hyp, alpha)?));
        }
    }
    Ok(VeteranAnalysis {
        dataset,
        design,
        fit,
        covariances,
        tests,
    })
}
