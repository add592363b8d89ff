//! Survival datasets, CSV ingestion and design-matrix encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::ObservationMark;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Event,
    Censored,
}

impl Status {
    /// CSV encoding: `0` = censored, `1` = event.
    pub fn from_code(code: &str) -> Option<Status> {
        match code.trim() {
            "1" => Some(Status::Event),
            "0" => Some(Status::Censored),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Status::Event => 1,
            Status::Censored => 0,
        }
    }

    pub fn is_event(self) -> bool {
        self == Status::Event
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Number(f64),
    Level(String),
}

impl fmt::Display for CovariateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateValue::Number(x) => write!(f, "{x}"),
            CovariateValue::Level(s) => f.write_str(s),
        }
    }
}

impl CovariateValue {
    /// Factor level label; integral numbers print without a decimal point.
    pub fn level_label(&self) -> String {
        match self {
            CovariateValue::Number(x) if x.fract() == 0.0 && x.abs() < 1e15 => {
                format!("{}", *x as i64)
            }
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub time: f64,
    pub status: Status,
    pub covariates: BTreeMap<String, CovariateValue>,
}

impl SurvivalRecord {
    pub fn mark(&self) -> ObservationMark {
        ObservationMark {
            time: self.time,
            is_event: self.status.is_event(),
        }
    }
}

/// An ordered sample; record `k` is subject `k` throughout the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SurvivalRecord>,
    covariate_names: Vec<String>,
}

impl Dataset {
    /// `covariate_names` fixes column order (e.g. CSV header order); every
    /// record must carry exactly these keys.
    pub fn new(records: Vec<SurvivalRecord>, covariate_names: Vec<String>) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a dataset needs at least 2 records, got {}",
                records.len()
            )));
        }
        let expected: BTreeSet<&str> = covariate_names.iter().map(String::as_str).collect();
        for (k, r) in records.iter().enumerate() {
            if !(r.time.is_finite() && r.time > 0.0) {
                return Err(Error::Validation {
                    row: k + 1,
                    message: format!("time must be positive, got {}", r.time),
                });
            }
            let keys: BTreeSet<&str> = r.covariates.keys().map(String::as_str).collect();
            if keys != expected {
                return Err(Error::Validation {
                    row: k + 1,
                    message: "covariate keys differ from the dataset's columns".into(),
                });
            }
        }
        Ok(Dataset {
            records,
            covariate_names,
        })
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn marks(&self) -> Vec<ObservationMark> {
        self.records.iter().map(SurvivalRecord::mark).collect()
    }

    pub fn censored_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.status == Status::Censored)
            .count()
    }

    /// Record `k` of the result is record `order[k]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n() || order.iter().collect::<BTreeSet<_>>().len() != self.n() {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        let records = order.iter().map(|&i| self.records[i].clone()).collect();
        Dataset::new(records, self.covariate_names.clone())
    }
}

/// Column declaration for CSV ingestion.
///
/// Columns listed in `factors` are read as level strings, columns in
/// `numeric` must parse as reals, and any other column is numeric when
/// every cell parses and a factor otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time_column: String,
    pub status_column: String,
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub factors: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            time_column: "time".into(),
            status_column: "status".into(),
            numeric: Vec::new(),
            factors: Vec::new(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .delimiter(b',')
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let time_idx = find(&schema.time_column)?;
    let status_idx = find(&schema.status_column)?;
    for col in schema.numeric.iter().chain(&schema.factors) {
        find(col)?;
    }
    let covariate_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != time_idx && i != status_idx)
        .collect();

    let mut raw_rows: Vec<csv::StringRecord> = Vec::new();
    for row in rdr.records() {
        raw_rows.push(row?);
    }

    // Auto-detect undeclared columns: numeric iff every cell parses.
    let is_factor: Vec<bool> = covariate_idx
        .iter()
        .map(|&i| {
            let name = &headers[i];
            if schema.factors.contains(name) {
                true
            } else if schema.numeric.contains(name) {
                false
            } else {
                raw_rows
                    .iter()
                    .any(|r| r.get(i).is_some_and(|c| c.parse::<f64>().is_err()))
            }
        })
        .collect();

    let mut records = Vec::with_capacity(raw_rows.len());
    for (k, row) in raw_rows.iter().enumerate() {
        let row_no = k + 1;
        let cell = |i: usize| -> Result<&str> {
            match row.get(i) {
                Some(c) if !c.is_empty() => Ok(c),
                _ => Err(Error::Validation {
                    row: row_no,
                    message: format!("missing value in column `{}`", headers[i]),
                }),
            }
        };
        let time_cell = cell(time_idx)?;
        let time: f64 = time_cell.parse().map_err(|_| Error::Parse {
            row: row_no,
            column: headers[time_idx].clone(),
            message: format!("`{time_cell}` is not a number"),
        })?;
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::Validation {
                row: row_no,
                message: format!("time must be positive, got {time}"),
            });
        }
        let status_cell = cell(status_idx)?;
        let status = Status::from_code(status_cell).ok_or_else(|| Error::Parse {
            row: row_no,
            column: headers[status_idx].clone(),
            message: format!("status must be 0 (censored) or 1 (event), got `{status_cell}`"),
        })?;
        let mut covariates = BTreeMap::new();
        for (&i, &factor) in covariate_idx.iter().zip(&is_factor) {
            let c = cell(i)?;
            let value = if factor {
                CovariateValue::Level(c.to_owned())
            } else {
                CovariateValue::Number(c.parse().map_err(|_| Error::Parse {
                    row: row_no,
                    column: headers[i].clone(),
                    message: format!("`{c}` is not a number"),
                })?)
            };
            covariates.insert(headers[i].clone(), value);
        }
        records.push(SurvivalRecord {
            time,
            status,
            covariates,
        });
    }
    let names = covariate_idx.iter().map(|&i| headers[i].clone()).collect();
    Dataset::new(records, names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Numeric(String),
    /// Reference-cell dummy coding. `levels` optionally fixes the full level
    /// order (reference included); otherwise non-reference levels are sorted
    /// lexicographically.
    Factor {
        column: String,
        reference: String,
        #[serde(default)]
        levels: Option<Vec<String>>,
    },
    /// Elementwise product of the encoded columns of the named terms.
    Interaction(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub intercept: bool,
    pub terms: Vec<Term>,
}

impl DesignSpec {
    pub fn intercept_only() -> Self {
        DesignSpec {
            intercept: true,
            terms: Vec::new(),
        }
    }

    pub fn with_intercept(terms: Vec<Term>) -> Self {
        DesignSpec {
            intercept: true,
            terms,
        }
    }

    /// Intercept plus every covariate of `dataset` in column order. Numeric
    /// columns enter linearly; factor levels keep their order of first
    /// appearance and the first one is the reference.
    pub fn all_covariates(dataset: &Dataset) -> Self {
        let terms = dataset
            .covariate_names()
            .iter()
            .map(|col| {
                let values = dataset.records().iter().map(|r| &r.covariates[col]);
                if values.clone().all(|v| matches!(v, CovariateValue::Number(_))) {
                    return Term::Numeric(col.clone());
                }
                let mut levels: Vec<String> = Vec::new();
                for v in values {
                    let label = v.level_label();
                    if !levels.contains(&label) {
                        levels.push(label);
                    }
                }
                Term::Factor {
                    column: col.clone(),
                    reference: levels[0].clone(),
                    levels: Some(levels),
                }
            })
            .collect();
        DesignSpec::with_intercept(terms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    names: Vec<String>,
    intercept: bool,
}

impl DesignMatrix {
    pub fn new(matrix: DMatrix<f64>, names: Vec<String>, intercept: bool) -> Result<Self> {
        if names.len() != matrix.ncols() {
            return Err(Error::InvalidArgument(format!(
                "{} names for {} columns",
                names.len(),
                matrix.ncols()
            )));
        }
        if intercept && (matrix.ncols() == 0 || matrix.column(0).iter().any(|&v| v != 1.0)) {
            return Err(Error::InvalidArgument(
                "intercept flag set but column 0 is not all ones".into(),
            ));
        }
        Ok(DesignMatrix {
            matrix,
            names,
            intercept,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn q(&self) -> usize {
        self.matrix.ncols()
    }

    /// Column `j` rescaled by `c`; used for equivariance checks.
    pub fn scale_column(&self, j: usize, c: f64) -> Self {
        let mut out = self.clone();
        out.matrix.column_mut(j).scale_mut(c);
        out
    }
}

struct EncodedTerm {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

fn factor_levels(
    dataset: &Dataset,
    column: &str,
    reference: &str,
    declared: Option<&Vec<String>>,
) -> Result<Vec<String>> {
    let observed: BTreeSet<String> = dataset
        .records()
        .iter()
        .map(|r| r.covariates[column].level_label())
        .collect();
    if observed.len() < 2 {
        return Err(Error::DegenerateDesign(format!(
            "factor `{column}` has a single observed level"
        )));
    }
    let all: Vec<String> = match declared {
        Some(levels) => {
            if let Some(unknown) = observed.iter().find(|l| !levels.contains(l)) {
                return Err(Error::Schema(format!(
                    "factor `{column}`: observed level `{unknown}` is not declared"
                )));
            }
            levels.clone()
        }
        None => observed.iter().cloned().collect(),
    };
    if !all.iter().any(|l| l == reference) || !observed.contains(reference) {
        return Err(Error::Schema(format!(
            "factor `{column}`: reference level `{reference}` not observed"
        )));
    }
    Ok(all.into_iter().filter(|l| l != reference).collect())
}

fn encode_term(dataset: &Dataset, term: &Term) -> Result<(String, EncodedTerm)> {
    let require = |col: &str| -> Result<()> {
        if dataset.covariate_names().iter().any(|c| c == col) {
            Ok(())
        } else {
            Err(Error::Schema(format!("unknown column `{col}`")))
        }
    };
    match term {
        Term::Numeric(col) => {
            require(col)?;
            let values = dataset
                .records()
                .iter()
                .enumerate()
                .map(|(k, r)| match &r.covariates[col] {
                    CovariateValue::Number(x) => Ok(*x),
                    CovariateValue::Level(s) => Err(Error::Parse {
                        row: k + 1,
                        column: col.clone(),
                        message: format!("numeric term but found level `{s}`"),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((
                col.clone(),
                EncodedTerm {
                    names: vec![col.clone()],
                    columns: vec![values],
                },
            ))
        }
        Term::Factor {
            column,
            reference,
            levels,
        } => {
            require(column)?;
            let levels = factor_levels(dataset, column, reference, levels.as_ref())?;
            let labels: Vec<String> = dataset
                .records()
                .iter()
                .map(|r| r.covariates[column].level_label())
                .collect();
            let columns = levels
                .iter()
                .map(|l| labels.iter().map(|v| f64::from(u8::from(v == l))).collect())
                .collect();
            Ok((
                column.clone(),
                EncodedTerm {
                    names: levels.iter().map(|l| format!("{column}{l}")).collect(),
                    columns,
                },
            ))
        }
        Term::Interaction(_) => unreachable!("interactions are encoded from their parents"),
    }
}

/// Encode covariates into numeric design rows.
///
/// `q = intercept + #numeric + Σ(levels − 1) + Π(parent widths) per interaction`.
pub fn encode_design(dataset: &Dataset, spec: &DesignSpec) -> Result<DesignMatrix> {
    let n = dataset.n();
    let mut names: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    if spec.intercept {
        names.push("(Intercept)".into());
        columns.push(vec![1.0; n]);
    }
    let mut encoded: BTreeMap<String, EncodedTerm> = BTreeMap::new();
    for term in &spec.terms {
        if matches!(term, Term::Interaction(_)) {
            continue;
        }
        let (key, enc) = encode_term(dataset, term)?;
        if encoded.contains_key(&key) {
            return Err(Error::DuplicateColumn(key));
        }
        encoded.insert(key, enc);
    }
    for term in &spec.terms {
        match term {
            Term::Interaction(parents) => {
                if parents.len() < 2 {
                    return Err(Error::Schema(
                        "an interaction needs at least two parents".into(),
                    ));
                }
                let mut acc_names = vec![String::new()];
                let mut acc_cols = vec![vec![1.0; n]];
                for p in parents {
                    let parent = encoded.get(p).ok_or_else(|| {
                        Error::Schema(format!("interaction parent `{p}` is not a declared term"))
                    })?;
                    let mut next_names = Vec::new();
                    let mut next_cols = Vec::new();
                    for (an, ac) in acc_names.iter().zip(&acc_cols) {
                        for (pn, pc) in parent.names.iter().zip(&parent.columns) {
                            next_names.push(if an.is_empty() {
                                pn.clone()
                            } else {
                                format!("{an}:{pn}")
                            });
                            next_cols.push(ac.iter().zip(pc).map(|(a, b)| a * b).collect());
                        }
                    }
                    acc_names = next_names;
                    acc_cols = next_cols;
                }
                names.extend(acc_names);
                columns.extend(acc_cols);
            }
            other => {
                let key = match other {
                    Term::Numeric(c) => c,
                    Term::Factor { column, .. } => column,
                    Term::Interaction(_) => unreachable!(),
                };
                let enc = &encoded[key];
                names.extend(enc.names.iter().cloned());
                columns.extend(enc.columns.iter().cloned());
            }
        }
    }
    let mut seen = BTreeSet::new();
    for name in &names {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateColumn(name.clone()));
        }
    }
    let q = columns.len();
    let matrix = DMatrix::from_fn(n, q, |i, j| columns[j][i]);
    DesignMatrix::new(matrix, names, spec.intercept)
}
