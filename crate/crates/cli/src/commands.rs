use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pseudoreg::bootstrap::{bootstrap_decision, replicate_set, BootstrapConfig};
use pseudoreg::covariance::{self, CovarianceEstimate};
use pseudoreg::data::{load_csv, CsvSchema, Dataset, DesignMatrix, DesignSpec, Term};
use pseudoreg::functional::Functional;
use pseudoreg::gee::{self, FitResult, MeanModel};
use pseudoreg::inference::{run_test, wald_statistic, Hypothesis, TestResult};
use pseudoreg::pseudo::{jackknife_pseudo, PseudoValues};
use pseudoreg::simulation::{self, ScenarioFile, SimulationReport};
use pseudoreg::veteran::{self, VeteranAnalysis, VETERAN_T0};
use serde::Serialize;

use crate::args::{DataArgs, DemoArgs, FitArgs, ModelArgs, PseudoArgs, SimulateArgs, TestArgs};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Format {
    Table,
    Json,
    Csv,
}

/// What a subcommand produced.
pub struct Output {
    pub body: String,
    pub inputs: Vec<PathBuf>,
    pub seed: Option<u64>,
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(pseudoreg::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn csv_string(header: &[String], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Core(pseudoreg::Error::from(e));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

struct Loaded {
    dataset: Dataset,
    functional: Functional,
}

fn load(args: &DataArgs) -> Result<Loaded, CliError> {
    if !(args.t0.is_finite() && args.t0 > 0.0) {
        return Err(CliError::Usage(format!("--t0 must be positive, got {}", args.t0)));
    }
    let schema = CsvSchema {
        time_column: args.time_column.clone(),
        status_column: args.status_column.clone(),
        numeric: Vec::new(),
        factors: args.factors.clone(),
    };
    let dataset = load_csv(&args.data, &schema)?;
    let functional = Functional::km_with_boundary(args.t0, args.boundary.into());
    Ok(Loaded {
        dataset,
        functional,
    })
}

fn design_for(args: &DataArgs, dataset: &Dataset) -> Result<DesignMatrix, CliError> {
    let mut spec = match &args.design {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(pseudoreg::Error::from)?;
            serde_json::from_str::<DesignSpec>(&text).map_err(pseudoreg::Error::from)?
        }
        None => DesignSpec::all_covariates(dataset),
    };
    for (col, level) in &args.references {
        let term = spec.terms.iter_mut().find_map(|t| match t {
            Term::Factor {
                column, reference, ..
            } if column == col => Some(reference),
            _ => None,
        });
        match term {
            Some(reference) => *reference = level.clone(),
            None => return Err(CliError::Usage(format!("--reference: `{col}` is not a factor term"))),
        }
    }
    Ok(pseudoreg::data::encode_design(dataset, &spec)?)
}

fn inputs_of(args: &DataArgs) -> Vec<PathBuf> {
    let mut v = vec![args.data.clone()];
    v.extend(args.design.clone());
    v
}

#[derive(Serialize)]
struct PseudoRow {
    row: usize,
    time: f64,
    status: u8,
    pseudo: f64,
}

#[derive(Serialize)]
struct PseudoReport {
    estimand: &'static str,
    t0: f64,
    n: usize,
    estimate: f64,
    rows: Vec<PseudoRow>,
}

pub fn pseudo(args: &PseudoArgs, format: Format) -> Result<Output, CliError> {
    let Loaded {
        dataset,
        functional,
    } = load(&args.data)?;
    let pv = jackknife_pseudo(&dataset, &functional)?;
    let rows: Vec<PseudoRow> = dataset
        .records()
        .iter()
        .zip(pv.values())
        .enumerate()
        .map(|(k, (r, &p))| PseudoRow {
            row: k + 1,
            time: r.time,
            status: r.status.code(),
            pseudo: p,
        })
        .collect();
    let report = PseudoReport {
        estimand: functional.name(),
        t0: functional.t0(),
        n: dataset.n(),
        estimate: pv.full_estimate(),
        rows,
    };
    let body = match format {
        Format::Json => json(&report)?,
        Format::Csv => csv_string(
            &["row", "time", "status", "pseudo"].map(String::from),
            &report
                .rows
                .iter()
                .map(|r| vec![r.row.to_string(), r.time.to_string(), r.status.to_string(), r.pseudo.to_string()])
                .collect::<Vec<_>>(),
        )?,
        Format::Table => {
            let mut s = String::new();
            writeln!(s, "{} at t0 = {}: {:.6} (n = {})", report.estimand, report.t0, report.estimate, report.n).unwrap();
            writeln!(s, "{:>6} {:>12} {:>6} {:>12}", "row", "time", "status", "pseudo").unwrap();
            for r in &report.rows {
                writeln!(s, "{:>6} {:>12} {:>6} {:>12.6}", r.row, r.time, r.status, r.pseudo).unwrap();
            }
            s
        }
    };
    Ok(Output {
        body,
        inputs: inputs_of(&args.data),
        seed: None,
    })
}

struct Fitted {
    dataset: Dataset,
    design: DesignMatrix,
    fit: FitResult,
}

fn fit_model(data: &DataArgs, model: &ModelArgs) -> Result<Fitted, CliError> {
    let Loaded {
        dataset,
        functional,
    } = load(data)?;
    let design = design_for(data, &dataset)?;
    let pv: PseudoValues = jackknife_pseudo(&dataset, &functional)?;
    let model = MeanModel::new(model.link.into(), model.a_kind.into());
    let fit = gee::solve(&model, &design, &pv, None, None)?;
    Ok(Fitted {
        dataset,
        design,
        fit,
    })
}

fn ordered_map<S: serde::Serializer>(pairs: &[(String, f64)], s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(pairs.iter().map(|(k, v)| (k, v)))
}

#[derive(Serialize)]
struct Coefficient {
    term: String,
    estimate: f64,
    /// Standard errors keyed by covariance estimator.
    #[serde(serialize_with = "ordered_map")]
    se: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct FitReport {
    n: usize,
    censored: usize,
    estimand: &'static str,
    t0: f64,
    link: &'static str,
    a: &'static str,
    /// Estimate of the survival probability at t0 without covariates.
    estimate: f64,
    iterations: usize,
    residual: f64,
    coefficients: Vec<Coefficient>,
}

fn fit_report(f: &Fitted, covs: &[CovarianceEstimate]) -> FitReport {
    let n = f.fit.n();
    let ses: Vec<Vec<f64>> = covs.iter().map(|c| c.standard_errors(n)).collect();
    let coefficients = f
        .design
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| Coefficient {
            term: name.clone(),
            estimate: f.fit.beta_hat[j],
            se: covs
                .iter()
                .zip(&ses)
                .map(|(c, s)| (c.kind.name().to_owned(), s[j]))
                .collect(),
        })
        .collect();
    FitReport {
        n,
        censored: f.dataset.censored_count(),
        estimand: f.fit.pseudo.functional().name(),
        t0: f.fit.pseudo.t0(),
        link: f.fit.model.link.name(),
        a: f.fit.model.a_kind.name(),
        estimate: f.fit.pseudo.full_estimate(),
        iterations: f.fit.iterations,
        residual: f.fit.residual,
        coefficients,
    }
}

fn fit_table(r: &FitReport, verbose: bool) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{} at t0 = {}, n = {} ({} censored), link = {}, a = {}",
        r.estimand, r.t0, r.n, r.censored, r.link, r.a
    )
    .unwrap();
    if verbose {
        writeln!(s, "marginal estimate {:.6}", r.estimate).unwrap();
        writeln!(s, "newton iterations {}, residual {:.3e}", r.iterations, r.residual).unwrap();
    }
    let width = r.coefficients.iter().map(|c| c.term.len()).max().unwrap_or(4).max(4);
    write!(s, "{:<width$} {:>12}", "term", "estimate").unwrap();
    if let Some(c) = r.coefficients.first() {
        for (k, _) in &c.se {
            write!(s, " {:>10}", format!("se({k})")).unwrap();
        }
    }
    s.push('\n');
    for c in &r.coefficients {
        write!(s, "{:<width$} {:>12.6}", c.term, c.estimate).unwrap();
        for (_, v) in &c.se {
            write!(s, " {v:>10.6}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn fit(args: &FitArgs, format: Format, verbose: bool) -> Result<Output, CliError> {
    let f = fit_model(&args.data, &args.model)?;
    let covs = args
        .cov
        .kinds()
        .into_iter()
        .map(|k| covariance::estimate(k, &f.fit, &f.design, &f.dataset))
        .collect::<Result<Vec<_>, _>>()?;
    let report = fit_report(&f, &covs);
    let body = match format {
        Format::Json => json(&report)?,
        Format::Csv => {
            let mut header = vec!["term".to_owned(), "estimate".to_owned()];
            header.extend(covs.iter().map(|c| format!("se_{}", c.kind.name())));
            let rows: Vec<Vec<String>> = report
                .coefficients
                .iter()
                .map(|c| {
                    let mut row = vec![c.term.clone(), c.estimate.to_string()];
                    row.extend(c.se.iter().map(|(_, v)| v.to_string()));
                    row
                })
                .collect();
            csv_string(&header, &rows)?
        }
        Format::Table => fit_table(&report, verbose),
    };
    Ok(Output {
        body,
        inputs: inputs_of(&args.data),
        seed: None,
    })
}

#[derive(Serialize)]
struct TestRow {
    covariance: String,
    #[serde(flatten)]
    result: TestResult,
}

fn test_rows_csv(rows: &[TestRow]) -> Result<String, CliError> {
    let header = [
        "hypothesis",
        "covariance",
        "method",
        "statistic",
        "rank",
        "p_value",
        "critical_value",
        "alpha",
        "reject",
    ]
    .map(String::from);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let t = &r.result;
            vec![
                t.label.clone(),
                r.covariance.clone(),
                t.method.to_string(),
                t.statistic.to_string(),
                t.rank_c.to_string(),
                t.p_value.to_string(),
                t.critical_value.to_string(),
                t.alpha.to_string(),
                t.reject.to_string(),
            ]
        })
        .collect();
    csv_string(&header, &body)
}

fn test_rows_table(rows: &[TestRow]) -> String {
    let mut s = String::new();
    let width = rows.iter().map(|r| r.result.label.len()).max().unwrap_or(10).max(10);
    writeln!(
        s,
        "{:<width$} {:>4} {:>10} {:>11} {:>4} {:>10} {:>10} {:>7}",
        "hypothesis", "cov", "method", "statistic", "df", "p-value", "critical", "reject"
    )
    .unwrap();
    for r in rows {
        let t = &r.result;
        writeln!(
            s,
            "{:<width$} {:>4} {:>10} {:>11.4} {:>4} {:>10.4} {:>10.4} {:>7}",
            t.label,
            r.covariance,
            t.method.to_string(),
            t.statistic,
            t.rank_c,
            t.p_value,
            t.critical_value,
            if t.reject { "yes" } else { "no" }
        )
        .unwrap();
    }
    s
}

fn read_hypothesis(path: &Path) -> Result<Hypothesis, CliError> {
    let text = std::fs::read_to_string(path).map_err(pseudoreg::Error::from)?;
    let label = path
        .file_stem()
        .map_or_else(|| "hypothesis".to_owned(), |s| s.to_string_lossy().into_owned());
    Ok(Hypothesis::parse(&text, label)?)
}

pub fn test(args: &TestArgs, format: Format) -> Result<Output, CliError> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let f = fit_model(&args.data, &args.model)?;
    let q = f.design.q();
    let mut hyps = Vec::new();
    for name in &args.preset {
        hyps.push(veteran::preset(name, q)?);
    }
    for path in &args.hypothesis {
        hyps.push(read_hypothesis(path)?);
    }
    let config = args
        .bootstrap
        .map(|b| {
            let c = BootstrapConfig {
                replicates: b,
                alpha: args.alpha,
                retry_limit: args.retry_limit,
                standardization: args.standardize.into(),
                seed: args.seed,
            };
            c.validate().map(|()| c)
        })
        .transpose()?;
    // Replicate statistics depend on the standardization only, so one set
    // serves every covariance.
    let replicates = config
        .as_ref()
        .map(|c| replicate_set(&f.fit, &f.design, &hyps, &[c.standardization], c))
        .transpose()?;
    let mut rows = Vec::new();
    for kind in args.cov.kinds() {
        let cov = covariance::estimate(kind, &f.fit, &f.design, &f.dataset)?;
        for (h, hyp) in hyps.iter().enumerate() {
            let result = match &replicates {
                Some(set) => {
                    let (statistic, rank) = wald_statistic(&f.fit, &cov, hyp)?;
                    bootstrap_decision(statistic, rank, &set.statistics[h][0], args.alpha, hyp.label())?
                }
                None => run_test(&f.fit, &cov, hyp, args.alpha)?,
            };
            rows.push(TestRow {
                covariance: kind.name().to_owned(),
                result,
            });
        }
    }
    let body = match format {
        Format::Json => json(&rows)?,
        Format::Csv => test_rows_csv(&rows)?,
        Format::Table => test_rows_table(&rows),
    };
    let mut inputs = inputs_of(&args.data);
    inputs.extend(args.hypothesis.iter().cloned());
    Ok(Output {
        body,
        inputs,
        seed: args.bootstrap.map(|_| args.seed),
    })
}

pub fn simulate(args: &SimulateArgs, format: Format, verbose: bool) -> Result<Output, CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(pseudoreg::Error::from)?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(pseudoreg::Error::from)?;
    let mut reports: Vec<SimulationReport> = Vec::new();
    for mut config in file.into_scenarios() {
        if let Some(n) = args.n_sim {
            config.n_sim = n;
        }
        if let Some(b) = args.bootstrap {
            config.bootstrap_replicates = b;
        }
        if let Some(s) = args.seed {
            config.seed = s;
        }
        let reps = match args.reps {
            Some((a, b)) if b > config.n_sim => {
                return Err(CliError::Usage(format!(
                    "--reps {a}..{b} exceeds n_sim = {}",
                    config.n_sim
                )))
            }
            Some((a, b)) => a..b,
            None => 0..config.n_sim,
        };
        let started = std::time::Instant::now();
        let report = simulation::run_scenario_reps(&config, reps)?;
        if verbose {
            eprintln!(
                "{}: {} replications in {:.1} s, {} fit failures{}",
                config.name,
                report.reps.len(),
                started.elapsed().as_secs_f64(),
                report.fit_failures,
                if report.flagged() { " (flagged)" } else { "" }
            );
        }
        reports.push(report);
    }
    let rows = simulation::aggregate(&reports);
    let body = match format {
        Format::Json => json(&reports)?,
        Format::Csv => {
            let mut buf = Vec::new();
            simulation::write_csv(&rows, &mut buf)?;
            String::from_utf8(buf).expect("csv output is UTF-8")
        }
        Format::Table => {
            let mut s = String::new();
            writeln!(
                s,
                "{:<40} {:>4} {:>7} {:>10} {:>7} {:>7} {:>6}",
                "scenario", "hyp", "test", "rejections", "rate", "mc se", "valid"
            )
            .unwrap();
            for r in &rows {
                writeln!(
                    s,
                    "{:<40} {:>4} {:>7} {:>10} {:>6.1}% {:>6.2}% {:>6}",
                    r.scenario,
                    r.hypothesis,
                    r.test.name(),
                    r.rejections,
                    100.0 * r.rate,
                    100.0 * r.mc_se,
                    r.valid
                )
                .unwrap();
            }
            s
        }
    };
    Ok(Output {
        body,
        inputs: vec![args.config.clone()],
        seed: args.seed,
    })
}

#[derive(Serialize)]
struct DemoReport {
    t0: f64,
    n: usize,
    censored: usize,
    coefficients: Vec<Coefficient>,
    tests: Vec<TestRow>,
}

fn demo_table(a: &VeteranAnalysis, r: &DemoReport) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "Veteran lung cancer data, survival past day {} (n = {}, {} censored)",
        r.t0, r.n, r.censored
    )
    .unwrap();
    writeln!(s).unwrap();
    let width = r.coefficients.iter().map(|c| c.term.len()).max().unwrap_or(4).max(16);
    write!(s, "{:<width$} {:>12}", "", "Coefficient").unwrap();
    for cov in &a.covariances {
        write!(s, " {:>10}", format!("SE {}", cov.kind.name().to_uppercase())).unwrap();
    }
    s.push('\n');
    for c in &r.coefficients {
        write!(s, "{:<width$} {:>12.3}", c.term, c.estimate).unwrap();
        for (_, v) in &c.se {
            write!(s, " {v:>10.3}").unwrap();
        }
        s.push('\n');
    }
    writeln!(s).unwrap();
    write!(s, "{:<width$} {:>12}", "Wald statistic", "").unwrap();
    for cov in &a.covariances {
        write!(s, " {:>10}", cov.kind.name().to_uppercase()).unwrap();
    }
    s.push('\n');
    for name in veteran::PRESET_NAMES {
        let row: Vec<&TestResult> = r
            .tests
            .iter()
            .filter(|t| t.result.label == name)
            .map(|t| &t.result)
            .collect();
        let df = row.first().map_or(0, |t| t.rank_c);
        write!(s, "{:<width$} {:>12}", name, format!("df = {df}")).unwrap();
        for t in &row {
            write!(s, " {:>10.3}", t.statistic).unwrap();
        }
        s.push('\n');
        write!(s, "{:<width$} {:>12}", "", "p-value").unwrap();
        for t in &row {
            write!(s, " {:>10.4}", t.p_value).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn veteran_demo(args: &DemoArgs, format: Format) -> Result<Output, CliError> {
    let a = veteran::veteran_analysis(args.alpha)?;
    let f = Fitted {
        dataset: a.dataset.clone(),
        design: a.design.clone(),
        fit: a.fit.clone(),
    };
    let base = fit_report(&f, &a.covariances);
    let tests = a
        .tests
        .iter()
        .map(|(k, t)| TestRow {
            covariance: k.name().to_owned(),
            result: t.clone(),
        })
        .collect();
    let report = DemoReport {
        t0: VETERAN_T0,
        n: base.n,
        censored: base.censored,
        coefficients: base.coefficients,
        tests,
    };
    let body = match format {
        Format::Json => json(&report)?,
        Format::Csv => test_rows_csv(&report.tests)?,
        Format::Table => demo_table(&a, &report),
    };
    Ok(Output {
        body,
        inputs: Vec::new(),
        seed: None,
    })
}
