use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pseudoreg::bootstrap::Standardization;
use pseudoreg::covariance::CovKind;
use pseudoreg::functional::Boundary;
use pseudoreg::gee::{AKind, Link};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "pseudoreg",
    version,
    about = "Pseudo-observation regression for right-censored survival data"
)]
pub struct Cli {
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct OutputArgs {
    /// Worker threads for replications and bootstrap resampling.
    #[arg(long, global = true, env = "PSEUDOREG_THREADS")]
    pub threads: Option<usize>,
    /// Emit JSON instead of a table.
    #[arg(long, global = true, conflicts_with = "csv")]
    pub json: bool,
    /// Emit CSV instead of a table.
    #[arg(long, global = true)]
    pub csv: bool,
    /// Write the output here; the run manifest goes to `<out>.manifest.json`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Jackknife pseudo-values of the survival probability at t0.
    Pseudo(PseudoArgs),
    /// Fit the regression model and report standard errors.
    Fit(FitArgs),
    /// Wald-type tests of linear hypotheses, asymptotic or bootstrap.
    Test(TestArgs),
    /// Run Monte-Carlo scenarios from a JSON configuration file.
    Simulate(SimulateArgs),
    /// Analysis of the bundled veteran lung-cancer data at 90 days.
    VeteranDemo(DemoArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Pseudo(_) => "pseudo",
            Command::Fit(_) => "fit",
            Command::Test(_) => "test",
            Command::Simulate(_) => "simulate",
            Command::VeteranDemo(_) => "veteran-demo",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryArg {
    /// Events at t0 count as failures: S(t0).
    Inclusive,
    /// Events at t0 do not count: S(t0-).
    Exclusive,
}

impl From<BoundaryArg> for Boundary {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Inclusive => Boundary::Inclusive,
            BoundaryArg::Exclusive => Boundary::Exclusive,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkArg {
    Identity,
    Logit,
    Cloglog,
}

impl From<LinkArg> for Link {
    fn from(l: LinkArg) -> Self {
        match l {
            LinkArg::Identity => Link::Identity,
            LinkArg::Logit => Link::Logit,
            LinkArg::Cloglog => Link::Cloglog,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AArg {
    /// Gradient of the mean function.
    Dmu,
    /// The design row itself.
    Design,
}

impl From<AArg> for AKind {
    fn from(a: AArg) -> Self {
        match a {
            AArg::Dmu => AKind::Dmu,
            AArg::Design => AKind::Design,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CovArg {
    Hw,
    Hc3,
    Pv,
    All,
}

impl CovArg {
    pub fn kinds(self) -> Vec<CovKind> {
        match self {
            CovArg::Hw => vec![CovKind::Hw],
            CovArg::Hc3 => vec![CovKind::Hc3],
            CovArg::Pv => vec![CovKind::Pv],
            CovArg::All => vec![CovKind::Pv, CovKind::Hw, CovKind::Hc3],
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeArg {
    Hw,
    Hc3,
}

impl From<StandardizeArg> for Standardization {
    fn from(s: StandardizeArg) -> Self {
        match s {
            StandardizeArg::Hw => Standardization::Hw,
            StandardizeArg::Hc3 => Standardization::Hc3,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub t0: f64,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Inclusive)]
    pub boundary: BoundaryArg,
    #[arg(long, default_value = "time")]
    pub time_column: String,
    #[arg(long, default_value = "status")]
    pub status_column: String,
    /// Read this column as a factor even if it is numeric (repeatable).
    #[arg(long = "factor")]
    pub factors: Vec<String>,
    /// Reference level of a factor, as `column=level` (repeatable).
    #[arg(long = "reference", value_parser = parse_assignment)]
    pub references: Vec<(String, String)>,
    /// JSON design specification; defaults to an intercept plus every
    /// covariate column.
    #[arg(long)]
    pub design: Option<PathBuf>,
}

fn parse_assignment(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_owned(), v.to_owned())),
        _ => Err(format!("expected `column=level`, got `{s}`")),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = LinkArg::Logit)]
    pub link: LinkArg,
    /// Weight function of the estimating equation.
    #[arg(long = "a", value_enum, default_value_t = AArg::Dmu)]
    pub a_kind: AArg,
}

#[derive(Debug, Args, Serialize)]
pub struct PseudoArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = CovArg::All)]
    pub cov: CovArg,
}

#[derive(Debug, Args, Serialize)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Covariance used to standardize the statistic.
    #[arg(long, value_enum, default_value_t = CovArg::Pv)]
    pub cov: CovArg,
    /// Hypothesis file: rows of C, then `|` and b (repeatable).
    #[arg(long, required_unless_present = "preset")]
    pub hypothesis: Vec<PathBuf>,
    /// Named hypothesis (veteran-trt, veteran-celltype; repeatable).
    #[arg(long)]
    pub preset: Vec<String>,
    /// Bootstrap replicates; asymptotic χ² test when absent.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, value_enum, default_value_t = StandardizeArg::Hw)]
    pub standardize: StandardizeArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub retry_limit: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// JSON file with one scenario or a list of scenarios.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the number of replications.
    #[arg(long)]
    pub n_sim: Option<usize>,
    /// Override the number of bootstrap replicates.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Override the base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Only run replications `start..end`.
    #[arg(long, value_parser = parse_range)]
    pub reps: Option<(usize, usize)>,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected `start..end`, got `{s}`"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad range start `{a}`"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad range end `{b}`"))?;
    if a >= b {
        return Err(format!("empty range `{s}`"));
    }
    Ok((a, b))
}

#[derive(Debug, Args, Serialize)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}
