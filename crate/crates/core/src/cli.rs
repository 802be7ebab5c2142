//! The `qlasso` command line.
//!
//! Every subcommand writes its main result as JSON (to `--out` or standard
//! output). Failures are reported as a JSON object on standard error with
//! exit status 1 for invalid input and 2 for numerical failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::calibration::{bound_report, default_t, BoundKind, BoundReport, PreconditionInputs, TheoryConstants};
use crate::design::{
    compatibility_constant_with, gram_sup_distance, irrepresentable_theta, restricted_eigenvalue, weighted_gram,
    CompatibilityOptions, DesignMatrix, IndexSet, WeightedGram,
};
use crate::error::{Error, Result};
use crate::family::{make_family, FamilySpec};
use crate::io::{read_design, read_to_string, read_vector, to_json, write_json_lines, write_output, Table};
use crate::simulation::{run_scenario, verify_theorems, ScenarioConfig};
use crate::solver::{fit, PenalizedProblem, SolverConfig};

#[derive(Debug, Parser)]
#[command(name = "qlasso", version, about = "l1-penalized quasi-likelihood and robust estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an l1-penalized model and certify it by its KKT conditions.
    Fit(FitArgs),
    /// Compatibility constant, restricted eigenvalue, effective sparsity,
    /// irrepresentable constant and Gram distance of a design.
    Diagnose(DiagnoseArgs),
    /// Tuning levels, preconditions and oracle bounds.
    Calibrate(CalibrateArgs),
    /// Run a Monte-Carlo scenario.
    Simulate(SimulateArgs),
    /// The three-column worked example for the compatibility constant.
    #[command(name = "example-sec4")]
    ExampleSec4(ExampleArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Design CSV with a header row.
    #[arg(long)]
    pub design: PathBuf,
    /// Response CSV with a single column and a header row.
    #[arg(long)]
    pub response: PathBuf,
    /// Family, e.g. `gaussian`, `logistic`, `probit`, `lad`, `quantile:0.25`, `huber:1.345`.
    #[arg(long, default_value = "gaussian")]
    pub family: String,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: f64,
    /// Solver settings (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output path; a `.csv` path receives the coefficients only.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub design: PathBuf,
    /// Comma-separated 0-based column indices of S.
    #[arg(long)]
    pub set: String,
    /// Cone constant of the compatibility constant.
    #[arg(long = "L", default_value_t = 3.0)]
    pub l: f64,
    /// With `--beta0`, weight the Gram matrix for this quasi-likelihood family.
    #[arg(long)]
    pub family: Option<String>,
    /// Coefficients (CSV, one column) at which the weighted Gram matrix is evaluated.
    #[arg(long)]
    pub beta0: Option<PathBuf>,
    /// Population Gram matrix (CSV, p x p) for lambda_X; the identity by default.
    #[arg(long)]
    pub population: Option<PathBuf>,
    /// Seed of the projected search used above the enumeration cap.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Calibration inputs (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for `records.jsonl`, `summary.json` and `summary.txt`.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t: Option<f64>,
    #[arg(long, env = "QLASSO_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExampleArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Diagnostics of one design and index set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub set: IndexSet,
    pub l: f64,
    pub phi_sq: f64,
    pub phi_sq_method: String,
    pub phi_sq_exact: bool,
    pub phi_re_sq: f64,
    /// `|S| / phi^2(3, S)`; absent when the compatibility constant vanishes.
    pub gamma_eff: Option<f64>,
    pub theta: Option<f64>,
    pub lambda_x: f64,
    pub notes: Vec<String>,
}

/// Inputs of `calibrate`: either explicit constants or a family whose
/// constants are estimated on `|z| <= K_X + K_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateConfig {
    pub kind: BoundKind,
    pub n: usize,
    pub p: f64,
    #[serde(default)]
    pub t: Option<f64>,
    pub lambda: f64,
    pub gamma_eff: f64,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub lambda_x: Option<f64>,
    #[serde(default)]
    pub constants: Option<TheoryConstants>,
    #[serde(default)]
    pub family: Option<FamilySpec>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub k_x: Option<f64>,
    #[serde(default)]
    pub k_0: Option<f64>,
    #[serde(default)]
    pub c_l: Option<f64>,
    #[serde(default)]
    pub grid_points: Option<usize>,
}

impl CalibrateConfig {
    pub fn constants(&self) -> Result<TheoryConstants> {
        let mut c = match (&self.constants, &self.family) {
            (Some(c), _) => *c,
            (None, Some(spec)) => {
                let family = make_family(spec)?;
                let q = family
                    .as_quasi()
                    .ok_or_else(|| Error::InvalidParameter("estimated constants need a quasi-likelihood family; give [constants] instead".into()))?;
                let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::InvalidParameter(format!("missing `{name}`")));
                TheoryConstants::for_family(
                    q,
                    need(self.sigma, "sigma")?,
                    need(self.kappa, "kappa")?,
                    need(self.k_x, "k_x")?,
                    need(self.k_0, "k_0")?,
                    self.grid_points.unwrap_or(256),
                )?
            }
            (None, None) => return Err(Error::InvalidParameter("calibrate needs [constants] or a family".into())),
        };
        if self.c_l.is_some() {
            c.c_l = self.c_l;
        }
        c.validated()
    }

    pub fn report(&self) -> Result<BoundReport> {
        let inputs = PreconditionInputs {
            n: self.n,
            p: self.p,
            t: self.t.unwrap_or_else(|| default_t(self.n)),
            lambda: self.lambda,
            gamma_eff: self.gamma_eff,
            theta: self.theta,
            lambda_x: self.lambda_x,
        };
        bound_report(self.kind, &self.constants()?, &inputs)
    }
}

/// Values of the worked example, for both matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleReport {
    pub first: ExampleCase,
    pub second: ExampleCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleCase {
    pub rows: Vec<Vec<f64>>,
    pub phi_sq: f64,
    pub gamma_eff: Option<f64>,
    pub theta: f64,
}

fn parse_set(text: &str, p: usize) -> Result<IndexSet> {
    let indices = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| Error::InvalidParameter(format!("`{s}` is not a column index"))))
        .collect::<Result<Vec<_>>>()?;
    IndexSet::new(indices, p)
}

fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn run_fit(args: &FitArgs) -> Result<()> {
    let design = read_design(&args.design)?;
    let response = read_vector(&args.response)?;
    let spec: FamilySpec = args.family.parse()?;
    let family = make_family(&spec)?;
    let config: SolverConfig = match &args.config {
        Some(path) => parse_toml(path)?,
        None => SolverConfig::default(),
    };
    let problem = PenalizedProblem::new(&design, &response, &family, args.lambda)?;
    let result = fit(&problem, &config)?;
    let csv_out = args.out.as_deref().is_some_and(|p| p.extension().is_some_and(|e| e == "csv"));
    let text = if csv_out { Table::from_column("beta", &result.beta).to_csv()? } else { to_json(&result)? + "\n" };
    write_output(args.out.as_deref(), &text)
}

pub fn diagnose(design: &DesignMatrix, set: &IndexSet, l: f64, weighted: Option<WeightedGram>, population: Option<DMatrix<f64>>, seed: Option<u64>) -> Result<Diagnostics> {
    let mut options = CompatibilityOptions::default();
    if let Some(s) = seed {
        options.seed = s;
    }
    let compat = compatibility_constant_with(design, set, l, &options)?;
    let phi3 = if l == 3.0 { compat.clone() } else { compatibility_constant_with(design, set, 3.0, &options)? };
    let max_diag = design.column_norms().iter().fold(0.0_f64, |m, c| m.max(c * c));
    let mut notes = Vec::new();
    let gamma_eff = if phi3.phi_sq > 1e-12 * set.len().max(1) as f64 * max_diag {
        Some(set.len() as f64 / phi3.phi_sq)
    } else {
        notes.push(format!("compatibility fails: phi^2(3, S) = {:e}", phi3.phi_sq));
        None
    };
    if compat.fell_back {
        notes.push("phi^2 from projected search (|S| above the enumeration cap)".into());
    }
    let phi_re_sq = restricted_eigenvalue(design, set, l)?;
    let gram = match weighted {
        Some(w) => w,
        None => WeightedGram::from_matrix(design.gram())?,
    };
    let theta = match irrepresentable_theta(&gram, set) {
        Ok(r) => Some(r.theta),
        Err(e @ Error::SingularGram { .. }) => {
            notes.push(e.to_string());
            None
        }
        Err(e) => return Err(e),
    };
    let p = design.p();
    let population = population.unwrap_or_else(|| DMatrix::identity(p, p));
    let lambda_x = gram_sup_distance(&gram.sigma, &population)?;
    Ok(Diagnostics {
        set: set.clone(),
        l,
        phi_sq: compat.phi_sq,
        phi_sq_method: serde_json::to_value(compat.method).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
        phi_sq_exact: !compat.fell_back && compat.method == crate::design::CompatibilityMethod::ExactQpEnumeration,
        phi_re_sq,
        gamma_eff,
        theta,
        lambda_x,
        notes,
    })
}

pub fn run_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let design = read_design(&args.design)?;
    let set = parse_set(&args.set, design.p())?;
    let weighted = match (&args.family, &args.beta0) {
        (Some(f), Some(b)) => {
            let family = make_family(&f.parse()?)?;
            let q = family.as_quasi().ok_or_else(|| Error::InvalidParameter("weighted Gram needs a quasi-likelihood family".into()))?;
            Some(weighted_gram(&design, &read_vector(b)?, q)?)
        }
        (None, None) => None,
        _ => return Err(Error::InvalidParameter("--family and --beta0 go together".into())),
    };
    let population = match &args.population {
        Some(path) => Some(Table::read(path)?.matrix()),
        None => None,
    };
    let d = diagnose(&design, &set, args.l, weighted, population, args.seed)?;
    write_output(args.out.as_deref(), &(to_json(&d)? + "\n"))
}

pub fn run_calibrate(args: &CalibrateArgs) -> Result<()> {
    let mut config: CalibrateConfig = parse_toml(&args.config)?;
    if let Some(l) = args.lambda {
        config.lambda = l;
    }
    if let Some(t) = args.t {
        config.t = Some(t);
    }
    let report = config.report()?;
    write_output(args.out.as_deref(), &(to_json(&report)? + "\n"))?;
    let table = report.table();
    if args.out.is_some() {
        print!("{table}");
    } else {
        eprint!("{table}");
    }
    Ok(())
}

pub fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let text = read_to_string(&args.config)?;
    let mut config: ScenarioConfig = toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(l) = args.lambda {
        config.lambda = crate::simulation::LambdaRule::Fixed { value: l };
    }
    if let Some(t) = args.t {
        config.t = Some(t);
    }
    config.validate()?;
    if args.threads == Some(0) {
        return Err(Error::InvalidParameter("--threads must be positive".into()));
    }
    let records = run_scenario(&config, args.threads)?;
    let summary = verify_theorems(&records, &config)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io(format!("{}: {e}", args.out.display())))?;
    let file = std::fs::File::create(args.out.join("records.jsonl"))?;
    write_json_lines(file, &records)?;
    std::fs::write(args.out.join("summary.json"), to_json(&summary)? + "\n")?;
    let table = summary.table();
    std::fs::write(args.out.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// The worked example: `X = sqrt(2) [[a, 0, 1], [b, 1, 0]]` with `S = {2}`,
/// `(a, b) = (5/13, 12/13)` and then swapped.
pub fn example_sec4() -> Result<ExampleReport> {
    let r = 2f64.sqrt();
    let case = |a: f64, b: f64| -> Result<ExampleCase> {
        let rows = vec![vec![r * a, 0.0, r], vec![r * b, r, 0.0]];
        let design = DesignMatrix::from_rows(&rows)?;
        let set = IndexSet::new(vec![2], 3)?;
        let d = diagnose(&design, &set, 3.0, None, None, None)?;
        Ok(ExampleCase { rows, phi_sq: d.phi_sq, gamma_eff: d.gamma_eff, theta: d.theta.unwrap_or(f64::NAN) })
    };
    let report = ExampleReport { first: case(5.0 / 13.0, 12.0 / 13.0)?, second: case(12.0 / 13.0, 5.0 / 13.0)? };
    let checks = [
        ("phi_sq of the first matrix is 2/13", (report.first.phi_sq - 2.0 / 13.0).abs() <= 1e-8),
        ("Gamma_eff of the first matrix is 13/2", report.first.gamma_eff.is_some_and(|g| (g - 6.5).abs() <= 1e-8)),
        ("theta of the first matrix is 5/13", (report.first.theta - 5.0 / 13.0).abs() <= 1e-10),
        ("phi_sq of the second matrix vanishes", report.second.phi_sq <= 1e-6),
        ("Gamma_eff of the second matrix is undefined", report.second.gamma_eff.is_none()),
    ];
    if let Some((what, _)) = checks.iter().find(|(_, ok)| !ok) {
        return Err(Error::Solver(format!("worked example mismatch: {what}")));
    }
    Ok(report)
}

pub fn run_example(args: &ExampleArgs) -> Result<()> {
    let report = example_sec4()?;
    let summary = format!(
        "first matrix:  phi^2(3,S) = {:.12} (2/13 = {:.12}), Gamma_eff = {}, theta = {:.12}\n\
         second matrix: phi^2(3,S) = {:.3e}, Gamma_eff = undefined, theta = {:.12}\n",
        report.first.phi_sq,
        2.0 / 13.0,
        report.first.gamma_eff.map_or("undefined".into(), |g| format!("{g:.12}")),
        report.first.theta,
        report.second.phi_sq,
        report.second.theta,
    );
    match &args.out {
        Some(path) => {
            write_output(Some(path), &(to_json(&report)? + "\n"))?;
            print!("{summary}");
        }
        None => {
            print!("{summary}");
            println!("{}", to_json(&report)?);
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Diagnose(a) => run_diagnose(a),
        Command::Calibrate(a) => run_calibrate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::ExampleSec4(a) => run_example(a),
    }
}

#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

/// Exit status for an error: 1 for invalid input, 2 for numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

pub fn error_json(e: &Error) -> String {
    serde_json::to_string(&ErrorReport { error: e.kind(), message: e.to_string() }).unwrap_or_else(|_| "{}".into())
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = Error::InvalidParameter(e.to_string().trim().to_string());
            eprintln!("{}", error_json(&err));
            return 1;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}
