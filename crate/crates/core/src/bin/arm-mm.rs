use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use arm_mm::bootstrap::{boot_analyze, survival_band, write_band_csv, BootConfig, CiType, SurvivalTarget};
use arm_mm::direct::{bench, write_bench_csv, DirectConfig};
use arm_mm::inference::{profile_covariance, ProfileConfig};
use arm_mm::simulate::{generate, Scenario};
use arm_mm::solver::{fit_design, StopRule};
use arm_mm::{ingest, CovariateProcess, Dataset, Design, Error, SolverConfig};

#[derive(Parser)]
#[command(name = "arm-mm", version, about = "Additive risks model for case-II interval-censored data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and report profile-likelihood SEs.
    Fit(FitArgs),
    /// Bootstrap SEs and intervals for beta and survival probabilities.
    Boot(BootArgs),
    /// Write a simulated dataset.
    Simulate(SimArgs),
    /// Time MM against direct BFGS.
    Bench(BenchArgs),
    /// Two-group survival curves with bootstrap bands.
    Survcurve(CurveArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum StopArg {
    Survival,
    Parameter,
}

#[derive(Args, Serialize)]
struct SolverArgs {
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Convergence measure: change in the baseline survival curve, or the
    /// raw parameter change.
    #[arg(long, value_enum, default_value_t = StopArg::Survival)]
    stop_rule: StopArg,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        let stop_rule = match self.stop_rule {
            StopArg::Survival => StopRule::Survival,
            StopArg::Parameter => StopRule::Parameter,
        };
        SolverConfig { max_iter: self.max_iter, tol: self.tol, stop_rule, ..Default::default() }
    }
}

#[derive(Args, Serialize)]
struct FitArgs {
    csv: PathBuf,
    /// `c` in the profile step `h = c / sqrt(n)`.
    #[arg(long, default_value_t = 1.5)]
    hn: f64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BootArgs {
    csv: PathBuf,
    #[arg(long, default_value_t = 200)]
    boot_num: usize,
    #[arg(long, default_value_t = 0.95)]
    conf: f64,
    /// Comma-separated subset of norm, basic, perc, bca.
    #[arg(long, default_value = "norm,basic,perc,bca")]
    ci: String,
    #[arg(long, value_delimiter = ',')]
    surv_times: Vec<f64>,
    /// Covariate vector for the survival probabilities.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    surv_cov: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, env = "ARM_MM_THREADS")]
    threads: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Survival-band CSV (first requested CI family).
    #[arg(long)]
    band_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum ScenarioArg {
    /// h = 0.2 + beta X
    #[value(name = "1")]
    TimeIndependent,
    /// h = 0.2 + beta X e^t
    #[value(name = "2")]
    TimeDependent,
    /// h = 0.2 t^{1/2} + b1 X1 + b2 X2
    #[value(name = "3")]
    TwoCovariate,
}

#[derive(Args, Serialize)]
struct SimArgs {
    #[arg(long, value_enum, default_value_t = ScenarioArg::TimeIndependent)]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// One coefficient, or two for scenario 3.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    beta: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,200,500")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CurveArgs {
    csv: PathBuf,
    /// 1-based covariate column whose distinct values define the groups.
    #[arg(long, default_value_t = 1)]
    group_col: usize,
    #[arg(long, default_value_t = 200)]
    boot_num: usize,
    #[arg(long, default_value_t = 0.95)]
    conf: f64,
    #[arg(long, default_value = "perc")]
    ci: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, env = "ARM_MM_THREADS")]
    threads: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    input: Option<&'a Path>,
    config: &'a C,
    seed: Option<u64>,
    version: &'a str,
    timestamp: String,
}

fn write_manifest<C: Serialize>(out: &Path, command: &str, input: Option<&Path>, config: &C, seed: Option<u64>) -> anyhow::Result<()> {
    let manifest = RunManifest {
        command,
        input,
        config,
        seed,
        version: env!("CARGO_PKG_VERSION"),
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    let mut path = out.as_os_str().to_owned();
    path.push(".manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", PathBuf::from(&path).display()))
}

/// Writes to `out`, or stdout when absent.
fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    emit(out, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn load(path: &Path) -> anyhow::Result<Dataset> {
    ingest::read_csv_path(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_ci(s: &str) -> anyhow::Result<Vec<CiType>> {
    s.split(',')
        .map(|t| CiType::parse(t.trim()).ok_or_else(|| anyhow!("unknown CI type {t:?}; expected norm, basic, perc or bca")))
        .collect()
}

#[derive(Serialize)]
struct FitReport {
    beta: Vec<f64>,
    se: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    hn: f64,
    lambda: Vec<f64>,
    grid: Vec<f64>,
    loglik: f64,
    iterations: usize,
}

struct NotConverged {
    trace: PathBuf,
}

impl std::fmt::Display for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "fit did not converge; log-likelihood trace written to {}", self.trace.display())
    }
}
impl std::fmt::Debug for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Display::fmt(self, f)
    }
}
impl std::error::Error for NotConverged {}

fn trace_path(out: Option<&Path>) -> PathBuf {
    match out {
        Some(p) => {
            let mut s = p.as_os_str().to_owned();
            s.push(".trace.json");
            s.into()
        }
        None => PathBuf::from("arm-mm-trace.json"),
    }
}

fn cmd_fit(args: &FitArgs) -> anyhow::Result<()> {
    let data = load(&args.csv)?;
    let design = Design::new(&data, &CovariateProcess::TimeIndependent)?;
    let solver = args.solver.config();
    let fit = fit_design(&design, &solver)?;
    if !fit.converged {
        let trace = trace_path(args.out.as_deref());
        std::fs::write(&trace, serde_json::to_string(&fit.loglik_trace)?)?;
        return Err(NotConverged { trace }.into());
    }
    let cov = profile_covariance(&design, &fit, &ProfileConfig::for_solver(args.hn, &solver))?;
    let report = FitReport {
        beta: fit.params.beta.clone(),
        se: cov.se,
        covariance: cov.cov,
        hn: cov.hn,
        lambda: fit.params.lambda(),
        grid: fit.grid.clone(),
        loglik: fit.loglik,
        iterations: fit.n_iter,
    };
    emit_json(args.out.as_deref(), &report)?;
    if let Some(out) = &args.out {
        write_manifest(out, "fit", Some(&args.csv), args, None)?;
    }
    Ok(())
}

fn cmd_boot(args: &BootArgs) -> anyhow::Result<()> {
    let data = load(&args.csv)?;
    let mut survival = Vec::new();
    if !args.surv_times.is_empty() {
        let covariates = if args.surv_cov.is_empty() { vec![0.0; data.n_covariates()] } else { args.surv_cov.clone() };
        survival.push(SurvivalTarget { label: "target".into(), times: args.surv_times.clone(), covariates });
    } else if !args.surv_cov.is_empty() {
        bail!("--surv-cov needs --surv-times");
    }
    let ci_types = parse_ci(&args.ci)?;
    let config = BootConfig { boot_num: args.boot_num, conf: args.conf, ci_types: ci_types.clone(), survival, seed: args.seed, threads: args.threads };
    let result = boot_analyze(&data, &CovariateProcess::TimeIndependent, &config, &args.solver.config())?;
    emit_json(args.out.as_deref(), &result)?;
    if let Some(path) = &args.band_out {
        write_band_csv(&survival_band(&result, ci_types[0]), File::create(path)?)?;
        write_manifest(path, "boot", Some(&args.csv), args, Some(args.seed))?;
    }
    if let Some(out) = &args.out {
        write_manifest(out, "boot", Some(&args.csv), args, Some(args.seed))?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimArgs) -> anyhow::Result<()> {
    let scenario = match (args.scenario, args.beta.as_slice()) {
        (ScenarioArg::TimeIndependent, &[b]) => Scenario::time_independent(b, args.n, args.seed),
        (ScenarioArg::TimeDependent, &[b]) => Scenario::time_dependent(b, args.n, args.seed),
        (ScenarioArg::TwoCovariate, &[b1, b2]) => Scenario::two_covariate([b1, b2], args.n, args.seed),
        (ScenarioArg::TwoCovariate, b) => bail!("scenario 3 needs two coefficients, got {}", b.len()),
        (_, b) => bail!("scenarios 1 and 2 need one coefficient, got {}", b.len()),
    };
    let (data, _) = generate(&scenario)?;
    emit(args.out.as_deref(), |w| Ok(ingest::write_csv(&data, w)?))?;
    if let Some(out) = &args.out {
        write_manifest(out, "simulate", None, args, Some(args.seed))?;
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> anyhow::Result<()> {
    let records = bench(
        &args.sizes,
        |n| Scenario::time_independent(args.beta, n, args.seed),
        args.reps,
        &SolverConfig::default(),
        &DirectConfig::default(),
    )?;
    emit(args.out.as_deref(), |w| Ok(write_bench_csv(&records, w)?))?;
    if let Some(out) = &args.out {
        write_manifest(out, "bench", None, args, Some(args.seed))?;
    }
    Ok(())
}

fn cmd_survcurve(args: &CurveArgs) -> anyhow::Result<()> {
    let data = load(&args.csv)?;
    let p = data.n_covariates();
    if args.group_col == 0 || args.group_col > p {
        bail!("--group-col {} outside 1..={p}", args.group_col);
    }
    let col = args.group_col - 1;
    let n = data.len() as f64;
    let means: Vec<f64> = (0..p).map(|j| data.observations().iter().map(|o| o.covariates[j]).sum::<f64>() / n).collect();
    let mut levels: Vec<f64> = data.observations().iter().map(|o| o.covariates[col]).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() > 20 {
        bail!("covariate {} has {} distinct values; expected a grouping column", args.group_col, levels.len());
    }
    let mut times: Vec<f64> = data.observations().iter().flat_map(|o| [o.lower(), o.upper()]).flatten().collect();
    times.push(0.0);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let survival = levels
        .iter()
        .map(|&v| {
            let mut covariates = means.clone();
            covariates[col] = v;
            SurvivalTarget { label: format!("{v}"), times: times.clone(), covariates }
        })
        .collect();
    let ci_types = parse_ci(&args.ci)?;
    let config = BootConfig { boot_num: args.boot_num, conf: args.conf, ci_types: ci_types.clone(), survival, seed: args.seed, threads: args.threads };
    let result = boot_analyze(&data, &CovariateProcess::TimeIndependent, &config, &args.solver.config())?;
    let rows = survival_band(&result, ci_types[0]);
    emit(args.out.as_deref(), |w| Ok(write_band_csv(&rows, w)?))?;
    if let Some(out) = &args.out {
        write_manifest(out, "survcurve", Some(&args.csv), args, Some(args.seed))?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NotConverged>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Ingest { .. } | Error::EmptyDataset | Error::NoFiniteEndpoint | Error::Csv(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Boot(a) => cmd_boot(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Survcurve(a) => cmd_survcurve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
