//! Command-line front end: matrix diagnostics, bound evaluation, Barankin
//! computation, estimator simulation, and the two benchmark experiments.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use smve::bounds::{self, BiasSpec, BoundsError, KSelectorMode};
use smve::estimators::{hard_threshold, ls, ml, omp_estimator, VectorEstimator};
use smve::experiments::{self, ExperimentConfig, ExperimentError};
use smve::mc::{self, McConfig, McError};
use smve::model::{self, io::read_matrix, GaussianLinearModel, ModelError, SparkResult, SparseProblem};
use smve::ssnm_exact;
use smve::ParamVector;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self { message: message.into(), code: EXIT_INPUT }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Self { message: message.into(), code: EXIT_NUMERICAL }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidModel(_) | ModelError::BudgetExceeded { .. } => Self::input(e.to_string()),
            ModelError::InvalidCovariance => Self::input(e.to_string()),
        }
    }
}

impl From<BoundsError> for CliError {
    fn from(e: BoundsError) -> Self {
        match e {
            BoundsError::SingularSubmatrix | BoundsError::Mc(_) => Self::numerical(e.to_string()),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::InvalidConfig(_) => Self::input(e.to_string()),
            other => Self::numerical(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidConfig(_) | ExperimentError::Io(_) => Self::input(e.to_string()),
            ExperimentError::Model(m) => m.into(),
            ExperimentError::Bounds(b) => b.into(),
            ExperimentError::Mc(m) => m.into(),
            ExperimentError::Estimator(e) => Self::numerical(e.to_string()),
            ExperimentError::Ssnm(s) => Self::numerical(s.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "smve", about = "Variance bounds and estimators for sparse linear Gaussian models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print dimensions, rank, coherence, spark, and delta_2 of a matrix file.
    MatrixInfo {
        /// Matrix file (.csv or binary)
        file: PathBuf,
        /// Skip the brute-force spark computation.
        #[arg(long)]
        attest_spark: bool,
    },
    /// Evaluate one scalar lower bound.
    Bounds(BoundsArgs),
    /// Exact Barankin quantities for a diagonal estimator on the SSNM.
    Barankin(BarankinArgs),
    /// Monte Carlo moments of an estimator.
    Simulate(SimulateArgs),
    /// Run a benchmark experiment and write CSV.
    Experiment {
        #[command(subcommand)]
        which: ExperimentCommand,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Matrix file, or `identity:N` for the SSNM.
    #[arg(long)]
    matrix: String,
    /// Noise variance.
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Sparsity degree S.
    #[arg(long)]
    s: usize,
}

impl ModelArgs {
    fn problem(&self, k: Option<usize>) -> Result<SparseProblem, CliError> {
        let h = if let Some(n) = self.matrix.strip_prefix("identity:") {
            let n: usize = n.parse().map_err(|_| CliError::input("bad identity size"))?;
            DMatrix::identity(n, n)
        } else {
            read_matrix(Path::new(&self.matrix)).map_err(|e| CliError::input(e.to_string()))?
        };
        let model = GaussianLinearModel::new(h, self.sigma2)?;
        Ok(SparseProblem::new(model, self.s, k)?)
    }
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Target component index (0-based).
    #[arg(long)]
    k: usize,
    /// Parameter vector, comma-separated.
    #[arg(long, value_delimiter = ',')]
    x0: Vec<f64>,
    /// Bound kind: crb, b2, b3, rip, coherence, or hcrb.
    #[arg(long)]
    kind: String,
    /// Index set (comma-separated, 0-based); defaults to the selector choice.
    #[arg(long, value_delimiter = ',')]
    kset: Option<Vec<usize>>,
    /// Index-set selector: fourier, ssnm, or greedy.
    #[arg(long, default_value = "ssnm")]
    selector: String,
    /// RIP constant delta_S for the rip bound.
    #[arg(long)]
    delta: Option<f64>,
    /// Evaluate the bound for the actual bias of a hard-threshold estimator
    /// with this threshold (SSNM only); default is the unbiased case.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct BarankinArgs {
    /// Parameter vector, comma-separated.
    #[arg(long, value_delimiter = ',')]
    x0: Vec<f64>,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Hard-threshold value; omit for the LS estimator.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Estimator: ls, ml, omp, or ht:T.
    #[arg(long)]
    estimator: String,
    #[arg(long, value_delimiter = ',')]
    x0: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Fourier-type SLGM sweep with the OMP estimator.
    Fourier(ExperimentArgs),
    /// SSNM sweep with hard-threshold and ML estimators.
    Ssnm(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// SNR grid in dB, comma-separated; defaults to the benchmark grid.
    #[arg(long, value_delimiter = ',')]
    snr_db: Option<Vec<f64>>,
    /// Hard-threshold values (SSNM experiment).
    #[arg(long, value_delimiter = ',')]
    threshold: Option<Vec<f64>>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key=value config file; command-line flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_config_file(path: &Path, cfg: &mut ExperimentConfig, out: &mut Option<PathBuf>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("config line {}: expected key=value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |e: String| CliError::input(format!("config line {}: {e}", lineno + 1));
        match key {
            "seed" => cfg.seed = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "trials" => cfg.trials = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "workers" => cfg.workers = Some(value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?),
            "snr_db" => {
                cfg.snr_db = value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(e.to_string()))?
            }
            "thresholds" => {
                cfg.thresholds = value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(e.to_string()))?
            }
            "out" => *out = Some(PathBuf::from(value)),
            other => return Err(CliError::input(format!("config line {}: unknown key `{other}`", lineno + 1))),
        }
    }
    Ok(())
}

fn resolve_experiment(args: &ExperimentArgs, mut cfg: ExperimentConfig) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut out = None;
    if let Some(path) = &args.config {
        parse_config_file(path, &mut cfg, &mut out)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(grid) = &args.snr_db {
        cfg.snr_db = grid.clone();
    }
    if let Some(t) = &args.threshold {
        cfg.thresholds = t.clone();
    }
    if let Some(path) = &args.out {
        out = Some(path.clone());
    }
    let out = out.ok_or_else(|| CliError::input("missing output path (--out or config `out=`)"))?;
    Ok((cfg, out))
}

fn parse_estimator(spec: &str, problem: &SparseProblem) -> Result<VectorEstimator, CliError> {
    if let Some(t) = spec.strip_prefix("ht:") {
        let t: f64 = t.parse().map_err(|_| CliError::input("bad threshold value"))?;
        if !problem.model.is_identity() {
            return Err(CliError::input("hard thresholding requires identity H"));
        }
        return Ok(hard_threshold(t).to_vector_estimator());
    }
    match spec {
        "ls" => Ok(ls(problem)),
        "ml" => ml(problem).map_err(|e| CliError::input(e.to_string())),
        "omp" => Ok(omp_estimator(problem)),
        other => Err(CliError::input(format!("unknown estimator `{other}`"))),
    }
}

fn cmd_matrix_info(file: &Path, attest_spark: bool) -> Result<(), CliError> {
    let h = read_matrix(file).map_err(|e| CliError::input(e.to_string()))?;
    let model = GaussianLinearModel::new(h.clone(), 1.0)?;
    println!("rows: {}", h.nrows());
    println!("cols: {}", h.ncols());
    println!("rank: {}", model.rank());
    match model::coherence(&h) {
        Ok(mu) => println!("coherence: {mu:.6}"),
        Err(e) => println!("coherence: unavailable ({e})"),
    }
    if attest_spark {
        println!("spark: attested (brute force skipped)");
    } else {
        match model::spark(&h, 20) {
            SparkResult::Known(s) => println!("spark: {s}"),
            SparkResult::Unknown => println!("spark: unknown (above enumeration budget)"),
        }
    }
    match model::rip_constant(&h, 2, 1 << 24) {
        Ok(d) => println!("delta_2: {d:.6}"),
        Err(e) => println!("delta_2: unavailable ({e})"),
    }
    Ok(())
}

fn cmd_bounds(args: &BoundsArgs) -> Result<(), CliError> {
    let problem = args.model.problem(Some(args.k))?;
    if args.x0.len() != problem.model.ncols() {
        return Err(CliError::input(format!(
            "x0 has {} entries, expected {}",
            args.x0.len(),
            problem.model.ncols()
        )));
    }
    let x0 = ParamVector::from_slice(&args.x0);
    let bias = match args.threshold {
        Some(t) => {
            if !problem.model.is_identity() {
                return Err(CliError::input("--threshold bias requires identity H"));
            }
            BiasSpec::from_diagonal_estimator(hard_threshold(t), args.k, problem.model.sigma2())
        }
        None => BiasSpec::unbiased(),
    };
    let mode = match args.selector.as_str() {
        "fourier" => KSelectorMode::FourierPaper,
        "ssnm" => KSelectorMode::SsnmPaper,
        "greedy" => KSelectorMode::Greedy,
        other => return Err(CliError::input(format!("unknown selector `{other}`"))),
    };
    let kset = match &args.kset {
        Some(k) => k.clone(),
        None => bounds::k_selector_default(&x0, args.k, problem.s, mode),
    };
    let report = match args.kind.as_str() {
        "crb" => bounds::sparse_crb(&problem, &bias, &x0)?,
        "b2" => bounds::projection_bound_1(&problem, &bias, &x0, &kset)?,
        "b3" => bounds::projection_bound_2(&problem, &bias, &x0, &kset)?,
        "rip" => {
            let delta = args.delta.ok_or_else(|| CliError::input("rip bound needs --delta"))?;
            bounds::rip_bound(&problem, &bias, &x0, &kset, delta)?
        }
        "coherence" => bounds::coherence_bound(&problem, &bias, &x0, &kset)?,
        "hcrb" => bounds::hcrb_ssnm(&problem, &x0)?,
        other => return Err(CliError::input(format!("unknown bound kind `{other}`"))),
    };
    println!("bound: {:.12}", report.value);
    if let Some(idx) = &report.index_set {
        println!("index_set: {idx:?}");
    }
    println!("scale_factor: {:.6e}", report.scale_factor);
    if report.clamped_to_zero {
        println!("clamped_to_zero: true");
    }
    if report.non_informative {
        println!("non_informative: true");
    }
    Ok(())
}

fn cmd_barankin(args: &BarankinArgs) -> Result<(), CliError> {
    let x0 = ParamVector::from_slice(&args.x0);
    if args.k >= x0.len() {
        return Err(CliError::input("k out of range"));
    }
    if x0.sparsity() > args.s {
        return Err(CliError::input("x0 is not S-sparse"));
    }
    let est = match args.threshold {
        Some(t) => hard_threshold(t),
        None => smve::estimators::DiagonalEstimator::Identity,
    };
    let r = ssnm_exact::barankin_from_estimator(&est, &x0, args.k, args.s, args.sigma2)
        .map_err(|e| CliError::numerical(e.to_string()))?;
    println!("estimator: {}", est.label());
    println!("B_c: {:.12}", r.b_c);
    println!("phi: {:.12}", r.phi);
    println!("M: {:.12}", r.value);
    if r.clamped {
        println!("clamped: true");
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let problem = args.model.problem(None)?;
    if args.x0.len() != problem.model.ncols() {
        return Err(CliError::input("x0 length does not match the matrix"));
    }
    let est = parse_estimator(&args.estimator, &problem)?;
    let cfg = McConfig::new(args.seed, args.trials);
    let x0 = DVector::from_column_slice(&args.x0);
    let m = mc::simulate(&est, &problem, &x0, &cfg)?;
    println!("estimator: {}", est.label());
    println!("trials: {} (failures: {})", m.trials, m.failures);
    println!("total_variance: {:.9} (se {:.3e})", m.total_variance(), m.total_variance_se());
    for k in 0..m.mean.len() {
        println!(
            "component {k}: mean {:.9} (se {:.3e}), variance {:.9}",
            m.mean[k], m.se_mean[k], m.variance[k]
        );
    }
    Ok(())
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::MatrixInfo { file, attest_spark } => cmd_matrix_info(&file, attest_spark),
        Command::Bounds(args) => cmd_bounds(&args),
        Command::Barankin(args) => cmd_barankin(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Experiment { which } => match which {
            ExperimentCommand::Fourier(args) => {
                let (cfg, out) = resolve_experiment(&args, ExperimentConfig::fourier_default())?;
                experiments::run_fourier_to_csv(&cfg, &out)?;
                println!("wrote {}", out.display());
                Ok(())
            }
            ExperimentCommand::Ssnm(args) => {
                let (cfg, out) = resolve_experiment(&args, ExperimentConfig::ssnm_default())?;
                experiments::run_ssnm_to_csv(&cfg, &out)?;
                println!("wrote {}", out.display());
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
