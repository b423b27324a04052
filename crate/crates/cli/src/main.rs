//! Command-line surface: scenario ingestion, deterministic evolution,
//! stochastic simulation, equivariance verification, and rate dumps.
//!
//! Exit codes: 0 success, 2 input error, 3 simulation error,
//! 4 verification failure or instability.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use branchdyn::rates::RateConvention;
use branchdyn::verify::{equivariance_report_with, EquivarianceReport};
use branchdyn::{
    built_in_diagonal, built_in_measurement, built_in_rabi, load_model, run_ensemble_full,
    serialize_model, uniform_grid, Error as CoreError, IntegrationParams, Model, RateEvaluator,
};

const EXIT_INPUT: u8 = 2;
const EXIT_SIMULATION: u8 = 3;
const EXIT_VERIFICATION: u8 = 4;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn simulation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_SIMULATION,
            message: message.into(),
        }
    }

    fn verification(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VERIFICATION,
            message: message.into(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "branchdyn",
    about = "Schrödinger evolution plus a stochastic branch-jump process",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the state and write Born weights over a uniform grid
    Evolve(EvolveArgs),
    /// Run an ensemble of stochastic branch trajectories
    Simulate(SimulateArgs),
    /// Integrate the master equation and check Born equivariance
    Verify(VerifyArgs),
    /// Write the current and rate matrices over a uniform grid
    Rates(RatesArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Path to a scenario JSON file
    #[arg(long, conflicts_with = "builtin")]
    scenario: Option<PathBuf>,

    /// Built-in scenario: rabi, measurement, or diagonal
    #[arg(long)]
    builtin: Option<String>,

    /// Rabi angular frequency (built-in rabi)
    #[arg(long, default_value_t = 1.0)]
    omega: f64,

    /// Outcome amplitudes, comma-separated (built-in measurement)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    c: Vec<f64>,

    /// Measurement coupling strength (built-in measurement)
    #[arg(long, default_value_t = 1.0)]
    g: f64,

    /// Write the equivalent scenario JSON to this path
    #[arg(long)]
    dump_scenario: Option<PathBuf>,
}

#[derive(Args)]
struct EvolveArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Number of grid points including both endpoints
    #[arg(long, default_value_t = 201)]
    grid_points: usize,

    /// Output directory
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Number of trajectories
    #[arg(long, default_value_t = 1000)]
    n: usize,

    /// Base RNG seed; trajectory k uses stream k of this seed
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Base time step of the evaluation grid
    #[arg(long, default_value_t = 1e-3)]
    dt_base: f64,

    /// Cap on worker threads (output is identical at any setting)
    #[arg(long)]
    threads: Option<usize>,

    /// Output directory
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Pass threshold on the max |p - w| deviation
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,

    /// Number of report grid points including both endpoints
    #[arg(long, default_value_t = 101)]
    grid_points: usize,

    /// RK4 substeps per unit time
    #[arg(long, default_value_t = 2000.0)]
    steps_per_unit: f64,

    /// Use raw J/w rates instead of max(J,0)/w (expected to fail)
    #[arg(long)]
    no_rectify: bool,

    /// Verify this many random models instead of a scenario
    #[arg(long)]
    fuzz: Option<usize>,

    /// Maximum total dimension of fuzzed models
    #[arg(long, default_value_t = 8)]
    dim: usize,

    /// Seed for the fuzzed model family
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Cap on worker threads
    #[arg(long)]
    threads: Option<usize>,

    /// Output directory
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RatesArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Number of grid points including both endpoints
    #[arg(long, default_value_t = 201)]
    grid_points: usize,

    /// Output directory
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Evolve(args) => cmd_evolve(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Rates(args) => cmd_rates(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// Resolves a model from `--scenario` or `--builtin` flags, returning it
/// with a short identifier for reports.
fn load_scenario(args: &ScenarioArgs) -> CliResult<(Model, String)> {
    let (model, id) = match (&args.scenario, &args.builtin) {
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    CliError::input(format!("file not found: {}", path.display()))
                } else {
                    CliError::input(format!("cannot read {}: {e}", path.display()))
                }
            })?;
            let model = load_model(&text).map_err(|e| CliError::input(e.to_string()))?;
            (model, path.display().to_string())
        }
        (None, Some(name)) => match name.as_str() {
            "rabi" => (
                built_in_rabi(args.omega).map_err(|e| CliError::input(e.to_string()))?,
                format!("builtin:rabi(omega={})", args.omega),
            ),
            "measurement" => {
                let amplitudes: Vec<Complex64> = if args.c.is_empty() {
                    let s = std::f64::consts::FRAC_1_SQRT_2;
                    vec![Complex64::new(s, 0.0), Complex64::new(s, 0.0)]
                } else {
                    args.c.iter().map(|&x| Complex64::new(x, 0.0)).collect()
                };
                (
                    built_in_measurement(&amplitudes, args.g)
                        .map_err(|e| CliError::input(e.to_string()))?,
                    format!("builtin:measurement(n={}, g={})", amplitudes.len(), args.g),
                )
            }
            "diagonal" => (
                built_in_diagonal().map_err(|e| CliError::input(e.to_string()))?,
                "builtin:diagonal".to_string(),
            ),
            other => {
                return Err(CliError::input(format!(
                    "unknown builtin \"{other}\" (expected rabi, measurement, or diagonal)"
                )))
            }
        },
        (None, None) => {
            return Err(CliError::input(
                "provide a scenario with --scenario <path> or --builtin <name>",
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    if let Some(dump) = &args.dump_scenario {
        write_text(dump, &serialize_model(&model))?;
    }
    Ok((model, id))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::input(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    fs::write(path, text)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn out_file(dir: &Path, name: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.join(name))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    let file = fs::File::create(path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish_csv(mut writer: csv::Writer<fs::File>, path: &Path) -> CliResult<()> {
    writer
        .flush()
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(job()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| CliError::input(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Writes `weights.csv`: Born weight of every branch on a uniform grid.
fn cmd_evolve(args: EvolveArgs) -> CliResult<()> {
    let (model, _) = load_scenario(&args.scenario)?;
    if args.grid_points < 2 {
        return Err(CliError::input("--grid-points must be at least 2"));
    }
    let evaluator = RateEvaluator::new(&model).map_err(|e| CliError::input(e.to_string()))?;
    let grid = uniform_grid(model.t_max(), args.grid_points);
    let path = out_file(&args.out_dir, "weights.csv")?;
    let mut writer = csv_writer(&path)?;
    writer
        .write_record(["t", "branch", "weight"])
        .map_err(|e| CliError::input(e.to_string()))?;
    for &t in &grid {
        let decomp = evaluator
            .decomposition_at(t)
            .map_err(|e| CliError::input(e.to_string()))?;
        for (label, w) in model.labels().iter().zip(decomp.summary_weights()) {
            writer
                .write_record(&[t.to_string(), label.clone(), w.to_string()])
                .map_err(|e| CliError::input(e.to_string()))?;
        }
    }
    finish_csv(writer, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Writes `trajectories.jsonl` and `occupation.csv` for an ensemble.
fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let (model, _) = load_scenario(&args.scenario)?;
    if args.n < 1 {
        return Err(CliError::input("--n must be at least 1"));
    }
    let outcome = in_pool(args.threads, || {
        run_ensemble_full(&model, args.n, args.seed, args.dt_base)
    })?;
    let (stats, records) = outcome.map_err(|e| match e {
        CoreError::Validation { .. } | CoreError::Parse(_) => CliError::input(e.to_string()),
        CoreError::RateCapExceeded { .. } => CliError::simulation(format!(
            "rate cap failure: {e}; refine --dt-base and rerun"
        )),
        other => CliError::simulation(other.to_string()),
    })?;

    let jsonl_path = out_file(&args.out_dir, "trajectories.jsonl")?;
    let mut jsonl = fs::File::create(&jsonl_path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", jsonl_path.display())))?;
    for record in &records {
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        writeln!(jsonl, "{line}")
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", jsonl_path.display())))?;
    }

    let csv_path = out_file(&args.out_dir, "occupation.csv")?;
    let mut writer = csv_writer(&csv_path)?;
    writer
        .write_record(["t", "branch", "frequency", "born_weight", "stderr"])
        .map_err(|e| CliError::input(e.to_string()))?;
    for (k, &t) in stats.times.iter().enumerate() {
        for (b, label) in model.labels().iter().enumerate() {
            writer
                .write_record(&[
                    t.to_string(),
                    label.clone(),
                    stats.occupation[k][b].to_string(),
                    stats.born_weights[k][b].to_string(),
                    stats.standard_error[k][b].to_string(),
                ])
                .map_err(|e| CliError::input(e.to_string()))?;
        }
    }
    finish_csv(writer, &csv_path)?;
    println!(
        "wrote {} and {} ({} trajectories, {} grid points)",
        jsonl_path.display(),
        csv_path.display(),
        stats.n_trajectories,
        stats.times.len()
    );
    Ok(())
}

fn verify_one(
    model: &Model,
    model_id: &str,
    args: &VerifyArgs,
) -> Result<EquivarianceReport, CoreError> {
    let grid = uniform_grid(model.t_max(), args.grid_points);
    let params = IntegrationParams {
        steps_per_unit_time: args.steps_per_unit,
        ..IntegrationParams::default()
    };
    let convention = if args.no_rectify {
        RateConvention::Raw
    } else {
        RateConvention::Rectified
    };
    equivariance_report_with(model, &grid, args.tolerance, model_id, &params, convention)
}

fn map_verify_error(e: CoreError) -> CliError {
    match e {
        CoreError::IntegrationUnstable { .. } => CliError::verification(e.to_string()),
        other => CliError::input(other.to_string()),
    }
}

/// Writes `equivariance.json` (and `equivariance.csv` for single runs);
/// exits 0 only if every report passes.
fn cmd_verify(args: VerifyArgs) -> CliResult<()> {
    if args.grid_points < 2 {
        return Err(CliError::input("--grid-points must be at least 2"));
    }
    let json_path = out_file(&args.out_dir, "equivariance.json")?;
    if let Some(count) = args.fuzz {
        if count == 0 {
            return Err(CliError::input("--fuzz must be at least 1"));
        }
        let config = branchdyn::random::RandomModelConfig::default()
            .with_max_total_dim(args.dim.max(2));
        let reports: Result<Vec<EquivarianceReport>, CoreError> = in_pool(args.threads, || {
            use rayon::prelude::*;
            (0..count as u64)
                .into_par_iter()
                .map(|k| {
                    let model = branchdyn::random::random_model(args.seed, k, &config)?;
                    verify_one(&model, &format!("fuzz-{}-{k}", args.seed), &args)
                })
                .collect()
        })?;
        let reports = reports.map_err(map_verify_error)?;
        write_text(
            &json_path,
            &serde_json::to_string_pretty(&reports).expect("report serialization cannot fail"),
        )?;
        let worst = reports
            .iter()
            .map(|r| r.max_abs_deviation)
            .fold(0.0, f64::max);
        let passed = reports.iter().filter(|r| r.pass).count();
        println!(
            "{passed}/{} models pass at tolerance {} (worst deviation {worst:.3e}); wrote {}",
            reports.len(),
            args.tolerance,
            json_path.display()
        );
        if passed != reports.len() {
            return Err(CliError::verification(format!(
                "{} of {} fuzzed models failed equivariance",
                reports.len() - passed,
                reports.len()
            )));
        }
        return Ok(());
    }

    let (model, id) = load_scenario(&args.scenario)?;
    let report = verify_one(&model, &id, &args).map_err(map_verify_error)?;
    write_text(
        &json_path,
        &serde_json::to_string_pretty(&report).expect("report serialization cannot fail"),
    )?;
    let csv_path = out_file(&args.out_dir, "equivariance.csv")?;
    let file = fs::File::create(&csv_path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", csv_path.display())))?;
    report
        .write_csv(model.labels(), file)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", csv_path.display())))?;
    println!(
        "{}: max deviation {:.3e} vs tolerance {:.1e} -> {}; wrote {} and {}",
        id,
        report.max_abs_deviation,
        report.tolerance,
        if report.pass { "pass" } else { "FAIL" },
        json_path.display(),
        csv_path.display()
    );
    if !report.pass {
        return Err(CliError::verification(format!(
            "equivariance deviation {:.3e} exceeds tolerance {:.1e}",
            report.max_abs_deviation, report.tolerance
        )));
    }
    Ok(())
}

/// Writes `rates.csv`: every off-diagonal current and rate entry on a
/// uniform grid.
fn cmd_rates(args: RatesArgs) -> CliResult<()> {
    let (model, _) = load_scenario(&args.scenario)?;
    if args.grid_points < 2 {
        return Err(CliError::input("--grid-points must be at least 2"));
    }
    let evaluator = RateEvaluator::new(&model).map_err(|e| CliError::input(e.to_string()))?;
    let grid = uniform_grid(model.t_max(), args.grid_points);
    let path = out_file(&args.out_dir, "rates.csv")?;
    let mut writer = csv_writer(&path)?;
    writer
        .write_record(["t", "to", "from", "current", "rate"])
        .map_err(|e| CliError::input(e.to_string()))?;
    let labels = model.labels();
    for &t in &grid {
        let pair = evaluator
            .rate_pair_at(t)
            .map_err(|e| CliError::input(e.to_string()))?;
        for to in 0..labels.len() {
            for from in 0..labels.len() {
                if to == from {
                    continue;
                }
                writer
                    .write_record(&[
                        t.to_string(),
                        labels[to].clone(),
                        labels[from].clone(),
                        pair.current[(to, from)].to_string(),
                        pair.rates[(to, from)].to_string(),
                    ])
                    .map_err(|e| CliError::input(e.to_string()))?;
            }
        }
    }
    finish_csv(writer, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
