//! Batch front end for the hypothesis-testing engine: parse a TOML
//! scenario config, run the requested scenario or analysis, and persist
//! analysis-ready tables under a sealed manifest.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
//! numerical faults (a diverged integration, a failed self check).
//! Orchestration is single-threaded; trial parallelism lives in the
//! engine and is capped by the `QHT_WORKERS` environment variable.

mod emit;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qht_core::gaussian_models::{chernoff_exponent, error_bounds_at};
use qht_core::scenarios::{
    force_chernoff_problem, run_scenario, set_worker_threads, simulate_scenario_record,
    RunResult, ScenarioConfig, ScenarioKind,
};
use qht_core::verify;

use emit::RunManifest;

/// Continuous-measurement binary hypothesis testing: scenario ensembles,
/// error-exponent scans, record simulation, and built-in self checks.
#[derive(Parser)]
#[command(name = "qht", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect a hidden stochastic force on a monitored oscillator.
    ForceDetect(RunArgs),
    /// Race the quadrature readout against its classical twin.
    QuadratureEquiv(RunArgs),
    /// Discriminate quantized from continuous oscillator energy.
    EnergyQuant(RunArgs),
    /// Run every built-in self check and print a pass/fail table.
    Verify,
    /// Tabulate the error exponent mu(s) and the bounds it induces.
    Chernoff(ChernoffArgs),
    /// Simulate one measurement record and write it as CSV.
    SimulateRecord(RecordArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Store a thinned trial-0 trajectory next to the run outputs.
    #[arg(long)]
    trajectory: bool,
    /// Store the trial-0 trajectory at full resolution.
    #[arg(long)]
    full_trajectory: bool,
}

#[derive(Args)]
struct ChernoffArgs {
    /// Force-detect scenario configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Number of equally spaced s values on [0, 1].
    #[arg(long, default_value_t = 21)]
    scan_s: usize,
}

#[derive(Args)]
struct RecordArgs {
    /// Scenario configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Trial index whose record stream to draw.
    #[arg(long, default_value_t = 0)]
    trial: u64,
}

/// Errors split by exit code: bad input versus a numerical fault.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Fault(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Fault(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Fault(m) => m,
        }
    }
}

impl From<qht_core::Error> for CliError {
    fn from(e: qht_core::Error) -> Self {
        use qht_core::Error as E;
        match e {
            E::Validation(_) | E::InvalidDimension(_) | E::DimensionMismatch(_) | E::Io(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Fault(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_workers()?;
    match cli.command {
        Command::ForceDetect(args) => run_scenario_cmd(ScenarioKind::ForceDetect, &args),
        Command::QuadratureEquiv(args) => run_scenario_cmd(ScenarioKind::QuadratureEquiv, &args),
        Command::EnergyQuant(args) => run_scenario_cmd(ScenarioKind::EnergyQuant, &args),
        Command::Verify => run_verify(),
        Command::Chernoff(args) => run_chernoff(&args),
        Command::SimulateRecord(args) => run_record(&args),
    }
}

/// Honor the worker-count override before any parallel region starts.
fn init_workers() -> Result<(), CliError> {
    match std::env::var("QHT_WORKERS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| {
                CliError::Usage(format!("QHT_WORKERS must be a positive integer, got {v:?}"))
            })?;
            set_worker_threads(n).map_err(CliError::from)
        }
        Err(std::env::VarError::NotPresent) => Ok(()),
        Err(e) => Err(CliError::Usage(format!("QHT_WORKERS: {e}"))),
    }
}

fn parse_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn config_json<T: serde::Serialize>(value: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(value)
        .map_err(|e| CliError::Usage(format!("config serialization failed: {e}")))
}

fn run_scenario_cmd(kind: ScenarioKind, args: &RunArgs) -> Result<(), CliError> {
    let mut config = parse_config(&args.config)?;
    if config.scenario != kind {
        return Err(CliError::Usage(format!(
            "config names scenario {}, but the {} command was invoked",
            config.scenario.id(),
            kind.id()
        )));
    }
    if args.trajectory || args.full_trajectory {
        config.trials.store_trajectory = true;
    }
    if args.full_trajectory {
        config.numerics.thin_stride = 1;
    }
    let resolved = config.resolve().map_err(CliError::from)?;
    let result = run_scenario(&config).map_err(CliError::from)?;
    let manifest = emit::emit_run(
        &args.out,
        kind.id(),
        &result,
        resolved.seed,
        config_json(&config)?,
        config_json(&resolved)?,
    )?;
    print_summary(&result, &args.out, &manifest);
    Ok(())
}

fn print_summary(result: &RunResult, dir: &Path, manifest: &RunManifest) {
    println!("scenario      {}", result.scenario);
    println!(
        "truth         {}",
        match result.truth {
            qht_core::likelihood::Hypothesis::Null => "null",
            qht_core::likelihood::Hypothesis::Alternative => "alternative",
        }
    );
    println!(
        "trials        {} ({} faulted)",
        result.n_trials, result.n_faulted
    );
    if let Some(m) = &result.mean_log_lambda {
        println!("mean log LR   {:.4} +- {:.4}", m.mean, m.std_err);
    }
    if let Some(p) = &result.p10 {
        println!(
            "P10           {:.4}  95% [{:.4}, {:.4}]",
            p.rate, p.wilson_low, p.wilson_high
        );
    }
    if let Some(p) = &result.p01 {
        println!(
            "P01           {:.4}  95% [{:.4}, {:.4}]",
            p.rate, p.wilson_low, p.wilson_high
        );
    }
    if let Some(m) = &result.mean_lambda {
        println!("mean Lambda   {:.4} +- {:.4}", m.mean, m.std_err);
    }
    if let Some(eq) = &result.equivalence {
        println!(
            "filter gap    worst |log LR| {:.4}, worst estimate gap {:.4}",
            eq.max_abs_log_lambda, eq.max_mu_gap
        );
    }
    if let Some(pt) = result.chernoff.last() {
        println!(
            "bounds        T {}: P10 <= {:.3e}, P01 <= {:.3e} (s* {:.3})",
            pt.t, pt.bound_p10, pt.bound_p01, pt.s_star
        );
    }
    if let Some(h) = result.hybrid_mu_mismatch {
        println!("hybrid check  relative estimate mismatch {h:.3e}");
    }
    println!(
        "outputs       {} ({} files, bundle {})",
        dir.display(),
        manifest.files.len(),
        &manifest.bundle_sha256[..12]
    );
}

fn run_verify() -> Result<(), CliError> {
    let reports = verify::run_all_with(|r| {
        println!(
            "{:<26} {}  {}",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.detail
        );
    });
    let passed = reports.iter().filter(|r| r.passed).count();
    println!("{passed}/{} checks passed", reports.len());
    if verify::all_passed(&reports) {
        Ok(())
    } else {
        Err(CliError::Fault(format!(
            "{} self check(s) failed",
            reports.len() - passed
        )))
    }
}

fn run_chernoff(args: &ChernoffArgs) -> Result<(), CliError> {
    if args.scan_s < 2 {
        return Err(CliError::Usage(format!(
            "--scan-s needs at least 2 points, got {}",
            args.scan_s
        )));
    }
    let config = parse_config(&args.config)?;
    let resolved = config.resolve().map_err(CliError::from)?;
    let problem = force_chernoff_problem(&resolved).map_err(CliError::from)?;

    let mut csv = String::from("s,mu_s,bound_p10,bound_p01\n");
    for i in 0..args.scan_s {
        let s = i as f64 / (args.scan_s - 1) as f64;
        let mu_s = chernoff_exponent(&problem, s).map_err(CliError::from)?;
        let (b10, b01) = error_bounds_at(mu_s, s, resolved.log_gamma);
        csv.push_str(&format!("{s},{mu_s},{b10},{b01}\n"));
    }

    let mut emitter = emit::Emitter::new(&args.out)?;
    emitter.write("chernoff.csv", &csv)?;
    let manifest = emitter.finish(
        "chernoff",
        resolved.seed,
        config_json(&config)?,
        config_json(&resolved)?,
    )?;
    println!(
        "wrote {} s-points over T {} to {} (bundle {})",
        args.scan_s,
        resolved.t_final,
        args.out.display(),
        &manifest.bundle_sha256[..12]
    );
    Ok(())
}

fn run_record(args: &RecordArgs) -> Result<(), CliError> {
    let mut config = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.trials.seed = seed;
    }
    let resolved = config.resolve().map_err(CliError::from)?;
    let record = simulate_scenario_record(&config, args.trial).map_err(CliError::from)?;

    let mut emitter = emit::Emitter::new(&args.out)?;
    emitter.write("record.csv", &emit::record_csv(&record))?;
    let manifest = emitter.finish(
        "simulate-record",
        resolved.seed,
        config_json(&config)?,
        config_json(&resolved)?,
    )?;
    println!(
        "wrote {} steps at dt {} to {} (bundle {})",
        record.len(),
        record.dt,
        args.out.display(),
        &manifest.bundle_sha256[..12]
    );
    Ok(())
}
