//! `apfsim`: run scenarios and sweeps, recompute metrics from logs, and host
//! the live bridge.
//!
//! Exit codes: 0 success, 1 bad input (parse, validation, missing file),
//! 2 the simulation itself failed (a partial log is still written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apfsim_bridge::{serve, BridgeError, ServeOptions, DEFAULT_PORT};
use apfsim_core::experiments::{run_scenario, run_sweep, sweep_stem, write_outputs, RunReport, SweepSpec};
use apfsim_core::logio::{read_log_file, write_log_file};
use apfsim_core::metrics::{compute_metrics, MetricsReport};
use apfsim_core::scenario::{Origin, Scenario};
use apfsim_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "apfsim", version, about = "Potential-field collision avoidance simulator", arg_required_else_help = true)]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Time step override, s.
    #[arg(long)]
    dt: Option<f64>,
    /// Seed for a scenario with a random hand track.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its report, log and XY trace.
    Run {
        /// Scenario file, or `builtin:scenarios/<name>.toml`.
        scenario: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every value of a sweep file; one report per value.
    Sweep {
        spec: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Stream a live scenario over WebSocket at ws://HOST:PORT/ws.
    Serve {
        scenario: String,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Directory to serve at `/`, e.g. the built UI.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Parse and check a scenario without running it.
    Validate { scenario: String },
    /// Recompute metrics from a trajectory log.
    Metrics {
        log: PathBuf,
        /// Needed only for single-record logs.
        #[arg(long)]
        dt: Option<f64>,
        /// Write the metrics here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::JointLimitViolation { .. } | Error::NumericalFailure(_) | Error::DegenerateGeometry(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<BridgeError> for Failure {
    fn from(e: BridgeError) -> Self {
        match e {
            BridgeError::Core(e) => e.into(),
            other => Failure {
                code: 1,
                message: other.to_string(),
            },
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load(spec: &str, overrides: &Overrides) -> Result<Scenario, Error> {
    let mut scenario = Scenario::load(&Origin::parse(spec))?;
    if let Some(dt) = overrides.dt {
        scenario = scenario.with_dt(dt)?;
    }
    if let Some(seed) = overrides.seed {
        scenario = scenario.with_seed(seed)?;
    }
    Ok(scenario)
}

fn summary(name: &str, m: &MetricsReport) -> String {
    format!(
        "{name}: {} ticks, {:.1} s, path {:.4} m, min d_ro {:.4} m, avoidance {:.1} s, free-drive {:.1} s, goals {}",
        m.ticks, m.duration, m.path_length, m.min_d_ro, m.time_in_avoidance, m.time_in_freedrive, m.reached_goals
    )
}

fn cmd_run(scenario: &str, out: &Path, overrides: &Overrides, quiet: bool) -> CmdResult {
    let scenario = load(scenario, overrides)?;
    match run_scenario(&scenario) {
        Ok(outcome) => {
            let report = RunReport::with_subplans(&outcome);
            write_outputs(out, &scenario.name, &report, &outcome.log)?;
            if !quiet {
                println!("{}", summary(&scenario.name, &outcome.report));
                println!("wrote {}", out.join(format!("{}.report.toml", scenario.name)).display());
            }
            Ok(())
        }
        Err(failure) => {
            let path = out.join(format!("{}.partial.log.csv", scenario.name));
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            write_log_file(&failure.log, &path)?;
            let mut f = Failure::from(failure.error);
            f.message = format!("{} (partial log: {})", f.message, path.display());
            Err(f)
        }
    }
}

fn cmd_sweep(spec: &str, out: &Path, dt: Option<f64>, quiet: bool) -> CmdResult {
    let mut spec = SweepSpec::load(&Origin::parse(spec))?;
    if let Some(dt) = dt {
        spec.base = spec.base.with_dt(dt)?;
    }
    let runs = run_sweep(&spec).map_err(|f| Failure::from(f.error))?;
    for run in &runs {
        let mut report = RunReport::new(&run.outcome);
        report.parameter = Some(spec.parameter.key().to_owned());
        report.value = Some(run.value);
        let stem = sweep_stem(&spec.base.name, spec.parameter, run.value);
        write_outputs(out, &stem, &report, &run.outcome.log)?;
        if !quiet {
            println!("{}", summary(&stem, &run.outcome.report));
        }
    }
    if !quiet {
        println!("wrote {} reports to {}", runs.len(), out.display());
    }
    Ok(())
}

fn cmd_serve(scenario: &str, port: u16, static_dir: Option<PathBuf>, overrides: &Overrides) -> CmdResult {
    let scenario = load(scenario, overrides)?;
    let opts = ServeOptions {
        port,
        static_dir,
        ..ServeOptions::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    runtime.block_on(serve(&scenario, &opts))?;
    Ok(())
}

fn cmd_validate(scenario: &str, quiet: bool) -> CmdResult {
    let s = Scenario::load(&Origin::parse(scenario))?;
    if !quiet {
        println!(
            "{}: ok ({} waypoints, dt {} s, up to {} ticks)",
            s.name,
            s.plan.waypoints.len(),
            s.config.dt,
            s.config.max_ticks()
        );
    }
    Ok(())
}

fn cmd_metrics(log: &Path, dt: Option<f64>, out: Option<&Path>) -> CmdResult {
    let log = read_log_file(log, dt)?;
    let m = compute_metrics(&log)?;
    let text = toml::to_string(&m).expect("metrics are always representable");
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                0
            } else {
                1
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Run { scenario, out, overrides } => cmd_run(scenario, out, overrides, cli.quiet),
        Command::Sweep { spec, out, dt } => cmd_sweep(spec, out, *dt, cli.quiet),
        Command::Serve {
            scenario,
            port,
            static_dir,
            overrides,
        } => cmd_serve(scenario, *port, static_dir.clone(), overrides),
        Command::Validate { scenario } => cmd_validate(scenario, cli.quiet),
        Command::Metrics { log, dt, out } => cmd_metrics(log, *dt, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
