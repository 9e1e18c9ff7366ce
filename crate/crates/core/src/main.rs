use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nsllg::config::{load_config, parse_config, RunConfig};
use nsllg::mms::Model;
use nsllg::runner::{run, Command};

/// Settings used when no configuration file is given.
const DEFAULT_CONFIG: &str = "model = \"full\"\nT_end = 0.1\ndt = 1e-3\n[grid]\ndim = 2\nn = 16\n";

#[derive(Parser, Debug)]
#[command(name = "nsllg", version, about = "Magnetoelastic Navier-Stokes / LLG solver on the periodic torus")]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the configuration)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Single-threaded, bitwise reproducible execution
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long = "t-end", global = true)]
    t_end: Option<f64>,
    /// Seed of a random initial condition
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Integrate and write series.csv, snapshots and summary.txt
    Simulate,
    /// Constraint residuals on the initial and final state
    CheckInvariants,
    /// Variational and energy-balance checks
    Varcheck,
    /// Search for admissible functional coefficients
    Coeffs,
    /// Manufactured-solution convergence study
    Mms {
        #[arg(long, value_enum)]
        model: ModelArg,
    },
    /// Uniform magnetization in a constant field against the closed form
    OracleMacrospin,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Full,
    Perturb,
}

fn configure(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path),
        None => parse_config(DEFAULT_CONFIG),
    }
    .map_err(|e| e.to_string())?;
    if let Some(dt) = cli.dt {
        cfg.dt = dt;
    }
    if let Some(t) = cli.t_end {
        cfg.t_end = t;
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    cfg.deterministic |= cli.deterministic;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match configure(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let threads = if cfg.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let cmd = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::CheckInvariants => Command::CheckInvariants,
        Cmd::Varcheck => Command::Varcheck,
        Cmd::Coeffs => Command::Coeffs,
        Cmd::Mms { model: ModelArg::Full } => Command::Mms(Model::Full),
        Cmd::Mms { model: ModelArg::Perturb } => Command::Mms(Model::Perturb),
        Cmd::OracleMacrospin => Command::OracleMacrospin,
    };
    match run(cmd, &cfg, cli.out.as_deref()) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            for f in &outcome.failures {
                eprintln!("{f}");
            }
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
