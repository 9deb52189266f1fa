use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vbfilter::cli::{cmd_evaluate, cmd_learn_gain, cmd_simulate, cmd_steady_state, cmd_sweep, Experiment, ExperimentConfig};
use vbfilter::{Error, Result};

#[derive(Parser)]
#[command(name = "vbfilter", version, about = "Learn filter analysis-map parameters by variational inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps and gradient probes.
    #[arg(long)]
    threads: Option<usize>,
    /// Use full experiment sizes for fields the config leaves out.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a truth trajectory and its observations.
    Simulate(Common),
    /// Learn a frozen gain offline or online.
    LearnGain(Common),
    /// Sweep the EnKF objective over inflation × localization.
    Sweep(Common),
    /// Solve for the steady-state Kalman gain of the linear model.
    SteadyState(Common),
    /// Evaluate frozen parameters on a fresh trajectory.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Gain CSV, or JSON {"lambda": …, "ell": …} for the EnKF.
        #[arg(long)]
        theta: PathBuf,
    },
}

fn setup(c: &Common) -> Result<Experiment> {
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let mut config = match ExperimentConfig::load(&c.config, c.paper_scale) {
        Err(Error::Io(e)) => return Err(Error::Config(format!("cannot read config {}: {e}", c.config.display()))),
        other => other?,
    };
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    Experiment::new(config, c.out.clone())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => cmd_simulate(&setup(&c)?),
        Command::LearnGain(c) => cmd_learn_gain(&setup(&c)?),
        Command::Sweep(c) => cmd_sweep(&setup(&c)?),
        Command::SteadyState(c) => cmd_steady_state(&setup(&c)?),
        Command::Evaluate { common, theta } => cmd_evaluate(&setup(&common)?, &theta),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
