use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stochswitch_cli::{error_json, Overrides, Pipeline, ProjectConfig};

#[derive(Parser)]
#[command(name = "stochswitch", version, about = "Compositional abstraction and safety synthesis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build finite MDP abstractions of every subsystem.
    Abstract,
    /// Load or derive certificates and check their matrix inequalities.
    Certify,
    /// Assemble the gain graph, check the small-gain condition, compose.
    Compose,
    /// Probabilistic closeness bound from the composed function.
    Bound,
    /// Dwell-time safety value iteration on each abstraction.
    Synthesize,
    /// Paired concrete/abstract Monte Carlo rollouts.
    Simulate,
    /// Tables and summaries from the persisted artifacts.
    Report,
    /// All stages in order.
    Run,
}

#[derive(Args)]
struct Common {
    /// Project config (JSON).
    #[arg(long, short, global = true, env = "SWABS_CONFIG")]
    config: Option<PathBuf>,
    /// State discretization.
    #[arg(long, global = true, env = "SWABS_DELTA")]
    delta: Option<f64>,
    /// Closeness threshold.
    #[arg(long, global = true, env = "SWABS_EPS")]
    eps: Option<f64>,
    /// Horizon for both the bound and synthesis.
    #[arg(long, global = true, env = "SWABS_HORIZON")]
    horizon: Option<usize>,
    #[arg(long, global = true, env = "SWABS_SEED")]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SWABS_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "SWABS_OUT")]
    out: Option<PathBuf>,
    /// Number of subsystems of a preset network.
    #[arg(long, global = true, env = "SWABS_SIZE")]
    size: Option<usize>,
    /// Monte Carlo runs.
    #[arg(long, global = true, env = "SWABS_RUNS")]
    runs: Option<usize>,
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config key ``: no config given (use --config or SWABS_CONFIG)"))?;
    let mut config = ProjectConfig::load(path)?;
    config.apply(&Overrides {
        delta: c.delta,
        epsilon: c.eps,
        horizon: c.horizon,
        seed: c.seed,
        size: c.size,
        runs: c.runs,
        // relative to the working directory, unlike the config's own value
        out: c.out.as_ref().map(std::path::absolute).transpose()?,
    });
    let pipeline = Pipeline::new(config)?;
    let lines = match cli.command {
        Command::Abstract => vec![pipeline.cmd_abstract()?],
        Command::Certify => vec![pipeline.cmd_certify()?],
        Command::Compose => vec![pipeline.cmd_compose()?],
        Command::Bound => vec![pipeline.cmd_bound()?],
        Command::Synthesize => vec![pipeline.cmd_synthesize()?],
        Command::Simulate => vec![pipeline.cmd_simulate()?],
        Command::Report => vec![pipeline.cmd_report()?],
        Command::Run => pipeline.run_all()?,
    };
    for line in lines {
        println!("{line}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
