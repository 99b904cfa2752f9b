mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use context::Context;

#[derive(Parser, Debug)]
#[command(
    name = "mnca",
    version,
    about = "Mixture neural cellular automata experiments"
)]
struct Cli {
    /// Config file, or `preset:tissue|emoji|microscopy`.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Master seed; overrides the config. A fresh one is drawn and recorded when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a tissue cohort with the agent-based model.
    SimulateTissue(SimulateArgs),
    /// Train a model (time series for [tissue], pool growth for [image]).
    Train(TrainArgs),
    /// Compare generated tissues with a real cohort.
    Evaluate(EvalArgs),
    /// Damage grown images and measure recovery.
    Perturb(PerturbArgs),
    /// Rejection ABC over simulator parameters.
    Abc(AbcArgs),
    /// Rule maps, Lipschitz bounds and noise partitioning.
    Analyze(AnalyzeArgs),
    /// Train mixtures with different rule counts and compare KL divergence.
    SweepRules(SweepArgs),
    /// Roll out with per-rule probability multipliers.
    Steer(SteerArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub realizations: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// `default` or `minimal` simulator parameters.
    #[arg(long)]
    pub preset: Option<String>,
    /// Write a PNG of every final grid.
    #[arg(long)]
    pub png: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Tissue cohort file to train on instead of simulating one.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Real cohort; simulated from the config when absent.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long)]
    pub png: bool,
}

#[derive(Args, Debug)]
pub struct PerturbArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Save PNG frames of the first repeat at steps 0, steps/2 and steps.
    #[arg(long)]
    pub png: bool,
}

#[derive(Args, Debug)]
pub struct AbcArgs {
    /// Observed cohort; simulated from the config when absent.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long)]
    pub particles: Option<usize>,
    /// `proportions`, `neighborhood` or `correlation`.
    #[arg(long)]
    pub statistic: Option<String>,
    /// Fixed tolerance; the 10% distance quantile is used otherwise.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Steps to roll out before analysing the state.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Draws for noise partitioning (noise mixtures only).
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long)]
    pub png: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Comma-separated rule counts; overrides the [sweep] block.
    #[arg(long, value_delimiter = ',')]
    pub rules: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SteerArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One nonnegative multiplier per rule, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub multipliers: Vec<f32>,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long)]
    pub png: bool,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()?;
    }
    let name = match &cli.command {
        Command::SimulateTissue(_) => "simulate-tissue",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Perturb(_) => "perturb",
        Command::Abc(_) => "abc",
        Command::Analyze(_) => "analyze",
        Command::SweepRules(_) => "sweep-rules",
        Command::Steer(_) => "steer",
    };
    let needs_config = !matches!(
        cli.command,
        Command::SimulateTissue(_)
            | Command::Abc(_)
            | Command::Evaluate(_)
            | Command::Perturb(_)
            | Command::Analyze(_)
            | Command::Steer(_)
    );
    let mut ctx = Context::new(
        name,
        cli.config.as_deref(),
        cli.seed,
        &cli.out_dir,
        needs_config,
    )?;
    match cli.command {
        Command::SimulateTissue(a) => commands::simulate(&mut ctx, &a)?,
        Command::Train(a) => commands::train(&mut ctx, &a)?,
        Command::Evaluate(a) => commands::evaluate(&mut ctx, &a)?,
        Command::Perturb(a) => commands::perturb(&mut ctx, &a)?,
        Command::Abc(a) => commands::abc(&mut ctx, &a)?,
        Command::Analyze(a) => commands::analyze(&mut ctx, &a)?,
        Command::SweepRules(a) => commands::sweep(&mut ctx, &a)?,
        Command::Steer(a) => commands::steer(&mut ctx, &a)?,
    }
    ctx.finish()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<mnca_core::Error>() {
        return e.exit_code() as u8;
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    // clap exits with 2 on bad arguments; 2 is reserved for config errors here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
