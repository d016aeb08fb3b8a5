use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use log::error;
use stargrid::error::ErrorClass;
use stargrid::features::Split;
use stargrid::pipeline::{
    cmd_ablate, cmd_evaluate, cmd_generate, cmd_report, cmd_sweep, cmd_train, ablation_to_tsv, RunConfig,
    RunDirs,
};

#[derive(Parser)]
#[command(name = "stargrid", version, about = "Federated eavesdropping detection on a simulated smart grid")]
struct Cli {
    /// Flat `key = value` config file. Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set fed.mu=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Master seed; shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; defaults to `output_dir` from the config.
    #[arg(long, global = true)]
    run: Option<PathBuf>,
    /// Replace existing stage outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate telemetry and write the dataset directory.
    Generate,
    /// Train the global model and keep the best validation round.
    Train {
        /// Dataset directory; defaults to `<run>/dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Pool every client's windows into one trainer.
        #[arg(long)]
        centralized: bool,
    },
    /// Score a checkpoint on one split at the configured decision rule.
    Evaluate {
        /// Dataset directory; defaults to `<run>/dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint directory; defaults to `<run>/train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split to score.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Sequence metrics over the (tau, m) grid on the validation split.
    Sweep {
        /// Dataset directory; defaults to `<run>/dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint directory; defaults to `<run>/train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Retrain without metadata, derived statistics or neighbor inputs.
    Ablate {
        /// Dataset directory; defaults to `<run>/dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Summarize the finished stages of a run.
    Report,
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    for s in &cli.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| stargrid::Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::Train { centralized: true, .. } = cli.command {
        cfg.set("fed.mode", "\"centralized\"")?;
    }
    cfg.validate()?;
    Ok(cfg.resolved())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    if cli.print_config {
        print!("{}", cfg.to_text()?);
        return Ok(());
    }
    let dirs = RunDirs::new(cli.run.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir)));
    let or_default = |p: &Option<PathBuf>, d: PathBuf| p.clone().unwrap_or(d);
    match &cli.command {
        Command::Generate => {
            cmd_generate(&cfg, &dirs, cli.force)?;
            println!("dataset written to {}", dirs.dataset().display());
        }
        Command::Train { dataset, .. } => {
            let out = cmd_train(&cfg, &dirs, &or_default(dataset, dirs.dataset()), cli.force)?;
            println!(
                "best round {} of {}; checkpoint in {}",
                out.best_round,
                out.log.len(),
                dirs.train().display()
            );
        }
        Command::Evaluate { dataset, checkpoint, split } => {
            let report = cmd_evaluate(
                &cfg,
                &dirs,
                &or_default(dataset, dirs.dataset()),
                &or_default(checkpoint, dirs.train()),
                (*split).into(),
                cli.force,
            )?;
            print!("{}", stargrid::eval::render_table(&report));
        }
        Command::Sweep { dataset, checkpoint } => {
            let rows = cmd_sweep(
                &cfg,
                &dirs,
                &or_default(dataset, dirs.dataset()),
                &or_default(checkpoint, dirs.train()),
                cli.force,
            )?;
            print!("{}", stargrid::eval::sweep_to_csv(&rows));
        }
        Command::Ablate { dataset } => {
            let rows = cmd_ablate(&cfg, &dirs, &or_default(dataset, dirs.dataset()), cli.force)?;
            print!("{}", ablation_to_tsv(&rows));
        }
        Command::Report => print!("{}", cmd_report(&dirs)?),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<stargrid::Error>().map(stargrid::Error::class) {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Precondition) => 3,
        Some(ErrorClass::Numeric) => 4,
        Some(ErrorClass::Other) | None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
