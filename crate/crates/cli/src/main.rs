mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "dffw", version, about = "Train and evaluate factored conditional RBMs on ball trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Dataset directory; overrides `data.dir`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Trained model; overrides `checkpoint`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Simulate the ball dataset into --out.
    Generate,
    /// Train one model on the configured split.
    Train,
    /// Evaluate a checkpoint, or cross-validate without one.
    Evaluate,
    /// Per-frame class predictions from a checkpoint.
    Classify,
    /// Present-step or multi-step 3D estimates from a checkpoint.
    Predict,
    /// Energy over a grid of hidden and factor sizes.
    Sweep,
}

fn config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(dir) = &cli.data {
        cfg.data_dir = dir.clone();
    }
    if let Some(ck) = &cli.checkpoint {
        cfg.checkpoint = Some(ck.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    if let Some(n) = cli.threads {
        dffw::exec::set_threads(n);
    }
    let cfg = config(cli)?;
    let out = &cli.out;
    match cli.command {
        Command::Generate => commands::generate(&cfg, out),
        Command::Train => commands::train(&cfg, out),
        Command::Evaluate => commands::evaluate(&cfg, out),
        Command::Classify => commands::classify(&cfg, out),
        Command::Predict => commands::predict(&cfg, out),
        Command::Sweep => commands::sweep(&cfg, out),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}: {}", e.code, one_line(&e.message));
            ExitCode::FAILURE
        }
    }
}
