use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use splitlbi_cli::{run, CliError, Command, RunConfig};

/// Sparse training, network expansion and pruning with split linearized
/// Bregman iteration.
#[derive(Debug, Parser)]
#[command(name = "splitlbi", version)]
struct Args {
    /// train, expand, prune, eval, path-export or synth-check
    command: Command,
    /// Key-value config file; flags below override it.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set kappa=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
}

fn build_config(args: &Args) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.command = args.command;
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let flags = [
        ("seed", args.seed.map(|v| v.to_string())),
        ("out_dir", args.out_dir.clone()),
        ("data_dir", args.data_dir.clone()),
        ("checkpoint", args.checkpoint.clone()),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("limit", args.limit.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match build_config(&args).and_then(|cfg| run(&cfg)) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("splitlbi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
