use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lglab::pipeline::{exit_code, load_config, run_pipeline, run_stage, RunConfig};

#[derive(Parser)]
#[command(name = "lglab", version, about = "Key-gesture extraction, VAE+GAN training and latent analysis on synthetic faces")]
struct Cli {
    /// Config file of `key = value` lines; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic session and its ground truth.
    Synth,
    /// Extract key-gesture frames.
    Keyframes,
    /// Train the model on key frames.
    Train,
    /// Encode every frame into a latent trace.
    Encode,
    /// Estimate attribute vectors.
    Attributes,
    /// Run anomaly, matched-filter and signature detection.
    Detect,
    /// Write image grids and summary metrics.
    Report,
    /// Run every stage in order.
    All,
}

impl Command {
    fn stage(&self) -> Option<&'static str> {
        Some(match self {
            Command::Synth => "synth",
            Command::Keyframes => "keyframes",
            Command::Train => "train",
            Command::Encode => "encode",
            Command::Attributes => "attributes",
            Command::Detect => "detect",
            Command::Report => "report",
            Command::All => return None,
        })
    }
}

fn configure(cli: &Cli) -> lglab::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| lglab::Error::validation(format!("override `{kv}` is not of the form key=value")))?;
        cfg.set(k.trim(), v.trim()).map_err(lglab::Error::validation)?;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = configure(&cli).and_then(|cfg| match cli.command.stage() {
        Some(stage) => run_stage(stage, &cfg),
        None => run_pipeline(&cfg).map(drop),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
