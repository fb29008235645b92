//! `mash`: run the harmonization, hyperbolic embedding and hierarchy
//! pipeline stage by stage from one TOML configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mash_core::pipeline::{exit_code, run_all, run_stage, RunConfig};
use mash_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "mash", version, about = "Multi-source code embedding harmonization and hierarchy construction")]
struct Cli {
    /// TOML run configuration; built-in defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root seed for every stochastic step; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory; overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Log verbosity on stderr.
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic bundle: vocabulary, hierarchy, events, language-model embeddings and labelled pairs.
    Synth,
    /// Build co-occurrence counts, SPPMI matrices and SVD embeddings per source.
    Sppmi,
    /// Align source embeddings into the target space with neural optimal transport and aggregate them.
    Align,
    /// Train hyperbolic embeddings from the harmonized embedding.
    Embed,
    /// Build the hierarchy forest with latent internal nodes.
    Tree,
    /// Annotate latent nodes through the configured chat client.
    Annotate,
    /// Compute pair AUCs, tree agreement metrics and judged scores.
    Eval,
    /// Run every stage in order.
    Run,
    /// Print the effective configuration as TOML.
    PrintConfig,
}

impl Command {
    fn stage(&self) -> Option<&'static str> {
        match self {
            Command::Synth => Some("synth"),
            Command::Sppmi => Some("sppmi"),
            Command::Align => Some("align"),
            Command::Embed => Some("embed"),
            Command::Tree => Some("tree"),
            Command::Annotate => Some("annotate"),
            Command::Eval => Some("eval"),
            Command::Run | Command::PrintConfig => None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LogLevel {
    Off,
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl From<LogLevel> for log::LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Off => log::LevelFilter::Off,
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let written = match (&cli.command, cli.command.stage()) {
        (Command::PrintConfig, _) => {
            print!("{}", cfg.to_toml_string()?);
            return Ok(());
        }
        (Command::Run, _) => run_all(&cfg)?,
        (_, Some(stage)) => run_stage(&cfg, stage)?,
        (cmd, None) => return Err(Error::Internal(format!("no stage for {cmd:?}"))),
    };
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level.into())
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
