//! `gdc`: train modules, restore images, synthesize data, certify runs and
//! benchmark module stacks.

mod bench;
mod certify;
mod common;
mod config;
mod error;
mod run;
mod synth;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gdc_core::Role;

use crate::common::Ctx;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "gdc",
    version,
    about = "Guided propagation of learned modules for image restoration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed key
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: out)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
    /// Config overrides, applied after the file
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Gm,
    Dm,
}

#[derive(Subcommand)]
enum Command {
    /// Train one module and write a checkpoint plus a loss CSV
    Train {
        #[arg(long, value_enum)]
        role: RoleArg,
        #[command(flatten)]
        common: Common,
    },
    /// Restore an image, a dataset directory, or a synthesized demo
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic dataset
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Certify a trace CSV, or module checkpoints named by gm/dm
    Certify {
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare module stacks on a synthetic deconvolution suite
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn context(c: &Common) -> Result<Ctx, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &c.set {
        cfg.apply_override(s)?;
    }
    if let Some(seed) = c.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok(Ctx {
        cfg,
        out: c.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        out_given: c.out.is_some(),
        quiet: c.quiet,
    })
}

fn threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("GDC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("GDC_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    threads()?;
    match cli.command {
        Command::Train { role, common } => {
            let role = match role {
                RoleArg::Gm => Role::Gm,
                RoleArg::Dm => Role::Dm,
            };
            train::cmd_train(&context(&common)?, role)
        }
        Command::Run { common } => run::cmd_run(&context(&common)?),
        Command::Synth { common } => synth::cmd_synth(&context(&common)?),
        Command::Certify { trace, common } => {
            let ctx = context(&common)?;
            match trace {
                Some(p) => certify::cmd_certify_trace(&ctx, &p),
                None => certify::cmd_certify_modules(&ctx),
            }
        }
        Command::Bench { common } => bench::cmd_bench(&context(&common)?),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gdc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
