//! `dmdmpc`: command-line driver for the identification and control pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::commands::{CliError, Context};
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "dmdmpc", version, about = "Identify a heated-plate model from snapshots and run model predictive control on it")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// TOML run configuration; defaults apply to omitted keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the plant under random excitation and save the snapshots.
    Excite,
    /// Fit the reduced model, save it and print the energy table.
    Identify,
    /// Roll the model out on the validation snapshots.
    Validate,
    /// Closed-loop run against one reference.
    Control {
        /// gaussian, constant or sliced-gaussian; defaults to the configured kind.
        #[arg(long)]
        reference: Option<String>,
    },
    /// Model-based controller vs the sensor-proxy controller on all references.
    Compare,
    /// Final tracking error over the training-size and model-order grid.
    Ablate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Excite => "excite",
            Command::Identify => "identify",
            Command::Validate => "validate",
            Command::Control { .. } => "control",
            Command::Compare => "compare",
            Command::Ablate => "ablate",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    let ctx = Context::new(cfg, cli.quiet);
    ctx.write_manifest(cli.command.name())?;
    match &cli.command {
        Command::Excite => commands::excite(&ctx),
        Command::Identify => commands::identify(&ctx),
        Command::Validate => commands::validate(&ctx),
        Command::Control { reference } => commands::control(&ctx, reference.as_deref()),
        Command::Compare => commands::compare(&ctx),
        Command::Ablate => commands::ablate(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{}", e.render());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
