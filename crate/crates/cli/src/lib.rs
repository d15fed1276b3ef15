//! The `cat` command line: feature extraction, training, evaluation,
//! gradient checking and PNS oracle verification.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{EvalData, TrainData};
use crate::config::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "cat", version, about = "Causal audio transformer toolkit")]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Print every configuration key with its default and exit.
    #[arg(long)]
    pub dump_defaults: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write MRMF feature dumps for a WAV file or a directory of them.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint; epoch reports go to stdout.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// WAV folder laid out as `<root>/<class>/*.wav`.
        #[arg(long, conflicts_with = "synth")]
        data: Option<PathBuf>,
        /// Use the synthetic four-class corpus.
        #[arg(long)]
        synth: bool,
    },
    /// Accuracy and mAP of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "synth")]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        synth: Option<Split>,
    },
    /// Finite-difference check of the full training objective.
    Gradcheck {
        #[arg(long, hide = true)]
        break_gradient: bool,
    },
    /// Exact PNS against its interventional and observational bounds.
    PnsVerify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        count: usize,
    },
}

/// Runs one invocation; `Ok(false)` means the command ran but its check failed.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<bool> {
    if cli.dump_defaults {
        write!(out, "{}", CliConfig::default().to_text())?;
        return Ok(true);
    }
    let Some(command) = cli.command else {
        bail!("no command given; see --help");
    };
    let cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None if matches!(command, Command::Gradcheck { .. }) => CliConfig::gradcheck_preset(),
        None => CliConfig::default(),
    };
    match command {
        Command::Extract { input, out: dest } => commands::extract(&cfg, &input, &dest, out)?,
        Command::Train { out: dest, data, synth } => {
            let source = match (data.or_else(|| cfg.data_path.clone()), synth) {
                (_, true) => TrainData::Synth,
                (Some(p), false) => TrainData::Folder(p),
                (None, false) => bail!("no training data: pass --data <dir>, --synth, or set data.path"),
            };
            commands::train(&cfg, source, &dest, out)?;
        }
        Command::Eval { checkpoint, data, synth } => {
            let source = match (data, synth) {
                (_, Some(Split::Train)) => EvalData::SynthTrain,
                (_, Some(Split::Test)) => EvalData::SynthTest,
                (Some(p), None) => EvalData::Folder(p),
                (None, None) => match cfg.eval_path.clone().or_else(|| cfg.data_path.clone()) {
                    Some(p) => EvalData::Folder(p),
                    None => bail!("no evaluation data: pass --data <dir>, --synth train|test, or set data.path"),
                },
            };
            commands::eval(&cfg, &checkpoint, source, out)?;
        }
        Command::Gradcheck { break_gradient } => return commands::gradcheck(&cfg, break_gradient, out),
        Command::PnsVerify { seed, count } => return commands::pns_verify(seed, count, out),
    }
    Ok(true)
}
