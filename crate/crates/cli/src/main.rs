//! `ccc`: simulations, controller comparisons, IDM identification and
//! synthetic traffic generation from the command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod svg;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use ccc_core::presets::Preset;
use ccc_core::simkit::{ControllerKind, ScenarioError};
use clap::{Args, Parser, Subcommand};

/// Command failure, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Io(String),
    Config(String),
    Parse(String),
    Collision(String),
    Fallback(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Parse(_) => 3,
            Failure::Collision(_) => 4,
            Failure::Fallback(_) => 5,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Failure::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Io(m) => write!(f, "I/O error: {m}"),
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Parse(m) => write!(f, "parse error: {m}"),
            Failure::Collision(m) => write!(f, "simulation failure: {m}"),
            Failure::Fallback(m) => write!(f, "solver fallback threshold exceeded: {m}"),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Parse(e.to_string()),
        }
    }
}

/// Hidden-vehicle selection: one count or the sweep 1..=4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NhArg {
    Count(usize),
    Sweep,
}

impl std::str::FromStr for NhArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("sweep") {
            return Ok(NhArg::Sweep);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(NhArg::Count(n)),
            _ => Err(format!("expected a positive integer or 'sweep', got '{s}'")),
        }
    }
}

/// Where the traffic comes from.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Scenario CSV (`t,s_1,v_1,...`); a `<stem>.meta.toml` sidecar is read if present.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Generate the traffic instead: freeflow, step or congested.
    #[arg(long, value_name = "KIND")]
    pub synthetic: Option<Preset>,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Parameter preset; defaults to the scenario's label, then congested.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// TOML configuration file (see `ccc config`).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed of the synthetic traffic and of the identification search.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Vehicles in a synthetic chain; overrides `run.chain_len`.
    #[arg(long)]
    pub chain_len: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Parser)]
#[command(name = "ccc", version, about = "Connected cruise control laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one controller and write its trajectory, summary and plots.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "pccc")]
        controller: ControllerKind,
        /// Use vehicle n+2 as the connected vehicle (n hidden vehicles).
        #[arg(long)]
        nh: Option<usize>,
    },
    /// Compare controllers by energy, optionally over hidden-vehicle counts.
    Compare {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        common: Common,
        /// Comma-separated controller list.
        #[arg(long, value_delimiter = ',', default_value = "racc,rccc,pacc,pccc")]
        controllers: Vec<ControllerKind>,
        /// Hidden-vehicle count of the connected controllers, or `sweep` for 1..=4.
        #[arg(long)]
        nh: Option<NhArg>,
    },
    /// Fit IDM parameters to a recorded chain.
    Identify {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic scenario CSV and its metadata sidecar.
    Generate {
        #[arg(long, value_name = "KIND")]
        synthetic: Preset,
        #[command(flatten)]
        common: Common,
    },
    /// Print the default configuration of a preset as TOML.
    Config {
        #[arg(long, default_value = "congested")]
        preset: Preset,
    },
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { source, common, controller, nh } => commands::simulate(&source, &common, controller, nh),
        Command::Compare { source, common, controllers, nh } => commands::compare(&source, &common, &controllers, nh),
        Command::Identify { source, common } => commands::identify(&source, &common),
        Command::Generate { synthetic, common } => commands::generate(synthetic, &common),
        Command::Config { preset } => commands::print_config(preset),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ccc: {f}");
            ExitCode::from(f.code())
        }
    }
}
