//! `bakr`: simulate, fit, predict, associate and benchmark from the shell.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bakr::BakrError;
use clap::{Args, Parser, Subcommand};

use config::{parse_value, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core { context: String, source: BakrError },
}

impl CliError {
    pub fn core(context: &str, source: BakrError) -> Self {
        CliError::Core {
            context: context.to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core { source, .. } if source.is_numerical() => 4,
            CliError::Core { source, .. } if source.is_data() => 3,
            CliError::Core { source, .. } => match source {
                BakrError::SamplerSetup(_) | BakrError::EmptyChain => 3,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core { context, source } => write!(f, "{context}: {source}"),
        }
    }
}

pub trait Context<T> {
    fn ctx(self, context: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for Result<T, BakrError> {
    fn ctx(self, context: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::core(context, e))
    }
}

#[derive(Parser, Debug)]
#[command(name = "bakr", version, about = "Bayesian approximate kernel regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    settings: Settings,

    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a simulated genotype matrix, response and truth file.
    Simulate,
    /// Fit the model and store the posterior chain.
    Fit,
    /// Posterior predictive means and intervals from a stored chain.
    Predict,
    /// Posterior probabilities of association and selected covariates.
    Associate,
    /// Run a grid of simulated fits.
    Benchmark,
}

/// Every flag maps onto a config key; flags win over the config file.
#[derive(Args, Debug)]
struct Settings {
    /// Flat TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Kernel bandwidth.
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Number of random features.
    #[arg(long, global = true)]
    d: Option<usize>,
    /// Cumulative variance kept by the eigendecomposition.
    #[arg(long = "q-var", global = true)]
    q_var: Option<f64>,
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true)]
    burnin: Option<usize>,
    /// Permutations for calibrating the inclusion cutoff.
    #[arg(long, global = true)]
    perms: Option<usize>,
    #[arg(long, global = true)]
    fwer: Option<f64>,
    /// Inclusion cutoff on PPAA.
    #[arg(long, global = true)]
    r: Option<f64>,
    #[arg(long, global = true)]
    x: Option<PathBuf>,
    #[arg(long, global = true)]
    y: Option<PathBuf>,
    #[arg(long = "x-star", global = true)]
    x_star: Option<PathBuf>,
    /// Directory written by `fit`.
    #[arg(long, global = true)]
    chain: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Any other config key, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

impl Settings {
    fn overrides(&self) -> Result<Vec<(String, toml::Value)>, CliError> {
        let mut out = Vec::new();
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{item}'")))?;
            out.push((k.trim().replace('-', "_"), parse_value(v.trim())));
        }
        let path = |p: &PathBuf| toml::Value::String(p.to_string_lossy().into_owned());
        let int = |v: u64| -> Result<toml::Value, CliError> {
            i64::try_from(v)
                .map(toml::Value::Integer)
                .map_err(|_| CliError::Usage(format!("{v} is too large")))
        };
        let pairs: [(&str, Option<toml::Value>); 14] = [
            ("seed", self.seed.map(int).transpose()?),
            ("h", self.h.map(toml::Value::Float)),
            ("d", self.d.map(|v| int(v as u64)).transpose()?),
            ("q_var", self.q_var.map(toml::Value::Float)),
            ("iters", self.iters.map(|v| int(v as u64)).transpose()?),
            ("burnin", self.burnin.map(|v| int(v as u64)).transpose()?),
            ("perms", self.perms.map(|v| int(v as u64)).transpose()?),
            ("fwer", self.fwer.map(toml::Value::Float)),
            ("r", self.r.map(toml::Value::Float)),
            ("x", self.x.as_ref().map(path)),
            ("y", self.y.as_ref().map(path)),
            ("x_star", self.x_star.as_ref().map(path)),
            ("chain", self.chain.as_ref().map(path)),
            ("output", self.out.as_ref().map(path)),
        ];
        out.extend(pairs.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        Ok(out)
    }
}

fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let cfg = RunConfig::load(cli.settings.config.as_deref(), &cli.settings.overrides()?)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::Associate => commands::associate(&cfg),
        Command::Benchmark => commands::benchmark(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bakr: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
