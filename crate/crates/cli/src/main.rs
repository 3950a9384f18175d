//! `dflsim` — experiment runner for the decentralized federated learning
//! simulator.
//!
//! Subcommands: `gen-topology`, `route`, `simulate`, `analyze`. Every
//! command is driven by one JSON config document and is fully
//! deterministic: re-running with the same config produces byte-identical
//! files. Exit codes: 0 ok, 2 config/input error, 3 runtime failure.

mod cmd_analyze;
mod cmd_gen;
mod cmd_route;
mod cmd_simulate;
mod output;

use clap::{Parser, Subcommand};
use dflsim_core::config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dflsim", version, about = "Decentralized FL routing/pruning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the network topology file from the config.
    GenTopology(CommonArgs),
    /// Per-root routing report: cost, retention and latency per scheme.
    Route {
        #[command(flatten)]
        common: CommonArgs,
        /// Use an existing topology file instead of generating one.
        #[arg(long)]
        topology: Option<PathBuf>,
        /// Sweep the weight-gap threshold over 0.1..=0.9.
        #[arg(long)]
        sweep_theta: bool,
        /// Sweep the max-bound stage count over 0..=5.
        #[arg(long)]
        sweep_iterations: bool,
    },
    /// Run the full training simulation for every configured seed.
    Simulate(CommonArgs),
    /// Post-hoc analysis of a simulation output directory.
    Analyze {
        /// Directory holding summary.json and the per-seed artifacts.
        #[arg(long)]
        run: PathBuf,
        /// Output directory (defaults to the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the JSON config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (env DFLSIM_OUT overrides the default "out").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the config's seed list with a single seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Override the routing scheme.
    #[arg(long)]
    scheme: Option<String>,
    /// Override the pruning policy: optimal | none | fixed | fixed:<r>.
    #[arg(long)]
    policy: Option<String>,
}

/// Errors classified by exit code.
pub enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(e) => format!("config error: {e:#}"),
            CliError::Runtime(e) => format!("runtime error: {e:#}"),
        }
    }
}

impl From<dflsim_core::Error> for CliError {
    fn from(e: dflsim_core::Error) -> Self {
        use dflsim_core::Error as E;
        match e {
            E::NonFinite(_) => CliError::Runtime(e.into()),
            _ => CliError::Config(e.into()),
        }
    }
}

pub fn runtime_err<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

pub fn config_err<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Config(e.into())
}

impl CommonArgs {
    fn load_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(config_err)?;
                ExperimentConfig::from_json_str(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed_override {
            cfg.seeds = vec![seed];
        }
        if let Some(name) = &self.scheme {
            cfg.routing.scheme = name.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("DFLSIM_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Pruning policies this invocation covers, honoring --policy.
    fn policies(
        &self,
        cfg: &ExperimentConfig,
    ) -> Result<Vec<dflsim_core::fltrainer::PruningPolicy>, CliError> {
        use dflsim_core::config::PolicyKind;
        use dflsim_core::fltrainer::PruningPolicy;
        let from_kind = |kind: PolicyKind| -> Result<Vec<PruningPolicy>, CliError> {
            Ok(match kind {
                PolicyKind::Optimal => vec![PruningPolicy::Optimal],
                PolicyKind::None => vec![PruningPolicy::NoPruning],
                PolicyKind::Fixed => {
                    cfg.pruning.fixed_r.iter().map(|&r| PruningPolicy::Fixed(r)).collect()
                }
            })
        };
        match self.policy.as_deref() {
            None => from_kind(cfg.pruning.policy),
            Some("optimal") => Ok(vec![PruningPolicy::Optimal]),
            Some("none") => Ok(vec![PruningPolicy::NoPruning]),
            Some("fixed") => from_kind(PolicyKind::Fixed),
            Some(other) => match other.strip_prefix("fixed:") {
                Some(rate) => {
                    let r: f64 = rate
                        .parse()
                        .map_err(|_| config_err(anyhow::anyhow!("bad fixed rate {rate:?}")))?;
                    if !(r > 0.0 && r <= 1.0) {
                        return Err(config_err(anyhow::anyhow!("fixed rate {r} outside (0, 1]")));
                    }
                    Ok(vec![PruningPolicy::Fixed(r)])
                }
                None => Err(config_err(anyhow::anyhow!("unknown policy {other:?}"))),
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTopology(common) => cmd_gen::run(&common),
        Command::Route { common, topology, sweep_theta, sweep_iterations } => {
            cmd_route::run(&common, topology.as_deref(), sweep_theta, sweep_iterations)
        }
        Command::Simulate(common) => cmd_simulate::run(&common),
        Command::Analyze { run, out } => cmd_analyze::run(&run, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dflsim: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
