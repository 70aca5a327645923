mod config;
mod manifest;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::Settings;

#[derive(Debug, Parser)]
#[command(name = "gridgame", version, about = "Load-alteration attack and adaptive protection simulator")]
struct Cli {
    /// Directory for CSV outputs and the run manifest.
    #[arg(long, global = true, env = "GRIDGAME_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Root seed; every random stream derives from it.
    #[arg(long, global = true, env = "GRIDGAME_SEED", default_value_t = 1)]
    seed: u64,
    /// Flat key = value config file (see README for the keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Unmodified IEEE 14-bus case.
    Base,
    /// Peak-hour stressed case used by the game.
    Peak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    None,
    Scripted,
    Policy,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CaseArgs {
    #[arg(long, value_enum, default_value_t = Scenario::Base)]
    pub scenario: Scenario,
    /// Case file replacing the bundled IEEE 14-bus data.
    #[arg(long)]
    pub case: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Attack onset, seconds.
    #[arg(long)]
    pub attack_start: Option<f64>,
    #[arg(long, value_enum, default_value_t = AttackMode::Scripted)]
    pub attack_mode: AttackMode,
    /// Falsified offset for the scripted attack, °C.
    #[arg(long, default_value_t = 2.0)]
    pub attack_delta: f64,
    /// Attacker policy file for `--attack-mode policy`.
    #[arg(long)]
    pub attack_policy: Option<PathBuf>,
    /// off, static, or policy:<path to defender policy>.
    #[arg(long, default_value = "static")]
    pub aps: String,
    /// Override the episode length in control steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Demand noise variance, MW².
    #[arg(long)]
    pub noise_var: Option<f64>,
    /// Ambient profile CSV (`time_s,ambient_c`).
    #[arg(long)]
    pub ambient: Option<PathBuf>,
    /// Also write every transition as JSON lines.
    #[arg(long)]
    pub dump_transitions: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Directory for the trained attacker and defender.
    #[arg(long)]
    pub save_policy: Option<PathBuf>,
    /// Batch all updates at the end of each episode.
    #[arg(long)]
    pub update_at_epoch_end: bool,
    /// Train both players jointly from the first episode.
    #[arg(long)]
    pub no_curriculum: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Directory written by `train --save-policy`.
    #[arg(long)]
    pub load_policy: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub attack_episodes: usize,
    #[arg(long, default_value_t = 10)]
    pub clean_episodes: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FprArgs {
    /// Policy directory; without it the static relays face the scripted attack.
    #[arg(long)]
    pub load_policy: Option<PathBuf>,
    /// Comma-separated noise variances, MW².
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1,2,5,10,20")]
    pub variances: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    /// Attack onset, seconds.
    #[arg(long)]
    pub attack_start: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub attack_delta: f64,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Solve the power flow and write bus voltages.
    Powerflow(CaseArgs),
    /// Per-line stability index table.
    Fvsi(CaseArgs),
    /// One episode of the peak scenario with trace output.
    Simulate(SimulateArgs),
    /// Train attacker and defender.
    Train(TrainArgs),
    /// Frozen-policy evaluation against the static baseline.
    Evaluate(EvaluateArgs),
    /// Premature-trip rate under increasing demand noise.
    FprSweep(FprArgs),
    /// Re-run the invocation recorded in a manifest.
    Replay {
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Powerflow(_) => "powerflow",
            Self::Fvsi(_) => "fvsi",
            Self::Simulate(_) => "simulate",
            Self::Train(_) => "train",
            Self::Evaluate(_) => "evaluate",
            Self::FprSweep(_) => "fpr-sweep",
            Self::Replay { .. } => "replay",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Domain(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "error kind=usage msg={m:?}"),
            Self::Domain(m) => write!(f, "error kind=domain msg={m:?}"),
        }
    }
}

pub fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        s.apply_toml(&text).map_err(CliError::Usage)?;
    }
    s.apply_env(std::env::vars()).map_err(CliError::Usage)?;
    Ok(s)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Replay { manifest } => manifest::replay(manifest, &cli.out_dir),
        cmd => settings(&cli).and_then(|s| {
            let inv = manifest::Invocation {
                command: cmd.clone(),
                seed: cli.seed,
                config: s.render(),
            };
            manifest::execute(&inv, &cli.out_dir)
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
