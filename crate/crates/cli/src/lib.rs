//! Command-line front end for `quasistat`.
//!
//! Exit codes: 0 ok, 1 configuration error, 2 non-convergence or a
//! cap-dominated simulation, 3 a required kernel condition fails, 4 a
//! theorem-backed invariant was violated.

pub mod commands;
pub mod config;

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use quasistat::format::KeyValues;

use commands::{ExitCode, Failure, Outcome};
use config::{Command, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "quasistat",
    version,
    about = "Quasistationary distributions and exit times of multiplicative Markov chains"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Solve for the quasistationary distribution and expected exit time.
    Solve(Flags),
    /// Scan the kernel conditions.
    CheckConditions(Flags),
    /// Monte Carlo exit times started from the quasistationary distribution.
    Simulate(Flags),
    /// Solve over a family of thresholds and check the ordering results.
    Sweep(Flags),
    /// Re-run a command from its manifest.
    Replay { manifest: PathBuf },
}

/// Flags shared by every command. Each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// key=value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset: ewma | shiryaev-roberts | cusum
    #[arg(long)]
    pub model: Option<String>,
    /// power:<alpha> | affine:<a> | max-one
    #[arg(long)]
    pub phi: Option<String>,
    /// lognormal:<mu>:<sigma> | lr-gaussian:<theta>:pre|post
    #[arg(long)]
    pub innovation: Option<String>,
    /// Threshold
    #[arg(long = "A", allow_negative_numbers = true)]
    pub a: Option<String>,
    /// kind:n[:lower], kind is geometric or uniform
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub tol: Option<String>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<String>,
    #[arg(long)]
    pub reps: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long = "step-cap")]
    pub step_cap: Option<String>,
    /// Comma-separated increasing scale factors, e.g. 1,2,4,8
    #[arg(long = "y-factors")]
    pub y_factors: Option<String>,
    /// Also run the coupled chains at this scale factor (simulate)
    #[arg(long)]
    pub couple: Option<String>,
    /// on | off: Monte Carlo per sweep row
    #[arg(long)]
    pub mc: Option<String>,
    /// Output path prefix
    #[arg(long)]
    pub out: Option<String>,
}

impl Flags {
    /// Config file entries followed by flag entries; later keys win.
    pub fn merged(&self) -> Result<KeyValues, Failure> {
        let mut kv = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    Failure::new(ExitCode::Config, format!("{}: {e}", path.display()))
                })?;
                KeyValues::parse(&text)?
            }
            None => KeyValues::new(),
        };
        let pairs = [
            ("model", &self.model),
            ("phi", &self.phi),
            ("innovation", &self.innovation),
            ("a", &self.a),
            ("grid", &self.grid),
            ("tol", &self.tol),
            ("max_iter", &self.max_iter),
            ("reps", &self.reps),
            ("seed", &self.seed),
            ("step_cap", &self.step_cap),
            ("y_factors", &self.y_factors),
            ("couple", &self.couple),
            ("mc", &self.mc),
            ("out", &self.out),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                kv.push(k, v.as_str());
            }
        }
        Ok(kv)
    }
}

fn run_with_flags(command: Command, flags: &Flags) -> Result<Outcome, Failure> {
    let kv = flags.merged()?;
    let cfg = RunConfig::resolve(command, &kv)?;
    commands::run(&cfg)
}

/// Runs a parsed command line, prints its output, and returns the exit code.
pub fn main_with(cli: Cli) -> i32 {
    let result = match &cli.command {
        Sub::Solve(f) => run_with_flags(Command::Solve, f),
        Sub::CheckConditions(f) => run_with_flags(Command::CheckConditions, f),
        Sub::Simulate(f) => run_with_flags(Command::Simulate, f),
        Sub::Sweep(f) => run_with_flags(Command::Sweep, f),
        Sub::Replay { manifest } => commands::replay(manifest),
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            for n in &outcome.notes {
                eprintln!("quasistat: {n}");
            }
            outcome.code as i32
        }
        Err(f) => {
            eprintln!("quasistat: {}", f.message);
            f.code as i32
        }
    }
}
