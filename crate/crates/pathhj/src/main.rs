use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use pathhj::{exit, run, Command, Config, Overrides};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    VerifyLyapunov,
    SolveValue,
    CheckMinimax,
    Consistency,
    Stability,
    Derivatives,
    Characteristics,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Command {
        match s {
            Sub::VerifyLyapunov => Command::VerifyLyapunov,
            Sub::SolveValue => Command::SolveValue,
            Sub::CheckMinimax => Command::CheckMinimax,
            Sub::Consistency => Command::Consistency,
            Sub::Stability => Command::Stability,
            Sub::Derivatives => Command::Derivatives,
            Sub::Characteristics => Command::Characteristics,
        }
    }
}

/// Batch checks for path-dependent Hamilton-Jacobi equations.
///
/// Exit status: 0 all gated checks pass, 1 some gated check failed,
/// 2 invalid config, 3 control tree above the leaf cap, 4 other errors.
#[derive(Debug, Parser)]
#[command(name = "pathhj", version)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and CSV artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed_override: Option<u64>,
    /// Replaces grid.step.
    #[arg(long)]
    step: Option<f64>,
    /// Multiplies every gated tolerance.
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd: Command = cli.command.into();
    let overrides = Overrides { seed: cli.seed_override, step: cli.step, tolerance_scale: cli.tolerance_scale };
    let result = Config::load(&cli.config).and_then(|cfg| run(cmd, &cfg, &overrides, &cli.out));
    let code = match result {
        Ok(outcome) => {
            for g in &outcome.gates {
                println!("{} {}: {:.3e} (limit {:.3e})", if g.passed { "PASS" } else { "FAIL" }, g.name, g.value, g.limit);
            }
            println!("{}: {}", cmd.name(), if outcome.passed { "passed" } else { "FAILED" });
            if outcome.passed {
                exit::PASS
            } else {
                exit::FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
