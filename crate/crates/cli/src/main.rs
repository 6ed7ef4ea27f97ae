use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use otm::runner::{self, exit, RunSpec};
use otm::human;
use otm_core::scheduler::{Limits, Policy};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "otm", version, about = "Run open-transaction scenarios and check their histories for opacity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    RoundRobin,
    Seeded,
    Exhaustive,
}

#[derive(Subcommand)]
enum Command {
    /// Run a registered scenario.
    Run {
        scenario: String,
        #[arg(long, value_enum, default_value = "round-robin")]
        policy: PolicyArg,
        /// Seed for `--policy seeded`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        max_steps: u64,
        #[arg(long, default_value_t = 64)]
        max_restarts: u32,
        /// Write the history as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        check_opacity: bool,
        /// Characters available to getChar.
        #[arg(long, default_value = "")]
        input: String,
        /// Shorthand for `--param n=N`.
        #[arg(long)]
        n: Option<i64>,
        /// Scenario parameter, `name=value`; repeatable.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, i64)>,
        /// Write the canonical opacity graph in DOT format.
        #[arg(long)]
        emit_opg: Option<PathBuf>,
        #[arg(long)]
        human: bool,
    },
    /// Check a recorded trace for consistency and opacity.
    CheckTrace {
        path: PathBuf,
        #[arg(long)]
        emit_opg: Option<PathBuf>,
        #[arg(long)]
        human: bool,
    },
    /// List registered scenarios and their parameters.
    List {
        #[arg(long)]
        human: bool,
    },
}

fn parse_param(s: &str) -> Result<(String, i64), String> {
    let (k, v) = s.split_once('=').ok_or("expected name=value")?;
    let v = v.trim().parse().map_err(|e| format!("{v:?}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn emit<T: Serialize>(value: &T, human: bool, render: impl Fn(&T) -> String) {
    if human {
        print!("{}", render(value));
    } else {
        println!("{}", serde_json::to_string(value).expect("reports serialize"));
    }
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("otm: {msg}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            policy,
            seed,
            max_steps,
            max_restarts,
            trace,
            check_opacity,
            input,
            n,
            params,
            emit_opg,
            human,
        } => {
            let limits = match Limits::new(max_steps, max_restarts) {
                Ok(l) => l,
                Err(e) => return fail(exit::USAGE, e),
            };
            let policy = match policy {
                PolicyArg::RoundRobin => Policy::RoundRobin,
                PolicyArg::Seeded => Policy::SeededRandom(seed),
                PolicyArg::Exhaustive => Policy::Exhaustive,
            };
            let mut spec = RunSpec::new(&scenario, policy);
            spec.limits = limits;
            spec.input = input;
            spec.check_opacity = check_opacity;
            spec.trace = trace;
            spec.emit_opg = emit_opg;
            for (k, v) in n.map(|n| ("n".to_string(), n)).into_iter().chain(params) {
                spec.params.set(&k, v);
            }
            match runner::run_scenario(&spec) {
                Ok(report) => {
                    emit(&report, human, human::report);
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => fail(e.exit_code(), e),
            }
        }
        Command::CheckTrace { path, emit_opg, human } => match runner::check_trace(&path, emit_opg.as_deref()) {
            Ok(report) => {
                emit(&report, human, human::check);
                ExitCode::from(report.exit_code() as u8)
            }
            Err(e) => fail(e.exit_code(), e),
        },
        Command::List { human } => {
            emit(&runner::list(), human, |l| human::list(l));
            ExitCode::SUCCESS
        }
    }
}
