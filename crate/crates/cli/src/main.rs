mod args;
mod commands;
mod error;
mod manifest;

use std::io::Write;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use serde_json::Value;

use args::{Cli, Command, OutputArgs};
use commands::Run;
use error::{CliError, Result};
use manifest::{RunManifest, Runtime};

fn subcommand_name(command: &Command) -> &'static str {
    match command {
        Command::Test(_) => "test",
        Command::Rsv(_) => "rsv",
        Command::Match(_) => "match",
        Command::Simulate(_) => "simulate",
        Command::Outcome(_) => "outcome",
        Command::Replay(_) => "replay",
    }
}

fn output_args(command: &Command) -> &OutputArgs {
    match command {
        Command::Test(a) => &a.output,
        Command::Rsv(a) => &a.output,
        Command::Match(a) => &a.output,
        Command::Simulate(a) => &a.output,
        Command::Outcome(a) => &a.output,
        Command::Replay(a) => &a.output,
    }
}

fn build_report(run: Run, started: SystemTime, clock: Instant) -> Result<Value> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: subcommand_name(&run.command).to_string(),
        seed: run.seed,
        command: run.command,
        inputs: run.inputs,
        flags: run.flags,
        runtime: Runtime {
            jobs: rayon::current_num_threads(),
            started_unix_ms: started.duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0),
            elapsed_ms: clock.elapsed().as_millis(),
        },
    };
    let mut report = match run.body {
        Value::Object(map) => map,
        other => {
            let mut map = serde_json::Map::new();
            map.insert("result".into(), other);
            map
        }
    };
    report.insert("manifest".into(), serde_json::to_value(manifest)?);
    Ok(Value::Object(report))
}

fn emit(report: &Value, text: &str, output: &OutputArgs) -> Result<()> {
    let pretty = serde_json::to_string_pretty(report)?;
    if let Some(path) = &output.report {
        std::fs::write(path, format!("{pretty}\n")).map_err(CliError::io(path))?;
    }
    let mut stdout = std::io::stdout().lock();
    let shown = if output.json { format!("{pretty}\n") } else { text.to_string() };
    // A closed pipe is not worth an error exit.
    let _ = stdout.write_all(shown.as_bytes());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    }
    let started = SystemTime::now();
    let clock = Instant::now();
    match &cli.command {
        Command::Replay(a) => {
            let (run, recorded) = commands::replay(&a.manifest)?;
            let text = run.text.clone();
            let report = build_report(run, started, clock)?;
            emit(&report, &text, &a.output)?;
            if commands::numeric_body(&report) != recorded {
                return Err(CliError::ReplayMismatch(a.manifest.display().to_string()));
            }
            eprintln!("replay: numeric output identical to {}", a.manifest.display());
            Ok(())
        }
        command => {
            let run = commands::execute(command)?;
            let text = run.text.clone();
            let report = build_report(run, started, clock)?;
            emit(&report, &text, output_args(command))?;
            if let Command::Simulate(s) = command {
                if let Some(path) = &s.out {
                    let pretty = serde_json::to_string_pretty(&report)?;
                    std::fs::write(path, format!("{pretty}\n")).map_err(CliError::io(path))?;
                }
            }
            Ok(())
        }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
