use clap::{Parser, Subcommand};
use fedtrust::harness::config::{ScenarioConfig, TransportMode};
use fedtrust::harness::report::{emit_report, ReportFormat, RunReport};
use fedtrust::harness::{bootstrap, run_scenario_with, RunOptions};
use fedtrust::registry::{Registry, Snapshot};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "fedtrust", version, about = "Credential-gated federated learning scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario; exits 0 only if every scenario assertion passes.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        transport: Option<TransportMode>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
        /// Registry snapshot to start from.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Check a scenario config without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the registry a scenario starts with (issuer DIDs, schemas, grants) as a snapshot.
    BootstrapRegistry {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render a saved JSON report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, String> {
    let mut config = ScenarioConfig::load(path).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(command: Command) -> Result<bool, String> {
    match command {
        Command::Run {
            config,
            seed,
            transport,
            out,
            format,
            registry,
        } => {
            let mut config = load_config(&config, seed)?;
            if let Some(t) = transport {
                config.transport = t;
                config.validate().map_err(|e| e.to_string())?;
            }
            let registry = match registry {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                    let snapshot: Snapshot = serde_json::from_str(&text).map_err(|e| e.to_string())?;
                    Some(snapshot)
                }
                None => None,
            };
            let options = RunOptions {
                registry,
                ..RunOptions::default()
            };
            let report = run_scenario_with(&config, options).map_err(|e| e.to_string())?;
            write_output(out.as_deref(), &emit_report(&report, format))?;
            Ok(report.passed)
        }
        Command::ValidateConfig { config } => {
            let config = load_config(&config, None)?;
            println!("{}: ok ({} agents)", config.name, config.agents.len());
            Ok(true)
        }
        Command::BootstrapRegistry { config, seed, out } => {
            let config = load_config(&config, seed)?;
            let registry = Arc::new(Registry::new());
            bootstrap(&config, &registry).map_err(|e| e.to_string())?;
            let mut text = registry.to_json();
            text.push('\n');
            write_output(out.as_deref(), &text)?;
            Ok(true)
        }
        Command::Report { input, format, out } => {
            let text = std::fs::read_to_string(&input).map_err(|e| format!("{}: {e}", input.display()))?;
            let report = RunReport::from_json(&text).map_err(|e| e.to_string())?;
            write_output(out.as_deref(), &emit_report(&report, format))?;
            Ok(report.passed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
