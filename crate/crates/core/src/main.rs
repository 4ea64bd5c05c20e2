use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crossdiff::config::{preset, RunConfig, PRESETS};
use crossdiff::experiment::{self, RunError};

#[derive(Parser)]
#[command(name = "crossdiff", version, about = "Finite-volume experiments for cross-diffusion systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file or a bundled preset by name.
    Run { config: String },
    /// Build the mesh and model of a config and check the structural hypotheses.
    Validate { config: String },
    /// Bundled presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset's TOML.
    Show { name: String },
}

fn load(arg: &str) -> Result<RunConfig, RunError> {
    let path = Path::new(arg);
    if path.exists() {
        Ok(RunConfig::load(path)?)
    } else {
        Ok(preset(arg)?)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Presets { action: PresetAction::List } => {
            for p in PRESETS {
                println!("{:<10} {}", p.name, p.summary);
            }
            ExitCode::SUCCESS
        }
        Command::Presets { action: PresetAction::Show { name } } => match PRESETS.iter().find(|p| p.name == name) {
            Some(p) => {
                print!("{}", p.text);
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("error: unknown preset '{name}'");
                ExitCode::from(2)
            }
        },
        Command::Validate { config } => {
            let report = load(&config).and_then(|cfg| experiment::validate(&cfg));
            match report {
                Ok(r) => {
                    print!("{}", toml::to_string(&r).unwrap_or_default());
                    for v in &r.hypotheses.violations {
                        log::warn!("{v}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Run { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let out: PathBuf = experiment::output_dir(&cfg);
            log::info!("writing to {}", out.display());
            match experiment::run(&cfg, &out) {
                Ok(s) => {
                    log::info!("done: {} steps, output in {}", s.steps.len(), s.out_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e @ (RunError::Config(_) | RunError::Unsupported(_))) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
