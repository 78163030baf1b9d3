// Copyright 2026 The disorder-ensemble Authors
// SPDX-License-Identifier: Apache-2.0

//! `disorder-sim`: run a scenario and write its artifact bundle.
//!
//! Exit status: 0 on success, 2 on a configuration error, 3 when a numerical
//! pipeline fails (the bundle is still written for the pipelines that
//! succeeded).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use disorder_ensemble::scenario::{self, ScenarioConfig, ScenarioInput, ScenarioKind};
use disorder_ensemble::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "disorder-sim", version, about = "Disorder-ensemble scenario driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the bundle.
    Run {
        #[command(flatten)]
        source: Source,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads. Changes speed only, never results.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config without running it.
    Validate {
        #[command(flatten)]
        source: Source,
    },
    /// Print the fully resolved config as JSON.
    Resolve {
        #[command(flatten)]
        source: Source,
    },
}

#[derive(Args)]
struct Source {
    /// Scenario config, or the manifest.json of an earlier bundle.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario kind (overrides the config).
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig, Error> {
        let mut input = match &self.config {
            Some(path) => ScenarioInput::from_path(path)?,
            None => ScenarioInput::default(),
        };
        if let Some(kind) = self.scenario {
            if input.scenario.is_some_and(|k| k != kind) {
                // Scenario-specific defaults of the old kind must not leak
                // into the new one.
                input = ScenarioInput {
                    master_seed: input.master_seed,
                    output_dir: input.output_dir,
                    ..ScenarioInput::default()
                };
            }
            input.scenario = Some(kind);
        }
        if let Some(seed) = self.seed {
            input.master_seed = Some(seed);
        }
        input.resolve()
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config_error() { EXIT_CONFIG } else { EXIT_NUMERICAL })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { source } => {
            let config = match source.load() {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            let diag = scenario::validate(&config);
            for w in &diag.warnings {
                println!("warning: {w}");
            }
            for e in &diag.errors {
                println!("error: {e}");
            }
            if diag.has_errors() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Resolve { source } => match source.load() {
            Ok(config) => match serde_json::to_string_pretty(&config) {
                Ok(text) => {
                    println!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e.into()),
            },
            Err(e) => fail(&e),
        },
        Command::Run { source, out, threads } => {
            let config = match source.load() {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                if n == 0 {
                    eprintln!("error: --threads must be positive");
                    return ExitCode::from(EXIT_CONFIG);
                }
                pool = pool.num_threads(n);
            }
            let pool = match pool.build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: thread pool: {e}");
                    return ExitCode::from(EXIT_NUMERICAL);
                }
            };
            match pool.install(|| scenario::run(&config, out.as_deref())) {
                Ok(outcome) => {
                    for e in &outcome.errors {
                        eprintln!("error: pipeline {}: {}", e.pipeline, e.message);
                    }
                    println!("wrote {} files to {}", outcome.files.len() + 1, outcome.output_dir.display());
                    if outcome.errors.is_empty() {
                        ExitCode::SUCCESS
                    } else if outcome.errors.iter().all(|e| e.config_error) {
                        ExitCode::from(EXIT_CONFIG)
                    } else {
                        ExitCode::from(EXIT_NUMERICAL)
                    }
                }
                Err(e) => fail(&e),
            }
        }
    }
}
