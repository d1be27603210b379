/*
Copyright 2026 The softarm Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
//! `softarm` command-line scenario runner.
//!
//! ```text
//! softarm run scenarios/position_35pts.json --out results
//! softarm compare scenarios/orientation_compare.json --seed 3
//! ```
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 scenario failure
//! (only for scenarios with `"strict": true`).

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use softarm::scenario::{
    compare_controllers, run_scenario, verdict_lines, Scenario, ScenarioOutput,
};

#[derive(Parser, Debug)]
#[command(
    name = "softarm",
    version,
    about = "Continuum arm control scenario runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for the step CSV and summary JSON.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every controller on every target of a scenario.
    Run { config: PathBuf },
    /// Compare controllers on a single target from identical initial states.
    Compare { config: PathBuf },
}

enum Failure {
    Config(anyhow::Error),
    Scenario,
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let (path, compare) = match &cli.command {
        Command::Run { config } => (config, false),
        Command::Compare { config } => (config, true),
    };
    let mut scenario = Scenario::load(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(Failure::Config)?;
    if let Some(seed) = cli.seed {
        scenario.config.seed = seed;
    }
    let output: ScenarioOutput = if compare {
        compare_controllers(&scenario)
            .with_context(|| format!("scenario {}", path.display()))
            .map_err(Failure::Config)?
    } else {
        run_scenario(&scenario)
    };
    let written = output
        .write_to(&cli.out)
        .with_context(|| format!("writing results to {}", cli.out.display()))
        .map_err(Failure::Config)?;
    if !cli.quiet {
        // A closed pipe (e.g. `| head`) is not an error for a report.
        let mut out = std::io::stdout().lock();
        let _ = write!(out, "{}", output.report.table());
        if compare {
            for line in verdict_lines(&output.report) {
                let _ = writeln!(out, "{line}");
            }
        }
        for p in written {
            let _ = writeln!(out, "wrote {}", p.display());
        }
    }
    if scenario.config.strict && output.report.any_failure() {
        return Err(Failure::Scenario);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Keep 2 reserved for scenario failures.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Scenario) => {
            eprintln!("error: scenario failed (strict)");
            ExitCode::from(2)
        }
    }
}
