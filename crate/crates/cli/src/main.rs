//! `rhoreg`: verification suites and density computations driven by a TOML
//! config, writing canonical JSON reports.
//!
//! Exit status: 0 when the report passes, 2 when a property is violated (the
//! witness is embedded in the report), 1 on usage or configuration errors.

mod commands;
mod config;
mod report;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "rhoreg", version, about = "Cluster regularization checks and electron-density estimates")]
struct Cli {
    #[command(subcommand)]
    group: Group,
}

#[derive(Debug, Subcommand)]
enum Group {
    /// Property suites for the construction.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo density computations.
    Density {
        #[arg(value_enum)]
        task: Task,
        #[command(flatten)]
        common: Common,
        /// Also write the radial profile as CSV (profile only).
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Suite {
    Ansatz,
    Pou,
    Cluster,
    Transform,
    Supports,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Task {
    Eval,
    Profile,
    Derivatives,
    Decay,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Report destination; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Overrides mc.seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides the sample budget of the command: task.configs for ansatz,
    /// pou and transform, task.support_samples for supports, mc.samples
    /// otherwise.
    #[arg(long, value_name = "U64")]
    samples: Option<u64>,
    /// Worker threads, 0 for one per core. Results do not depend on it.
    #[arg(long, value_name = "N", default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    VerifyAnsatz,
    VerifyPou,
    VerifyCluster,
    VerifyTransform,
    VerifySupports,
    DensityEval,
    DensityProfile,
    DensityDerivatives,
    DensityDecay,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::VerifyAnsatz => "verify ansatz",
            Command::VerifyPou => "verify pou",
            Command::VerifyCluster => "verify cluster",
            Command::VerifyTransform => "verify transform",
            Command::VerifySupports => "verify supports",
            Command::DensityEval => "density eval",
            Command::DensityProfile => "density profile",
            Command::DensityDerivatives => "density derivatives",
            Command::DensityDecay => "density decay",
        })
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

fn write_csv(path: &Path, rows: &[commands::ProfileRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["radius", "value", "std_error", "samples", "seed"])?;
    for row in rows {
        w.write_record([
            report::format_float(row.radius),
            report::format_float(row.value),
            report::format_float(row.std_error),
            row.samples.to_string(),
            row.seed.to_string(),
        ])?;
    }
    Ok(w.flush()?)
}

/// Returns whether the report passed.
fn execute(command: Command, common: &Common, csv: Option<&Path>) -> Result<bool> {
    if csv.is_some() && command != Command::DensityProfile {
        anyhow::bail!("--csv is only valid for density profile");
    }
    let overrides = Overrides {
        seed: common.seed,
        samples: common.samples,
    };
    let resolved = config::load(&common.config, command, overrides)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(common.threads).build()?;
    let outcome = pool.install(|| commands::run(command, &resolved))?;
    let config_value = serde_json::to_value(&resolved.config)?;
    let report = json!({
        "command": command.to_string(),
        "config_digest": report::digest(&config_value),
        "config": config_value,
        "results": outcome.results,
        "pass": outcome.pass,
    });
    write_output(common.out.as_deref(), &report::pretty(&report))?;
    if let Some(path) = csv {
        write_csv(path, &outcome.profile)?;
    }
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (command, common, csv) = match &cli.group {
        Group::Verify { suite, common } => {
            let c = match suite {
                Suite::Ansatz => Command::VerifyAnsatz,
                Suite::Pou => Command::VerifyPou,
                Suite::Cluster => Command::VerifyCluster,
                Suite::Transform => Command::VerifyTransform,
                Suite::Supports => Command::VerifySupports,
            };
            (c, common, None)
        }
        Group::Density { task, common, csv } => {
            let c = match task {
                Task::Eval => Command::DensityEval,
                Task::Profile => Command::DensityProfile,
                Task::Derivatives => Command::DensityDerivatives,
                Task::Decay => Command::DensityDecay,
            };
            (c, common, csv.as_deref())
        }
    };
    match execute(command, common, csv) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
