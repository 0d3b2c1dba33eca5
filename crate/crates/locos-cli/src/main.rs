//! Command-line driver for local orthonormal system experiments.
//!
//! Each subcommand reads one flat `key = value` config, runs seeded trials,
//! and writes a JSON report plus CSV tables into `--out`. Reports are byte
//! reproducible from `(config, seed)` and independent of `--jobs`; timing
//! goes to stderr so it never lands in a comparable artifact.
//!
//! Exit codes: 0 on success, 1 for config or usage mistakes, 2 when the run
//! itself detects an invariant violation.

mod config;
mod exec;
mod ops;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

use crate::ops::OpError;

#[derive(Parser)]
#[command(name = "locos", version, about = "Local orthonormal system experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a system and report its orthogonality diagnostics.
    Build(RunArgs),
    /// Check the level-set certificate on random atoms.
    Remez(RunArgs),
    /// Measure the sign-flip norm constant.
    Uncond(RunArgs),
    /// Tail bounds for signed expansions.
    Weaktype(RunArgs),
    /// Norms of normalized sums over index sets.
    Democracy(RunArgs),
    /// Three-part decomposition at a threshold.
    Gundy(RunArgs),
    /// Greedy m-term approximation against the best subset.
    Greedy(RunArgs),
    /// Approximation of an indicator under progressive refinement.
    Density(RunArgs),
    /// Pointwise blowup of the three-atom profile.
    Counterexample(RunArgs),
    /// Cross-term bounds for grouped splits.
    #[command(name = "op-condition")]
    OpCondition(RunArgs),
    /// Product splits of the unit square.
    Tensor(RunArgs),
    /// Merge same-shape reports, keeping the largest constants.
    #[command(name = "report-merge")]
    ReportMerge(MergeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` experiment description.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed` entry.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent trials.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory for reports.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    /// Reports to merge.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
    };

    let started = Instant::now();
    let code = match &cli.cmd {
        Cmd::Build(a) => run_op("build", a),
        Cmd::Remez(a) => run_op("remez", a),
        Cmd::Uncond(a) => run_op("uncond", a),
        Cmd::Weaktype(a) => run_op("weaktype", a),
        Cmd::Democracy(a) => run_op("democracy", a),
        Cmd::Gundy(a) => run_op("gundy", a),
        Cmd::Greedy(a) => run_op("greedy", a),
        Cmd::Density(a) => run_op("density", a),
        Cmd::Counterexample(a) => run_op("counterexample", a),
        Cmd::OpCondition(a) => run_op("op-condition", a),
        Cmd::Tensor(a) => run_op("tensor", a),
        Cmd::ReportMerge(a) => run_merge(a),
    };
    eprintln!("elapsed: {} ms", started.elapsed().as_millis());
    code
}

fn run_op(name: &'static str, args: &RunArgs) -> ExitCode {
    match execute(name, args) {
        Ok(violations) if violations.is_empty() => ExitCode::SUCCESS,
        Ok(violations) => {
            for v in &violations {
                eprintln!("invariant violated: {v}");
            }
            ExitCode::from(2)
        }
        Err(OpError::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::FAILURE
        }
        Err(OpError::Run(e)) => {
            eprintln!("run failed: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(name: &'static str, args: &RunArgs) -> Result<Vec<String>, OpError> {
    let mut cfg = config::Config::load(&args.config).map_err(OpError::Config)?;
    if let Some(seed) = args.seed {
        cfg.set("seed", seed.to_string());
    }
    let seed = cfg.u64_or("seed", 0).map_err(OpError::Config)?;
    if let Some(op) = cfg.get("op") {
        let canonical = match op {
            "unconditionality" => "uncond",
            other => other,
        };
        if canonical != name {
            return Err(OpError::Config(anyhow!(
                "config declares op = {op}, but the `{name}` command was invoked"
            )));
        }
    }
    let json_default = format!("{name}.json");
    let json_name = cfg.str_or("out.json", &json_default).to_string();
    let config_hash = cfg.hash();

    let ctx = ops::RunCtx {
        cfg: &cfg,
        op: name,
        seed,
        jobs: args.jobs.max(1),
        out: &args.out,
        config_hash: &config_hash,
    };
    let outcome = ops::run(&ctx)?;

    let path = outcome
        .report
        .write(&args.out, &json_name)
        .map_err(OpError::Run)?;
    println!("{}", path.display());
    for file in &outcome.files {
        println!("{}", file.display());
    }
    Ok(outcome.violations)
}

fn run_merge(args: &MergeArgs) -> ExitCode {
    let merged = args
        .reports
        .iter()
        .map(|p| report::Report::read(p))
        .collect::<Result<Vec<_>, _>>()
        .and_then(|reports| report::merge(&reports));
    match merged {
        Ok(merged) => match merged.write(&args.out, "merged.json") {
            Ok(path) => {
                println!("{}", path.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("run failed: {e:#}");
                ExitCode::from(2)
            }
        },
        Err(e) => {
            eprintln!("config error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
