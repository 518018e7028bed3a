use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lengen_harness::plot::emit_plots;
use lengen_harness::{execute, resolve, ExperimentKind, HarnessError, Overrides, RunManifest, Scale};
use serde_json::json;

/// Teacher–student experiments on length and compositional generalization.
#[derive(Debug, Parser)]
#[command(name = "lengen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on length T, evaluate at longer lengths.
    Lengthgen(RunArgs),
    /// Train on the band distribution, evaluate on its corner complement.
    Compgen(RunArgs),
    /// Degenerate teacher: train below and above the threshold length.
    Failure(RunArgs),
    /// High-capacity student with and without hidden-trace supervision.
    Cot(RunArgs),
    /// Student outside the teacher's class, with a matched control.
    Nonrealizable(RunArgs),
    /// Length threshold of a finite scalar SSM class.
    Finite(RunArgs),
    /// Constrained learner on an ε-cover of scalar SSMs.
    Cover(RunArgs),
    /// Empirical vs analytical parameter Lipschitz constants.
    Lipschitz(RunArgs),
    /// Length generalization with discrete tokens.
    Discrete(RunArgs),
    /// Render SVG charts from results or trajectory CSVs.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML config; unset fields come from the scale preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; seed i of the sweep is base + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    scale: Option<Scale>,
    /// Run directory (default runs/<experiment>-<config hash>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Refuse to run unless the resolved config matches this manifest's hash.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// CSV files written by a run.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<serde_json::Value, HarnessError> {
    let (kind, args) = match cli.command {
        Command::Plot(p) => {
            let written = emit_plots(&p.inputs, &p.out)?;
            return Ok(json!({"status": "ok", "plots": written}));
        }
        Command::Lengthgen(a) => (ExperimentKind::Lengthgen, a),
        Command::Compgen(a) => (ExperimentKind::Compgen, a),
        Command::Failure(a) => (ExperimentKind::Failure, a),
        Command::Cot(a) => (ExperimentKind::Cot, a),
        Command::Nonrealizable(a) => (ExperimentKind::Nonrealizable, a),
        Command::Finite(a) => (ExperimentKind::Finite, a),
        Command::Cover(a) => (ExperimentKind::Cover, a),
        Command::Lipschitz(a) => (ExperimentKind::Lipschitz, a),
        Command::Discrete(a) => (ExperimentKind::Discrete, a),
    };
    let cfg = resolve(
        kind,
        &Overrides {
            config: args.config,
            scale: args.scale,
            seed: args.seed,
            out: args.out,
        },
    )?;
    if let Some(path) = &args.manifest {
        RunManifest::load(path)?.check(&cfg)?;
    }
    let (dir, manifest) = execute(&cfg)?;
    let diverged = manifest.seeds.iter().filter(|s| s.status != "ok").count();
    Ok(json!({
        "status": "ok",
        "experiment": kind,
        "out": dir,
        "config-hash": manifest.config_hash,
        "diverged-seeds": diverged,
        "wall-time-secs": manifest.wall_time_secs,
    }))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}", e.to_json());
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
