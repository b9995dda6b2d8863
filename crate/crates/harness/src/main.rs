use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nexus_core::checks::{Suite, DEFAULT_CHECK_SEED};
use nexus_harness::config::parse_override;
use nexus_harness::run::{resolve_out_dir, run_paired, run_to_dir};
use nexus_harness::{plot, sweep, validate, ExperimentConfig, HarnessError, Result};
use toml::Value;

#[derive(Parser)]
#[command(
    name = "nexus",
    version,
    about = "Nexus optimizer experiments and bound checks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one config, or a baseline/candidate pair with --compare-with.
    Run(RunArgs),
    /// Run the numerical bound checks and print a JSON report.
    Validate(ValidateArgs),
    /// Plot metrics.csv columns to an SVG file.
    Plot(PlotArgs),
    /// Run a grid of overrides times seeds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Second config, run under the same seed; writes diff.json.
    #[arg(long)]
    compare_with: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set")]
    set: Vec<String>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value = "all")]
    suite: Suite,
    #[arg(long, default_value_t = DEFAULT_CHECK_SEED)]
    seed: u64,
    /// Replaces the nominal inner step size of the expansion checks.
    #[arg(long)]
    gamma: Option<f64>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// metrics.csv files; each run is named after its directory.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "train_loss")]
    fields: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// `key=v1,v2,...`, repeatable; the grid is their cartesian product.
    #[arg(long = "set")]
    set: Vec<String>,
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    #[arg(long)]
    out: PathBuf,
}

fn single_overrides(set: &[String], seed: Option<u64>) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    for s in set {
        let (k, mut vs) = parse_override(s)?;
        if vs.len() != 1 {
            return Err(HarnessError::Failed(format!(
                "--set {s:?}: run takes one value per key"
            )));
        }
        out.push((k, vs.remove(0)));
    }
    if let Some(seed) = seed {
        let seed = i64::try_from(seed)
            .map_err(|_| HarnessError::Failed("--seed must be below 2^63".into()))?;
        out.push(("seed".into(), Value::Integer(seed)));
    }
    Ok(out)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<bool> {
    let ov = single_overrides(&a.set, a.seed)?;
    let cfg = ExperimentConfig::load_with(&a.config, &ov)?;
    let out = resolve_out_dir(&cfg, a.out.as_deref());
    match a.compare_with {
        None => {
            let rec = run_to_dir(&cfg, &out)?;
            print_json(&rec.summary)?;
            Ok(rec.ok())
        }
        Some(other) => {
            let cand = ExperimentConfig::load_with(&other, &ov)?;
            let (a, b, d) = run_paired(&cfg, &cand, &out)?;
            print_json(&d)?;
            Ok(a.ok() && b.ok())
        }
    }
}

fn cmd_validate(a: ValidateArgs) -> Result<bool> {
    let report = validate(a.suite, a.seed, a.gamma);
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    if let Some(p) = &a.out {
        std::fs::write(p, &text).map_err(|e| HarnessError::io(p, e))?;
    }
    print!("{text}");
    Ok(report.passed)
}

fn cmd_sweep(a: SweepArgs) -> Result<bool> {
    let axes = a
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let index = sweep::run_sweep(&a.config, &axes, a.seeds, &a.out)?;
    eprintln!(
        "{} runs, {} failed, index at {}",
        index.runs.len(),
        index.failures(),
        Path::new(&a.out).join("sweep.json").display()
    );
    Ok(index.failures() == 0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Run(a) => cmd_run(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Plot(a) => plot::plot(&a.files, &a.fields, &a.out).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
