//! Batch simulation CLI: `run` executes a scenario sweep and writes the
//! result table, iteration traces and a reproducibility manifest; `plot`
//! renders the result table into SVG charts.

mod config;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::{build_scenario, parse_file, Overrides};
use risfair_core::experiment::{run_sweep, write_csv};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const EXIT_INVALID_CONFIG: u8 = 2;
const EXIT_BACKEND_MISSING: u8 = 3;

#[derive(Parser)]
#[command(name = "risfair", version, about = "RIS-assisted NOMA max-min optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario sweep and write results.csv, traces and a manifest.
    Run(RunArgs),
    /// Render a results.csv into SVG plots plus a plot-data table.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Parallel trial workers (0 = library default).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the reflecting-coefficient feasibility set.
    #[arg(long, value_parser = ["U", "I", "C"])]
    set: Option<String>,
    /// Override the signaling family.
    #[arg(long, value_parser = ["igs", "pgs"])]
    signaling: Option<String>,
    /// Override SIC decoding (on = NOMA, off = TIN).
    #[arg(long, value_parser = ["on", "off"])]
    sic: Option<String>,
    /// Override the objective metric.
    #[arg(long, value_parser = ["rate", "ee"])]
    metric: Option<String>,
}

#[derive(Args)]
struct PlotArgs {
    /// Input results.csv produced by `run`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for the SVG files and the plot-data table.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    details: Vec<String>,
}

fn fail(code: u8, kind: &str, details: Vec<String>) -> ExitCode {
    let record = ErrorRecord { error: kind, details };
    eprintln!("{}", serde_json::to_string_pretty(&record).unwrap());
    ExitCode::from(code)
}

#[derive(Serialize)]
struct Manifest {
    scenario_id: String,
    tool_version: String,
    config_sha256: String,
    seed_base: u64,
    trials: usize,
    schemes: Vec<String>,
    dropped_trials: usize,
    created_unix_s: u64,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Plot(args) => plot_cmd(args),
    }
}

fn run(args: RunArgs) -> ExitCode {
    let raw = match fs::read_to_string(&args.config) {
        Ok(v) => v,
        Err(e) => {
            return fail(
                EXIT_INVALID_CONFIG,
                "invalid_config",
                vec![format!("{}: {e}", args.config.display())],
            )
        }
    };
    let file = match parse_file(&raw) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_INVALID_CONFIG, "invalid_config", e.messages),
    };
    if file.backend != "barrier" {
        return fail(
            EXIT_BACKEND_MISSING,
            "backend_missing",
            vec![format!("no solver backend named {:?} is available", file.backend)],
        );
    }
    let overrides = Overrides {
        trials: args.trials,
        set: args.set.clone(),
        signaling: args.signaling.clone(),
        sic: args.sic.as_deref().map(|v| v == "on"),
        metric: args.metric.clone(),
        seed_base: std::env::var("RNO_SEED").ok().and_then(|v| v.parse().ok()),
    };
    let scenario = match build_scenario(&file, &overrides) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_INVALID_CONFIG, "invalid_config", e.messages),
    };
    if args.jobs > 0 {
        // Ignore failure: the pool may already exist in test harnesses.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build_global();
    }

    let sweep = match run_sweep(&scenario) {
        Ok(v) => v,
        Err(e) => return fail(1, "run_failed", vec![e.to_string()]),
    };

    if let Err(e) = write_outputs(&args.out, &raw, &scenario, &sweep) {
        return fail(1, "io_error", vec![e.to_string()]);
    }
    println!(
        "wrote {} rows ({} trials dropped) to {}",
        sweep.rows.len(),
        sweep.dropped_trials,
        args.out.display()
    );
    ExitCode::SUCCESS
}

fn write_outputs(
    out_dir: &Path,
    raw_config: &str,
    scenario: &risfair_core::experiment::Scenario,
    sweep: &risfair_core::experiment::SweepResult,
) -> anyhow::Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("results.csv"), write_csv(&sweep.rows))?;
    let trace_dir = out_dir.join("traces");
    fs::create_dir_all(&trace_dir)?;
    for (name, text) in &sweep.traces {
        fs::write(trace_dir.join(format!("{name}.txt")), text)?;
    }
    let manifest = Manifest {
        scenario_id: scenario.id.clone(),
        tool_version: TOOL_VERSION.into(),
        config_sha256: hex_digest(raw_config.as_bytes()),
        seed_base: scenario.seed_base,
        trials: scenario.trials,
        schemes: scenario.schemes.iter().map(|s| s.name()).collect(),
        dropped_trials: sweep.dropped_trials,
        created_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn plot_cmd(args: PlotArgs) -> ExitCode {
    let raw = match fs::read_to_string(&args.input) {
        Ok(v) => v,
        Err(e) => {
            return fail(
                EXIT_INVALID_CONFIG,
                "invalid_input",
                vec![format!("{}: {e}", args.input.display())],
            )
        }
    };
    let data = match plot::read_results(&raw) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_INVALID_CONFIG, "invalid_input", vec![e.to_string()]),
    };
    if let Err(e) = (|| -> anyhow::Result<()> {
        fs::create_dir_all(&args.out)?;
        for (metric, series) in &data.metrics {
            let svg = plot::render_svg(metric, &data.sweep_var, series);
            fs::write(args.out.join(format!("{metric}_vs_{}.svg", data.sweep_var)), svg)?;
        }
        fs::write(args.out.join("plot_data.csv"), plot::plot_data_table(&data))?;
        Ok(())
    })() {
        return fail(1, "io_error", vec![e.to_string()]);
    }
    println!("wrote {} plot(s) to {}", data.metrics.len(), args.out.display());
    ExitCode::SUCCESS
}
