use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use denoise_bench::dataset::DatasetManifest;
use denoise_bench::harness::{self, read_csv, RunManifest, RunOptions};
use denoise_bench::noise::{corrupt_dataset, NoiseSpec};
use denoise_bench::plugin::{validate_plugin, DenoiserDescriptor};
use denoise_bench::save_image;

/// Reproducible benchmarking of image denoisers.
#[derive(Debug, Parser)]
#[command(name = "denoise-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Write a noisy copy of every image in a directory.
    Corrupt(CorruptArgs),
    /// Check an external denoiser against the plugin protocol.
    Validate(ValidateArgs),
    /// Execute a run manifest.
    Run(RunArgs),
    /// Reprint summary tables from a results CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct CorruptArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long = "out", value_name = "DIR")]
    output: PathBuf,
    /// Noise pipeline, e.g. `gaussian:sigma=50`, `sp:fraction=0.2`,
    /// `mixture:sigma=50,fraction=0.2`.
    #[arg(long)]
    noise: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Seconds before the plugin is killed.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    /// Invoke the plugin once per image instead of once per directory.
    #[arg(long)]
    per_image: bool,
    /// Plugin command line (`--input DIR --output DIR` is appended).
    #[arg(last = true, required = true, value_name = "CMD")]
    command: Vec<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    /// Print the resolved plan and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, value_name = "FILE")]
    csv: PathBuf,
    /// Include per-dataset method rankings.
    #[arg(long)]
    rank: bool,
    /// Include the Kendall tau matrix between dataset rankings.
    #[arg(long)]
    tau: bool,
}

const USAGE_ERROR: u8 = 2;

fn cmd_corrupt(args: CorruptArgs) -> Result<ExitCode> {
    let spec = match NoiseSpec::parse(&args.noise, args.seed).and_then(|s| s.validate().map(|()| s)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: invalid --noise '{}': {e}", args.noise);
            return Ok(ExitCode::from(USAGE_ERROR));
        }
    };
    let dataset = DatasetManifest::synthetic("corrupt", &args.input, spec);
    let opts = RunOptions { jobs: args.jobs };
    let samples = harness::with_pool(&opts, || corrupt_dataset(&dataset))??;
    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    for s in &samples {
        save_image(&s.noisy, args.output.join(format!("{}.png", s.image_id)))?;
    }
    log::info!("wrote {} noisy images to {}", samples.len(), args.output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode> {
    let desc = DenoiserDescriptor::external("plugin", args.command)
        .with_timeout(args.timeout)
        .with_batch(!args.per_image);
    let report = validate_plugin(&desc)?;
    println!("{report}");
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let manifest = RunManifest::load(&args.manifest)?;
    if args.dry_run {
        print!("{}", manifest.describe_plan()?);
        return Ok(ExitCode::SUCCESS);
    }
    let outcome = harness::execute_run(&manifest, &RunOptions { jobs: args.jobs })?;
    println!(
        "{} records written to {}",
        outcome.records.len(),
        manifest.output_dir.join(harness::RESULTS_CSV).display()
    );
    for f in &outcome.failures {
        eprintln!("failed: {} on {}: {}", f.method, f.dataset, f.message);
    }
    Ok(if outcome.succeeded() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let records = read_csv(&args.csv)?;
    let summary = harness::emit_summary(&records)?;
    print!("{}", summary.render(args.rank, args.tau));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DENOISE_BENCH_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Cmd::Corrupt(a) => cmd_corrupt(a),
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
