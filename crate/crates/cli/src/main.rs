use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use trapcoh_cli::commands::{self, Report};
use trapcoh_cli::config::Seconds;
use trapcoh_cli::run::{CalibrationRequest, FreeParameter};
use trapcoh_cli::{CliError, ExperimentConfig, Result};

#[derive(Parser)]
#[command(
    name = "trapcoh",
    version,
    about = "Pulse-sequence coherence simulator for trapped atoms"
)]
struct Cli {
    /// Worker threads; defaults to one per core. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML config, or the manifest.json of an earlier run.
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Parameter {
    RayleighRate,
    PowerSigma,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one curve per configured pulse count.
    Simulate(RunArgs),
    /// Scan the pulse count: curves, coherence times, slopes and the limiting-rate fit.
    ScanPulses(RunArgs),
    /// Tune one noise magnitude until the echo coherence time hits a target.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        /// Target coherence time, e.g. 26ms.
        #[arg(long, value_parser = parse_seconds)]
        target: f64,
        #[arg(long, value_enum, default_value = "rayleigh-rate")]
        parameter: Parameter,
        #[arg(long)]
        lower: Option<f64>,
        #[arg(long)]
        upper: Option<f64>,
        /// Relative tolerance on the coherence time.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        #[arg(long, default_value_t = 20)]
        max_iterations: usize,
    },
    /// Write the motional overlap matrix as CSV.
    Overlap {
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        size: usize,
        #[arg(long, short, default_value = "overlap.csv")]
        output: PathBuf,
    },
    /// Fit the limiting rate to a summary table from scan-pulses.
    Fit { summary: PathBuf },
}

fn parse_seconds(text: &str) -> std::result::Result<f64, String> {
    Seconds::parse(text).map(|s| s.0)
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(dir) = &args.output_dir {
        cfg.output.directory = dir.clone();
    }
    let out = cfg.output.directory.clone();
    Ok((cfg, out))
}

fn execute(command: Command) -> Result<Report> {
    match command {
        Command::Simulate(args) => {
            let (cfg, out) = load(&args)?;
            commands::simulate(&cfg, &out)
        }
        Command::ScanPulses(args) => {
            let (cfg, out) = load(&args)?;
            commands::scan_pulses(&cfg, &out)
        }
        Command::Calibrate {
            run,
            target,
            parameter,
            lower,
            upper,
            tolerance,
            max_iterations,
        } => {
            let (cfg, out) = load(&run)?;
            let parameter = match parameter {
                Parameter::RayleighRate => FreeParameter::RayleighRate,
                Parameter::PowerSigma => FreeParameter::PowerSigma,
            };
            let mut req = CalibrationRequest::new(target, parameter);
            let (lo, hi) = req.bounds;
            req.bounds = (lower.unwrap_or(lo), upper.unwrap_or(hi));
            req.tolerance = tolerance;
            req.max_iterations = max_iterations;
            commands::calibrate(&cfg, &req, &out)
        }
        Command::Overlap { eta, size, output } => commands::overlap(eta, size, &output),
        Command::Fit { summary } => commands::fit(&summary),
    }
}

fn report(r: &Report) {
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    for f in &r.files {
        eprintln!("wrote {}", display(f));
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&r.summary).expect("summary always serializes")
    );
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {}", CliError::config(e.to_string()));
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(r) => {
            report(&r);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
