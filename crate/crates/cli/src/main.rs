//! `phasemeas`: run, check, sweep and bundle phase-space measurement
//! scenarios.
//!
//! Exit status: 0 success, 1 configuration error, 2 numerical failure or a
//! failed check, 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phasemeas::artifacts::{run_to_dir, Overrides};
use phasemeas::figdata::{write_bundle, RegimeChart};
use phasemeas::scenario::ScenarioConfig;
use phasemeas::sweep::{run_sweep, verify_sweep, SWEEP_INDEX};
use phasemeas::verify::{verify_dir, VerifyReport};
use phasemeas::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "phasemeas", version, about = "Phase-space simulation of continuous classical measurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one scenario and write its artifacts.
    Run(RunArgs),
    /// Check stored artifacts (a run or a sweep) against analytic results.
    Verify(VerifyArgs),
    /// Run every point of the config's sweep block.
    Sweep(SweepArgs),
    /// Build plot-ready CSV bundles from completed runs.
    Figdata(FigdataArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; defaults to output.directory, then runs/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress progress and report output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct OverrideArgs {
    /// Replace evolution.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace output.snapshot_every.
    #[arg(long)]
    snapshot_every: Option<f64>,
}

impl OverrideArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            snapshot_every: self.snapshot_every,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Points run at once.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct FigdataArgs {
    /// Directory whose subdirectories are completed runs.
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Bundle directory.
    #[arg(long, default_value = "figdata")]
    out: PathBuf,
    /// Snapshots kept per run.
    #[arg(long, default_value_t = 4)]
    panels: usize,
    #[arg(long)]
    quiet: bool,
}

enum Outcome {
    Done,
    ChecksFailed,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Numerical => 2,
        ErrorKind::Io => 3,
    }
}

fn load(common: &Common) -> Result<(ScenarioConfig, Vec<u8>, PathBuf), Error> {
    let (cfg, bytes) = ScenarioConfig::load(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| match &cfg.output.directory {
        Some(d) => PathBuf::from(d),
        None => Path::new("runs").join(&cfg.name),
    });
    Ok((cfg, bytes, out))
}

fn report(rep: &VerifyReport, quiet: bool) -> Outcome {
    if !quiet {
        print!("{}", rep.to_text());
    }
    if rep.passed() {
        Outcome::Done
    } else {
        Outcome::ChecksFailed
    }
}

fn run(args: RunArgs) -> Result<Outcome, Error> {
    let (cfg, bytes, out) = load(&args.common)?;
    let m = run_to_dir(&cfg, &bytes, &out, args.overrides.overrides())?;
    if !args.common.quiet {
        println!("{}: completed (seed {}, {})", out.display(), m.seed, m.rng_algorithm);
    }
    Ok(Outcome::Done)
}

fn verify(args: VerifyArgs) -> Result<Outcome, Error> {
    let (_, bytes, out) = load(&args.common)?;
    let rep = if out.join(SWEEP_INDEX).exists() {
        verify_sweep(&out, &bytes)?
    } else {
        verify_dir(&out, &bytes)?
    };
    Ok(report(&rep, args.common.quiet))
}

fn sweep(args: SweepArgs) -> Result<Outcome, Error> {
    let (cfg, bytes, out) = load(&args.common)?;
    let quiet = args.common.quiet;
    let progress = |label: &str, r: &Result<(), Error>| {
        if quiet {
            return;
        }
        match r {
            Ok(()) => eprintln!("{label}: completed"),
            Err(e) => eprintln!("{label}: failed: {e}"),
        }
    };
    let (index, err) = run_sweep(&cfg, &bytes, &out, args.overrides.overrides(), args.workers, &progress)?;
    if !quiet {
        println!("{}: {} points", out.display(), index.points.len());
    }
    match err {
        Some(e) => Err(e),
        None => Ok(Outcome::Done),
    }
}

fn figdata(args: FigdataArgs) -> Result<Outcome, Error> {
    let sources = write_bundle(args.runs.as_deref(), &args.out, args.panels, &RegimeChart::default())?;
    if !args.quiet {
        println!("{}: {} runs and the regime chart", args.out.display(), sources.len());
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Verify(a) => verify(a),
        Command::Sweep(a) => sweep(a),
        Command::Figdata(a) => figdata(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
