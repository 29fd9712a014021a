//! `handocc` command-line tool.

mod commands;
mod failure;
mod files;
mod manifest;

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use commands::*;
use failure::Failure;
use manifest::{manifest_path, RunManifest};

/// Hand envelopes, occupancy fields and intersection-aware refinement of two-hand poses.
///
/// Exit codes: 0 success, 2 input error, 3 contract violation, 4 numerical failure.
/// Every run writes `<out>.manifest.json` next to its main output.
#[derive(Debug, Parser)]
#[command(name = "handocc", version)]
struct Cli {
    /// Seed for all randomness in the run.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a kinematic pose to a 21-joint skeleton. Exits 3 if the residual is 0.5 mm or more.
    Fit(FitArgs),
    /// Forward kinematics: pose to skeleton.
    Fk(FkArgs),
    /// Generate and validate a watertight hand mesh.
    Mesh(MeshArgs),
    /// Refine hand pairs with the intersection loss.
    Refine(RefineArgs),
    /// Intersection counts and per-hand field IoU for one pair.
    Metrics(MetricsArgs),
    /// Train an occupancy network on a pose list.
    TrainOcc(TrainArgs),
    /// Refine noisy copies of ground-truth pairs with and without the loss.
    StudyNoise(NoiseArgs),
    /// Draw random poses.
    SamplePoses(SamplePosesArgs),
    /// Draw random intersecting or touching pairs.
    SamplePairs(SamplePairsArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Fk(_) => "fk",
            Command::Mesh(_) => "mesh",
            Command::Refine(_) => "refine",
            Command::Metrics(_) => "metrics",
            Command::TrainOcc(_) => "train-occ",
            Command::StudyNoise(_) => "study-noise",
            Command::SamplePoses(_) => "sample-poses",
            Command::SamplePairs(_) => "sample-pairs",
            Command::Replay(_) => "replay",
        }
    }
}

fn dispatch(cmd: &Command, seed: u64) -> Result<Run, Failure> {
    match cmd {
        Command::Fit(a) => fit(a, seed),
        Command::Fk(a) => fk(a, seed),
        Command::Mesh(a) => mesh(a, seed),
        Command::Refine(a) => refine(a, seed),
        Command::Metrics(a) => metrics(a, seed),
        Command::TrainOcc(a) => train_occ(a, seed),
        Command::StudyNoise(a) => study_noise(a, seed),
        Command::SamplePoses(a) => sample_poses(a, seed),
        Command::SamplePairs(a) => sample_pairs(a, seed),
        Command::Replay(a) => unreachable!("replay of {} is handled by the caller", a.manifest.display()),
    }
}

fn replay(a: &ReplayArgs) -> i32 {
    let m: RunManifest = match files::read_json(&a.manifest) {
        Ok(m) => m,
        Err(f) => {
            eprintln!("error: {f}");
            return f.exit_code();
        }
    };
    if m.argv.iter().any(|s| s == "replay") {
        eprintln!("error: input error: manifest records a replay");
        return 2;
    }
    if m.version != env!("CARGO_PKG_VERSION") {
        eprintln!("warning: manifest from version {}, running {}", m.version, env!("CARGO_PKG_VERSION"));
    }
    if let Err(e) = std::env::set_current_dir(&m.cwd) {
        eprintln!("error: input error: cannot enter {}: {e}", m.cwd.display());
        return 2;
    }
    let mut argv = vec!["handocc".to_owned()];
    argv.extend(m.argv);
    run(argv)
}

fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Command::Replay(a) = &cli.command {
        return replay(a);
    }
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    let run = match dispatch(&cli.command, cli.seed) {
        Ok(r) => r,
        Err(f) => {
            eprintln!("error: {f}");
            return f.exit_code();
        }
    };
    let code = run.failure.as_ref().map_or(0, Failure::exit_code);
    if let Some(out) = run.outputs.first() {
        let m = RunManifest {
            tool: "handocc".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: cli.command.name().into(),
            argv: argv[1..].to_vec(),
            cwd: std::env::current_dir().unwrap_or_default(),
            seed: cli.seed,
            config: run.config,
            inputs: run.inputs,
            outputs: run.outputs.clone(),
            results: run.results,
            exit_code: code,
            started_unix_s: started,
            wall_clock_s: clock.elapsed().as_secs_f64(),
        };
        if let Err(f) = files::write_json(&manifest_path(out), &m) {
            eprintln!("error: {f}");
            return f.exit_code();
        }
    }
    if let Some(f) = &run.failure {
        eprintln!("error: {f}");
    }
    code
}

fn main() {
    std::process::exit(run(std::env::args().collect()));
}
