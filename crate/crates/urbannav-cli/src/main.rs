//! Command-line front end: wires pose logs through sample building,
//! tagging, training, evaluation, closed-loop simulation, and plotting.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use urbannav_core::config::AppConfig;
use urbannav_core::Error;

#[derive(Parser, Debug)]
#[command(name = "urbannav", version, about = "Egomotion-to-navigation-policy pipeline")]
struct Cli {
    /// Config file (TOML). Defaults to $URBANNAV_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dotted config overrides, e.g. --set training.epochs=3 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Cap on parallel trajectory processing (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Seed override (shorthand for setting seed plus section seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pose logs -> normalized trajectories -> dataset shard.
    Process {
        /// Manifest file: `id pose_log frame_source domain` per line.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Re-tag a shard from detection logs and report scenario proportions.
    Tag {
        #[arg(long)]
        shard: PathBuf,
        /// Directory of `<trajectory id>.txt` detection logs.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Generate synthetic pose logs, detection logs, and a manifest.
    Synth,
    /// Train from shards and write checkpoints plus the training log.
    Train {
        /// Shard directories (defaults to training.shards from the config).
        #[arg(long)]
        shards: Vec<PathBuf>,
    },
    /// Fine-tune from a base checkpoint at the fine-tune learning rate.
    Finetune {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        shards: Vec<PathBuf>,
    },
    /// Offline benchmark: fill the scenario-stratified metric table.
    Eval {
        #[arg(long)]
        shards: Vec<PathBuf>,
        #[arg(long, conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// JSONL of predictions (one per sample, shard order).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Closed-loop trials over waypoint courses.
    Simulate {
        #[arg(long, conflicts_with = "policy")]
        checkpoint: Option<PathBuf>,
        /// Built-in policy: `oracle` or `never`.
        #[arg(long, default_value = "oracle")]
        policy: String,
        /// Directory of course TOML files; generated when absent.
        #[arg(long)]
        courses: Option<PathBuf>,
        /// Courses to generate per category when --courses is absent.
        #[arg(long, default_value_t = 10)]
        generate: usize,
    },
    /// Emit a trajectory figure (SVG) for one sample.
    Plot {
        #[arg(long)]
        shard: PathBuf,
        /// Sample index within the shard.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::SchemaVersionMismatch { .. }
        | Error::CountMismatch { .. }
        | Error::DataEmpty(_)
        | Error::TrajectoryTooShort { .. }
        | Error::EmptyInput(_)
        | Error::OutOfRange { .. }
        | Error::ShapeMismatch { .. }
        | Error::CheckpointMismatch(_) => 2,
        Error::DegeneratePose { .. }
        | Error::InvalidQuaternion { .. }
        | Error::DegenerateTrajectory { .. }
        | Error::InvalidStepLength(_)
        | Error::DegenerateAction(_)
        | Error::NonFiniteInput(_)
        | Error::AllPairsDegenerate
        | Error::DegeneratePair
        | Error::EmptyAfterExclusion(_)
        | Error::NonFiniteLoss { .. }
        | Error::Policy { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Let clap print help/version normally; everything else is a
            // usage error (exit 1 by this tool's convention).
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    let config_path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("URBANNAV_CONFIG").map(PathBuf::from));
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
        overrides.push(format!("sampling.seed={seed}"));
        overrides.push(format!("training.seed={seed}"));
        overrides.push(format!("synth.seed={seed}"));
    }
    if let Some(workers) = cli.workers {
        overrides.push(format!("workers={workers}"));
    }
    let config = match AppConfig::load(config_path.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let ctx = commands::Context { config, out, force: cli.force };

    let result = match &cli.command {
        Command::Process { manifest } => commands::process(&ctx, manifest),
        Command::Tag { shard, detections } => commands::tag(&ctx, shard, detections.as_deref()),
        Command::Synth => commands::synth(&ctx),
        Command::Train { shards } => commands::train(&ctx, shards),
        Command::Finetune { base, shards } => commands::finetune(&ctx, base, shards),
        Command::Eval { shards, checkpoint, predictions } => {
            commands::eval(&ctx, shards, checkpoint.as_deref(), predictions.as_deref())
        }
        Command::Simulate { checkpoint, policy, courses, generate } => {
            commands::simulate(&ctx, checkpoint.as_deref(), policy, courses.as_deref(), *generate)
        }
        Command::Plot { shard, index, checkpoint } => {
            commands::plot(&ctx, shard, *index, checkpoint.as_deref())
        }
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CmdError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
        Err(commands::CmdError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(commands::CmdError::PartialFailure { failed, total }) => {
            eprintln!("error: {failed} of {total} trajectories failed; see log above");
            ExitCode::from(2)
        }
    }
}
