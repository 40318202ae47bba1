//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use urbannav_core::config::AppConfig;
use urbannav_core::dataset::{build_samples, ingest_detections, NavigationSample};
use urbannav_core::error::Error;
use urbannav_core::features::{provider_for, FeatureProvider};
use urbannav_core::geometry::Trajectory;
use urbannav_core::ingest::{load_trajectory, parse_manifest};
use urbannav_core::losses::sigmoid;
use urbannav_core::metrics::{evaluate, render_text, MetricReport, Prediction};
use urbannav_core::model::{load_checkpoint, ModelInput, Policy};
use urbannav_core::plot::{render_svg, sample_plot};
use urbannav_core::scenario::{sample_angles, scenario_proportions, tag_sample};
use urbannav_core::shard::{read_shard, write_shard, DatasetShard, ShardMetadata};
use urbannav_core::sim::{
    generate_course_suite, read_course, render_success_table, run_trial, success_table, Course,
    ModelPolicy, NeverArrivingPolicy, OraclePolicy, SimPolicy,
};
use urbannav_core::synth::generate;
use urbannav_core::training;

pub struct Context {
    pub config: AppConfig,
    pub out: PathBuf,
    pub force: bool,
}

pub enum CmdError {
    Core(Error),
    Usage(String),
    PartialFailure { failed: usize, total: usize },
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        CmdError::Core(e)
    }
}

type CmdResult = Result<(), CmdError>;

/// Refuse to clobber non-empty outputs unless --force was given.
fn prepare_out_dir(ctx: &Context) -> Result<(), CmdError> {
    let dir = &ctx.out;
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| CmdError::Core(Error::io(dir.display().to_string(), e)))?
            .next()
            .is_some();
        if non_empty && !ctx.force {
            return Err(CmdError::Usage(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| CmdError::Core(Error::io(dir.display().to_string(), e)))?;
    Ok(())
}

fn write_file(path: &Path, body: &str) -> Result<(), CmdError> {
    std::fs::write(path, body)
        .map_err(|e| CmdError::Core(Error::io(path.display().to_string(), e)))?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CmdError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CmdError::Core(Error::Config(format!("serialize {}: {e}", path.display()))))?;
    write_file(path, &body)
}

/// Pose logs -> trajectories -> one shard. Trajectories are processed in
/// parallel (bounded by `workers`); failures are logged and skipped, and a
/// nonzero exit summarizes them.
pub fn process(ctx: &Context, manifest: &Path) -> CmdResult {
    prepare_out_dir(ctx)?;
    let entries = parse_manifest(manifest)?;
    let total = entries.len();
    let forward = ctx.config.forward_axis;
    let subsample = ctx.config.pose_subsample;
    let params = ctx.config.sampling.clone();

    let workers = match ctx.config.workers {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        n => n,
    }
    .min(entries.len().max(1));

    type TrajResult = Result<(Trajectory, Vec<NavigationSample>), Error>;
    let results: Vec<Mutex<Option<TrajResult>>> =
        (0..entries.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= entries.len() {
                    break;
                }
                let outcome = load_trajectory(&entries[i], forward, subsample)
                    .and_then(|traj| build_samples(&traj, &params).map(|s| (traj, s)));
                *results[i].lock().expect("worker poisoned") = Some(outcome);
            });
        }
    });

    let mut samples = Vec::new();
    let mut step_lengths = BTreeMap::new();
    let mut domains = BTreeMap::new();
    let mut failed = 0usize;
    for (entry, slot) in entries.iter().zip(results) {
        match slot.into_inner().expect("poisoned").expect("worker filled slot") {
            Ok((traj, built)) => {
                println!(
                    "processed {}: {} poses, {} samples, step length {:.4}",
                    entry.id,
                    traj.len(),
                    built.len(),
                    traj.step_length_mean.unwrap_or_default()
                );
                step_lengths.insert(traj.id.clone(), traj.step_length_mean.expect("fitted"));
                domains.insert(traj.id.clone(), traj.source_domain);
                samples.extend(built);
            }
            Err(e) => {
                println!("skipped {}: {e}", entry.id);
                failed += 1;
            }
        }
    }

    let shard = DatasetShard::new(
        samples,
        ShardMetadata { step_lengths, domains, params },
    );
    write_shard(&shard, &ctx.out)?;
    println!("wrote {} samples to {}", shard.samples.len(), ctx.out.display());
    if failed > 0 {
        return Err(CmdError::PartialFailure { failed, total });
    }
    Ok(())
}

/// Re-tag a shard from per-trajectory detection logs and write the tagged
/// shard plus a proportions report.
pub fn tag(ctx: &Context, shard_dir: &Path, detections_dir: Option<&Path>) -> CmdResult {
    prepare_out_dir(ctx)?;
    let mut shard = read_shard(shard_dir)?;
    let tagger = &ctx.config.tagger;

    let mut det_maps = BTreeMap::new();
    if let Some(dir) = detections_dir {
        for id in shard.metadata.step_lengths.keys() {
            let path = dir.join(format!("{id}.txt"));
            if path.exists() {
                det_maps.insert(id.clone(), ingest_detections(&path)?);
            }
        }
    }

    let mut untaggable = 0usize;
    for sample in &mut shard.samples {
        let dets = det_maps
            .get(&sample.trajectory_id)
            .and_then(|m| m.get(&(sample.t as i64)));
        sample.scenario_tags = tag_sample(sample, dets, tagger);
        if sample_angles(sample, tagger.angle_convention).is_none() {
            untaggable += 1;
        }
    }

    let tags: Vec<_> = shard.samples.iter().map(|s| s.scenario_tags).collect();
    let proportions = scenario_proportions(&tags)?;
    write_shard(&shard, &ctx.out)?;

    let mut text = String::new();
    text.push_str(&format!(
        "# scenario proportions over {} samples (angle convention: {})\n",
        shard.samples.len(),
        tagger.angle_convention
    ));
    for (scenario, fraction) in &proportions {
        text.push_str(&format!("{:<10} {:.4}\n", scenario.to_string(), fraction));
    }
    text.push_str(&format!("untaggable-angle samples: {untaggable}\n"));
    print!("{text}");
    write_file(&ctx.out.join("proportions.txt"), &text)?;
    write_json(&ctx.out.join("proportions.json"), &proportions)?;
    Ok(())
}

/// Write synthetic pose logs, detection logs, and a manifest.
pub fn synth(ctx: &Context) -> CmdResult {
    prepare_out_dir(ctx)?;
    let spec = &ctx.config.synth;
    let synths = generate(spec);
    let logs_dir = ctx.out.join("logs");
    let det_dir = ctx.out.join("detections");
    for dir in [&logs_dir, &det_dir] {
        std::fs::create_dir_all(dir)
            .map_err(|e| CmdError::Core(Error::io(dir.display().to_string(), e)))?;
    }

    let mut manifest = String::new();
    for s in &synths {
        let log_path = logs_dir.join(format!("{}.txt", s.id));
        urbannav_core::ingest::write_pose_log(&log_path, &s.to_pose3_log())?;
        write_file(&det_dir.join(format!("{}.txt", s.id)), &s.detection_log_text())?;
        manifest.push_str(&format!("{} logs/{}.txt {} {}\n", s.id, s.id, s.id, s.source_domain));
    }
    write_file(&ctx.out.join("manifest.txt"), &manifest)?;
    println!(
        "wrote {} synthetic trajectories ({} poses each) to {}",
        synths.len(),
        spec.poses_per_trajectory,
        ctx.out.display()
    );
    Ok(())
}

fn read_shards(dirs: &[PathBuf]) -> Result<DatasetShard, CmdError> {
    if dirs.is_empty() {
        return Err(CmdError::Usage("no shard directories given".to_string()));
    }
    let mut merged: Option<DatasetShard> = None;
    for dir in dirs {
        let shard = read_shard(dir)?;
        merged = Some(match merged {
            None => shard,
            Some(mut acc) => {
                acc.samples.extend(shard.samples);
                acc.metadata.step_lengths.extend(shard.metadata.step_lengths);
                acc.metadata.domains.extend(shard.metadata.domains);
                acc
            }
        });
    }
    Ok(merged.expect("non-empty dirs"))
}

fn shard_dirs(ctx: &Context, flag: &[PathBuf]) -> Vec<PathBuf> {
    if flag.is_empty() {
        ctx.config.training.shards.iter().map(PathBuf::from).collect()
    } else {
        flag.to_vec()
    }
}

pub fn train(ctx: &Context, shards: &[PathBuf]) -> CmdResult {
    prepare_out_dir(ctx)?;
    let shard = read_shards(&shard_dirs(ctx, shards))?;
    let provider = provider_for(
        &ctx.config.model.backbone_id,
        ctx.config.model.token_dim,
        ctx.config.seed,
    )?;
    let report = training::train(
        &ctx.config.model,
        &ctx.config.training,
        &shard,
        provider.as_ref(),
        &ctx.out,
    )?;
    println!(
        "trained {} steps over {} samples; final checkpoint {}",
        report.steps,
        shard.samples.len(),
        report.final_checkpoint.display()
    );
    Ok(())
}

pub fn finetune(ctx: &Context, base: &Path, shards: &[PathBuf]) -> CmdResult {
    prepare_out_dir(ctx)?;
    let shard = read_shards(&shard_dirs(ctx, shards))?;
    let (policy, _) = load_checkpoint(base)?;
    let provider = provider_for(&policy.cfg.backbone_id, policy.cfg.token_dim, ctx.config.seed)?;
    let report =
        training::finetune(&ctx.config.training, base, &shard, provider.as_ref(), &ctx.out)?;
    println!(
        "fine-tuned {} steps at lr {}; final checkpoint {}",
        report.steps,
        ctx.config.training.fine_tune_lr,
        report.final_checkpoint.display()
    );
    Ok(())
}

fn predict_with_policy(
    policy: &Policy,
    provider: &dyn FeatureProvider,
    samples: &[NavigationSample],
) -> Result<Vec<Prediction>, Error> {
    samples
        .iter()
        .map(|s| {
            let frames = s
                .past_frame_refs
                .iter()
                .map(|r| provider.features(r))
                .collect::<Result<Vec<_>, _>>()?;
            let out = policy.forward(&ModelInput {
                frames,
                past_positions: s.past_positions.clone(),
                target: s.target_position,
            })?;
            Ok(Prediction { actions: out.actions, arrival_prob: sigmoid(out.arrival_logit) })
        })
        .collect()
}

fn read_predictions(path: &Path, expected: usize) -> Result<Vec<Prediction>, CmdError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| CmdError::Core(Error::io(path.display().to_string(), e)))?;
    let mut preds = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line).map_err(|e| {
            CmdError::Core(Error::parse(path.display().to_string(), i + 1, e.to_string()))
        })?;
        preds.push(p);
    }
    if preds.len() != expected {
        return Err(CmdError::Core(Error::CountMismatch {
            samples: expected,
            predictions: preds.len(),
        }));
    }
    Ok(preds)
}

fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), CmdError> {
    let file = std::fs::File::create(path)
        .map_err(|e| CmdError::Core(Error::io(path.display().to_string(), e)))?;
    let mut w = std::io::BufWriter::new(file);
    for p in preds {
        let line = serde_json::to_string(p)
            .map_err(|e| CmdError::Core(Error::Config(format!("serialize prediction: {e}"))))?;
        writeln!(w, "{line}").map_err(|e| CmdError::Core(Error::io(path.display().to_string(), e)))?;
    }
    w.flush().map_err(|e| CmdError::Core(Error::io(path.display().to_string(), e)))?;
    Ok(())
}

/// Offline benchmark. Predictions come from a checkpoint or from a
/// predictions file; the report is written as text and JSON.
pub fn eval(
    ctx: &Context,
    shards: &[PathBuf],
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
) -> CmdResult {
    prepare_out_dir(ctx)?;
    let shard = read_shards(&shard_dirs(ctx, shards))?;

    let preds = match (checkpoint, predictions) {
        (Some(ckpt), None) => {
            let (policy, _) = load_checkpoint(ckpt)?;
            let provider =
                provider_for(&policy.cfg.backbone_id, policy.cfg.token_dim, ctx.config.seed)?;
            let preds = predict_with_policy(&policy, provider.as_ref(), &shard.samples)?;
            write_predictions(&ctx.out.join("predictions.jsonl"), &preds)?;
            preds
        }
        (None, Some(path)) => read_predictions(path, shard.samples.len())?,
        (None, None) => {
            return Err(CmdError::Usage(
                "eval needs --checkpoint or --predictions".to_string(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let report: MetricReport = evaluate(
        &shard.samples,
        &preds,
        &shard.metadata.step_lengths,
        &ctx.config.tagger.angle_convention.to_string(),
        &ctx.config.metrics,
    )?;
    let text = render_text(&report);
    print!("{text}");
    write_file(&ctx.out.join("report.txt"), &text)?;
    write_json(&ctx.out.join("report.json"), &report)?;
    Ok(())
}

/// Closed-loop trials over a course suite.
pub fn simulate(
    ctx: &Context,
    checkpoint: Option<&Path>,
    policy_name: &str,
    courses_dir: Option<&Path>,
    generate_per_category: usize,
) -> CmdResult {
    prepare_out_dir(ctx)?;
    let agent = ctx.config.agent;
    let sim_cfg = &ctx.config.sim;

    let courses: Vec<Course> = match courses_dir {
        Some(dir) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| CmdError::Core(Error::io(dir.display().to_string(), e)))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "toml"))
                .collect();
            paths.sort();
            paths.iter().map(|p| read_course(p)).collect::<Result<_, _>>()?
        }
        None => {
            let suite = generate_course_suite(ctx.config.seed, generate_per_category);
            let dir = ctx.out.join("courses");
            std::fs::create_dir_all(&dir)
                .map_err(|e| CmdError::Core(Error::io(dir.display().to_string(), e)))?;
            for c in &suite {
                urbannav_core::sim::write_course(c, &dir.join(format!("{}.toml", c.id)))?;
            }
            suite
        }
    };
    if courses.is_empty() {
        return Err(CmdError::Core(Error::EmptyInput("course suite")));
    }

    let mut policy: Box<dyn SimPolicy> = match checkpoint {
        Some(ckpt) => {
            let (p, _) = load_checkpoint(ckpt)?;
            Box::new(ModelPolicy { policy: p })
        }
        None => match policy_name {
            "oracle" => Box::new(OraclePolicy {
                arrival_radius_m: 3.0,
                step_length: agent.step_length,
                horizon: 5,
            }),
            "never" => Box::new(NeverArrivingPolicy { horizon: 5 }),
            other => {
                return Err(CmdError::Usage(format!(
                    "unknown policy `{other}` (expected `oracle` or `never`)"
                )))
            }
        },
    };

    let token_dim = match checkpoint {
        Some(ckpt) => load_checkpoint(ckpt)?.0.cfg.token_dim,
        None => ctx.config.model.token_dim,
    };
    let provider = provider_for("synthetic", token_dim, ctx.config.seed)?;

    let trials_path = ctx.out.join("trials.jsonl");
    let file = std::fs::File::create(&trials_path)
        .map_err(|e| CmdError::Core(Error::io(trials_path.display().to_string(), e)))?;
    let mut w = std::io::BufWriter::new(file);
    let mut results = Vec::with_capacity(courses.len());
    for course in &courses {
        let result = run_trial(policy.as_mut(), course, &agent, provider.as_ref(), sim_cfg)?;
        println!(
            "{}: {:?} after {} steps (final distance {:.2} m)",
            course.id, result.outcome, result.steps, result.final_distance
        );
        let line = serde_json::to_string(&result)
            .map_err(|e| CmdError::Core(Error::Config(format!("serialize trial: {e}"))))?;
        writeln!(w, "{line}")
            .map_err(|e| CmdError::Core(Error::io(trials_path.display().to_string(), e)))?;
        results.push(result);
    }
    w.flush().map_err(|e| CmdError::Core(Error::io(trials_path.display().to_string(), e)))?;

    let table = success_table(&results)?;
    let text = render_success_table(&table);
    print!("{text}");
    write_file(&ctx.out.join("success.txt"), &text)?;
    write_json(&ctx.out.join("success.json"), &table)?;
    Ok(())
}

/// Emit the standard sample figure.
pub fn plot(ctx: &Context, shard_dir: &Path, index: usize, checkpoint: Option<&Path>) -> CmdResult {
    prepare_out_dir(ctx)?;
    let shard = read_shard(shard_dir)?;
    let sample = shard.samples.get(index).ok_or_else(|| {
        CmdError::Core(Error::OutOfRange { t: index, horizon: 0, len: shard.samples.len() })
    })?;

    let prediction = match checkpoint {
        Some(ckpt) => {
            let (policy, _) = load_checkpoint(ckpt)?;
            let provider =
                provider_for(&policy.cfg.backbone_id, policy.cfg.token_dim, ctx.config.seed)?;
            Some(predict_with_policy(&policy, provider.as_ref(), std::slice::from_ref(sample))?.remove(0))
        }
        None => None,
    };

    let svg = render_svg(&sample_plot(sample, prediction.as_ref()));
    let path = ctx.out.join(format!("sample-{index:05}.svg"));
    write_file(&path, &svg)?;
    println!("wrote {}", path.display());
    Ok(())
}
