//! Training harness: batching, the optimization loop with cosine-decayed
//! learning rate, per-term loss logging, checkpointing, fine-tune mode, and
//! the ablation switches.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NavigationSample;
use crate::error::{Error, Result};
use crate::features::FeatureProvider;
use crate::geometry::Vec2;
use crate::losses::{
    arrival_loss, arrival_loss_grad, feature_hallucination_loss, feature_hallucination_loss_grad,
    l1_loss, l1_loss_grad, orientation_loss, orientation_loss_grad, total_loss, LossParts,
    LossWeights, ORIENTATION_EPSILON,
};
use crate::model::{
    load_checkpoint, save_checkpoint, CheckpointMeta, ModelConfig, ModelInput, OutputGrad, Policy,
};
use crate::nn::{cosine_lr, AdamW};
use crate::shard::DatasetShard;

/// Loop hyperparameters and switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs over the training set. Zero emits the initial checkpoint only.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate used by [`finetune`] when the caller does not override.
    pub fine_tune_lr: f64,
    /// Decoupled weight decay. Not specified by the reference
    /// hyperparameters; this default is pinned but unverified.
    pub weight_decay: f64,
    /// Adaptive-moment decay rates.
    pub beta1: f64,
    pub beta2: f64,
    /// Global gradient-norm clip; zero disables.
    pub grad_clip: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Orientation-loss switch.
    pub orientation_enabled: bool,
    /// Feature-hallucination switch.
    pub hallucination_enabled: bool,
    /// Write a checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
    /// Log an eval line every this many epochs (0 = never).
    pub eval_every: usize,
    /// Oversample the minority arrival class to parity before shuffling.
    pub balance_arrival: bool,
    /// Fraction of total steps spent on linear warmup before the cosine
    /// decay begins. Zero reproduces the plain cosine schedule.
    pub warmup_frac: f64,
    /// Shard directories holding the training data.
    pub shards: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 2e-4,
            fine_tune_lr: 5e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            grad_clip: 0.0,
            seed: 0,
            loss_weights: LossWeights::default(),
            orientation_enabled: true,
            hallucination_enabled: true,
            checkpoint_every: 0,
            eval_every: 0,
            balance_arrival: false,
            warmup_frac: 0.0,
            shards: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.learning_rate <= 0.0 || self.fine_tune_lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("warmup_frac must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must be in [0, 1)".into()));
        }
        if self.grad_clip < 0.0 {
            return Err(Error::Config("grad_clip must be non-negative".into()));
        }
        Ok(())
    }
}

/// Result of a training run.
pub struct TrainReport {
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub steps: u64,
    /// Mean total loss per epoch.
    pub epoch_mean_total: Vec<f64>,
    /// The log lines, in order, for determinism checks.
    pub log_lines: Vec<String>,
}

fn assemble_input(sample: &NavigationSample, provider: &dyn FeatureProvider) -> Result<ModelInput> {
    let frames = sample
        .past_frame_refs
        .iter()
        .map(|r| provider.features(r))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelInput {
        frames,
        past_positions: sample.past_positions.clone(),
        target: sample.target_position,
    })
}

/// Per-batch loss terms plus the per-sample output gradients.
struct BatchLoss {
    parts: LossParts,
    total: f64,
    grads: Vec<OutputGrad>,
}

fn batch_loss(
    outputs: &[crate::model::PolicyOutput],
    samples: &[&NavigationSample],
    future_tokens: Option<&[Vec<Vec<f64>>]>,
    cfg: &TrainConfig,
    step: u64,
) -> Result<BatchLoss> {
    let b = outputs.len() as f64;

    // Orientation averages over the samples that have at least one
    // non-degenerate pair; the other terms average over the whole batch.
    let ori_included = if cfg.orientation_enabled {
        samples
            .iter()
            .filter(|s| s.future_actions.iter().any(|a| a.norm() > ORIENTATION_EPSILON))
            .count()
            .max(1) as f64
    } else {
        1.0
    };

    let mut l1_sum = 0.0;
    let mut ori_sum = 0.0;
    let mut arr_sum = 0.0;
    let mut feat_sum = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());

    for (i, (out, sample)) in outputs.iter().zip(samples).enumerate() {
        let gt = &sample.future_actions;
        l1_sum += l1_loss(&out.actions, gt)?;
        let mut d_actions: Vec<Vec2> = l1_loss_grad(&out.actions, gt)?
            .into_iter()
            .map(|g| g.scale(cfg.loss_weights.l1 / b))
            .collect();

        if cfg.orientation_enabled {
            match orientation_loss(&out.actions, gt, ORIENTATION_EPSILON) {
                Ok(ori) => {
                    ori_sum += ori.value;
                    let ori_grads = orientation_loss_grad(&out.actions, gt, ORIENTATION_EPSILON)?;
                    for (d, g) in d_actions.iter_mut().zip(ori_grads) {
                        *d = *d + g.scale(cfg.loss_weights.orientation / ori_included);
                    }
                }
                Err(Error::AllPairsDegenerate) => {}
                Err(e) => return Err(e),
            }
        }

        arr_sum += arrival_loss(out.arrival_logit, sample.arrival_label);
        let d_arrival_logit = arrival_loss_grad(out.arrival_logit, sample.arrival_label)
            * cfg.loss_weights.arrival
            / b;

        let d_hallucinated = if let Some(tokens) = future_tokens {
            let target = &tokens[i];
            feat_sum += feature_hallucination_loss(&out.hallucinated, target)?;
            let g = feature_hallucination_loss_grad(&out.hallucinated, target)?;
            Some(
                g.into_iter()
                    .map(|row| row.into_iter().map(|v| v * cfg.loss_weights.feature / b).collect())
                    .collect(),
            )
        } else {
            None
        };

        grads.push(OutputGrad { d_actions, d_arrival_logit, d_hallucinated });
    }

    let parts = LossParts {
        l1: l1_sum / b,
        orientation: if cfg.orientation_enabled { ori_sum / ori_included } else { 0.0 },
        arrival: arr_sum / b,
        feature: future_tokens.map(|_| feat_sum / b),
    };
    let total = total_loss(&parts, &cfg.loss_weights).map_err(|e| match e {
        Error::NonFiniteLoss { term, value, .. } => {
            Error::NonFiniteLoss { term, value, batch: Some(step) }
        }
        other => other,
    })?;
    Ok(BatchLoss { parts, total, grads })
}

/// One optimization step over one batch; returns the logged parts and total.
pub fn train_step(
    policy: &mut Policy,
    optimizer: &mut AdamW,
    samples: &[&NavigationSample],
    provider: &dyn FeatureProvider,
    cfg: &TrainConfig,
    lr: f64,
    step: u64,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<(LossParts, f64)> {
    let inputs = samples
        .iter()
        .map(|s| assemble_input(s, provider))
        .collect::<Result<Vec<_>>>()?;
    let future_tokens = if cfg.hallucination_enabled {
        let mut all = Vec::with_capacity(samples.len());
        for s in samples {
            let tokens = s
                .future_frame_refs
                .iter()
                .map(|r| provider.features(r))
                .collect::<Result<Vec<_>>>()?;
            all.push(tokens);
        }
        Some(all)
    } else {
        None
    };

    let rng_opt = if policy.cfg.dropout > 0.0 { Some(&mut *dropout_rng) } else { None };
    let (outputs, cache) = policy.forward_batch(&inputs, rng_opt)?;
    let loss = batch_loss(&outputs, samples, future_tokens.as_deref(), cfg, step)?;

    policy.zero_grads();
    policy.backward_batch(&cache, &loss.grads)?;
    if cfg.grad_clip > 0.0 {
        let mut sq = 0.0;
        policy.visit_params(&mut |p| sq += p.grad.iter().map(|g| g * g).sum::<f64>());
        let norm = sq.sqrt();
        if norm > cfg.grad_clip {
            let scale = cfg.grad_clip / norm;
            policy.for_each_param(&mut |p| p.grad.iter_mut().for_each(|g| *g *= scale));
        }
    }
    optimizer.begin_step();
    let mut idx = 0usize;
    let mut opt_err = None;
    policy.for_each_param(&mut |p| {
        if opt_err.is_none() {
            if let Err(e) = optimizer.update(idx, p, lr) {
                opt_err = Some(e);
            }
            idx += 1;
        }
    });
    if let Some(e) = opt_err {
        return Err(e);
    }
    Ok((loss.parts, loss.total))
}

fn format_log_line(step: u64, epoch: usize, parts: &LossParts, total: f64, lr: f64) -> String {
    format!(
        "{} {} {} {} {} {} {} {}",
        step,
        epoch,
        parts.l1,
        parts.orientation,
        parts.arrival,
        parts.feature.unwrap_or(0.0),
        total,
        lr
    )
}

/// Quick training-set orientation/arrival evaluation used for eval-cadence
/// log lines and the fine-tune comparison.
pub fn quick_eval(
    policy: &Policy,
    samples: &[NavigationSample],
    provider: &dyn FeatureProvider,
) -> Result<(f64, f64)> {
    use crate::metrics::{maoe, EvalPair, METRIC_EPSILON};
    let mut pairs = Vec::with_capacity(samples.len());
    let mut arrival_correct = 0usize;
    for s in samples {
        let out = policy.forward(&assemble_input(s, provider)?)?;
        let predicted = crate::losses::sigmoid(out.arrival_logit) > 0.5;
        if predicted == s.arrival_label {
            arrival_correct += 1;
        }
        pairs.push(EvalPair { pred: out.actions, gt: s.future_actions.clone() });
    }
    let maoe_deg = maoe(&pairs, METRIC_EPSILON)?;
    let arrival_acc = 100.0 * arrival_correct as f64 / samples.len() as f64;
    Ok((maoe_deg, arrival_acc))
}

fn epoch_order(
    n: usize,
    samples: &[NavigationSample],
    balance_arrival: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if balance_arrival {
        let positives: Vec<usize> = (0..n).filter(|&i| samples[i].arrival_label).collect();
        let negatives: Vec<usize> = (0..n).filter(|&i| !samples[i].arrival_label).collect();
        let (minority, majority) = if positives.len() < negatives.len() {
            (positives, negatives)
        } else {
            (negatives, positives)
        };
        if !minority.is_empty() {
            let deficit = majority.len() - minority.len();
            for _ in 0..deficit {
                order.push(minority[rng.gen_range(0..minority.len())]);
            }
        }
    }
    order.shuffle(rng);
    order
}

/// Run the epoch loop. Writes `train.log` plus checkpoints into `out_dir`
/// and returns the final-checkpoint path. With `epochs == 0` only the
/// initial checkpoint is emitted.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    shard: &DatasetShard,
    provider: &dyn FeatureProvider,
    out_dir: &Path,
) -> Result<TrainReport> {
    let policy = Policy::new(model_cfg, cfg.seed)?;
    let lineage = format!(
        "train seed={} epochs={} lr={} samples={}",
        cfg.seed,
        cfg.epochs,
        cfg.learning_rate,
        shard.samples.len()
    );
    run_loop(policy, cfg, cfg.learning_rate, shard, provider, out_dir, vec![lineage])
}

/// Identical loop at the fine-tune learning rate, starting from a base
/// checkpoint; the provenance chain is extended in the checkpoint metadata.
pub fn finetune(
    cfg: &TrainConfig,
    base_checkpoint: &Path,
    shard: &DatasetShard,
    provider: &dyn FeatureProvider,
    out_dir: &Path,
) -> Result<TrainReport> {
    let (policy, base_meta) = load_checkpoint(base_checkpoint)?;
    if provider.dim() != policy.cfg.token_dim {
        return Err(Error::CheckpointMismatch(format!(
            "provider dim {} vs checkpoint token dim {}",
            provider.dim(),
            policy.cfg.token_dim
        )));
    }
    let mut lineage = base_meta.lineage.clone();
    lineage.push(format!(
        "finetune base={} seed={} epochs={} lr={} samples={}",
        base_checkpoint.display(),
        cfg.seed,
        cfg.epochs,
        cfg.fine_tune_lr,
        shard.samples.len()
    ));
    run_loop(policy, cfg, cfg.fine_tune_lr, shard, provider, out_dir, lineage)
}

/// Linear warmup over the first `warmup_frac` of steps, then cosine decay
/// to zero over the remainder.
fn schedule_lr(base_lr: f64, step: u64, total_steps: u64, warmup_frac: f64) -> f64 {
    let warmup = (total_steps as f64 * warmup_frac) as u64;
    if step < warmup {
        base_lr * (step + 1) as f64 / warmup as f64
    } else {
        cosine_lr(base_lr, step - warmup, total_steps.saturating_sub(warmup))
    }
}

fn run_loop(
    mut policy: Policy,
    cfg: &TrainConfig,
    base_lr: f64,
    shard: &DatasetShard,
    provider: &dyn FeatureProvider,
    out_dir: &Path,
    lineage: Vec<String>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if shard.samples.is_empty() {
        return Err(Error::DataEmpty("no samples in training shards".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let log_path = out_dir.join("train.log");
    let log_file = std::fs::File::create(&log_path)
        .map_err(|e| Error::io(log_path.display().to_string(), e))?;
    let mut log = std::io::BufWriter::new(log_file);
    let mut log_lines = Vec::new();

    let n = shard.samples.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch) as u64;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD50F_BEE5_0000_0001);
    let mut optimizer = AdamW::new(cfg.weight_decay);
    optimizer.beta1 = cfg.beta1;
    optimizer.beta2 = cfg.beta2;

    let meta = |step: u64, epoch: usize| CheckpointMeta {
        step,
        epoch: epoch as u64,
        seed: cfg.seed,
        lineage: lineage.clone(),
    };
    save_checkpoint(&policy, &meta(0, 0), &out_dir.join("ckpt-initial.ckpt"))?;

    let mut step = 0u64;
    let mut epoch_mean_total = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(n, &shard.samples, cfg.balance_arrival, &mut shuffle_rng);
        let mut epoch_total = 0.0;
        let mut epoch_batches = 0usize;
        for batch_indices in order.chunks(cfg.batch_size) {
            let lr = schedule_lr(base_lr, step, total_steps, cfg.warmup_frac);
            let batch: Vec<&NavigationSample> =
                batch_indices.iter().map(|&i| &shard.samples[i]).collect();
            let (parts, total) = train_step(
                &mut policy,
                &mut optimizer,
                &batch,
                provider,
                cfg,
                lr,
                step,
                &mut dropout_rng,
            )?;
            step += 1;
            epoch_total += total;
            epoch_batches += 1;
            let line = format_log_line(step, epoch, &parts, total, lr);
            writeln!(log, "{line}").map_err(|e| Error::io(log_path.display().to_string(), e))?;
            log_lines.push(line);
        }
        epoch_mean_total.push(epoch_total / epoch_batches.max(1) as f64);

        if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 {
            let (maoe_deg, arrival_acc) = quick_eval(&policy, &shard.samples, provider)?;
            let line = format!("# eval epoch={epoch} maoe_deg={maoe_deg} arrival_acc={arrival_acc}");
            writeln!(log, "{line}").map_err(|e| Error::io(log_path.display().to_string(), e))?;
            log_lines.push(line);
        }
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            save_checkpoint(
                &policy,
                &meta(step, epoch),
                &out_dir.join(format!("ckpt-epoch-{epoch:04}.ckpt")),
            )?;
        }
    }

    log.flush().map_err(|e| Error::io(log_path.display().to_string(), e))?;
    let final_path = out_dir.join("ckpt-final.ckpt");
    save_checkpoint(&policy, &meta(step, cfg.epochs), &final_path)?;
    Ok(TrainReport {
        final_checkpoint: final_path,
        log_path,
        steps: step,
        epoch_mean_total,
        log_lines,
    })
}
