//! The navigation network: a coordinate token built from past positions and
//! the target, k frozen image-feature tokens, a bidirectional transformer
//! trunk, a shared per-step action head, and an arrival head. The outputs
//! at the image positions double as hallucinated future tokens.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::provider_for;
use crate::geometry::Vec2;
use crate::nn::{
    BlockCache, LayerNorm, LayerNormCache, Linear, MlpStack, MlpStackCache, Param,
    TransformerBlock,
};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// How positions are featurized before the coordinate encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordRepr {
    /// Polar about the agent origin: radius channels (raw and log1p) plus a
    /// Fourier expansion of the angle from +y.
    #[default]
    Polar,
    /// Raw (x, y) per position.
    Cartesian,
}

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Past context length k.
    pub context: usize,
    /// Predicted action steps. Tied to `context` by the decoding
    /// convention: image-position output i decodes to action step i.
    pub horizon: usize,
    pub token_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub fourier_freqs: usize,
    pub coord_repr: CoordRepr,
    /// Feature-provider profile (see `features::provider_for`).
    pub backbone_id: String,
    /// Hidden widths of the action and arrival heads.
    pub head_hidden: Vec<usize>,
    /// Hidden widths of the coordinate encoder.
    pub coord_hidden: Vec<usize>,
    pub mlp_ratio: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            context: 5,
            horizon: 5,
            token_dim: 768,
            num_layers: 16,
            num_heads: 8,
            fourier_freqs: 6,
            coord_repr: CoordRepr::Polar,
            backbone_id: "vit-b14".to_string(),
            head_hidden: vec![2048, 2048],
            coord_hidden: vec![2048],
            mlp_ratio: 4,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    /// Small configuration for fast tests.
    pub fn tiny() -> Self {
        ModelConfig {
            token_dim: 32,
            num_layers: 2,
            num_heads: 4,
            backbone_id: "synthetic".to_string(),
            head_hidden: vec![16],
            coord_hidden: vec![16],
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context == 0 || self.horizon == 0 {
            return Err(Error::Config("context and horizon must be >= 1".into()));
        }
        if self.horizon != self.context {
            return Err(Error::Config(format!(
                "horizon ({}) must equal context ({}): image-position i decodes action i",
                self.horizon, self.context
            )));
        }
        if self.token_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "token_dim {} not divisible by num_heads {}",
                self.token_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Features per encoded position.
    pub fn coord_feature_dim(&self) -> usize {
        match self.coord_repr {
            CoordRepr::Polar => 2 + 2 * self.fourier_freqs,
            CoordRepr::Cartesian => 2,
        }
    }

    fn seq_len(&self) -> usize {
        self.context + 1
    }
}

/// Featurize one position. Polar: [r, ln(1+r), sin(2^j θ), cos(2^j θ)]
/// with θ measured from +y and θ = 0 at the origin by convention.
pub fn position_features(p: Vec2, repr: CoordRepr, fourier_freqs: usize, out: &mut Vec<f64>) {
    match repr {
        CoordRepr::Polar => {
            let r = p.norm();
            let theta = p.angle_from_heading();
            out.push(r);
            out.push(r.ln_1p());
            for j in 0..fourier_freqs {
                let scaled = (1u64 << j) as f64 * theta;
                out.push(scaled.sin());
                out.push(scaled.cos());
            }
        }
        CoordRepr::Cartesian => {
            out.push(p.x);
            out.push(p.y);
        }
    }
}

/// Stacked features for k past positions plus the target.
pub fn coordinate_features(past: &[Vec2], target: Vec2, cfg: &ModelConfig) -> Result<Vec<f64>> {
    if past.len() != cfg.context {
        return Err(Error::ShapeMismatch {
            context: "past positions",
            expected: cfg.context.to_string(),
            got: past.len().to_string(),
        });
    }
    if past.iter().any(|p| !p.is_finite()) || !target.is_finite() {
        return Err(Error::NonFiniteInput("coordinate encoder positions"));
    }
    let mut out = Vec::with_capacity((cfg.context + 1) * cfg.coord_feature_dim());
    for &p in past {
        position_features(p, cfg.coord_repr, cfg.fourier_freqs, &mut out);
    }
    position_features(target, cfg.coord_repr, cfg.fourier_freqs, &mut out);
    Ok(out)
}

/// One forward input: k frame tokens plus positional information.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub frames: Vec<Vec<f64>>,
    pub past_positions: Vec<Vec2>,
    pub target: Vec2,
}

/// Network output for one sample.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    /// horizon waypoints in normalized agent-frame units.
    pub actions: Vec<Vec2>,
    pub arrival_logit: f64,
    /// Trunk outputs at the image-token positions.
    pub hallucinated: Vec<Vec<f64>>,
}

/// Output-side gradients for one sample.
#[derive(Debug, Clone)]
pub struct OutputGrad {
    pub d_actions: Vec<Vec2>,
    pub d_arrival_logit: f64,
    /// `None` when the hallucination loss is off.
    pub d_hallucinated: Option<Vec<Vec<f64>>>,
}

/// Everything the backward pass needs from a batched forward.
pub struct BatchCache {
    batch: usize,
    coord_cache: MlpStackCache,
    image_in: Vec<f64>,
    block_caches: Vec<BlockCache>,
    final_cache: LayerNormCache,
    action_cache: MlpStackCache,
    arrival_cache: MlpStackCache,
}

/// The policy network. All parameters are f64; forward and backward are
/// single-threaded and bit-deterministic.
pub struct Policy {
    pub cfg: ModelConfig,
    coord_encoder: MlpStack,
    /// Trainable adapter on the frozen image features, shared across the k
    /// positions. Lets the trunk rescale or discard uninformative channels.
    image_proj: Linear,
    pos_embed: Param,
    blocks: Vec<TransformerBlock>,
    final_norm: LayerNorm,
    action_head: MlpStack,
    arrival_head: MlpStack,
}

impl Policy {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Policy> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.token_dim;
        let feat_in = cfg.seq_len() * cfg.coord_feature_dim();

        let mut coord_dims = vec![feat_in];
        coord_dims.extend(&cfg.coord_hidden);
        coord_dims.push(d);
        let coord_encoder = MlpStack::new("coord_encoder", &coord_dims, &mut rng);
        // Initialized as a faint identity: image content enters the trunk
        // at a whisper and the adapter learns how much of it to amplify.
        let mut image_proj = Linear::new("image_proj", d, d, &mut rng);
        image_proj.w.data.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            image_proj.w.data[i * d + i] = 1e-3;
        }

        let pos_embed = Param::normal("pos_embed", (cfg.seq_len(), d), 0.02, &mut rng);

        let blocks = (0..cfg.num_layers)
            .map(|i| {
                TransformerBlock::new(
                    &format!("trunk.block{i}"),
                    d,
                    cfg.num_heads,
                    cfg.mlp_ratio,
                    cfg.dropout,
                    &mut rng,
                )
            })
            .collect();
        let final_norm = LayerNorm::new("trunk.final_norm", d);

        let mut action_dims = vec![d];
        action_dims.extend(&cfg.head_hidden);
        action_dims.push(2);
        let action_head = MlpStack::new("action_head", &action_dims, &mut rng);

        let mut arrival_dims = vec![d];
        arrival_dims.extend(&cfg.head_hidden);
        arrival_dims.push(1);
        let arrival_head = MlpStack::new("arrival_head", &arrival_dims, &mut rng);

        Ok(Policy {
            cfg: cfg.clone(),
            coord_encoder,
            image_proj,
            pos_embed,
            blocks,
            final_norm,
            action_head,
            arrival_head,
        })
    }

    /// The single coordinate token for one sample (before position embedding).
    pub fn encode_coordinates(&self, past: &[Vec2], target: Vec2) -> Result<Vec<f64>> {
        let feats = coordinate_features(past, target, &self.cfg)?;
        let (token, _) = self.coord_encoder.forward(&feats, 1);
        Ok(token)
    }

    fn validate_input(&self, input: &ModelInput) -> Result<()> {
        if input.frames.len() != self.cfg.context {
            return Err(Error::ShapeMismatch {
                context: "frame tokens",
                expected: self.cfg.context.to_string(),
                got: input.frames.len().to_string(),
            });
        }
        for f in &input.frames {
            if f.len() != self.cfg.token_dim {
                return Err(Error::ShapeMismatch {
                    context: "frame token dim",
                    expected: self.cfg.token_dim.to_string(),
                    got: f.len().to_string(),
                });
            }
        }
        Ok(())
    }

    /// Batched forward. `rng` enables dropout (training mode); pass `None`
    /// for deterministic inference.
    pub fn forward_batch(
        &self,
        inputs: &[ModelInput],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<PolicyOutput>, BatchCache)> {
        let batch = inputs.len();
        if batch == 0 {
            return Err(Error::EmptyInput("forward batch"));
        }
        let d = self.cfg.token_dim;
        let k = self.cfg.context;
        let seq = self.cfg.seq_len();
        let feat_dim = seq * self.cfg.coord_feature_dim();

        let mut coord_feats = Vec::with_capacity(batch * feat_dim);
        for input in inputs {
            self.validate_input(input)?;
            coord_feats.extend(coordinate_features(input.past_positions.as_slice(), input.target, &self.cfg)?);
        }
        let (coord_tokens, coord_cache) = self.coord_encoder.forward(&coord_feats, batch);

        // Frozen image features pass through the trainable adapter, shared
        // across positions.
        let mut image_in = vec![0.0; batch * k * d];
        for (b, input) in inputs.iter().enumerate() {
            for (s, frame) in input.frames.iter().enumerate() {
                image_in[(b * k + s) * d..(b * k + s + 1) * d].copy_from_slice(frame);
            }
        }
        let image_tokens = self.image_proj.forward(&image_in, batch * k);

        // Sequence layout: positions 0..k-1 are image tokens, position k is
        // the coordinate token; learned position embeddings are added.
        let mut token_input = vec![0.0; batch * seq * d];
        for b in 0..batch {
            for s in 0..k {
                let base = (b * seq + s) * d;
                let src = &image_tokens[(b * k + s) * d..(b * k + s + 1) * d];
                for i in 0..d {
                    token_input[base + i] = src[i] + self.pos_embed.data[s * d + i];
                }
            }
            let base = (b * seq + k) * d;
            for i in 0..d {
                token_input[base + i] = coord_tokens[b * d + i] + self.pos_embed.data[k * d + i];
            }
        }

        let mut x = token_input;
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward(&x, batch, seq, &mut rng);
            block_caches.push(cache);
            x = y;
        }
        let (trunk_out, final_cache) = self.final_norm.forward(&x, batch * seq);

        // Gather image-position outputs for the shared action head and the
        // hallucination targets; coordinate-position outputs for arrival.
        let mut action_in = vec![0.0; batch * k * d];
        let mut arrival_in = vec![0.0; batch * d];
        for b in 0..batch {
            for s in 0..k {
                action_in[(b * k + s) * d..(b * k + s + 1) * d]
                    .copy_from_slice(&trunk_out[(b * seq + s) * d..(b * seq + s + 1) * d]);
            }
            arrival_in[b * d..(b + 1) * d]
                .copy_from_slice(&trunk_out[(b * seq + k) * d..(b * seq + k + 1) * d]);
        }
        let (action_out, action_cache) = self.action_head.forward(&action_in, batch * k);
        let (arrival_out, arrival_cache) = self.arrival_head.forward(&arrival_in, batch);

        let mut outputs = Vec::with_capacity(batch);
        for b in 0..batch {
            let actions = (0..k)
                .map(|s| Vec2::new(action_out[(b * k + s) * 2], action_out[(b * k + s) * 2 + 1]))
                .collect();
            let hallucinated = (0..k)
                .map(|s| action_in[(b * k + s) * d..(b * k + s + 1) * d].to_vec())
                .collect();
            outputs.push(PolicyOutput {
                actions,
                arrival_logit: arrival_out[b],
                hallucinated,
            });
        }

        Ok((
            outputs,
            BatchCache { batch, coord_cache, image_in, block_caches, final_cache, action_cache, arrival_cache },
        ))
    }

    /// Single-sample inference.
    pub fn forward(&self, input: &ModelInput) -> Result<PolicyOutput> {
        let (mut outputs, _) = self.forward_batch(std::slice::from_ref(input), None)?;
        Ok(outputs.pop().expect("batch of one"))
    }

    /// Accumulate parameter gradients from output-side gradients. Image
    /// tokens come from a frozen provider, so their input gradient is
    /// dropped at the sequence boundary.
    pub fn backward_batch(&mut self, cache: &BatchCache, grads: &[OutputGrad]) -> Result<()> {
        let batch = cache.batch;
        if grads.len() != batch {
            return Err(Error::CountMismatch { samples: batch, predictions: grads.len() });
        }
        let d = self.cfg.token_dim;
        let k = self.cfg.context;
        let seq = self.cfg.seq_len();

        let mut d_action_out = vec![0.0; batch * k * 2];
        let mut d_arrival_out = vec![0.0; batch];
        for (b, g) in grads.iter().enumerate() {
            if g.d_actions.len() != k {
                return Err(Error::ShapeMismatch {
                    context: "action gradients",
                    expected: k.to_string(),
                    got: g.d_actions.len().to_string(),
                });
            }
            for (s, da) in g.d_actions.iter().enumerate() {
                d_action_out[(b * k + s) * 2] = da.x;
                d_action_out[(b * k + s) * 2 + 1] = da.y;
            }
            d_arrival_out[b] = g.d_arrival_logit;
        }

        let d_action_in = self.action_head.backward(&cache.action_cache, &d_action_out, batch * k);
        let d_arrival_in = self.arrival_head.backward(&cache.arrival_cache, &d_arrival_out, batch);

        // Scatter head gradients (plus direct hallucination gradients) back
        // to trunk output positions.
        let mut d_trunk_out = vec![0.0; batch * seq * d];
        for b in 0..batch {
            for s in 0..k {
                let src = &d_action_in[(b * k + s) * d..(b * k + s + 1) * d];
                let dst = &mut d_trunk_out[(b * seq + s) * d..(b * seq + s + 1) * d];
                dst.copy_from_slice(src);
                if let Some(dh) = &grads[b].d_hallucinated {
                    for i in 0..d {
                        dst[i] += dh[s][i];
                    }
                }
            }
            d_trunk_out[(b * seq + k) * d..(b * seq + k + 1) * d]
                .copy_from_slice(&d_arrival_in[b * d..(b + 1) * d]);
        }

        let mut dx = self.final_norm.backward(&cache.final_cache, &d_trunk_out, batch * seq);
        for (block, bc) in self.blocks.iter_mut().rev().zip(cache.block_caches.iter().rev()) {
            dx = block.backward(bc, &dx, batch, seq);
        }

        // Position embeddings receive the summed token gradient; the
        // coordinate encoder and the image adapter receive their tokens'
        // gradients; raw image-feature gradients stop at the adapter input
        // (frozen provider).
        let mut d_coord_tokens = vec![0.0; batch * d];
        let mut d_image_tokens = vec![0.0; batch * k * d];
        for b in 0..batch {
            for s in 0..seq {
                for i in 0..d {
                    self.pos_embed.grad[s * d + i] += dx[(b * seq + s) * d + i];
                }
            }
            for s in 0..k {
                d_image_tokens[(b * k + s) * d..(b * k + s + 1) * d]
                    .copy_from_slice(&dx[(b * seq + s) * d..(b * seq + s + 1) * d]);
            }
            d_coord_tokens[b * d..(b + 1) * d]
                .copy_from_slice(&dx[(b * seq + k) * d..(b * seq + k + 1) * d]);
        }
        self.coord_encoder.backward(&cache.coord_cache, &d_coord_tokens, batch);
        let _frozen_input_grad = self.image_proj.backward(&cache.image_in, &d_image_tokens, batch * k);
        Ok(())
    }

    pub fn for_each_param(&mut self, f: &mut impl FnMut(&mut Param)) {
        self.coord_encoder.for_each_param(f);
        self.image_proj.for_each_param(f);
        f(&mut self.pos_embed);
        for b in &mut self.blocks {
            b.for_each_param(f);
        }
        self.final_norm.for_each_param(f);
        self.action_head.for_each_param(f);
        self.arrival_head.for_each_param(f);
    }

    pub fn visit_params(&self, f: &mut impl FnMut(&Param)) {
        self.coord_encoder.visit_params(f);
        self.image_proj.visit_params(f);
        f(&self.pos_embed);
        for b in &self.blocks {
            b.visit_params(f);
        }
        self.final_norm.visit_params(f);
        self.action_head.visit_params(f);
        self.arrival_head.visit_params(f);
    }

    pub fn zero_grads(&mut self) {
        self.for_each_param(&mut |p| p.zero_grad());
    }

    /// (total, trainable) parameter counts. Total includes the frozen
    /// backbone profile named in the config.
    pub fn count_parameters(&self) -> Result<(u64, u64)> {
        let mut trainable = 0u64;
        self.visit_params(&mut |p| trainable += p.len() as u64);
        let backbone = provider_for(&self.cfg.backbone_id, self.cfg.token_dim, 0)?.param_count();
        Ok((trainable + backbone, trainable))
    }

    /// Shared action head applied to one raw token; used to check head
    /// sharing across positions.
    pub fn decode_action_token(&self, token: &[f64]) -> Result<Vec2> {
        if token.len() != self.cfg.token_dim {
            return Err(Error::ShapeMismatch {
                context: "action token",
                expected: self.cfg.token_dim.to_string(),
                got: token.len().to_string(),
            });
        }
        let (out, _) = self.action_head.forward(token, 1);
        Ok(Vec2::new(out[0], out[1]))
    }
}

/// Training-state metadata stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
    /// Provenance chain: each training/fine-tuning run appends a line.
    pub lineage: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    schema_version: u32,
    config: ModelConfig,
    metadata: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

/// Write a self-describing checkpoint: a JSON header (schema version,
/// config, metadata, tensor directory) followed by little-endian f64
/// parameter data. Byte-identical for identical parameters and metadata.
pub fn save_checkpoint(policy: &Policy, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    policy.visit_params(&mut |p| {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            rows: p.shape.0,
            cols: p.shape.1,
            offset,
            len: p.len(),
        });
        for v in &p.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.len();
    });
    let header = CheckpointHeader {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        config: policy.cfg.clone(),
        metadata: meta.clone(),
        tensors,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Config(format!("serialize checkpoint header: {e}")))?;

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let write_err = |e| Error::io(path.display().to_string(), e);
    w.write_all(&(header_json.len() as u64).to_le_bytes()).map_err(write_err)?;
    w.write_all(&header_json).map_err(write_err)?;
    w.write_all(&payload).map_err(write_err)?;
    w.flush().map_err(write_err)?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(Policy, CheckpointMeta)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = std::io::BufReader::new(file);
    let read_err = |e| Error::io(path.display().to_string(), e);

    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes).map_err(read_err)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(read_err)?;

    let probe: serde_json::Value = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::parse(path.display().to_string(), 0, e.to_string()))?;
    let found = probe.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::SchemaVersionMismatch {
            path: path.display().to_string(),
            found,
            expected: CHECKPOINT_SCHEMA_VERSION,
        });
    }
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::parse(path.display().to_string(), 0, e.to_string()))?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(read_err)?;

    let mut policy = Policy::new(&header.config, 0)?;
    let mut entries: std::collections::BTreeMap<&str, &TensorEntry> =
        header.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut load_error: Option<Error> = None;
    policy.for_each_param(&mut |p| {
        if load_error.is_some() {
            return;
        }
        match entries.remove(p.name.as_str()) {
            Some(entry) => {
                if entry.len != p.len() || (entry.rows, entry.cols) != p.shape {
                    load_error = Some(Error::CheckpointMismatch(format!(
                        "tensor {} has shape {}x{}, model expects {}x{}",
                        p.name, entry.rows, entry.cols, p.shape.0, p.shape.1
                    )));
                    return;
                }
                let start = entry.offset * 8;
                let end = start + entry.len * 8;
                if end > payload.len() {
                    load_error = Some(Error::CheckpointMismatch(format!(
                        "tensor {} overruns checkpoint payload",
                        p.name
                    )));
                    return;
                }
                for (i, chunk) in payload[start..end].chunks_exact(8).enumerate() {
                    p.data[i] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
                }
            }
            None => {
                load_error = Some(Error::CheckpointMismatch(format!(
                    "tensor {} missing from checkpoint",
                    p.name
                )));
            }
        }
    });
    if let Some(e) = load_error {
        return Err(e);
    }
    if let Some((name, _)) = entries.into_iter().next() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint tensor {name} not used by the model"
        )));
    }
    Ok((policy, header.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{provider_for, FeatureProvider};
    use crate::geometry::FrameRef;

    fn tiny_input(provider: &dyn FeatureProvider, cfg: &ModelConfig, tag: &str) -> ModelInput {
        let frames = (0..cfg.context)
            .map(|i| provider.features(&FrameRef::new(format!("{tag}/{i}"))).unwrap())
            .collect();
        let past = (0..cfg.context)
            .map(|i| Vec2::new(0.1 * i as f64, -(cfg.context as f64) + i as f64 + 1.0))
            .collect();
        ModelInput { frames, past_positions: past, target: Vec2::new(1.5, 9.0) }
    }

    #[test]
    fn polar_features_on_axis() {
        let mut out = Vec::new();
        position_features(Vec2::new(0.0, 2.0), CoordRepr::Polar, 6, &mut out);
        assert_eq!(out.len(), 14);
        assert_eq!(out[0], 2.0);
        assert!((out[1] - 3.0f64.ln()).abs() < 1e-15);
        for j in 0..6 {
            assert_eq!(out[2 + 2 * j], 0.0, "sin term {j}");
            assert_eq!(out[3 + 2 * j], 1.0, "cos term {j}");
        }
    }

    #[test]
    fn polar_features_origin_convention() {
        let mut out = Vec::new();
        position_features(Vec2::ZERO, CoordRepr::Polar, 6, &mut out);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 0.0);
        for j in 0..6 {
            assert_eq!(out[2 + 2 * j], 0.0);
            assert_eq!(out[3 + 2 * j], 1.0);
        }
    }

    #[test]
    fn encode_coordinates_output_dim_is_token_dim() {
        let cfg = ModelConfig::tiny();
        let policy = Policy::new(&cfg, 1).unwrap();
        let past: Vec<Vec2> = (0..5).map(|i| Vec2::new(0.0, i as f64 - 4.0)).collect();
        let token = policy.encode_coordinates(&past, Vec2::new(0.0, 8.0)).unwrap();
        assert_eq!(token.len(), cfg.token_dim);
        // Default config token dim is 768.
        assert_eq!(ModelConfig::default().token_dim, 768);
    }

    #[test]
    fn encode_coordinates_rejects_non_finite() {
        let cfg = ModelConfig::tiny();
        let policy = Policy::new(&cfg, 1).unwrap();
        let mut past: Vec<Vec2> = (0..5).map(|i| Vec2::new(0.0, i as f64)).collect();
        past[2] = Vec2::new(f64::NAN, 0.0);
        assert!(matches!(
            policy.encode_coordinates(&past, Vec2::ZERO),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn forward_shapes_tiny() {
        let cfg = ModelConfig::tiny();
        let policy = Policy::new(&cfg, 3).unwrap();
        let provider = provider_for("synthetic", cfg.token_dim, 0).unwrap();
        let out = policy.forward(&tiny_input(provider.as_ref(), &cfg, "a")).unwrap();
        assert_eq!(out.actions.len(), 5);
        assert_eq!(out.hallucinated.len(), 5);
        assert_eq!(out.hallucinated[0].len(), cfg.token_dim);
        assert!(out.arrival_logit.is_finite());
    }

    #[test]
    fn forward_deterministic() {
        let cfg = ModelConfig::tiny();
        let policy = Policy::new(&cfg, 3).unwrap();
        let provider = provider_for("synthetic", cfg.token_dim, 0).unwrap();
        let input = tiny_input(provider.as_ref(), &cfg, "a");
        let a = policy.forward(&input).unwrap();
        let b = policy.forward(&input).unwrap();
        assert_eq!(a.arrival_logit.to_bits(), b.arrival_logit.to_bits());
        for (x, y) in a.actions.iter().zip(&b.actions) {
            assert_eq!(x.x.to_bits(), y.x.to_bits());
            assert_eq!(x.y.to_bits(), y.y.to_bits());
        }
    }

    #[test]
    fn permuting_image_tokens_changes_output() {
        let cfg = ModelConfig::tiny();
        let policy = Policy::new(&cfg, 3).unwrap();
        let provider = provider_for("synthetic", cfg.token_dim, 0).unwrap();
        let input = tiny_input(provider.as_ref(), &cfg, "a");
        let mut permuted = input.clone();
        permuted.frames.swap(0, 4);
        let a = policy.forward(&input).unwrap();
        let b = policy.forward(&permuted).unwrap();
        let differs = a
            .actions
            .iter()
            .zip(&b.actions)
            .any(|(x, y)| (x.x - y.x).abs() > 1e-12 || (x.y - y.y).abs() > 1e-12);
        assert!(differs, "positional information must be live");
    }

    #[test]
    fn action_head_shared_across_positions() {
        let cfg = ModelConfig::tiny();
        let policy = Policy::new(&cfg, 3).unwrap();
        let token: Vec<f64> = (0..cfg.token_dim).map(|i| (i as f64) * 0.01 - 0.1).collect();
        let first = policy.decode_action_token(&token).unwrap();
        for _ in 0..4 {
            let again = policy.decode_action_token(&token).unwrap();
            assert_eq!(first, again);
        }
    }

    #[test]
    fn output_finite_for_large_inputs() {
        let cfg = ModelConfig::tiny();
        let policy = Policy::new(&cfg, 3).unwrap();
        let provider = provider_for("synthetic", cfg.token_dim, 0).unwrap();
        let mut input = tiny_input(provider.as_ref(), &cfg, "big");
        input.past_positions = (0..5).map(|i| Vec2::new(1e3 - i as f64 * 300.0, -1e3 + i as f64 * 450.0)).collect();
        input.target = Vec2::new(-1e3, 1e3);
        let out = policy.forward(&input).unwrap();
        assert!(out.actions.iter().all(|a| a.is_finite()));
        assert!(out.arrival_logit.is_finite());
        assert!(out.hallucinated.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_frame_count_rejected() {
        let cfg = ModelConfig::tiny();
        let policy = Policy::new(&cfg, 3).unwrap();
        let provider = provider_for("synthetic", cfg.token_dim, 0).unwrap();
        let mut input = tiny_input(provider.as_ref(), &cfg, "a");
        input.frames.pop();
        assert!(matches!(policy.forward(&input), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn tiny_param_count_matches_closed_form() {
        let cfg = ModelConfig::tiny();
        let policy = Policy::new(&cfg, 3).unwrap();
        let (total, trainable) = policy.count_parameters().unwrap();
        assert_eq!(total, trainable, "synthetic backbone has zero params");

        let d = cfg.token_dim as u64;
        let feat = (cfg.context as u64 + 1) * cfg.coord_feature_dim() as u64;
        let h = cfg.coord_hidden[0] as u64;
        let coord = feat * h + h + h * d + d;
        let image_proj = d * d + d;
        let pos = (cfg.context as u64 + 1) * d;
        let block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d
            + (d * cfg.mlp_ratio as u64 * d + cfg.mlp_ratio as u64 * d)
            + (cfg.mlp_ratio as u64 * d * d + d);
        let hh = cfg.head_hidden[0] as u64;
        let action = d * hh + hh + hh * 2 + 2;
        let arrival = d * hh + hh + hh + 1;
        let want =
            coord + image_proj + pos + cfg.num_layers as u64 * block + 2 * d + action + arrival;
        assert_eq!(trainable, want);
    }

    #[test]
    fn gradient_flow_reaches_every_parameter() {
        let cfg = ModelConfig::tiny();
        let mut policy = Policy::new(&cfg, 3).unwrap();
        let provider = provider_for("synthetic", cfg.token_dim, 0).unwrap();
        let inputs: Vec<ModelInput> = (0..3)
            .map(|i| tiny_input(provider.as_ref(), &cfg, &format!("s{i}")))
            .collect();
        let (outputs, cache) = policy.forward_batch(&inputs, None).unwrap();
        let grads: Vec<OutputGrad> = outputs
            .iter()
            .map(|o| OutputGrad {
                d_actions: o.actions.iter().map(|a| Vec2::new(2.0 * a.x, 2.0 * a.y)).collect(),
                d_arrival_logit: 1.0,
                d_hallucinated: Some(o.hallucinated.iter().map(|h| h.iter().map(|v| 2.0 * v).collect()).collect()),
            })
            .collect();
        policy.backward_batch(&cache, &grads).unwrap();
        policy.visit_params(&mut |p| {
            let max = p.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            assert!(max > 0.0, "parameter {} received no gradient", p.name);
        });
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        // End-to-end check on a very small config: scalar objective over
        // all outputs, spot-check one entry of every parameter tensor.
        let cfg = ModelConfig {
            token_dim: 8,
            num_layers: 1,
            num_heads: 2,
            head_hidden: vec![6],
            coord_hidden: vec![6],
            fourier_freqs: 2,
            ..ModelConfig::tiny()
        };
        let provider = provider_for("synthetic", cfg.token_dim, 0).unwrap();
        let inputs: Vec<ModelInput> =
            (0..2).map(|i| tiny_input(provider.as_ref(), &cfg, &format!("g{i}"))).collect();

        let objective = |p: &Policy| -> f64 {
            let (outs, _) = p.forward_batch(&inputs, None).unwrap();
            outs.iter()
                .map(|o| {
                    o.actions.iter().map(|a| a.x * a.x + a.y * a.y).sum::<f64>()
                        + o.arrival_logit * o.arrival_logit
                        + o.hallucinated.iter().flatten().map(|v| v * v).sum::<f64>()
                })
                .sum()
        };

        let base = Policy::new(&cfg, 11).unwrap();
        let mut policy = Policy::new(&cfg, 11).unwrap();
        let (outputs, cache) = policy.forward_batch(&inputs, None).unwrap();
        let grads: Vec<OutputGrad> = outputs
            .iter()
            .map(|o| OutputGrad {
                d_actions: o.actions.iter().map(|a| Vec2::new(2.0 * a.x, 2.0 * a.y)).collect(),
                d_arrival_logit: 2.0 * o.arrival_logit,
                d_hallucinated: Some(
                    o.hallucinated.iter().map(|h| h.iter().map(|v| 2.0 * v).collect()).collect(),
                ),
            })
            .collect();
        policy.backward_batch(&cache, &grads).unwrap();

        let mut names = Vec::new();
        policy.visit_params(&mut |p| names.push((p.name.clone(), p.len())));
        for (name, len) in names {
            let idx = (len - 1) / 2;
            let mut analytic = 0.0;
            policy.visit_params(&mut |p| {
                if p.name == name {
                    analytic = p.grad[idx];
                }
            });
            let mut orig = 0.0;
            base.visit_params(&mut |p| {
                if p.name == name {
                    orig = p.data[idx];
                }
            });
            let h = 1e-5;
            let probe = |v: f64| {
                let mut p2 = Policy::new(&cfg, 11).unwrap();
                p2.for_each_param(&mut |p| {
                    if p.name == name {
                        p.data[idx] = v;
                    }
                });
                objective(&p2)
            };
            let fd = (probe(orig + h) - probe(orig - h)) / (2.0 * h);
            let rel = (analytic - fd).abs() / fd.abs().max(1e-4);
            assert!(rel < 1e-4, "{name}[{idx}]: analytic {analytic} vs fd {fd}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = ModelConfig::tiny();
        let policy = Policy::new(&cfg, 42).unwrap();
        let meta = CheckpointMeta {
            step: 17,
            epoch: 2,
            seed: 42,
            lineage: vec!["train seed=42".to_string()],
        };
        save_checkpoint(&policy, &meta, &path).unwrap();
        let (loaded, got_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(got_meta, meta);
        let mut originals = Vec::new();
        policy.visit_params(&mut |p| originals.push(p.data.clone()));
        let mut idx = 0;
        loaded.visit_params(&mut |p| {
            assert_eq!(p.data, originals[idx], "tensor {} differs", p.name);
            idx += 1;
        });
        // Same inputs, same outputs through the loaded model.
        let provider = provider_for("synthetic", cfg.token_dim, 0).unwrap();
        let input = tiny_input(provider.as_ref(), &cfg, "ck");
        let a = policy.forward(&input).unwrap();
        let b = loaded.forward(&input).unwrap();
        assert_eq!(a.arrival_logit.to_bits(), b.arrival_logit.to_bits());
    }

    #[test]
    fn checkpoint_schema_version_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let policy = Policy::new(&ModelConfig::tiny(), 42).unwrap();
        save_checkpoint(&policy, &CheckpointMeta::default(), &path).unwrap();
        // Corrupt the version field in place.
        let bytes = std::fs::read(&path).unwrap();
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[8..8 + header_len].to_vec()).unwrap();
        let bad = header.replace("\"schema_version\":1", "\"schema_version\":9");
        assert_ne!(header, bad);
        let mut out = Vec::new();
        out.extend_from_slice(&(bad.len() as u64).to_le_bytes());
        out.extend_from_slice(bad.as_bytes());
        out.extend_from_slice(&bytes[8 + header_len..]);
        std::fs::write(&path, out).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::SchemaVersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::tiny();
        cfg.num_heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::tiny();
        cfg.horizon = 4;
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
