//! Minimal deterministic neural-network machinery: f64 tensors as flat
//! vectors, explicit forward/backward per layer, seeded init, and a
//! decoupled-weight-decay adaptive-moment optimizer. Single-threaded on
//! purpose: runs are bit-reproducible for a fixed seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A named parameter tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    /// (rows, cols); bias vectors are (n, 1).
    pub shape: (usize, usize),
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: (usize, usize)) -> Self {
        let len = shape.0 * shape.1;
        Param { name: name.into(), shape, data: vec![0.0; len], grad: vec![0.0; len] }
    }

    pub fn ones(name: impl Into<String>, shape: (usize, usize)) -> Self {
        let len = shape.0 * shape.1;
        Param { name: name.into(), shape, data: vec![1.0; len], grad: vec![0.0; len] }
    }

    pub fn normal(name: impl Into<String>, shape: (usize, usize), std: f64, rng: &mut ChaCha8Rng) -> Self {
        let len = shape.0 * shape.1;
        let data = (0..len).map(|_| std * standard_normal(rng)).collect();
        Param { name: name.into(), shape, data, grad: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Box–Muller standard normal from explicit uniforms, so draws depend only
/// on the rng stream.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// y[m×n] += a[m×k] · b[n×k]ᵀ   (linear forward layout: weights are out×in)
pub fn matmul_nt(y: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(y.len(), m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let yr = &mut y[i * n..(i + 1) * n];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += ar[p] * br[p];
            }
            yr[j] += acc;
        }
    }
}

/// y[m×n] += a[m×k] · b[k×n]
pub fn matmul_nn(y: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(y.len(), m * n);
    for i in 0..m {
        let yr = &mut y[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for j in 0..n {
                yr[j] += av * br[j];
            }
        }
    }
}

/// y[m×n] += a[k×m]ᵀ · b[k×n]   (weight-gradient layout)
pub fn matmul_tn(y: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(y.len(), m * n);
    for p in 0..k {
        let ar = &a[p * m..(p + 1) * m];
        let br = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = ar[i];
            if av == 0.0 {
                continue;
            }
            let yr = &mut y[i * n..(i + 1) * n];
            for j in 0..n {
                yr[j] += av * br[j];
            }
        }
    }
}

/// Fully connected layer, y = x Wᵀ + b.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: Param::normal(format!("{name}.w"), (out_dim, in_dim), 0.02, rng),
            b: Param::zeros(format!("{name}.b"), (out_dim, 1)),
            in_dim,
            out_dim,
        }
    }

    /// x: rows×in → rows×out.
    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = vec![0.0; rows * self.out_dim];
        for r in 0..rows {
            y[r * self.out_dim..(r + 1) * self.out_dim].copy_from_slice(&self.b.data);
        }
        matmul_nt(&mut y, x, &self.w.data, rows, self.in_dim, self.out_dim);
        y
    }

    /// Accumulates dW, db; returns dx.
    pub fn backward(&mut self, x: &[f64], dy: &[f64], rows: usize) -> Vec<f64> {
        matmul_tn(&mut self.w.grad, dy, x, self.out_dim, rows, self.in_dim);
        for r in 0..rows {
            for o in 0..self.out_dim {
                self.b.grad[o] += dy[r * self.out_dim + o];
            }
        }
        let mut dx = vec![0.0; rows * self.in_dim];
        matmul_nn(&mut dx, dy, &self.w.data, rows, self.out_dim, self.in_dim);
        dx
    }

    pub fn for_each_param(&mut self, f: &mut impl FnMut(&mut Param)) {
        f(&mut self.w);
        f(&mut self.b);
    }

    pub fn visit_params(&self, f: &mut impl FnMut(&Param)) {
        f(&self.w);
        f(&self.b);
    }
}

/// Layer normalization over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub dim: usize,
    pub eps: f64,
}

/// Per-row statistics cached for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: Param::ones(format!("{name}.gamma"), (dim, 1)),
            beta: Param::zeros(format!("{name}.beta"), (dim, 1)),
            dim,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, LayerNormCache) {
        let d = self.dim;
        let mut y = vec![0.0; rows * d];
        let mut normalized = vec![0.0; rows * d];
        let mut rstds = vec![0.0; rows];
        for r in 0..rows {
            let xr = &x[r * d..(r + 1) * d];
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + self.eps).sqrt();
            rstds[r] = rstd;
            for i in 0..d {
                let n = (xr[i] - mean) * rstd;
                normalized[r * d + i] = n;
                y[r * d + i] = self.gamma.data[i] * n + self.beta.data[i];
            }
        }
        (y, LayerNormCache { normalized, rstd: rstds })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &[f64], rows: usize) -> Vec<f64> {
        let d = self.dim;
        let mut dx = vec![0.0; rows * d];
        for r in 0..rows {
            let nr = &cache.normalized[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            let mut sum_dn = 0.0;
            let mut sum_dn_n = 0.0;
            for i in 0..d {
                let dn = dyr[i] * self.gamma.data[i];
                sum_dn += dn;
                sum_dn_n += dn * nr[i];
                self.gamma.grad[i] += dyr[i] * nr[i];
                self.beta.grad[i] += dyr[i];
            }
            let inv_d = 1.0 / d as f64;
            for i in 0..d {
                let dn = dyr[i] * self.gamma.data[i];
                dx[r * d + i] = cache.rstd[r] * (dn - sum_dn * inv_d - nr[i] * sum_dn_n * inv_d);
            }
        }
        dx
    }

    pub fn for_each_param(&mut self, f: &mut impl FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    pub fn visit_params(&self, f: &mut impl FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Stable softmax over `row` in place.
fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Non-causal multi-head self-attention over short token sequences.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub dim: usize,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    qkv_out: Vec<f64>,
    /// batch × heads × seq × seq attention probabilities.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    seq: usize,
    batch: usize,
}

impl MultiHeadAttention {
    pub fn new(name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        MultiHeadAttention {
            qkv: Linear::new(&format!("{name}.qkv"), dim, 3 * dim, rng),
            proj: Linear::new(&format!("{name}.proj"), dim, dim, rng),
            dim,
            heads,
        }
    }

    /// x: (batch*seq)×dim; full bidirectional attention within each sample.
    pub fn forward(&self, x: &[f64], batch: usize, seq: usize) -> (Vec<f64>, AttentionCache) {
        let d = self.dim;
        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let rows = batch * seq;
        let qkv_out = self.qkv.forward(x, rows);
        let mut probs = vec![0.0; batch * self.heads * seq * seq];
        let mut ctx = vec![0.0; rows * d];

        for b in 0..batch {
            for h in 0..self.heads {
                let q_off = h * hd;
                let k_off = d + h * hd;
                let v_off = 2 * d + h * hd;
                for i in 0..seq {
                    let qi = &qkv_out[((b * seq + i) * 3 * d + q_off)..((b * seq + i) * 3 * d + q_off + hd)];
                    let prow_base = ((b * self.heads + h) * seq + i) * seq;
                    for j in 0..seq {
                        let kj = &qkv_out[((b * seq + j) * 3 * d + k_off)..((b * seq + j) * 3 * d + k_off + hd)];
                        let mut acc = 0.0;
                        for p in 0..hd {
                            acc += qi[p] * kj[p];
                        }
                        probs[prow_base + j] = acc * scale;
                    }
                    softmax_row(&mut probs[prow_base..prow_base + seq]);
                    for j in 0..seq {
                        let w = probs[prow_base + j];
                        let vj = &qkv_out[((b * seq + j) * 3 * d + v_off)..((b * seq + j) * 3 * d + v_off + hd)];
                        let cr = &mut ctx[((b * seq + i) * d + h * hd)..((b * seq + i) * d + h * hd + hd)];
                        for p in 0..hd {
                            cr[p] += w * vj[p];
                        }
                    }
                }
            }
        }

        let out = self.proj.forward(&ctx, rows);
        (out, AttentionCache { qkv_out, probs, ctx, seq, batch })
    }

    pub fn backward(&mut self, x: &[f64], cache: &AttentionCache, dout: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (batch, seq) = (cache.batch, cache.seq);
        let rows = batch * seq;

        let dctx = self.proj.backward(&cache.ctx, dout, rows);
        let mut dqkv = vec![0.0; rows * 3 * d];

        for b in 0..batch {
            for h in 0..self.heads {
                let q_off = h * hd;
                let k_off = d + h * hd;
                let v_off = 2 * d + h * hd;
                for i in 0..seq {
                    let prow_base = ((b * self.heads + h) * seq + i) * seq;
                    let dctx_i = &dctx[((b * seq + i) * d + h * hd)..((b * seq + i) * d + h * hd + hd)];

                    // dprobs and dv
                    let mut dprobs = vec![0.0; seq];
                    for j in 0..seq {
                        let vj = &cache.qkv_out[((b * seq + j) * 3 * d + v_off)..((b * seq + j) * 3 * d + v_off + hd)];
                        let mut acc = 0.0;
                        for p in 0..hd {
                            acc += dctx_i[p] * vj[p];
                        }
                        dprobs[j] = acc;
                        let w = cache.probs[prow_base + j];
                        let dvj = &mut dqkv[((b * seq + j) * 3 * d + v_off)..((b * seq + j) * 3 * d + v_off + hd)];
                        for p in 0..hd {
                            dvj[p] += w * dctx_i[p];
                        }
                    }

                    // softmax backward
                    let probs_i = &cache.probs[prow_base..prow_base + seq];
                    let dot: f64 = dprobs.iter().zip(probs_i).map(|(a, b)| a * b).sum();
                    let mut dscores = vec![0.0; seq];
                    for j in 0..seq {
                        dscores[j] = probs_i[j] * (dprobs[j] - dot);
                    }

                    // dq_i and dk_j
                    let qi_base = (b * seq + i) * 3 * d + q_off;
                    for j in 0..seq {
                        let ds = dscores[j] * scale;
                        let kj_base = (b * seq + j) * 3 * d + k_off;
                        for p in 0..hd {
                            dqkv[qi_base + p] += ds * cache.qkv_out[kj_base + p];
                            dqkv[kj_base + p] += ds * cache.qkv_out[(b * seq + i) * 3 * d + q_off + p];
                        }
                    }
                }
            }
        }

        self.qkv.backward(x, &dqkv, rows)
    }

    pub fn for_each_param(&mut self, f: &mut impl FnMut(&mut Param)) {
        self.qkv.for_each_param(f);
        self.proj.for_each_param(f);
    }

    pub fn visit_params(&self, f: &mut impl FnMut(&Param)) {
        self.qkv.visit_params(f);
        self.proj.visit_params(f);
    }
}

/// Transformer feed-forward block with GELU.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    h_pre: Vec<f64>,
    h_act: Vec<f64>,
}

impl Mlp {
    pub fn new(name: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Mlp {
            fc1: Linear::new(&format!("{name}.fc1"), dim, hidden, rng),
            fc2: Linear::new(&format!("{name}.fc2"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, MlpCache) {
        let h_pre = self.fc1.forward(x, rows);
        let h_act: Vec<f64> = h_pre.iter().map(|&v| gelu(v)).collect();
        let y = self.fc2.forward(&h_act, rows);
        (y, MlpCache { h_pre, h_act })
    }

    pub fn backward(&mut self, x: &[f64], cache: &MlpCache, dy: &[f64], rows: usize) -> Vec<f64> {
        let dh_act = self.fc2.backward(&cache.h_act, dy, rows);
        let dh_pre: Vec<f64> = dh_act
            .iter()
            .zip(&cache.h_pre)
            .map(|(&d, &v)| d * gelu_grad(v))
            .collect();
        self.fc1.backward(x, &dh_pre, rows)
    }

    pub fn for_each_param(&mut self, f: &mut impl FnMut(&mut Param)) {
        self.fc1.for_each_param(f);
        self.fc2.for_each_param(f);
    }

    pub fn visit_params(&self, f: &mut impl FnMut(&Param)) {
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
    }
}

/// Pre-norm transformer block: x + attn(ln1(x)), then + mlp(ln2(·)).
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LayerNormCache,
    ln1_out: Vec<f64>,
    attn: AttentionCache,
    attn_mask: Option<Vec<f64>>,
    ln2: LayerNormCache,
    ln2_out: Vec<f64>,
    mlp: MlpCache,
    mlp_mask: Option<Vec<f64>>,
}

impl TransformerBlock {
    pub fn new(name: &str, dim: usize, heads: usize, mlp_ratio: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(&format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), dim),
            mlp: Mlp::new(&format!("{name}.mlp"), dim, dim * mlp_ratio, rng),
            dropout,
        }
    }

    fn make_mask(&self, len: usize, rng: &mut Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
        match rng {
            Some(r) if self.dropout > 0.0 => {
                let keep = 1.0 - self.dropout;
                Some((0..len).map(|_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect())
            }
            _ => None,
        }
    }

    pub fn forward(
        &self,
        x: &[f64],
        batch: usize,
        seq: usize,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, BlockCache) {
        let rows = batch * seq;
        let dim = self.ln1.dim;
        let (ln1_out, ln1_cache) = self.ln1.forward(x, rows);
        let (mut attn_out, attn_cache) = self.attn.forward(&ln1_out, batch, seq);
        let attn_mask = self.make_mask(rows * dim, rng);
        if let Some(mask) = &attn_mask {
            attn_out.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        let mid: Vec<f64> = x.iter().zip(&attn_out).map(|(a, b)| a + b).collect();
        let (ln2_out, ln2_cache) = self.ln2.forward(&mid, rows);
        let (mut mlp_out, mlp_cache) = self.mlp.forward(&ln2_out, rows);
        let mlp_mask = self.make_mask(rows * dim, rng);
        if let Some(mask) = &mlp_mask {
            mlp_out.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        let y: Vec<f64> = mid.iter().zip(&mlp_out).map(|(a, b)| a + b).collect();
        (
            y,
            BlockCache {
                ln1: ln1_cache,
                ln1_out,
                attn: attn_cache,
                attn_mask,
                ln2: ln2_cache,
                ln2_out,
                mlp: mlp_cache,
                mlp_mask,
            },
        )
    }

    pub fn backward(&mut self, cache: &BlockCache, dy: &[f64], batch: usize, seq: usize) -> Vec<f64> {
        let rows = batch * seq;
        let mut dmlp_out = dy.to_vec();
        if let Some(mask) = &cache.mlp_mask {
            dmlp_out.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        let dln2_out = self.mlp.backward(&cache.ln2_out, &cache.mlp, &dmlp_out, rows);
        let dmid_from_ln2 = self.ln2.backward(&cache.ln2, &dln2_out, rows);
        let dmid: Vec<f64> = dy.iter().zip(&dmid_from_ln2).map(|(a, b)| a + b).collect();

        let mut dattn_out = dmid.clone();
        if let Some(mask) = &cache.attn_mask {
            dattn_out.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        let dln1_out = self.attn.backward(&cache.ln1_out, &cache.attn, &dattn_out);
        let dx_from_ln1 = self.ln1.backward(&cache.ln1, &dln1_out, rows);
        dmid.iter().zip(&dx_from_ln1).map(|(a, b)| a + b).collect()
    }

    pub fn for_each_param(&mut self, f: &mut impl FnMut(&mut Param)) {
        self.ln1.for_each_param(f);
        self.attn.for_each_param(f);
        self.ln2.for_each_param(f);
        self.mlp.for_each_param(f);
    }

    pub fn visit_params(&self, f: &mut impl FnMut(&Param)) {
        self.ln1.visit_params(f);
        self.attn.visit_params(f);
        self.ln2.visit_params(f);
        self.mlp.visit_params(f);
    }
}

/// A plain MLP head: linear layers with GELU between them, none after the last.
#[derive(Debug, Clone)]
pub struct MlpStack {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct MlpStackCache {
    /// Input to each layer plus pre-activation of each hidden layer.
    inputs: Vec<Vec<f64>>,
    pre_acts: Vec<Vec<f64>>,
}

impl MlpStack {
    pub fn new(name: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        MlpStack { layers }
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, MlpStackCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::new();
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            let out = layer.forward(&cur, rows);
            if i + 1 < self.layers.len() {
                pre_acts.push(out.clone());
                cur = out.iter().map(|&v| gelu(v)).collect();
            } else {
                cur = out;
            }
        }
        (cur, MlpStackCache { inputs, pre_acts })
    }

    pub fn backward(&mut self, cache: &MlpStackCache, dy: &[f64], rows: usize) -> Vec<f64> {
        let mut d = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                d = d
                    .iter()
                    .zip(&cache.pre_acts[i])
                    .map(|(&g, &v)| g * gelu_grad(v))
                    .collect();
            }
            d = self.layers[i].backward(&cache.inputs[i], &d, rows);
        }
        d
    }

    pub fn for_each_param(&mut self, f: &mut impl FnMut(&mut Param)) {
        for l in &mut self.layers {
            l.for_each_param(f);
        }
    }

    pub fn visit_params(&self, f: &mut impl FnMut(&Param)) {
        for l in &self.layers {
            l.visit_params(f);
        }
    }
}

/// Decoupled-weight-decay adaptive-moment optimizer. Moment buffers are
/// keyed by parameter order, which is fixed by construction.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Start one optimization step (advances bias correction).
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Update one parameter. `index` must follow the same fixed enumeration
    /// order on every step; moment buffers are allocated on first sight.
    pub fn update(&mut self, index: usize, p: &mut Param, lr: f64) -> Result<()> {
        if index == self.m.len() {
            self.m.push(vec![0.0; p.len()]);
            self.v.push(vec![0.0; p.len()]);
        }
        let (m, v) = match (self.m.get_mut(index), self.v.get_mut(index)) {
            (Some(m), Some(v)) if m.len() == p.len() => (m, v),
            _ => {
                return Err(Error::ShapeMismatch {
                    context: "optimizer state vs param list",
                    expected: self.m.len().to_string(),
                    got: index.to_string(),
                })
            }
        };
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..p.data.len() {
            let g = p.grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p.data[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p.data[i]);
        }
        Ok(())
    }
}

/// Cosine decay from `base_lr` to zero over `total_steps`.
pub fn cosine_lr(base_lr: f64, step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let progress = (step as f64 / total_steps as f64).min(1.0);
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress).cos())
}
