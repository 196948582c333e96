//! The agent-modeling encoder.
//!
//! An ego observation trajectory (t x obs_dim) is linearly embedded, given
//! sinusoidal position codes, passed through pre-norm multi-head
//! self-attention blocks and aggregated into one policy embedding by a
//! learned policy token that attends over the whole feature sequence. A
//! small projection head maps embeddings onto the unit sphere for the
//! contrastive loss.

use ndiff::{Graph, ParamStore, Tensor, Var};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{ClamError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Policy-token multi-head attention followed by a row-wise feed-forward.
    Attention,
    /// Mean over time steps.
    Average,
    /// Learned per-position weights, truncated to `t` and softmax-renormalized.
    WeightVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_mult: usize,
    pub d_proj: usize,
    pub max_len: usize,
    pub pooling: Pooling,
    pub positional: bool,
    pub init_std: f64,
    /// Standardize the pooled embedding before it leaves the model.
    pub normalize_embedding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 2,
            ff_mult: 4,
            d_proj: 32,
            max_len: 50,
            pooling: Pooling::Attention,
            positional: true,
            init_std: 0.02,
            normalize_embedding: true,
        }
    }
}

/// Intermediate values of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub z: Var,
    /// Attention matrices, `layers * heads` of them, layer-major.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct PoolTrace {
    /// Aggregate of the feature rows before the row-wise feed-forward.
    pub pre_ff: Var,
    pub embedding: Var,
    /// Per-head pooling weights (attention) or the single weight row (weight vector).
    pub weights: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub h: Vec<f64>,
    /// The pre-normalization output was zero, so `h` is the zero vector.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct ClamModel {
    config: ModelConfig,
    obs_dim: usize,
    pos_table: Vec<f64>,
}

/// `table[p][2i] = sin(p / 10000^(2i/d))`, `table[p][2i+1] = cos(...)`.
pub fn sinusoid_table(len: usize, d: usize) -> Vec<f64> {
    let mut table = vec![0.0; len * d];
    for p in 0..len {
        for j in 0..d {
            let pair = (j / 2 * 2) as f64;
            let angle = p as f64 / 10_000f64.powf(pair / d as f64);
            table[p * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    table
}

impl ClamModel {
    pub fn new(config: ModelConfig, obs_dim: usize) -> Result<Self> {
        if config.heads == 0 || config.d_model % config.heads != 0 {
            return Err(ClamError::Config(format!(
                "d_model {} is not divisible by {} heads",
                config.d_model, config.heads
            )));
        }
        if obs_dim == 0 || config.d_proj == 0 || config.max_len == 0 || config.ff_mult == 0 {
            return Err(ClamError::Config("model dimensions must be positive".into()));
        }
        let pos_table = sinusoid_table(config.max_len, config.d_model);
        Ok(Self {
            config,
            obs_dim,
            pos_table,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.d_model
    }

    fn head_dim(&self) -> usize {
        self.config.d_model / self.config.heads
    }

    /// Fresh parameters: `init_std` Gaussians for projections, unit layer-norm
    /// gains, zero biases. The input embedding uses `1/sqrt(obs_dim)` so raw
    /// observations enter at the same scale as the position codes.
    pub fn init(&self, rng: &mut dyn RngCore) -> Result<ParamStore> {
        let c = &self.config;
        let d = c.d_model;
        let dk = self.head_dim();
        let ff = c.ff_mult * d;
        let std = c.init_std;
        let mut s = ParamStore::new();
        s.insert_normal("enc.in.w", self.obs_dim, d, 1.0 / (self.obs_dim as f64).sqrt(), rng)?;
        s.insert_constant("enc.in.b", 1, d, 0.0)?;
        for l in 0..c.layers {
            s.insert_constant(format!("enc.l{l}.ln1.g"), 1, d, 1.0)?;
            s.insert_constant(format!("enc.l{l}.ln1.b"), 1, d, 0.0)?;
            for h in 0..c.heads {
                for w in ["wq", "wk", "wv"] {
                    s.insert_normal(format!("enc.l{l}.h{h}.{w}"), d, dk, std, rng)?;
                }
            }
            s.insert_normal(format!("enc.l{l}.wo"), d, d, std, rng)?;
            s.insert_constant(format!("enc.l{l}.ln2.g"), 1, d, 1.0)?;
            s.insert_constant(format!("enc.l{l}.ln2.b"), 1, d, 0.0)?;
            s.insert_normal(format!("enc.l{l}.ff1.w"), d, ff, std, rng)?;
            s.insert_constant(format!("enc.l{l}.ff1.b"), 1, ff, 0.0)?;
            s.insert_normal(format!("enc.l{l}.ff2.w"), ff, d, std, rng)?;
            s.insert_constant(format!("enc.l{l}.ff2.b"), 1, d, 0.0)?;
        }
        s.insert_constant("enc.lnf.g", 1, d, 1.0)?;
        s.insert_constant("enc.lnf.b", 1, d, 0.0)?;
        match c.pooling {
            Pooling::Attention => {
                s.insert_normal("pool.token", 1, d, std, rng)?;
                for h in 0..c.heads {
                    for w in ["wq", "wk", "wv"] {
                        s.insert_normal(format!("pool.h{h}.{w}"), d, dk, std, rng)?;
                    }
                }
                s.insert_normal("pool.wo", d, d, std, rng)?;
            }
            Pooling::WeightVector => s.insert_constant("pool.weights", 1, c.max_len, 0.0)?,
            Pooling::Average => {}
        }
        s.insert_normal("pool.ff1.w", d, d, std, rng)?;
        s.insert_constant("pool.ff1.b", 1, d, 0.0)?;
        s.insert_normal("pool.ff2.w", d, d, std, rng)?;
        s.insert_constant("pool.ff2.b", 1, d, 0.0)?;
        s.insert_normal("proj.w1", d, d, std, rng)?;
        s.insert_constant("proj.b1", 1, d, 0.0)?;
        s.insert_normal("proj.w2", d, c.d_proj, std, rng)?;
        s.insert_constant("proj.b2", 1, c.d_proj, 0.0)?;
        Ok(s)
    }

    fn check_len(&self, t: usize) -> Result<()> {
        if t > self.config.max_len {
            return Err(ClamError::TooLong {
                len: t,
                max: self.config.max_len,
            });
        }
        Ok(())
    }

    /// Observation rows (t x obs_dim) to model width (t x d).
    pub fn input_embed(&self, g: &mut Graph, store: &ParamStore, obs: &[Vec<f64>]) -> Result<Var> {
        if obs.is_empty() {
            return Err(ClamError::Empty("trajectory"));
        }
        self.check_len(obs.len())?;
        let x = g.constant(Tensor::from_rows(obs)?);
        let w = g.param(store, "enc.in.w")?;
        let b = g.param(store, "enc.in.b")?;
        let xw = g.matmul(x, w)?;
        Ok(g.add_row(xw, b)?)
    }

    /// Adds the position code of each row; a no-op when positions are disabled.
    pub fn positional_encode(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let (t, d) = (shape[0], shape[1]);
        self.check_len(t)?;
        if !self.config.positional {
            return Ok(x);
        }
        let pos = g.constant(Tensor::matrix(t, d, self.pos_table[..t * d].to_vec())?);
        Ok(g.add(x, pos)?)
    }

    fn affine_norm(&self, g: &mut Graph, store: &ParamStore, x: Var, prefix: &str) -> Result<Var> {
        let n = g.layer_norm(x)?;
        let gain = g.param(store, &format!("{prefix}.g"))?;
        let bias = g.param(store, &format!("{prefix}.b"))?;
        let scaled = g.mul_row(n, gain)?;
        Ok(g.add_row(scaled, bias)?)
    }

    fn dense(&self, g: &mut Graph, store: &ParamStore, x: Var, w: &str, b: &str) -> Result<Var> {
        let w = g.param(store, w)?;
        let b = g.param(store, b)?;
        let xw = g.matmul(x, w)?;
        Ok(g.add_row(xw, b)?)
    }

    /// Multi-head attention: per head `softmax(Q K^T / sqrt(d_k)) V`, heads
    /// concatenated and mapped through `wo`.
    fn multi_head(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prefix: &str,
        query: Var,
        context: Var,
        attention: &mut Vec<Var>,
    ) -> Result<Var> {
        let scale = 1.0 / (self.head_dim() as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let wq = g.param(store, &format!("{prefix}.h{h}.wq"))?;
            let wk = g.param(store, &format!("{prefix}.h{h}.wk"))?;
            let wv = g.param(store, &format!("{prefix}.h{h}.wv"))?;
            let q = g.matmul(query, wq)?;
            let k = g.matmul(context, wk)?;
            let v = g.matmul(context, wv)?;
            let kt = g.transpose(k)?;
            let logits = g.matmul(q, kt)?;
            let logits = g.scale(logits, scale);
            let a = g.row_softmax(logits)?;
            attention.push(a);
            heads.push(g.matmul(a, v)?);
        }
        let cat = g.concat_cols(&heads)?;
        let wo = g.param(store, &format!("{prefix}.wo"))?;
        Ok(g.matmul(cat, wo)?)
    }

    pub fn encode_traced(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<EncoderTrace> {
        let mut attention = Vec::new();
        let mut x = x;
        for l in 0..self.config.layers {
            let h = self.affine_norm(g, store, x, &format!("enc.l{l}.ln1"))?;
            let att = self.multi_head(g, store, &format!("enc.l{l}"), h, h, &mut attention)?;
            x = g.add(x, att)?;
            let h = self.affine_norm(g, store, x, &format!("enc.l{l}.ln2"))?;
            let f = self.dense(g, store, h, &format!("enc.l{l}.ff1.w"), &format!("enc.l{l}.ff1.b"))?;
            let f = g.gelu(f);
            let f = self.dense(g, store, f, &format!("enc.l{l}.ff2.w"), &format!("enc.l{l}.ff2.b"))?;
            x = g.add(x, f)?;
        }
        let z = self.affine_norm(g, store, x, "enc.lnf")?;
        Ok(EncoderTrace { z, attention })
    }

    /// Feature sequence `Z` (t x d) of a position-encoded input.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.encode_traced(g, store, x)?.z)
    }

    fn row_ff(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.dense(g, store, x, "pool.ff1.w", "pool.ff1.b")?;
        let h = g.gelu(h);
        let out = self.dense(g, store, h, "pool.ff2.w", "pool.ff2.b")?;
        if self.config.normalize_embedding {
            Ok(g.layer_norm(out)?)
        } else {
            Ok(out)
        }
    }

    pub fn attention_pool_traced(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<PoolTrace> {
        let t = g.shape(z)[0];
        let mut weights = Vec::new();
        let pre_ff = match self.config.pooling {
            Pooling::Attention => {
                let token = g.param(store, "pool.token")?;
                self.multi_head(g, store, "pool", token, z, &mut weights)?
            }
            Pooling::Average => g.col_mean(z)?,
            Pooling::WeightVector => {
                self.check_len(t)?;
                let w = g.param(store, "pool.weights")?;
                let w = g.slice_cols(w, 0, t)?;
                let a = g.row_softmax(w)?;
                weights.push(a);
                g.matmul(a, z)?
            }
        };
        let embedding = self.row_ff(g, store, pre_ff)?;
        Ok(PoolTrace {
            pre_ff,
            embedding,
            weights,
        })
    }

    /// Aggregates `Z` (t x d) into one policy embedding (1 x d).
    pub fn attention_pool(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        Ok(self.attention_pool_traced(g, store, z)?.embedding)
    }

    /// Embedding used when no observation is available yet: the pooled
    /// aggregate is taken to be zero.
    pub fn empty_embedding(&self, g: &mut Graph, store: &ParamStore) -> Result<Var> {
        let zero = g.constant(Tensor::zeros(1, self.config.d_model));
        self.row_ff(g, store, zero)
    }

    /// Full path from observation rows to a 1 x d embedding.
    pub fn embed_var(&self, g: &mut Graph, store: &ParamStore, obs: &[Vec<f64>]) -> Result<Var> {
        if obs.is_empty() {
            return self.empty_embedding(g, store);
        }
        let x = self.input_embed(g, store, obs)?;
        let x = self.positional_encode(g, x)?;
        let z = self.encode(g, store, x)?;
        self.attention_pool(g, store, z)
    }

    /// Inference-only embedding of a trajectory (typically with the EMA target parameters).
    pub fn embed_trajectory(&self, store: &ParamStore, obs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let c = self.embed_var(&mut g, store, obs)?;
        Ok(g.value(c).data.clone())
    }

    /// Projection head on the rows of `c` (N x d), unit-normalized per row.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, c: Var) -> Result<Var> {
        let h = self.dense(g, store, c, "proj.w1", "proj.b1")?;
        let h = g.gelu(h);
        let h = self.dense(g, store, h, "proj.w2", "proj.b2")?;
        Ok(g.row_l2_normalize(h)?)
    }

    pub fn project_vector(&self, store: &ParamStore, c: &[f64]) -> Result<Projection> {
        let mut g = Graph::inference();
        let cv = g.constant(Tensor::row(c));
        let h = self.project(&mut g, store, cv)?;
        let h = g.value(h).data.clone();
        let degenerate = h.iter().all(|&x| x == 0.0);
        Ok(Projection { h, degenerate })
    }
}

/// Blends `target <- tau * online + (1 - tau) * target` entry by entry.
pub fn ema_update(online: &ParamStore, target: &mut ParamStore, tau: f64) -> Result<()> {
    if online.len() != target.len() {
        return Err(ClamError::ParamMismatch(format!(
            "{} online entries vs {} target entries",
            online.len(),
            target.len()
        )));
    }
    for (name, t) in online.iter() {
        let tt = target
            .get(name)
            .ok_or_else(|| ClamError::ParamMismatch(format!("target lacks `{name}`")))?;
        if tt.shape != t.shape {
            return Err(ClamError::ParamMismatch(format!(
                "`{name}` has shape {:?} online and {:?} in the target",
                t.shape, tt.shape
            )));
        }
    }
    for (name, t) in online.iter() {
        let tt = target.get_mut(name).expect("validated above");
        for (dst, &src) in tt.data.iter_mut().zip(&t.data) {
            *dst = tau * src + (1.0 - tau) * *dst;
        }
    }
    Ok(())
}
