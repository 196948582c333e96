//! Reference computations shared by the integration tests: plain loops over
//! nested vectors, no tape, no shared helpers with the library.

#![allow(dead_code)]

pub mod checks;

use clam::contrastive::{AugmentedBatch, ContrastiveConfig};
use clam::envs::EnvKind;
use clam::orchestrator::{Preset, TrainConfig, Variant};
use clam::model::{ClamModel, ModelConfig, Pooling};
use clam::rng::derived;
use ndiff::ParamStore;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

const LN_EPS: f64 = 1e-10;

pub fn param(store: &ParamStore, name: &str) -> Mat {
    let t = store.get(name).unwrap_or_else(|| panic!("missing {name}"));
    let (r, c) = (t.shape[0], t.shape[1]);
    (0..r).map(|i| t.data[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let k = b.len();
    let m = b[0].len();
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), k);
            (0..m).map(|j| (0..k).map(|p| row[p] * b[p][j]).sum()).collect()
        })
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn add_bias(a: &Mat, bias: &Mat) -> Mat {
    a.iter().map(|r| r.iter().zip(&bias[0]).map(|(x, b)| x + b).collect()).collect()
}

pub fn layer_norm(a: &Mat) -> Mat {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mu = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
            r.iter().map(|x| (x - mu) / (var + LN_EPS).sqrt()).collect()
        })
        .collect()
}

pub fn affine_norm(a: &Mat, store: &ParamStore, prefix: &str) -> Mat {
    let g = param(store, &format!("{prefix}.g"));
    let b = param(store, &format!("{prefix}.b"));
    layer_norm(a)
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, x)| x * g[0][j] + b[0][j]).collect())
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn dense(a: &Mat, store: &ParamStore, w: &str, b: &str) -> Mat {
    add_bias(&matmul(a, &param(store, w)), &param(store, b))
}

fn map(a: &Mat, f: fn(f64) -> f64) -> Mat {
    a.iter().map(|r| r.iter().map(|&x| f(x)).collect()).collect()
}

/// Multi-head attention returning the output and per-head weight matrices.
pub fn attention(store: &ParamStore, prefix: &str, heads: usize, q_in: &Mat, ctx: &Mat) -> (Mat, Vec<Mat>) {
    let mut cat: Mat = vec![Vec::new(); q_in.len()];
    let mut weights = Vec::new();
    for h in 0..heads {
        let q = matmul(q_in, &param(store, &format!("{prefix}.h{h}.wq")));
        let k = matmul(ctx, &param(store, &format!("{prefix}.h{h}.wk")));
        let v = matmul(ctx, &param(store, &format!("{prefix}.h{h}.wv")));
        let dk = q[0].len() as f64;
        let a: Mat = matmul(&q, &transpose(&k))
            .iter()
            .map(|r| softmax(&r.iter().map(|x| x / dk.sqrt()).collect::<Vec<_>>()))
            .collect();
        let out = matmul(&a, &v);
        for (c, o) in cat.iter_mut().zip(out) {
            c.extend(o);
        }
        weights.push(a);
    }
    (matmul(&cat, &param(store, &format!("{prefix}.wo"))), weights)
}

pub fn positions(t: usize, d: usize) -> Mat {
    (0..t)
        .map(|p| {
            (0..d)
                .map(|j| {
                    let i = (j / 2) as f64;
                    let angle = p as f64 / 10_000f64.powf(2.0 * i / d as f64);
                    if j % 2 == 0 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                })
                .collect()
        })
        .collect()
}

/// Feature sequence of an observation trajectory.
pub fn encoder_reference(cfg: &ModelConfig, store: &ParamStore, obs: &Mat) -> Mat {
    let mut x = dense(obs, store, "enc.in.w", "enc.in.b");
    if cfg.positional {
        x = add(&x, &positions(obs.len(), cfg.d_model));
    }
    for l in 0..cfg.layers {
        let h = affine_norm(&x, store, &format!("enc.l{l}.ln1"));
        let (att, _) = attention(store, &format!("enc.l{l}"), cfg.heads, &h, &h);
        x = add(&x, &att);
        let h = affine_norm(&x, store, &format!("enc.l{l}.ln2"));
        let f = map(&dense(&h, store, &format!("enc.l{l}.ff1.w"), &format!("enc.l{l}.ff1.b")), gelu);
        let f = dense(&f, store, &format!("enc.l{l}.ff2.w"), &format!("enc.l{l}.ff2.b"));
        x = add(&x, &f);
    }
    affine_norm(&x, store, "enc.lnf")
}

/// Pooled aggregate before the feed-forward, and the final embedding.
pub fn pool_reference(cfg: &ModelConfig, store: &ParamStore, z: &Mat) -> (Vec<f64>, Vec<f64>) {
    let t = z.len();
    let pre: Vec<f64> = match cfg.pooling {
        Pooling::Attention => attention(store, "pool", cfg.heads, &param(store, "pool.token"), z).0[0].clone(),
        Pooling::Average => (0..cfg.d_model).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / t as f64).collect(),
        Pooling::WeightVector => {
            let w = softmax(&param(store, "pool.weights")[0][..t]);
            (0..cfg.d_model).map(|j| (0..t).map(|i| w[i] * z[i][j]).sum()).collect()
        }
    };
    let h = map(&dense(&vec![pre.clone()], store, "pool.ff1.w", "pool.ff1.b"), gelu);
    let mut out = dense(&h, store, "pool.ff2.w", "pool.ff2.b");
    if cfg.normalize_embedding {
        out = layer_norm(&out);
    }
    (pre, out[0].clone())
}

pub fn tiny_config(pooling: Pooling) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        layers: 1,
        ff_mult: 4,
        d_proj: 4,
        max_len: 6,
        pooling,
        positional: true,
        init_std: 0.3,
        normalize_embedding: true,
    }
}

/// Tiny model with O(1) random weights, so every path carries signal.
pub fn tiny_model(cfg: ModelConfig, obs_dim: usize, seed: u64) -> (ClamModel, ParamStore) {
    let model = ClamModel::new(cfg, obs_dim).unwrap();
    let mut rng = derived(seed);
    let mut store = model.init(&mut rng).unwrap();
    for (_, t) in store.iter_mut() {
        for x in t.data.iter_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    (model, store)
}

pub fn random_rows(rng: &mut impl Rng, t: usize, dim: usize) -> Mat {
    (0..t).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Four weak/strong pairs with window lengths up to six.
pub fn tiny_batch(obs_dim: usize, seed: u64) -> AugmentedBatch {
    let mut rng = derived(seed);
    let mut b = AugmentedBatch {
        weak: Vec::new(),
        strong: Vec::new(),
        sources: Vec::new(),
        labels: Vec::new(),
    };
    for i in 0..4 {
        let tw = rng.random_range(2..=6);
        let ts = rng.random_range(2..=6);
        b.weak.push(random_rows(&mut rng, tw, obs_dim));
        b.strong.push(random_rows(&mut rng, ts, obs_dim));
        b.sources.push(i);
        b.labels.push(i % 2);
    }
    b
}

pub fn tiny_contrastive() -> ContrastiveConfig {
    ContrastiveConfig {
        batch_size: 4,
        temperature: 0.5,
        crop_len_min: 2,
        crop_len_max: 6,
        capacity: 4,
        ..ContrastiveConfig::default()
    }
}

/// `A_t = sum_l (gamma lambda)^l delta_{t+l}`, truncated at the first terminal.
pub fn gae_brute_force(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if dones[t] || t + 1 == n { 0.0 } else { values[t + 1] };
            rewards[t] + gamma * next - values[t]
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for (l, d) in delta.iter().enumerate().skip(t) {
                sum += w * d;
                if dones[l] {
                    break;
                }
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

/// Clustering ratio straight from its definition: ordered pairs, double loop.
pub fn iicr_brute_force(points: &Mat, labels: &[usize]) -> f64 {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..points.len() {
        for j in 0..points.len() {
            if i == j {
                continue;
            }
            let d = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if labels[i] == labels[j] {
                intra += d;
                ni += 1.0;
            } else {
                inter += d;
                nx += 1.0;
            }
        }
    }
    (intra / ni) / (inter / nx)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Desk preset shrunk so a full run takes well under a second.
pub fn small_train(env: EnvKind, variant: Variant, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::preset(Preset::Desk, env, variant, seed);
    c.episodes = 24;
    c.freq_ppo = 4;
    c.freq_clam = 2;
    c.log_interval = 8;
    c.model.d_model = 8;
    c.model.d_proj = 4;
    c.contrastive.capacity = 6;
    c.contrastive.batch_size = 4;
    c.ppo.hidden = 8;
    c.ppo.epochs = 1;
    c
}
