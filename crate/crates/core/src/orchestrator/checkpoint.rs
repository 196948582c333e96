//! Checkpoint directories: a readable `manifest.json` plus `tensors.bin`, the
//! concatenation of every tensor as little-endian f32 in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndiff::{AdamState, ParamStore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use super::learner::{Learner, Rngs};
use crate::envs::EnvKind;
use crate::error::{ClamError, Result};

pub const FORMAT: &str = "clam-checkpoint";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const TENSORS: &str = "tensors.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f32 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub variant: Variant,
    pub env: EnvKind,
    pub seed: u64,
    pub episode: u64,
    pub ppo_updates: u64,
    pub clam_updates: u64,
    pub summary: BTreeMap<String, f64>,
    pub config: TrainConfig,
    pub optimizers: BTreeMap<String, OptimizerMeta>,
    pub rng: BTreeMap<String, ChaCha8Rng>,
    pub tensors: Vec<TensorEntry>,
}

fn err(path: &Path, reason: impl Into<String>) -> ClamError {
    ClamError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// (group, store) pairs in storage order; optimizer moments reuse parameter shapes.
fn tensor_layout(l: &Learner) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    let mut params = |group: &str, store: &ParamStore| {
        for (name, t) in store.iter() {
            out.push((format!("{group}/{name}"), t.shape.clone(), t.data.clone()));
        }
    };
    params("encoder", &l.encoder);
    params("encoder_target", &l.encoder_target);
    params("policy", &l.policy);
    params("policy_target", &l.policy_target);
    let mut moments = |group: &str, adam: &AdamState, store: &ParamStore| {
        for (name, t) in store.iter() {
            for (m, which) in [(&adam.first_moment, "m"), (&adam.second_moment, "v")] {
                let data = m.get(name).cloned().unwrap_or_else(|| vec![0.0; t.len()]);
                out.push((format!("{group}.{which}/{name}"), t.shape.clone(), data));
            }
        }
    };
    moments("adam.encoder", &l.encoder_adam, &l.encoder);
    moments("adam.policy", &l.policy_adam, &l.policy);
    out
}

fn optimizer_meta(a: &AdamState) -> OptimizerMeta {
    OptimizerMeta {
        step_count: a.step_count,
        lr: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        epsilon: a.epsilon,
    }
}

pub fn manifest_of(l: &Learner) -> Manifest {
    let mut offset = 0;
    let tensors = tensor_layout(l)
        .into_iter()
        .map(|(name, shape, data)| {
            let e = TensorEntry { name, shape, offset };
            offset += data.len();
            e
        })
        .collect();
    Manifest {
        format: FORMAT.into(),
        version: VERSION,
        variant: l.config.variant,
        env: l.config.env,
        seed: l.config.seed,
        episode: l.episode,
        ppo_updates: l.ppo_updates,
        clam_updates: l.clam_updates,
        summary: l.summary.iter().filter(|(_, v)| v.is_finite()).map(|(k, v)| (k.clone(), *v)).collect(),
        config: l.config.clone(),
        optimizers: [
            ("encoder".to_string(), optimizer_meta(&l.encoder_adam)),
            ("policy".to_string(), optimizer_meta(&l.policy_adam)),
        ]
        .into_iter()
        .collect(),
        rng: l.rngs.to_map(),
        tensors,
    }
}

pub fn save_checkpoint(l: &Learner, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = manifest_of(l);
    let mut bytes = Vec::new();
    for (_, _, data) in tensor_layout(l) {
        for x in data {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    fs::write(dir.join(TENSORS), bytes)?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST)).map_err(|e| err(dir, format!("cannot read manifest: {e}")))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| err(dir, format!("malformed manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(err(
            dir,
            format!(
                "expected {FORMAT} v{VERSION}, found {} v{}",
                manifest.format, manifest.version
            ),
        ));
    }
    Ok(manifest)
}

/// Differences between the stored tensor table and the one implied by the config.
fn layout_diff(expected: &[(String, Vec<usize>)], found: &[TensorEntry]) -> Vec<String> {
    let want: BTreeMap<&str, &Vec<usize>> = expected.iter().map(|(n, s)| (n.as_str(), s)).collect();
    let have: BTreeMap<&str, &Vec<usize>> = found.iter().map(|e| (e.name.as_str(), &e.shape)).collect();
    let mut diff = Vec::new();
    for (name, shape) in &want {
        match have.get(name) {
            None => diff.push(format!("missing {name} {shape:?}")),
            Some(s) if s != shape => diff.push(format!("{name}: expected {shape:?}, found {s:?}")),
            _ => {}
        }
    }
    for (name, shape) in &have {
        if !want.contains_key(name) {
            diff.push(format!("unexpected {name} {shape:?}"));
        }
    }
    diff
}

fn restore_adam(meta: Option<&OptimizerMeta>, adam: &mut AdamState, dir: &Path, group: &str) -> Result<()> {
    let m = meta.ok_or_else(|| err(dir, format!("no optimizer state for {group}")))?;
    adam.step_count = m.step_count;
    adam.lr = m.lr;
    adam.beta1 = m.beta1;
    adam.beta2 = m.beta2;
    adam.epsilon = m.epsilon;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Learner> {
    let manifest = read_manifest(dir)?;
    let mut l = Learner::new(manifest.config.clone()).map_err(|e| err(dir, format!("config snapshot: {e}")))?;
    let expected: Vec<(String, Vec<usize>)> = tensor_layout(&l).into_iter().map(|(n, s, _)| (n, s)).collect();
    let diff = layout_diff(&expected, &manifest.tensors);
    if !diff.is_empty() {
        return Err(err(dir, format!("tensor table mismatch:\n  {}", diff.join("\n  "))));
    }
    let bytes = fs::read(dir.join(TENSORS)).map_err(|e| err(dir, format!("cannot read tensors: {e}")))?;
    let total: usize = manifest.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * 4 {
        return Err(err(dir, format!("tensors.bin holds {} bytes, manifest needs {}", bytes.len(), total * 4)));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    for e in &manifest.tensors {
        let len: usize = e.shape.iter().product();
        if e.offset + len > values.len() {
            return Err(err(dir, format!("{} overruns tensors.bin", e.name)));
        }
        let data = values[e.offset..e.offset + len].to_vec();
        let (group, name) = e.name.split_once('/').expect("layout names contain a group");
        let slot = match group {
            "encoder" => &mut l.encoder.get_mut(name).expect("validated").data,
            "encoder_target" => &mut l.encoder_target.get_mut(name).expect("validated").data,
            "policy" => &mut l.policy.get_mut(name).expect("validated").data,
            "policy_target" => &mut l.policy_target.get_mut(name).expect("validated").data,
            "adam.encoder.m" => l.encoder_adam.first_moment.get_mut(name).expect("validated"),
            "adam.encoder.v" => l.encoder_adam.second_moment.get_mut(name).expect("validated"),
            "adam.policy.m" => l.policy_adam.first_moment.get_mut(name).expect("validated"),
            "adam.policy.v" => l.policy_adam.second_moment.get_mut(name).expect("validated"),
            other => return Err(err(dir, format!("unknown tensor group {other}"))),
        };
        *slot = data;
    }
    restore_adam(manifest.optimizers.get("encoder"), &mut l.encoder_adam, dir, "encoder")?;
    restore_adam(manifest.optimizers.get("policy"), &mut l.policy_adam, dir, "policy")?;
    l.rngs = Rngs::from_map(&manifest.rng).ok_or_else(|| err(dir, "incomplete random stream table"))?;
    l.episode = manifest.episode;
    l.ppo_updates = manifest.ppo_updates;
    l.clam_updates = manifest.clam_updates;
    l.summary = manifest.summary;
    Ok(l)
}
