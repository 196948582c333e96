//! Self-contained checks returning a one-line detail on success and the
//! reason on failure. Integration tests unwrap them; the acceptance harness
//! aggregates them per criterion.

use std::collections::BTreeSet;

use clam::contrastive::{
    batch_loss, build_batch, crop_pair, crop_window, info_nce_loss, mask_count, mask_strong, step_on_batch,
    AugmentedBatch, ContrastiveConfig, ReplayBuffer,
};
use clam::envs::log::replay;
use clam::envs::{Env, EnvConfig, EnvKind, PolicySet, MAX_EPISODE_STEPS};
use clam::eval::{iicr, play, Controller};
use clam::model::{ema_update, Pooling};
use clam::ppo::{compute_gae, normalize_advantages, ppo_loss, ActorCritic, PpoBatch, PpoConfig};
use clam::rng::derived;
use ndiff::{grad_check, AdamState, Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;

pub type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

const OBS_DIM: usize = 5;

pub fn grad_info_nce(pooling: Pooling) -> Check {
    let (model, mut store) = tiny_model(tiny_config(pooling), OBS_DIM, 5);
    let batch = tiny_batch(OBS_DIM, 9);
    let cfg = tiny_contrastive();
    let r = grad_check(&mut store, 1e-6, 1e-4, None, |g, s| {
        Ok(batch_loss(&model, g, s, &batch, &cfg).expect("loss builds"))
    })
    .map_err(|e| e.to_string())?;
    ensure(r.passed(), || format!("InfoNCE {pooling:?}: {r:?}"))?;
    Ok(format!(
        "InfoNCE ({pooling:?}) max rel err {:.2e} over {} coords",
        r.max_rel_error, r.coordinates_checked
    ))
}

fn tiny_actor_critic(seed: u64) -> (ActorCritic, ParamStore) {
    let ac = ActorCritic::new(OBS_DIM, 8, 16, 5);
    let mut rng = derived(seed);
    let mut store = ac.init(&mut rng).unwrap();
    for (_, t) in store.iter_mut() {
        t.data.iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
    }
    (ac, store)
}

struct OwnedBatch {
    inputs: Mat,
    actions: Vec<usize>,
    old: Vec<f64>,
    adv: Vec<f64>,
    ret: Vec<f64>,
}

impl OwnedBatch {
    fn random(seed: u64, n: usize) -> Self {
        let mut rng = derived(seed);
        Self {
            inputs: random_rows(&mut rng, n, OBS_DIM + 8),
            actions: (0..n).map(|i| i % 5).collect(),
            old: (0..n).map(|_| -1.6 + rng.random_range(-0.5..0.5)).collect(),
            adv: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            ret: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn view(&self) -> PpoBatch<'_> {
        PpoBatch {
            inputs: &self.inputs,
            actions: &self.actions,
            old_log_probs: &self.old,
            advantages: &self.adv,
            returns: &self.ret,
        }
    }
}

pub fn grad_ppo() -> Check {
    let (ac, mut store) = tiny_actor_critic(21);
    let b = OwnedBatch::random(22, 6);
    let batch = b.view();
    let cfg = PpoConfig::default();
    let r = grad_check(&mut store, 1e-6, 1e-4, None, |g, s| {
        Ok(ppo_loss(&ac, g, s, &batch, &cfg).expect("loss builds").total)
    })
    .map_err(|e| e.to_string())?;
    ensure(r.passed(), || format!("PPO: {r:?}"))?;
    Ok(format!(
        "PPO+value max rel err {:.2e} over {} coords",
        r.max_rel_error, r.coordinates_checked
    ))
}

pub fn straight_line() -> Check {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for pooling in [Pooling::Attention, Pooling::Average, Pooling::WeightVector] {
        for (positional, normalize) in [(true, true), (false, true), (true, false)] {
            let mut cfg = tiny_config(pooling);
            cfg.positional = positional;
            cfg.normalize_embedding = normalize;
            cfg.layers = 2;
            let (model, store) = tiny_model(cfg.clone(), OBS_DIM, 3);
            let mut rng = derived(17);
            for t in 1..=6 {
                let obs = random_rows(&mut rng, t, OBS_DIM);
                let mut g = Graph::inference();
                let x = model.input_embed(&mut g, &store, &obs).unwrap();
                let x = model.positional_encode(&mut g, x).unwrap();
                let z = model.encode(&mut g, &store, x).unwrap();
                let pool = model.attention_pool_traced(&mut g, &store, z).unwrap();
                let z_ref = encoder_reference(&cfg, &store, &obs);
                let (pre_ref, emb_ref) = pool_reference(&cfg, &store, &z_ref);
                worst = worst
                    .max(max_abs_diff(&g.value(z).data, &z_ref.concat()))
                    .max(max_abs_diff(&g.value(pool.pre_ff).data, &pre_ref))
                    .max(max_abs_diff(&g.value(pool.embedding).data, &emb_ref));
                cases += 1;
            }
        }
    }
    ensure(worst < 1e-9, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("{cases} inputs, max deviation {worst:.2e}"))
}

pub fn attention_rows_sum_to_one() -> Check {
    let mut worst: f64 = 0.0;
    let mut cfg = tiny_config(Pooling::Attention);
    cfg.max_len = 50;
    let (model, store) = tiny_model(cfg, OBS_DIM, 8);
    let mut rng = derived(80);
    for t in [1, 2, 7, 23, 50] {
        let obs = random_rows(&mut rng, t, OBS_DIM);
        let mut g = Graph::inference();
        let x = model.input_embed(&mut g, &store, &obs).unwrap();
        let x = model.positional_encode(&mut g, x).unwrap();
        let tr = model.encode_traced(&mut g, &store, x).unwrap();
        let pool = model.attention_pool_traced(&mut g, &store, tr.z).unwrap();
        for a in tr.attention.iter().chain(&pool.weights) {
            let v = g.value(*a);
            for r in 0..v.rows() {
                let row = v.row_slice(r);
                ensure(row.iter().all(|x| x.is_finite() && *x >= 0.0), || "bad weight".into())?;
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    ensure(worst < 1e-9, || format!("row sum deviation {worst:.3e}"))?;
    Ok(format!("row sums within {worst:.1e}"))
}

pub fn crop_coverage_and_bounds() -> Check {
    let cfg = ContrastiveConfig::default();
    let traj: Mat = (0..50).map(|i| vec![i as f64]).collect();
    let mut rng = derived(6);
    let mut seen = BTreeSet::new();
    // Length first, then start: the rarest windows have probability 1/1849,
    // so 10,000 draws leave about one unseen on average; 40,000 leave none.
    for _ in 0..40_000 {
        let c = crop_window(50, cfg.crop_len_min, cfg.crop_len_max, &mut rng).map_err(|e| e.to_string())?;
        ensure(c.len >= 8 && c.start + c.len <= 50, || format!("{c:?} out of range"))?;
        let w = c.apply(&traj);
        ensure(w.iter().enumerate().all(|(k, r)| r[0] == (c.start + k) as f64), || {
            "window is not contiguous".into()
        })?;
        seen.insert((c.start, c.len));
    }
    let valid: usize = (8..=50).map(|len| 51 - len).sum();
    ensure(seen.len() == valid, || format!("{} of {valid} combinations seen", seen.len()))?;
    for _ in 0..1000 {
        let t = rng.random_range(8..=50);
        let (a, b) = crop_pair(t, &cfg, &mut rng).map_err(|e| e.to_string())?;
        ensure(a.start + a.len <= t && b.start + b.len <= t, || "pair out of range".into())?;
    }
    let (a, b) = crop_pair(8, &cfg, &mut rng).map_err(|e| e.to_string())?;
    ensure(a.len == 8 && b.len == 8, || "minimal trajectory must be taken whole".into())?;
    ensure(crop_pair(7, &cfg, &mut rng).is_err(), || "short trajectory accepted".into())?;
    Ok(format!("all {valid} (start, len) windows hit in 40,000 crops"))
}

pub fn mask_properties() -> Check {
    let mut rng = derived(7);
    for _ in 0..500 {
        let len = rng.random_range(1..=50);
        let ratio: f64 = rng.random_range(0.0..=1.0);
        let s: Mat = (0..len).map(|i| vec![i as f64 + 1.0, -(i as f64) - 1.0]).collect();
        let m = mask_strong(&s, ratio, &mut rng);
        let zero = m.iter().filter(|r| r.iter().all(|&x| x == 0.0)).count();
        let kept = m.iter().zip(&s).filter(|(a, b)| a == b).count();
        let k = (ratio * len as f64 + 1e-9).floor() as usize;
        ensure(zero == k && kept == len - k && mask_count(len, ratio) == k, || {
            format!("len {len} ratio {ratio}: {zero} zeroed, {kept} kept")
        })?;
    }
    let s: Mat = (0..10).map(|i| vec![i as f64 + 1.0]).collect();
    ensure(mask_strong(&s, 0.0, &mut rng) == s, || "ratio 0 changed rows".into())?;
    let z = mask_strong(&s, 0.4, &mut rng);
    ensure(z.iter().filter(|r| r[0] == 0.0).count() == 4, || "ratio 0.4 on 10 rows".into())?;
    Ok("floor(ratio*len) distinct rows zeroed, the rest untouched".into())
}

fn tagged_buffer(n: usize, capacity: usize, seed: u64) -> ReplayBuffer {
    let mut rng = derived(seed);
    let mut buf = ReplayBuffer::new(capacity, 8);
    for ep in 0..n {
        let t = rng.random_range(8..=50);
        // Column 0 identifies the episode, column 1 the step.
        let obs = (0..t).map(|s| vec![ep as f64 + 1.0, s as f64 + 1.0]).collect();
        buf.store(obs, ep % 3);
    }
    buf
}

pub fn positive_pair_provenance() -> Check {
    let buf = tagged_buffer(40, 40, 3);
    let cfg = ContrastiveConfig {
        batch_size: 16,
        capacity: 40,
        ..ContrastiveConfig::default()
    };
    let mut rng = derived(4);
    for _ in 0..50 {
        let b = build_batch(&buf, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let distinct: BTreeSet<usize> = b.sources.iter().copied().collect();
        ensure(distinct.len() == b.sources.len(), || "batch repeats a source".into())?;
        for i in 0..b.weak.len() {
            let src = &buf.get(b.sources[i]).unwrap().obs;
            ensure(b.labels[i] == buf.get(b.sources[i]).unwrap().label, || "label mismatch".into())?;
            let w = &b.weak[i];
            let start = (w[0][1] - 1.0) as usize;
            ensure(w[..] == src[start..start + w.len()], || "weak view is not a bit-equal window".into())?;
            let unmasked: Vec<&Vec<f64>> = b.strong[i].iter().filter(|r| r[0] != 0.0).collect();
            ensure(unmasked.iter().all(|r| r[0] == src[0][0]), || {
                "strong view mixes episodes".into()
            })?;
            let zeros = b.strong[i].len() - unmasked.len();
            ensure(zeros == mask_count(b.strong[i].len(), cfg.mask_ratio), || "wrong mask count".into())?;
        }
    }
    Ok("weak/strong views share their source; weak views are exact windows".into())
}

fn nce(c1: &[Vec<f64>], c2: &[Vec<f64>], temp: f64) -> f64 {
    let mut g = Graph::inference();
    let a = g.constant(Tensor::from_rows(c1).unwrap());
    let b = g.constant(Tensor::from_rows(c2).unwrap());
    let l = info_nce_loss(&mut g, a, b, temp, false).unwrap();
    g.value(l).item()
}

fn unit_rows(rng: &mut impl Rng, n: usize, d: usize) -> Mat {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn info_nce_values() -> Check {
    let two = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let hand = nce(&two, &two, 1.0);
    let exact = (1.0 + (-1f64).exp()).ln();
    ensure((hand - exact).abs() < 1e-6 && (hand - 0.3133).abs() < 5e-5, || {
        format!("two-pair loss {hand}")
    })?;
    let same = vec![vec![0.6, 0.8]; 4];
    let uniform = nce(&same, &same, 0.1);
    ensure((uniform - 4f64.ln()).abs() < 1e-6, || format!("uniform loss {uniform}"))?;
    ensure(nce(&[vec![0.6, 0.8]], &[vec![1.0, 0.0]], 0.1).abs() < 1e-12, || "N=1 loss".into())?;
    let mut rng = derived(10);
    for _ in 0..200 {
        let n = rng.random_range(1..10);
        let a = unit_rows(&mut rng, n, 4);
        let b = unit_rows(&mut rng, n, 4);
        let temp = rng.random_range(0.05..2.0);
        let l = nce(&a, &b, temp);
        ensure(l >= 0.0, || format!("negative loss {l}"))?;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pa: Mat = perm.iter().map(|&i| a[i].clone()).collect();
        let pb: Mat = perm.iter().map(|&i| b[i].clone()).collect();
        ensure((nce(&pa, &pb, temp) - l).abs() < 1e-12, || "not permutation invariant".into())?;
    }
    Ok(format!("two-pair {hand:.6}, uniform N=4 {uniform:.6}, >= 0, permutation invariant"))
}

pub fn degenerate_batch_gives_ln_n() -> Check {
    let (model, store) = tiny_model(tiny_config(Pooling::Attention), OBS_DIM, 12);
    let mut rng = derived(13);
    let traj = random_rows(&mut rng, 6, OBS_DIM);
    let batch = AugmentedBatch {
        weak: vec![traj.clone(); 4],
        strong: vec![mask_strong(&traj, 0.0, &mut rng); 4],
        sources: vec![0; 4],
        labels: vec![0; 4],
    };
    let cfg = tiny_contrastive();
    let mut g = Graph::inference();
    let l = batch_loss(&model, &mut g, &store, &batch, &cfg).map_err(|e| e.to_string())?;
    let l = g.value(l).item();
    ensure((l - 4f64.ln()).abs() < 1e-9, || format!("loss {l}"))?;
    Ok(format!("identical sources, mask 0: loss {l:.9} = ln 4"))
}

pub fn frozen_batch_descends() -> Check {
    let (model, mut store) = tiny_model(tiny_config(Pooling::Attention), OBS_DIM, 14);
    let batch = tiny_batch(OBS_DIM, 15);
    let cfg = tiny_contrastive();
    let mut adam = AdamState::new(&store, 1e-3);
    let l0 = step_on_batch(&model, &mut store, &mut adam, &batch, &cfg).map_err(|e| e.to_string())?;
    let l1 = step_on_batch(&model, &mut store, &mut adam, &batch, &cfg).map_err(|e| e.to_string())?;
    let mut g = Graph::inference();
    let l2 = batch_loss(&model, &mut g, &store, &batch, &cfg).map_err(|e| e.to_string())?;
    let l2 = g.value(l2).item();
    ensure(l1 < l0 && l2 < l1, || format!("{l0} -> {l1} -> {l2}"))?;
    Ok(format!("{l0:.5} -> {l1:.5} -> {l2:.5}"))
}

pub fn ema_endpoints() -> Check {
    let (_, online) = tiny_model(tiny_config(Pooling::Attention), OBS_DIM, 1);
    let (_, start) = tiny_model(tiny_config(Pooling::Attention), OBS_DIM, 2);
    let mut t = start.clone();
    ema_update(&online, &mut t, 1.0).map_err(|e| e.to_string())?;
    ensure(online.iter().all(|(n, x)| t.get(n).unwrap().data == x.data), || "tau 1".into())?;
    let mut t = start.clone();
    ema_update(&online, &mut t, 0.0).map_err(|e| e.to_string())?;
    ensure(start.iter().all(|(n, x)| t.get(n).unwrap().data == x.data), || "tau 0".into())?;
    let mut a = ParamStore::new();
    a.insert("w", Tensor::scalar(2.0)).unwrap();
    let mut b = ParamStore::new();
    b.insert("w", Tensor::scalar(0.0)).unwrap();
    ema_update(&a, &mut b, 0.5).map_err(|e| e.to_string())?;
    ensure(b.get("w").unwrap().data[0] == 1.0, || "midpoint".into())?;
    Ok("tau 1 copies, tau 0 keeps, 0.5 averages".into())
}

pub fn gae_cases() -> Check {
    let mut rng = derived(2);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = 5;
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
        d[n - 1] = true;
        let (gamma, lambda) = (rng.random_range(0.5..1.0), rng.random_range(0.0..=1.0));
        let (a, ret) = compute_gae(&r, &v, &d, 0.0, gamma, lambda);
        worst = worst.max(max_abs_diff(&a, &gae_brute_force(&r, &v, &d, gamma, lambda)));
        for t in 0..n {
            ensure((ret[t] - a[t] - v[t]).abs() < 1e-12, || "R != A + V".into())?;
        }
        let (a0, _) = compute_gae(&r, &v, &d, 0.0, gamma, 0.0);
        let td = gae_brute_force(&r, &v, &d, gamma, 0.0);
        ensure(max_abs_diff(&a0, &td) < 1e-12, || "lambda 0".into())?;
    }
    ensure(worst < 1e-12, || format!("brute force deviation {worst:.3e}"))?;
    let (a, _) = compute_gae(&[1.0; 3], &[0.0; 3], &[false, false, true], 0.0, 1.0, 1.0);
    ensure(a == vec![3.0, 2.0, 1.0], || format!("unit rewards {a:?}"))?;
    Ok(format!("brute force within {worst:.1e}; [3, 2, 1] exact"))
}

/// Gradients of the policy term alone, by parameter name.
fn policy_grads(ac: &ActorCritic, store: &mut ParamStore, b: &PpoBatch, cfg: &PpoConfig) -> Vec<f64> {
    let mut g = Graph::new();
    let l = ppo_loss(ac, &mut g, store, b, cfg).unwrap();
    store.zero_grad();
    g.backward(l.policy, store).unwrap();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    names.iter().flat_map(|n| store.grad_or_zero(n)).collect()
}

fn log_probs(ac: &ActorCritic, store: &ParamStore, inputs: &Mat, actions: &[usize]) -> Vec<f64> {
    let mut g = Graph::inference();
    let x = g.constant(Tensor::from_rows(inputs).unwrap());
    let h = ac.forward(&mut g, store, x).unwrap();
    let lp = g.row_log_softmax(h.logits).unwrap();
    let lp = g.gather(lp, actions).unwrap();
    g.value(lp).data.clone()
}

pub fn ppo_cases() -> Check {
    let (ac, mut store) = tiny_actor_critic(30);
    let mut b = OwnedBatch::random(31, 8);
    b.old = log_probs(&ac, &store, &b.inputs, &b.actions);
    let cfg = PpoConfig::default();

    // Ratio 1: the clipped objective's gradient is the vanilla one.
    let clipped = policy_grads(&ac, &mut store, &b.view(), &cfg);
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&b.inputs).unwrap());
    let h = ac.forward(&mut g, &store, x).unwrap();
    let lp = g.row_log_softmax(h.logits).unwrap();
    let lp = g.gather(lp, &b.actions).unwrap();
    let adv = g.constant(Tensor::matrix(8, 1, b.adv.clone()).unwrap());
    let w = g.mul(lp, adv).unwrap();
    let m = g.mean(w);
    let vanilla = g.scale(m, -1.0);
    store.zero_grad();
    g.backward(vanilla, &mut store).unwrap();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let vg: Vec<f64> = names.iter().flat_map(|n| store.grad_or_zero(n)).collect();
    ensure(max_abs_diff(&clipped, &vg) < 1e-12, || "ratio-1 gradient differs from vanilla".into())?;

    // Saturation: A > 0 and ratio > 1 + eps gives no gradient.
    let mut sat = OwnedBatch::random(32, 8);
    let cur = log_probs(&ac, &store, &sat.inputs, &sat.actions);
    sat.old = cur.iter().map(|l| l - 0.5).collect();
    sat.adv = vec![1.0; 8];
    let gsat = policy_grads(&ac, &mut store, &sat.view(), &cfg);
    ensure(gsat.iter().all(|&x| x == 0.0), || "saturated samples leak gradient".into())?;
    let mut gr = Graph::inference();
    let l = ppo_loss(&ac, &mut gr, &store, &sat.view(), &cfg).unwrap();
    let pl = gr.value(l.policy).item();
    ensure((pl + 1.2).abs() < 1e-12, || format!("saturated objective {pl}"))?;

    // Infinite clip equals the unclipped direction.
    let mut far = OwnedBatch::random(33, 8);
    far.old = log_probs(&ac, &store, &far.inputs, &far.actions)
        .iter()
        .enumerate()
        .map(|(i, l)| l + if i % 2 == 0 { 0.7 } else { -0.7 })
        .collect();
    let wide = PpoConfig {
        clip: 1e12,
        ..PpoConfig::default()
    };
    let gw = policy_grads(&ac, &mut store, &far.view(), &wide);
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&far.inputs).unwrap());
    let h = ac.forward(&mut g, &store, x).unwrap();
    let lp = g.row_log_softmax(h.logits).unwrap();
    let lp = g.gather(lp, &far.actions).unwrap();
    let old = g.constant(Tensor::matrix(8, 1, far.old.clone()).unwrap());
    let d = g.sub(lp, old).unwrap();
    let ratio = g.exp(d);
    let adv = g.constant(Tensor::matrix(8, 1, far.adv.clone()).unwrap());
    let w = g.mul(ratio, adv).unwrap();
    let m = g.mean(w);
    let un = g.scale(m, -1.0);
    store.zero_grad();
    g.backward(un, &mut store).unwrap();
    let ug: Vec<f64> = names.iter().flat_map(|n| store.grad_or_zero(n)).collect();
    ensure(max_abs_diff(&gw, &ug) < 1e-12, || "wide clip differs from unclipped".into())?;

    // Value loss vanishes when V equals the return; entropy is bounded.
    let mut vb = OwnedBatch::random(34, 8);
    let mut gv = Graph::inference();
    let x = gv.constant(Tensor::from_rows(&vb.inputs).unwrap());
    let v = ac.forward(&mut gv, &store, x).unwrap().values;
    vb.ret = gv.value(v).data.clone();
    let mut gl = Graph::inference();
    let l = ppo_loss(&ac, &mut gl, &store, &vb.view(), &cfg).unwrap();
    ensure(gl.value(l.value).item().abs() < 1e-20, || "value loss with V = R".into())?;
    let ent = gl.value(l.entropy).item();
    ensure((0.0..=5f64.ln()).contains(&ent), || format!("entropy {ent}"))?;

    // Normalization: mean 0, std 1, argmax preserved, constants to zero.
    let mut rng = derived(35);
    for _ in 0..100 {
        let mut a: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let arg = |v: &[f64]| (0..v.len()).fold(0, |m, i| if v[i] > v[m] { i } else { m });
        let before = arg(&a);
        normalize_advantages(&mut a);
        let mean = a.iter().sum::<f64>() / 20.0;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 20.0).sqrt();
        ensure(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-6 && arg(&a) == before, || {
            "normalization contract".into()
        })?;
    }
    let mut c = vec![0.7; 5];
    normalize_advantages(&mut c);
    ensure(c.iter().all(|&x| x == 0.0), || "constant advantages".into())?;
    Ok(format!("ratio-1 = vanilla, saturation gives 0 grad, wide clip = unclipped, entropy {ent:.3} in [0, ln 5]"))
}

pub fn fifo_bound() -> Check {
    let mut rng = derived(40);
    let mut buf = ReplayBuffer::new(17, 8);
    let mut last = 0;
    for i in 0..1000 {
        let t = rng.random_range(1..=50);
        let stored = buf.store(vec![vec![i as f64]; t], i);
        if stored {
            last = i;
        }
        ensure(buf.len() <= 17, || "buffer exceeded capacity".into())?;
    }
    ensure(buf.get(buf.len() - 1).unwrap().label == last, || "newest not last".into())?;
    let labels: Vec<usize> = buf.iter().map(|e| e.label).collect();
    ensure(labels.windows(2).all(|w| w[0] < w[1]), || "eviction order".into())?;
    Ok("size <= capacity over 1,000 inserts, FIFO order".into())
}

fn random_episode(kind: EnvKind, seed: u64, policy: usize) -> Result<clam::eval::Played, String> {
    let cfg = EnvConfig::default();
    let mut env = Env::new(kind, &cfg).map_err(|e| e.to_string())?;
    let set = PolicySet::full(kind, &cfg.lbf, &cfg.pp);
    play(&Controller::Random, &mut env, &set, policy, seed, seed, false).map_err(|e| e.to_string())
}

pub fn env_determinism_and_replay() -> Check {
    let mut episodes = 0;
    for kind in [EnvKind::Lbf, EnvKind::Pp] {
        for seed in 0..20u64 {
            let a = random_episode(kind, seed, (seed % 10) as usize)?;
            let b = random_episode(kind, seed, (seed % 10) as usize)?;
            ensure(a.record == b.record, || format!("{kind} seed {seed} not reproducible"))?;
            let rep = replay(&a.record).map_err(|e| e.to_string())?;
            ensure(rep.exact(), || format!("{kind} seed {seed} replay diverged"))?;
            ensure(a.record.steps.len() <= MAX_EPISODE_STEPS, || "episode too long".into())?;
            episodes += 1;
        }
    }
    Ok(format!("{episodes} episodes reproduced and replayed bit-exactly"))
}

pub fn termination_by_step_50() -> Check {
    for kind in [EnvKind::Lbf, EnvKind::Pp] {
        for seed in 100..150u64 {
            let p = random_episode(kind, seed, (seed % 10) as usize)?;
            let n = p.record.steps.len();
            ensure(n <= 50 && p.record.steps.last().unwrap().done, || format!("{kind} ran {n} steps"))?;
            if kind == EnvKind::Pp {
                ensure(n == 50, || "predator-prey ends at the cap".into())?;
            }
        }
    }
    Ok("every episode ends by step 50".into())
}

pub fn lbf_rewards_sum_to_one() -> Check {
    let cfg = EnvConfig::default();
    let mut env = Env::new(EnvKind::Lbf, &cfg).map_err(|e| e.to_string())?;
    let set = PolicySet::full(EnvKind::Lbf, &cfg.lbf, &cfg.pp);
    let scripted = Controller::scripted(EnvKind::Lbf, cfg.lbf.rows, cfg.lbf.cols).map_err(|e| e.to_string())?;
    let mut cleared = 0;
    for seed in 0..200u64 {
        let p = play(&scripted, &mut env, &set, (seed % 10) as usize, seed, seed, false).map_err(|e| e.to_string())?;
        let n = p.record.steps.len();
        ensure(p.team_return <= 1.0 + 1e-12 && p.team_return >= 0.0, || format!("team return {}", p.team_return))?;
        if n < 50 {
            cleared += 1;
            ensure((p.team_return - 1.0).abs() < 1e-12, || format!("cleared board paid {}", p.team_return))?;
        }
    }
    ensure(cleared > 0, || "no episode cleared the board".into())?;
    Ok(format!("{cleared} cleared boards paid exactly 1; no episode exceeded 1"))
}

pub fn iicr_cases() -> Check {
    let mut rng = derived(4);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for k in 0..3 {
            let centre: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            for _ in 0..rng.random_range(2..10) {
                pts.push(centre.iter().map(|c| c + rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
                labels.push(k);
            }
        }
        let base = iicr(&pts, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((base - iicr_brute_force(&pts, &labels)).abs());
        // Random rotation in a coordinate plane, a uniform scale and a shift.
        let (i, j) = (0, rng.random_range(1..4));
        let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let s = rng.random_range(0.1..10.0);
        let moved: Mat = pts
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q[i] = th.cos() * p[i] - th.sin() * p[j];
                q[j] = th.sin() * p[i] + th.cos() * p[j];
                q.iter().map(|x| s * x + 3.0).collect()
            })
            .collect();
        let after = iicr(&moved, &labels).map_err(|e| e.to_string())?;
        ensure((after - base).abs() < 1e-9, || format!("invariance {base} vs {after}"))?;
    }
    ensure(worst < 1e-9, || format!("brute force deviation {worst:.3e}"))?;
    let mut mc = Vec::new();
    for trial in 0..5u64 {
        let mut r = derived(500 + trial);
        let pts: Mat = (0..500).map(|_| (0..8).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..500).map(|_| r.random_range(0..10)).collect();
        let v = iicr(&pts, &labels).map_err(|e| e.to_string())?;
        ensure((v - 1.0).abs() <= 0.05, || format!("random labels gave {v}"))?;
        mc.push(v);
    }
    Ok(format!(
        "brute force within {worst:.1e}; rotation/scale invariant; random labels {:?}",
        mc.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
    ))
}
