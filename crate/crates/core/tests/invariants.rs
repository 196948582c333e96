mod common;

use clam::contrastive::{batch_loss, crop_window, info_nce_loss, mask_strong, ReplayBuffer};
use clam::envs::EnvKind;
use clam::model::Pooling;
use clam::orchestrator::{Learner, TrainConfig, Variant};
use clam::ppo::{ppo_update, RolloutBuffer};
use clam::rng::derived;
use common::*;
use ndiff::{Graph, Tensor};
use proptest::prelude::*;

#[test]
fn attention_rows_are_distributions() {
    checks::attention_rows_sum_to_one().unwrap();
}

#[test]
fn crops_cover_every_window() {
    checks::crop_coverage_and_bounds().unwrap();
}

#[test]
fn masks_zero_the_floor_count() {
    checks::mask_properties().unwrap();
}

#[test]
fn pairs_share_their_source() {
    checks::positive_pair_provenance().unwrap();
}

#[test]
fn info_nce_reference_values() {
    checks::info_nce_values().unwrap();
}

#[test]
fn identical_sources_give_ln_n() {
    checks::degenerate_batch_gives_ln_n().unwrap();
}

#[test]
fn two_steps_on_a_frozen_batch_descend() {
    checks::frozen_batch_descends().unwrap();
}

#[test]
fn ema_endpoint_cases() {
    checks::ema_endpoints().unwrap();
}

#[test]
fn ppo_reference_cases() {
    checks::ppo_cases().unwrap();
}

#[test]
fn fifo_buffer_stays_bounded() {
    checks::fifo_bound().unwrap();
}

#[test]
fn envs_are_deterministic_and_replayable() {
    checks::env_determinism_and_replay().unwrap();
}

#[test]
fn episodes_end_by_step_fifty() {
    checks::termination_by_step_50().unwrap();
}

#[test]
fn foraging_rewards_are_normalized() {
    checks::lbf_rewards_sum_to_one().unwrap();
}

fn pooled(cfg: &clam::model::ModelConfig, seed: u64, obs: &Mat) -> (Vec<f64>, Vec<f64>) {
    let (model, store) = tiny_model(cfg.clone(), 5, seed);
    let mut g = Graph::inference();
    let x = model.input_embed(&mut g, &store, obs).unwrap();
    let x = model.positional_encode(&mut g, x).unwrap();
    let z = model.encode(&mut g, &store, x).unwrap();
    let p = model.attention_pool_traced(&mut g, &store, z).unwrap();
    (g.value(p.pre_ff).data.clone(), g.value(p.embedding).data.clone())
}

#[test]
fn permutation_witness() {
    let mut rng = derived(50);
    let obs = random_rows(&mut rng, 6, 5);
    let mut shuffled = obs.clone();
    shuffled.rotate_left(2);

    let with_pos = tiny_config(Pooling::Attention);
    let (_, a) = pooled(&with_pos, 1, &obs);
    let (_, b) = pooled(&with_pos, 1, &shuffled);
    assert!(max_abs_diff(&a, &b) > 1e-6, "positions must make order visible");

    let mut no_pos = tiny_config(Pooling::Attention);
    no_pos.positional = false;
    let (a, _) = pooled(&no_pos, 1, &obs);
    let (b, _) = pooled(&no_pos, 1, &shuffled);
    assert!(max_abs_diff(&a, &b) < 1e-12);
}

#[test]
fn target_parameters_never_receive_gradients() {
    let mut cfg = TrainConfig::preset(clam::orchestrator::Preset::Desk, EnvKind::Pp, Variant::Clam, 3);
    cfg.contrastive.batch_size = 4;
    cfg.contrastive.capacity = 4;
    let mut l = Learner::new(cfg).unwrap();
    let mut rng = derived(9);
    let mut buf = ReplayBuffer::new(4, 8);
    for i in 0..4 {
        buf.store(random_rows(&mut rng, 20, l.spec.ego_obs_dim), i);
    }
    let batch = clam::contrastive::build_batch(&buf, &l.config.contrastive, &mut rng).unwrap();
    let mut g = Graph::new();
    let loss = batch_loss(&l.model, &mut g, &l.encoder, &batch, &l.config.contrastive).unwrap();
    g.backward(loss, &mut l.encoder).unwrap();
    assert!(l.encoder.iter().any(|(_, t)| t.grad.is_some()));
    assert!(l.encoder_target.iter().all(|(_, t)| t.grad.is_none()));

    // A PPO update leaves every encoder tensor untouched.
    let before = l.encoder.clone();
    let mut rollout = RolloutBuffer::default();
    let mut act = derived(10);
    for t in 0..30 {
        let obs = random_rows(&mut rng, 1, l.spec.ego_obs_dim).remove(0);
        let c = l.embedding(&[obs.clone()]).unwrap();
        let s = l.act(&obs, &c, &mut act).unwrap();
        rollout.push(l.ac.input_row(&obs, &c).unwrap(), s, 0.1 * t as f64, t == 29);
    }
    rollout.finish(0.99, 0.95);
    let cfg = l.config.ppo.clone();
    ppo_update(&l.ac, &mut l.policy, &mut l.policy_adam, &rollout, &cfg, &mut act).unwrap();
    for (name, t) in l.encoder.iter() {
        let b = before.get(name).unwrap();
        assert_eq!(t.data, b.data, "{name}");
    }
    assert!(l.encoder_target.iter().all(|(_, t)| t.grad.is_none()));
}

fn nce(c1: &Mat, c2: &Mat, temp: f64) -> f64 {
    let mut g = Graph::inference();
    let a = g.constant(Tensor::from_rows(c1).unwrap());
    let b = g.constant(Tensor::from_rows(c2).unwrap());
    let l = info_nce_loss(&mut g, a, b, temp, false).unwrap();
    g.value(l).item()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

proptest! {
    #[test]
    fn crops_stay_in_bounds(len in 1usize..=50, min in 1usize..=50, max in 1usize..=50, seed in any::<u64>()) {
        prop_assume!(min <= max && min <= len);
        let c = crop_window(len, min, max, &mut derived(seed)).unwrap();
        prop_assert!(c.len >= min && c.len <= max.min(len));
        prop_assert!(c.start + c.len <= len);
    }

    #[test]
    fn masking_never_touches_kept_rows(len in 1usize..=50, ratio in 0.0f64..=1.0, seed in any::<u64>()) {
        let s: Mat = (0..len).map(|i| vec![i as f64 + 1.0; 3]).collect();
        let m = mask_strong(&s, ratio, &mut derived(seed));
        prop_assert_eq!(m.len(), len);
        for (a, b) in m.iter().zip(&s) {
            prop_assert!(a == b || a.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn info_nce_is_nonnegative_and_order_free(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 2..8),
        temp in 0.05f64..2.0,
        shift in 0usize..8,
    ) {
        let n = rows.len() / 2;
        prop_assume!(n >= 1);
        let a: Mat = rows[..n].iter().cloned().map(unit).collect();
        let b: Mat = rows[n..2 * n].iter().cloned().map(unit).collect();
        let l = nce(&a, &b, temp);
        prop_assert!(l >= 0.0);
        let k = shift % n;
        let (mut pa, mut pb) = (a.clone(), b.clone());
        pa.rotate_left(k);
        pb.rotate_left(k);
        prop_assert!((nce(&pa, &pb, temp) - l).abs() < 1e-12);
    }

    #[test]
    fn buffer_never_exceeds_capacity(cap in 1usize..20, lens in prop::collection::vec(1usize..60, 0..200)) {
        let mut b = ReplayBuffer::new(cap, 8);
        for (i, t) in lens.into_iter().enumerate() {
            b.store(vec![vec![0.0]; t], i);
            prop_assert!(b.len() <= cap);
        }
    }

    #[test]
    fn encoder_outputs_stay_finite(t in 1usize..=50, seed in any::<u64>()) {
        let mut cfg = tiny_config(Pooling::Attention);
        cfg.max_len = 50;
        cfg.init_std = 0.02;
        let model = clam::model::ClamModel::new(cfg, 5).unwrap();
        let store = model.init(&mut derived(seed)).unwrap();
        let obs = random_rows(&mut derived(seed ^ 1), t, 5);
        let c = model.embed_trajectory(&store, &obs).unwrap();
        prop_assert!(c.iter().all(|x| x.is_finite()));
    }
}
