//! Properties of patch collection and the PPO update.

use jumper_core::curriculum::TrackerRule;
use jumper_core::jumpstart::{GuidePolicy, MixedPolicy, StageConfig};
use jumper_core::neural::{OptState, PolicyParams};
use jumper_core::ppo::{
    clipped_objective, ppo_loss_grad, prepare_samples, update, ActorTag, EnvPool, PPOConfig, PatchBuffer, Sample,
};
use proptest::prelude::*;

fn balancing_pool(num_envs: usize, seed: u64) -> EnvPool {
    let task = StageConfig::standard(1).unwrap().task;
    EnvPool::new(task, num_envs, seed, TrackerRule::default()).unwrap()
}

fn learner() -> PolicyParams {
    PolicyParams::new(&StageConfig::standard(1).unwrap().task.spec, 2, &[16, 16], 0.0, 5).unwrap()
}

/// Guide for the first 10 steps of each episode, learner afterwards.
fn mixed_buffer(params: &PolicyParams, seed: u64) -> PatchBuffer {
    let guide = GuidePolicy::scripted();
    let mut pool = balancing_pool(6, seed);
    let mixed = MixedPolicy { guide: &guide, learner: params, n_t: 1, patch_len: 10 };
    pool.collect(&mixed, params, 25).unwrap()
}

fn refs(samples: &[Sample]) -> Vec<&Sample> {
    samples.iter().collect()
}

#[test]
fn buffer_shape_and_tags() {
    let params = learner();
    let buf = mixed_buffer(&params, 1);
    assert_eq!(buf.len(), 6 * 25);
    assert_eq!(buf.bootstrap.len(), 6);
    for e in 0..6 {
        for t in 0..10 {
            assert_eq!(buf.tags[e * 25 + t], ActorTag::Guide);
            assert!(buf.log_probs[e * 25 + t].is_none());
        }
        assert_eq!(buf.tags[e * 25 + 10], ActorTag::Learner);
        assert!(buf.log_probs[e * 25 + 10].is_some());
    }
}

#[test]
fn collection_is_deterministic() {
    let params = learner();
    assert_eq!(mixed_buffer(&params, 8), mixed_buffer(&params, 8));
}

#[test]
fn guide_rewards_do_not_reach_the_surrogate_gradient() {
    let params = learner();
    let cfg = PPOConfig::default();
    let buf = mixed_buffer(&params, 2);
    let mut perturbed = buf.clone();
    let mut touched = 0;
    for i in 0..perturbed.len() {
        if perturbed.tags[i] == ActorTag::Guide {
            perturbed.rewards[i] += 37.0 * ((i % 7) as f64 - 3.0);
            touched += 1;
        }
    }
    assert!(touched > 0);
    let a = prepare_samples(&buf, &cfg);
    let b = prepare_samples(&perturbed, &cfg);
    let (sa, ga) = ppo_loss_grad(&params, &refs(&a), &cfg).unwrap();
    let (sb, gb) = ppo_loss_grad(&params, &refs(&b), &cfg).unwrap();
    assert_eq!(ga.actor, gb.actor);
    assert_eq!(ga.log_std, gb.log_std);
    assert_eq!(sa.surrogate, sb.surrogate);
    assert_ne!(sa.value_loss, sb.value_loss);
    assert_ne!(ga.critic, gb.critic);
}

#[test]
fn guide_steps_enter_the_surrogate_only_when_asked() {
    let params = learner();
    let buf = mixed_buffer(&params, 3);
    let learner_steps = buf.tags.iter().filter(|&&t| t == ActorTag::Learner).count();
    let off = prepare_samples(&buf, &PPOConfig::default());
    assert_eq!(off.iter().filter(|s| s.in_surrogate).count(), learner_steps);
    let on = prepare_samples(&buf, &PPOConfig { guide_steps_in_surrogate: true, ..Default::default() });
    assert!(on.iter().all(|s| s.in_surrogate));
}

#[test]
fn pure_guide_batch_is_flagged() {
    let params = learner();
    let guide = GuidePolicy::scripted();
    let mut pool = balancing_pool(4, 0);
    let mixed = MixedPolicy { guide: &guide, learner: &params, n_t: 40, patch_len: 25 };
    let buf = pool.collect(&mixed, &params, 25).unwrap();
    assert!(buf.tags.iter().all(|&t| t == ActorTag::Guide));
    let mut p = params.clone();
    let mut opt = OptState::new(&p, 3e-4);
    let stats = update(&mut p, &mut opt, &buf, &PPOConfig::default(), 0).unwrap();
    assert!(stats.pure_guide);
    assert_eq!(p.actor, params.actor);
}

#[test]
fn zero_advantage_moves_the_actor_only_through_entropy() {
    let params = learner();
    let mut pool = balancing_pool(4, 4);
    let mut buf = pool.collect(&params, &params, 25).unwrap();
    buf.rewards.iter_mut().for_each(|r| *r = 0.0);
    buf.values.iter_mut().for_each(|v| *v = 0.0);
    buf.dones.iter_mut().for_each(|d| *d = false);
    buf.bootstrap.iter_mut().for_each(|b| *b = 0.0);
    let cfg = PPOConfig::default();
    assert!(prepare_samples(&buf, &cfg).iter().all(|s| s.advantage == 0.0));

    let mut p = params.clone();
    let mut opt = OptState::new(&p, 3e-4);
    update(&mut p, &mut opt, &buf, &cfg, 1).unwrap();
    assert_eq!(p.actor, params.actor);
    // The entropy bonus pushes log_std up.
    assert!(p.log_std.iter().zip(&params.log_std).all(|(a, b)| a > b));

    let mut q = params.clone();
    let mut opt = OptState::new(&q, 3e-4);
    update(&mut q, &mut opt, &buf, &PPOConfig { entropy_coef: 0.0, ..cfg }, 1).unwrap();
    assert_eq!(q.log_std, params.log_std);
}

#[test]
fn update_is_deterministic_and_starts_unclipped() {
    let params = learner();
    let mut pool = balancing_pool(4, 6);
    let buf = pool.collect(&params, &params, 25).unwrap();
    let cfg = PPOConfig::default();
    let run = || {
        let mut p = params.clone();
        let mut opt = OptState::new(&p, 3e-4);
        let stats = update(&mut p, &mut opt, &buf, &cfg, 42).unwrap();
        (p, opt, stats)
    };
    let (p1, o1, s1) = run();
    let (p2, o2, s2) = run();
    assert_eq!(p1, p2);
    assert_eq!(o1, o2);
    assert_eq!(s1, s2);
    assert_eq!(s1.first_clip_fraction, 0.0);
    assert_ne!(p1.actor, params.actor);
    assert_eq!(s1.minibatches, cfg.epochs * cfg.minibatches);
}

#[test]
fn on_policy_surrogate_is_minus_mean_advantage() {
    let params = learner();
    let mut pool = balancing_pool(4, 7);
    let buf = pool.collect(&params, &params, 25).unwrap();
    let cfg = PPOConfig::default();
    let samples = prepare_samples(&buf, &cfg);
    let stats = ppo_loss_grad(&params, &refs(&samples), &cfg).unwrap().0;
    let mean_adv = samples.iter().map(|s| s.advantage).sum::<f64>() / samples.len() as f64;
    assert!((stats.surrogate + mean_adv).abs() < 1e-9, "{} vs {}", stats.surrogate, mean_adv);
    assert_eq!(stats.clip_fraction, 0.0);
}

proptest! {
    #[test]
    fn clipped_term_is_bounded(ratio in 0.0f64..5.0, adv in -10.0f64..10.0, eps in 0.01f64..0.99) {
        let obj = clipped_objective(ratio, adv, eps);
        // One-sided: a negative advantage with a large ratio is not clipped.
        prop_assert!(obj <= (1.0 + eps) * adv.abs() + 1e-12);
        if adv >= 0.0 {
            prop_assert!(obj.abs() <= (1.0 + eps) * adv + 1e-12);
        }
        prop_assert!(obj <= ratio * adv + 1e-12);
    }
}

fn flat_policy_gradient(params: &PolicyParams, buf: &PatchBuffer) -> Vec<f64> {
    let cfg = PPOConfig { value_coef: 0.0, entropy_coef: 0.0, ..Default::default() };
    let samples = prepare_samples(buf, &cfg);
    let (_, g) = ppo_loss_grad(params, &refs(&samples), &cfg).unwrap();
    let mut v: Vec<f64> = g.actor.layers.iter().flat_map(|l| l.w.iter().chain(&l.b)).copied().collect();
    v.extend(&g.log_std);
    v
}

fn total_variance(grads: &[Vec<f64>]) -> f64 {
    let n = grads.len() as f64;
    let dim = grads[0].len();
    (0..dim)
        .map(|j| {
            let mean = grads.iter().map(|g| g[j]).sum::<f64>() / n;
            grads.iter().map(|g| (g[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .sum()
}

/// Patches collected before measuring, so the pool is past its synchronized start.
const BURN: usize = 8;
const SEEDS: u64 = 60;

/// E×L patches from a running pool versus one environment running full
/// episodes, equal sample count.
#[test]
fn patch_collection_variance_is_not_worse() {
    let params = learner();
    let (envs, len) = (16, 25);
    let mut patch = Vec::new();
    let mut single = Vec::new();
    for seed in 0..SEEDS {
        let mut pool = balancing_pool(envs, 1000 + seed * 101);
        for _ in 0..BURN {
            pool.collect(&params, &params, len).unwrap();
        }
        patch.push(flat_policy_gradient(&params, &pool.collect(&params, &params, len).unwrap()));
        let mut pool = balancing_pool(1, 5000 + seed * 101);
        single.push(flat_policy_gradient(&params, &pool.collect(&params, &params, envs * len).unwrap()));
    }
    let (vp, vs) = (total_variance(&patch), total_variance(&single));
    println!("policy-gradient variance: patches {vp:.6e}, single stream {vs:.6e}, ratio {:.3}", vp / vs);
    assert!(vp <= 1.1 * vs, "patches {vp} vs single {vs}");
}
