//! Proximal policy optimization over fixed-length patches.
//!
//! Collection lives in [`rollout`]; this module holds advantage estimation,
//! the clipped surrogate loss with its analytic gradient, and the update loop.

mod rollout;

pub use rollout::{
    ActorTag, BehaviorPolicy, Decision, EnvPool, EpisodeOutcome, PatchBuffer, SuccessRule, TaskConfig,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{GaussianDist, OptState, PolicyParams};

const ADV_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PPOConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub patch_len: usize,
    pub num_envs: usize,
    pub learning_rate: f64,
    /// Also feed guide steps to the surrogate, with the ratio taken against
    /// the learner's density at collection time.
    pub guide_steps_in_surrogate: bool,
}

impl Default for PPOConfig {
    fn default() -> Self {
        PPOConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            value_coef: 1.0,
            entropy_coef: 0.005,
            max_grad_norm: 1.0,
            patch_len: 25,
            num_envs: 64,
            learning_rate: 3e-4,
            guide_steps_in_surrogate: false,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::key(format!("ppo.{k}"), m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda", "must be in [0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip", "must be in (0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.minibatches == 0 {
            return bad("minibatches", "must be at least 1");
        }
        if self.patch_len == 0 {
            return bad("patch_len", "must be at least 1");
        }
        if self.num_envs == 0 {
            return bad("num_envs", "must be at least 1");
        }
        if self.minibatches > self.patch_len * self.num_envs {
            return bad("minibatches", "more minibatches than samples");
        }
        for (k, v) in [
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("max_grad_norm", self.max_grad_norm),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(k, "must be finite and non-negative");
            }
        }
        Ok(())
    }
}

/// Generalized advantage estimates for one environment stream.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// One training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
    /// Whether the sample enters the clipped surrogate.
    pub in_surrogate: bool,
}

/// Per-step surrogate objective `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn clipped_objective(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Builds normalized samples from a buffer.
pub fn prepare_samples(buf: &PatchBuffer, cfg: &PPOConfig) -> Vec<Sample> {
    let l = buf.patch_len;
    let mut adv = Vec::with_capacity(buf.len());
    let mut ret = Vec::with_capacity(buf.len());
    for e in 0..buf.num_envs {
        let r = e * l..(e + 1) * l;
        let (a, g) = gae(
            &buf.rewards[r.clone()],
            &buf.values[r.clone()],
            &buf.dones[r],
            buf.bootstrap[e],
            cfg.gamma,
            cfg.lambda,
        );
        adv.extend(a);
        ret.extend(g);
    }
    let in_surrogate: Vec<bool> =
        buf.tags.iter().map(|&t| t == ActorTag::Learner || cfg.guide_steps_in_surrogate).collect();
    // Statistics over the surrogate subset only, so guide-step rewards cannot
    // leak into learner advantages through the normalization.
    let mut pool: Vec<f64> = adv.iter().zip(&in_surrogate).filter(|(_, &s)| s).map(|(a, _)| *a).collect();
    if pool.is_empty() {
        pool.clone_from(&adv);
    }
    let n = pool.len() as f64;
    let mean = pool.iter().sum::<f64>() / n;
    let std = (pool.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    (0..buf.len())
        .map(|i| Sample {
            obs: buf.obs[i].clone(),
            action: buf.actions[i].clone(),
            old_log_prob: buf.log_probs[i].unwrap_or(buf.learner_log_probs[i]),
            advantage: (adv[i] - mean) / (std + ADV_EPS),
            ret: ret[i],
            in_surrogate: in_surrogate[i],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    pub loss: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Samples that entered the surrogate.
    pub surrogate_count: usize,
}

/// Loss and its gradient over `batch`.
///
/// `loss = −mean_S(clipped) + c_v·mean_all((V − R)²) − c_e·H`, with `S` the
/// surrogate subset. An empty subset contributes 0.
pub fn ppo_loss_grad(params: &PolicyParams, batch: &[&Sample], cfg: &PPOConfig) -> Result<(LossStats, PolicyParams)> {
    let mut grad = params.zeros_like();
    let stats = accumulate(params, batch, cfg, Some(&mut grad))?;
    Ok((stats, grad))
}

/// Loss only (used by finite-difference checks).
pub fn ppo_loss(params: &PolicyParams, batch: &[&Sample], cfg: &PPOConfig) -> Result<LossStats> {
    accumulate(params, batch, cfg, None)
}

fn accumulate(
    params: &PolicyParams,
    batch: &[&Sample],
    cfg: &PPOConfig,
    mut grad: Option<&mut PolicyParams>,
) -> Result<LossStats> {
    if batch.is_empty() {
        return Err(Error::input("empty minibatch"));
    }
    let n_all = batch.len() as f64;
    let n_sur = batch.iter().filter(|s| s.in_surrogate).count();
    let mut st = LossStats { surrogate_count: n_sur, ..Default::default() };
    let mut clipped = 0usize;

    for s in batch {
        if s.in_surrogate {
            let n = n_sur as f64;
            let (mean, tape) = match grad {
                Some(_) => {
                    let tape = params.actor.forward_tape(&s.obs)?;
                    (tape.output().to_vec(), Some(tape))
                }
                None => (params.actor.forward(&s.obs)?, None),
            };
            let dist = GaussianDist { mean, log_std: params.log_std.clone() };
            let lp = dist.log_prob(&s.action);
            let ratio = (lp - s.old_log_prob).exp();
            let obj = clipped_objective(ratio, s.advantage, cfg.clip);
            st.surrogate -= obj / n;
            st.approx_kl += (s.old_log_prob - lp) / n;
            if (ratio - 1.0).abs() > cfg.clip {
                clipped += 1;
            }
            if let (Some(g), Some(tape)) = (grad.as_deref_mut(), tape) {
                // The unclipped branch is active iff it attains the minimum.
                let unclipped = ratio * s.advantage <= ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * s.advantage;
                if unclipped {
                    let d_lp = -s.advantage * ratio / n;
                    let (d_mean, d_ls) = dist.log_prob_grad(&s.action);
                    let d_out: Vec<f64> = d_mean.iter().map(|d| d * d_lp).collect();
                    params.actor.backward(&tape, &d_out, &mut g.actor);
                    for (gl, d) in g.log_std.iter_mut().zip(d_ls) {
                        *gl += d * d_lp;
                    }
                }
            }
        }

        let (v, tape) = match grad {
            Some(_) => {
                let tape = params.critic.forward_tape(&s.obs)?;
                (tape.output()[0], Some(tape))
            }
            None => (params.critic.forward(&s.obs)?[0], None),
        };
        let err = v - s.ret;
        st.value_loss += err * err / n_all;
        if let (Some(g), Some(tape)) = (grad.as_deref_mut(), tape) {
            params.critic.backward(&tape, &[2.0 * cfg.value_coef * err / n_all], &mut g.critic);
        }
    }

    st.entropy = GaussianDist { mean: vec![0.0; params.act_dim()], log_std: params.log_std.clone() }.entropy();
    if let Some(g) = grad {
        for gl in &mut g.log_std {
            *gl -= cfg.entropy_coef;
        }
    }
    if n_sur > 0 {
        st.clip_fraction = clipped as f64 / n_sur as f64;
    }
    st.loss = st.surrogate + cfg.value_coef * st.value_loss - cfg.entropy_coef * st.entropy;
    Ok(st)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub explained_variance: f64,
    /// Clip fraction of the very first minibatch.
    pub first_clip_fraction: f64,
    pub minibatches: usize,
    pub skipped: usize,
    /// True when no sample entered the surrogate.
    pub pure_guide: bool,
}

fn explained_variance(pred: &[f64], target: &[f64]) -> f64 {
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let var = target.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return 0.0;
    }
    let resid: Vec<f64> = pred.iter().zip(target).map(|(p, t)| t - p).collect();
    let rm = resid.iter().sum::<f64>() / n;
    let rv = resid.iter().map(|r| (r - rm) * (r - rm)).sum::<f64>() / n;
    1.0 - rv / var
}

/// Epochs × minibatches of clipped-gradient Adam steps on `buf`.
pub fn update(
    params: &mut PolicyParams,
    opt: &mut OptState,
    buf: &PatchBuffer,
    cfg: &PPOConfig,
    seed: u64,
) -> Result<UpdateStats> {
    cfg.validate()?;
    if buf.is_empty() {
        return Err(Error::input("empty buffer"));
    }
    let samples = prepare_samples(buf, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut out = UpdateStats { pure_guide: samples.iter().all(|s| !s.in_surrogate), ..Default::default() };
    let chunk = samples.len().div_ceil(cfg.minibatches);
    for _ in 0..cfg.epochs {
        idx.shuffle(&mut rng);
        for part in idx.chunks(chunk) {
            let batch: Vec<&Sample> = part.iter().map(|&i| &samples[i]).collect();
            let (st, mut grad) = ppo_loss_grad(params, &batch, cfg)?;
            if out.minibatches == 0 && out.skipped == 0 {
                out.first_clip_fraction = st.clip_fraction;
            }
            if !st.loss.is_finite() || !grad.is_finite() {
                out.skipped += 1;
                continue;
            }
            let norm = grad.l2_norm();
            if cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm {
                grad.scale(cfg.max_grad_norm / norm);
            }
            opt.apply(params, &grad)?;
            out.minibatches += 1;
            out.surrogate += st.surrogate;
            out.value_loss += st.value_loss;
            out.entropy += st.entropy;
            out.clip_fraction += st.clip_fraction;
            out.approx_kl += st.approx_kl;
        }
    }
    if out.minibatches > 0 {
        let k = out.minibatches as f64;
        out.surrogate /= k;
        out.value_loss /= k;
        out.entropy /= k;
        out.clip_fraction /= k;
        out.approx_kl /= k;
    }
    let rets: Vec<f64> = samples.iter().map(|s| s.ret).collect();
    out.explained_variance = explained_variance(&buf.values, &rets);
    Ok(out)
}
