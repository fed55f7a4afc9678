//! Parallel patch collection with auto-reset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curriculum::{EnvLevel, LevelTracker, TrackerRule};
use crate::error::{Error, Result};
use crate::hopper::{assemble_obs, reset, step, HopperModel, HopperState, ObsSpec, TerminationReason};
use crate::neural::PolicyParams;
use crate::reward::{compute_reward, ObjectiveMode, RewardWeights, NUM_TERMS};
use crate::terrain::{generate, Heightfield, TerrainKind};

/// Which policy produced a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActorTag {
    Guide,
    Learner,
}

/// What counts as a successful episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuccessRule {
    /// Leaving the terrain past the goal.
    ReachGoal,
    /// Lasting until the horizon.
    Survive,
}

impl SuccessRule {
    pub fn is_success(self, reason: TerminationReason) -> bool {
        match self {
            SuccessRule::ReachGoal => reason == TerminationReason::OutOfBounds,
            SuccessRule::Survive => reason == TerminationReason::Timeout,
        }
    }
}

/// Everything that defines the environment side of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub model: HopperModel,
    pub spec: ObsSpec,
    pub weights: RewardWeights,
    pub objective: ObjectiveMode,
    pub kinds: Vec<TerrainKind>,
    pub extent: f64,
    /// Forward velocity command drawn uniformly from this range at reset.
    pub command_range: [f64; 2],
    pub success: SuccessRule,
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.spec.validate()?;
        self.weights.validate()?;
        if self.kinds.is_empty() {
            return Err(Error::key("task.kinds", "at least one terrain kind is required"));
        }
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(Error::key("task.extent", "must be positive"));
        }
        let [lo, hi] = self.command_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::key("task.command_range", "need finite lo <= hi"));
        }
        Ok(())
    }
}

/// The action chosen for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Raw policy output; mapped to joint targets by the model.
    pub action: Vec<f64>,
    /// Behavior log-density, present only for learner steps.
    pub log_prob: Option<f64>,
    pub tag: ActorTag,
    pub assist: bool,
}

/// Action source used during collection.
pub trait BehaviorPolicy: Sync {
    fn decide(&self, step_in_episode: u32, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Decision>;
}

/// Samples from a policy on every step.
impl BehaviorPolicy for PolicyParams {
    fn decide(&self, _step: u32, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Decision> {
        let (action, lp) = self.dist(obs)?.sample(rng);
        Ok(Decision { action, log_prob: Some(lp), tag: ActorTag::Learner, assist: false })
    }
}

/// How an episode ended.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub env_index: usize,
    pub kind: TerrainKind,
    pub level: u8,
    pub success: bool,
    pub reason: TerminationReason,
    pub episode_return: f64,
    pub length: u32,
    pub initial_goal_distance: f64,
    pub final_goal_distance: f64,
}

#[derive(Debug, Clone)]
struct EnvSlot {
    rng: ChaCha8Rng,
    kind: TerrainKind,
    level: u8,
    hf: Heightfield,
    state: HopperState,
    obs: Vec<f64>,
    episode_return: f64,
    initial_goal_distance: f64,
}

impl EnvSlot {
    fn spawn(task: &TaskConfig, mut rng: ChaCha8Rng, level: u8) -> Result<Self> {
        let kind = task.kinds[rng.random_range(0..task.kinds.len())];
        let hf = generate(kind, level, rng.random(), task.extent)?;
        let mut state = reset(&task.model, &hf, rng.random());
        let [lo, hi] = task.command_range;
        state.command = [if hi > lo { rng.random_range(lo..=hi) } else { lo }, 0.0];
        let obs = assemble_obs(&state, &hf, &task.spec, &task.model).values;
        let initial_goal_distance = (hf.goal_x() - state.x).abs();
        Ok(EnvSlot { rng, kind, level, hf, state, obs, episode_return: 0.0, initial_goal_distance })
    }
}

/// `E` independent environments plus their curriculum state.
#[derive(Debug, Clone)]
pub struct EnvPool {
    task: TaskConfig,
    slots: Vec<EnvSlot>,
    tracker: LevelTracker,
}

/// Transitions of `E` environments over `L` steps, stored environment-major
/// (index `env * L + t`).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBuffer {
    pub num_envs: usize,
    pub patch_len: usize,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Behavior log-density; `None` on guide steps.
    pub log_probs: Vec<Option<f64>>,
    /// Log-density of the taken action under the learner at collection time.
    pub learner_log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub reasons: Vec<Option<TerminationReason>>,
    pub tags: Vec<ActorTag>,
    /// Critic value after the last step of each environment (0 if terminal).
    pub bootstrap: Vec<f64>,
    pub outcomes: Vec<EpisodeOutcome>,
    /// Per-term weighted reward summed over all steps.
    pub term_sums: [f64; NUM_TERMS],
}

impl PatchBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn guide_steps(&self) -> usize {
        self.tags.iter().filter(|t| **t == ActorTag::Guide).count()
    }
}

#[derive(Default)]
struct EnvChunk {
    obs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    log_probs: Vec<Option<f64>>,
    learner_log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    reasons: Vec<Option<TerminationReason>>,
    tags: Vec<ActorTag>,
    bootstrap: f64,
    outcomes: Vec<EpisodeOutcome>,
    term_sums: [f64; NUM_TERMS],
}

impl EnvPool {
    /// Environment `i` draws from an RNG stream seeded with `base_seed + i`.
    pub fn new(task: TaskConfig, num_envs: usize, base_seed: u64, rule: TrackerRule) -> Result<Self> {
        task.validate()?;
        rule.validate()?;
        if num_envs == 0 {
            return Err(Error::key("ppo.num_envs", "must be at least 1"));
        }
        let slots = (0..num_envs)
            .map(|i| EnvSlot::spawn(&task, ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(i as u64)), 0))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnvPool { task, slots, tracker: LevelTracker::new(num_envs, rule) })
    }

    pub fn task(&self) -> &TaskConfig {
        &self.task
    }

    pub fn tracker(&self) -> &LevelTracker {
        &self.tracker
    }

    pub fn num_envs(&self) -> usize {
        self.slots.len()
    }

    /// Current observation of each environment.
    pub fn observations(&self) -> Vec<&[f64]> {
        self.slots.iter().map(|s| s.obs.as_slice()).collect()
    }

    pub fn states(&self) -> Vec<&HopperState> {
        self.slots.iter().map(|s| &s.state).collect()
    }

    /// Steps every environment `patch_len` times under `behavior`.
    ///
    /// `learner` supplies value estimates and the learner log-density of each
    /// taken action. Finished episodes report to the curriculum and restart
    /// on fresh terrain at the environment's current level.
    pub fn collect<B: BehaviorPolicy + ?Sized>(
        &mut self,
        behavior: &B,
        learner: &PolicyParams,
        patch_len: usize,
    ) -> Result<PatchBuffer> {
        if learner.spec != self.task.spec {
            return Err(Error::config("learner observation spec differs from the environment's"));
        }
        if patch_len == 0 {
            return Err(Error::key("ppo.patch_len", "must be at least 1"));
        }
        let task = &self.task;
        let rule = self.tracker.rule;
        let chunks = self
            .slots
            .par_iter_mut()
            .zip(self.tracker.envs.par_iter_mut())
            .enumerate()
            .map(|(i, (slot, track))| run_env(task, &rule, i, slot, track, behavior, learner, patch_len))
            .collect::<Result<Vec<_>>>()?;

        let n = self.slots.len() * patch_len;
        let mut buf = PatchBuffer {
            num_envs: self.slots.len(),
            patch_len,
            obs: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            learner_log_probs: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            reasons: Vec::with_capacity(n),
            tags: Vec::with_capacity(n),
            bootstrap: Vec::with_capacity(self.slots.len()),
            outcomes: Vec::new(),
            term_sums: [0.0; NUM_TERMS],
        };
        for c in chunks {
            buf.obs.extend(c.obs);
            buf.actions.extend(c.actions);
            buf.log_probs.extend(c.log_probs);
            buf.learner_log_probs.extend(c.learner_log_probs);
            buf.values.extend(c.values);
            buf.rewards.extend(c.rewards);
            buf.dones.extend(c.dones);
            buf.reasons.extend(c.reasons);
            buf.tags.extend(c.tags);
            buf.bootstrap.push(c.bootstrap);
            buf.outcomes.extend(c.outcomes);
            for (s, t) in buf.term_sums.iter_mut().zip(c.term_sums) {
                *s += t;
            }
        }
        Ok(buf)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_env<B: BehaviorPolicy + ?Sized>(
    task: &TaskConfig,
    rule: &TrackerRule,
    env_index: usize,
    slot: &mut EnvSlot,
    track: &mut EnvLevel,
    behavior: &B,
    learner: &PolicyParams,
    patch_len: usize,
) -> Result<EnvChunk> {
    let mut c = EnvChunk::default();
    for _ in 0..patch_len {
        let d = behavior.decide(slot.state.step, &slot.obs, &mut slot.rng)?;
        if d.action.len() != 2 {
            return Err(Error::input(format!("policy produced {} action dims, expected 2", d.action.len())));
        }
        let learner_lp = match (d.tag, d.log_prob) {
            (ActorTag::Learner, Some(lp)) => lp,
            _ => learner.dist(&slot.obs)?.log_prob(&d.action),
        };
        let value = learner.value(&slot.obs)?;
        let target = task.model.action_to_target(&d.action);
        let (next, info) = step(&task.model, &slot.state, &slot.hf, &target, d.assist)?;
        let r = compute_reward(&info, &task.weights, task.objective);
        for (s, t) in c.term_sums.iter_mut().zip(r.terms.iter()) {
            *s += t.weighted;
        }
        slot.episode_return += r.total;

        c.obs.push(std::mem::take(&mut slot.obs));
        c.actions.push(d.action);
        c.log_probs.push(if d.tag == ActorTag::Learner { d.log_prob } else { None });
        c.learner_log_probs.push(learner_lp);
        c.values.push(value);
        c.rewards.push(r.total);
        c.dones.push(info.terminated);
        c.reasons.push(info.termination_reason);
        c.tags.push(d.tag);

        if let Some(reason) = info.termination_reason {
            let success = task.success.is_success(reason);
            c.outcomes.push(EpisodeOutcome {
                env_index,
                kind: slot.kind,
                level: slot.level,
                success,
                reason,
                episode_return: slot.episode_return,
                length: next.step,
                initial_goal_distance: slot.initial_goal_distance,
                final_goal_distance: (slot.hf.goal_x() - next.x).abs(),
            });
            let level = track.record(success, rule);
            let rng = slot.rng.clone();
            *slot = EnvSlot::spawn(task, rng, level)?;
        } else {
            slot.state = next;
            slot.obs = assemble_obs(&slot.state, &slot.hf, &task.spec, &task.model).values;
        }
    }
    c.bootstrap = if c.dones.last() == Some(&true) { 0.0 } else { learner.value(&slot.obs)? };
    Ok(c)
}
