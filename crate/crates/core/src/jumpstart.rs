//! Jump-start training with self-evolving priors.
//!
//! Every episode begins under a frozen guide for the first `n_t` patches,
//! after which the learner takes over. `n_t` anneals to zero with training
//! iterations. Stages are chained: the best policy of stage `i` becomes the
//! frozen guide of stage `i + 1`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{EvalPolicy, TrackerRule};
use crate::error::{Error, Result};
use crate::hopper::{HopperModel, HopperState, ObsMode, ObsSpec};
use crate::neural::{save_checkpoint, OptState, PolicyParams};
use crate::ppo::{
    update, ActorTag, BehaviorPolicy, Decision, EnvPool, PPOConfig, PatchBuffer, SuccessRule, TaskConfig,
};
use crate::reward::{ObjectiveMode, RewardWeights, NUM_TERMS, TERM_NAMES};
use crate::terrain::TerrainKind;

/// Guide patches per episode at iteration `t`: `max(0, n0 − ⌊t/m⌋)`.
pub fn schedule_n(t: u64, sched: &JumpSchedule) -> u32 {
    let drop = t / sched.m.max(1);
    u64::from(sched.n0).saturating_sub(drop) as u32
}

/// Guide iff the step falls in one of the first `n_t` patches.
pub fn mix_select(step_in_episode: u32, n_t: u32, patch_len: u32) -> ActorTag {
    if step_in_episode / patch_len.max(1) < n_t {
        ActorTag::Guide
    } else {
        ActorTag::Learner
    }
}

/// Restricts an observation to what a guide with `guide_spec` expects.
pub fn adapt_obs<'a>(full: &'a [f64], full_spec: &ObsSpec, guide_spec: &ObsSpec) -> Result<&'a [f64]> {
    if full_spec == guide_spec {
        return Ok(full);
    }
    if guide_spec.mode == ObsMode::Proprio && full_spec.proprio_dim == guide_spec.proprio_dim {
        return Ok(&full[..guide_spec.proprio_dim]);
    }
    Err(Error::config(format!(
        "a {:?} guide cannot read {:?} observations",
        guide_spec.mode, full_spec.mode
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSchedule {
    pub n0: u32,
    /// Iterations between decrements.
    pub m: u64,
    /// Patches per episode.
    pub episode_patches: u32,
    pub patch_len: u32,
}

impl Default for JumpSchedule {
    fn default() -> Self {
        JumpSchedule { n0: 2, m: 300, episode_patches: 40, patch_len: 25 }
    }
}

impl JumpSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.n0 > self.episode_patches {
            return Err(Error::key("schedule.n0", "cannot exceed patches per episode"));
        }
        if self.m == 0 {
            return Err(Error::key("schedule.m", "must be at least 1"));
        }
        if self.patch_len == 0 {
            return Err(Error::key("schedule.patch_len", "must be at least 1"));
        }
        Ok(())
    }

    /// First iteration at which no guide patches remain.
    pub fn handover_complete(&self) -> u64 {
        u64::from(self.n0) * self.m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GuideKind {
    /// Holds the default joint pose with the torso assist spring engaged.
    ScriptedBalancer,
    FrozenCheckpoint(PolicyParams),
}

/// A frozen policy that drives the first patches of each episode.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidePolicy {
    kind: GuideKind,
    spec: ObsSpec,
    stage: u32,
}

impl GuidePolicy {
    pub fn scripted() -> Self {
        GuidePolicy { kind: GuideKind::ScriptedBalancer, spec: ObsSpec::proprio(), stage: 0 }
    }

    /// Freezes `params` as the guide produced by stage `params.stage`.
    pub fn frozen(params: PolicyParams) -> Self {
        let spec = params.spec.clone();
        let stage = params.stage;
        GuidePolicy { kind: GuideKind::FrozenCheckpoint(params), spec, stage }
    }

    pub fn kind(&self) -> &GuideKind {
        &self.kind
    }

    pub fn spec(&self) -> &ObsSpec {
        &self.spec
    }

    pub fn stage(&self) -> u32 {
        self.stage
    }

    pub fn assist(&self) -> bool {
        matches!(self.kind, GuideKind::ScriptedBalancer)
    }

    /// Parameter checksum; 0 for the scripted controller.
    pub fn checksum(&self) -> u64 {
        match &self.kind {
            GuideKind::ScriptedBalancer => 0,
            GuideKind::FrozenCheckpoint(p) => p.checksum(),
        }
    }

    /// Sampled raw action; the scripted controller consumes no randomness.
    pub fn act(&self, full_obs: &[f64], full_spec: &ObsSpec, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        match &self.kind {
            GuideKind::ScriptedBalancer => Ok(vec![0.0; 2]),
            GuideKind::FrozenCheckpoint(p) => {
                let obs = adapt_obs(full_obs, full_spec, &self.spec)?;
                Ok(p.dist(obs)?.sample(rng).0)
            }
        }
    }
}

impl EvalPolicy for GuidePolicy {
    /// Scripted: hold pose with assist. Checkpoint: mean action on the
    /// observation prefix it was trained on.
    fn eval_action(&self, obs: &[f64], state: &HopperState) -> Result<([f64; 2], bool)> {
        match &self.kind {
            GuideKind::ScriptedBalancer => Ok(([0.0, 0.0], true)),
            GuideKind::FrozenCheckpoint(p) => {
                let n = p.spec.total_dim;
                if obs.len() < n {
                    return Err(Error::input(format!("guide needs {n} observation values, got {}", obs.len())));
                }
                p.eval_action(&obs[..n], state)
            }
        }
    }
}

/// The guide for the first `n_t` patches of each episode, the learner after.
pub struct MixedPolicy<'a> {
    pub guide: &'a GuidePolicy,
    pub learner: &'a PolicyParams,
    pub n_t: u32,
    pub patch_len: u32,
}

/// Produces one mixed-policy decision for a tag.
pub fn mixed_action(
    obs: &[f64],
    guide: &GuidePolicy,
    learner: &PolicyParams,
    tag: ActorTag,
    rng: &mut ChaCha8Rng,
) -> Result<Decision> {
    match tag {
        ActorTag::Guide => Ok(Decision {
            action: guide.act(obs, &learner.spec, rng)?,
            log_prob: None,
            tag,
            assist: guide.assist(),
        }),
        ActorTag::Learner => {
            let (action, lp) = learner.dist(obs)?.sample(rng);
            Ok(Decision { action, log_prob: Some(lp), tag, assist: false })
        }
    }
}

impl BehaviorPolicy for MixedPolicy<'_> {
    fn decide(&self, step_in_episode: u32, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Decision> {
        let tag = mix_select(step_in_episode, self.n_t, self.patch_len);
        mixed_action(obs, self.guide, self.learner, tag, rng)
    }
}

/// Runs the guide on every step.
pub struct GuideOnly<'a> {
    pub guide: &'a GuidePolicy,
    pub learner_spec: &'a ObsSpec,
}

impl BehaviorPolicy for GuideOnly<'_> {
    fn decide(&self, _step: u32, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Decision> {
        Ok(Decision {
            action: self.guide.act(obs, self.learner_spec, rng)?,
            log_prob: None,
            tag: ActorTag::Guide,
            assist: self.guide.assist(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Modality,
    Observation,
    Objective,
}

/// Early stop once the moving-average success rate has plateaued.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceRule {
    pub enabled: bool,
    pub window: usize,
    pub tolerance: f64,
    pub patience: usize,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        ConvergenceRule { enabled: true, window: 50, tolerance: 0.01, patience: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub index: u32,
    pub task: TaskConfig,
    pub schedule: JumpSchedule,
    pub ppo: PPOConfig,
    pub iterations: u64,
    pub convergence: ConvergenceRule,
    pub tracker: TrackerRule,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Start from the guide's weights when its observation layout matches.
    pub warm_start: bool,
    /// Skip the per-stage layout rules (single-stage baselines).
    pub relaxed: bool,
}

impl StageConfig {
    /// Defaults for stage `index` of the three-stage curriculum.
    pub fn standard(index: u32) -> Result<Self> {
        let (spec, objective, kinds, command_range, success) = match index {
            1 => (ObsSpec::proprio(), ObjectiveMode::VelocityTracking, vec![TerrainKind::Flat], [0.0, 0.0], SuccessRule::Survive),
            2 => (
                ObsSpec::terrain_aware(),
                ObjectiveMode::VelocityTracking,
                vec![TerrainKind::RoughGround, TerrainKind::SlopeStairs],
                [0.3, 1.0],
                SuccessRule::ReachGoal,
            ),
            3 => (
                ObsSpec::terrain_aware(),
                ObjectiveMode::GoalReaching,
                vec![TerrainKind::WideGap, TerrainKind::SteppingStone],
                [1.0, 1.0],
                SuccessRule::ReachGoal,
            ),
            i => return Err(Error::key("stage.index", format!("stage {i} is not one of 1, 2, 3"))),
        };
        let model = HopperModel::default();
        Ok(StageConfig {
            index,
            task: TaskConfig {
                model,
                spec,
                weights: RewardWeights::sparse(),
                objective,
                kinds,
                extent: 10.0,
                command_range,
                success,
            },
            schedule: JumpSchedule::default(),
            ppo: PPOConfig::default(),
            iterations: 1500,
            convergence: ConvergenceRule::default(),
            tracker: TrackerRule::default(),
            hidden: vec![256, 128],
            init_log_std: 0.0,
            warm_start: false,
            relaxed: false,
        })
    }

    pub fn transform(&self) -> Transform {
        match self.index {
            1 => Transform::Modality,
            2 => Transform::Observation,
            _ => Transform::Objective,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.schedule.validate()?;
        self.ppo.validate()?;
        self.tracker.validate()?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::key("network.hidden", "need at least one nonzero hidden width"));
        }
        if self.schedule.patch_len as usize != self.ppo.patch_len {
            return Err(Error::key("schedule.patch_len", "must equal ppo.patch_len"));
        }
        if self.relaxed {
            return Ok(());
        }
        let t = &self.task;
        let kinds_ok = |allowed: &[TerrainKind]| t.kinds.iter().all(|k| allowed.contains(k));
        let ok = match self.index {
            1 => t.spec.mode == ObsMode::Proprio && t.objective == ObjectiveMode::VelocityTracking && kinds_ok(&[TerrainKind::Flat]),
            2 => {
                t.spec.mode == ObsMode::TerrainAware
                    && t.objective == ObjectiveMode::VelocityTracking
                    && kinds_ok(&[TerrainKind::RoughGround, TerrainKind::SlopeStairs])
            }
            3 => {
                t.spec.mode == ObsMode::TerrainAware
                    && t.objective == ObjectiveMode::GoalReaching
                    && kinds_ok(&[TerrainKind::WideGap, TerrainKind::SteppingStone])
            }
            i => return Err(Error::key("stage.index", format!("stage {i} is not one of 1, 2, 3"))),
        };
        if !ok {
            return Err(Error::config(format!(
                "stage {} has the wrong observation mode, objective, or terrain kinds",
                self.index
            )));
        }
        Ok(())
    }
}

/// One row of the training CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub iteration: u64,
    pub n_t: u32,
    pub episodes: usize,
    /// Mean return of episodes finished this iteration (carried over when none).
    pub mean_return: f64,
    /// Success fraction of episodes finished this iteration (carried over when none).
    pub success_rate: f64,
    pub mean_level: f64,
    pub guide_steps: usize,
    pub term_means: [f64; NUM_TERMS],
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
}

pub const CSV_VERSION_LINE: &str = "# jumper-csv v1";

pub fn csv_header() -> String {
    let mut h = String::from("iteration,n_t,episodes,mean_return,success_rate,mean_level,guide_steps");
    for n in TERM_NAMES {
        h.push_str(",r_");
        h.push_str(n);
    }
    h.push_str(",clip_fraction,value_loss,entropy,approx_kl");
    h
}

impl IterationRow {
    pub fn csv(&self) -> String {
        let mut s = format!(
            "{},{},{},{:.6},{:.6},{:.6},{}",
            self.iteration, self.n_t, self.episodes, self.mean_return, self.success_rate, self.mean_level, self.guide_steps
        );
        for v in self.term_means {
            let _ = write!(s, ",{v:.6e}");
        }
        let _ = write!(
            s,
            ",{:.6},{:.6},{:.6},{:.6e}",
            self.clip_fraction, self.value_loss, self.entropy, self.approx_kl
        );
        s
    }
}

pub fn write_csv<W: Write>(mut w: W, rows: &[IterationRow]) -> std::io::Result<()> {
    writeln!(w, "{CSV_VERSION_LINE}")?;
    writeln!(w, "{}", csv_header())?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub index: u32,
    pub iterations: u64,
    pub final_n_t: u32,
    pub final_level: f64,
    pub success_rate: f64,
    pub converged: bool,
    pub best_iteration: Option<u64>,
    pub wall_seconds: f64,
}

impl StageReport {
    pub fn render(&self) -> String {
        format!(
            "stage {}\niterations {}\nfinal_n_t {}\nfinal_level {:.4}\nsuccess_rate {:.4}\nconverged {}\nbest_iteration {}\nwall_seconds {:.2}\n",
            self.index,
            self.iterations,
            self.final_n_t,
            self.final_level,
            self.success_rate,
            self.converged,
            self.best_iteration.map_or_else(|| "none".to_string(), |b| b.to_string()),
            self.wall_seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub params: PolicyParams,
    pub opt: OptState,
    /// Highest moving-average success once the guide was fully withdrawn;
    /// the final parameters if that never happened.
    pub best: PolicyParams,
    pub rows: Vec<IterationRow>,
    pub report: StageReport,
    pub guide_checksum: u64,
    /// Curriculum level of each environment at the end.
    pub levels: Vec<u8>,
}

fn moving_average(xs: &[f64], window: usize) -> f64 {
    let tail = &xs[xs.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

fn iteration_seed(seed: u64, iteration: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(iteration.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Trains one stage under `prior`, calling `on_iteration` after every update.
pub fn run_stage_with(
    cfg: &StageConfig,
    prior: &GuidePolicy,
    seed: u64,
    mut on_iteration: impl FnMut(&IterationRow, &PolicyParams),
) -> Result<StageResult> {
    cfg.validate()?;
    if !cfg.relaxed && prior.stage() + 1 != cfg.index {
        return Err(Error::config(format!(
            "stage {} needs the stage-{} prior, got one from stage {}",
            cfg.index,
            cfg.index - 1,
            prior.stage()
        )));
    }
    if cfg.schedule.n0 > 0 {
        adapt_obs(&vec![0.0; cfg.task.spec.total_dim], &cfg.task.spec, prior.spec())?;
    }
    let start = Instant::now();
    let guide_checksum = prior.checksum();

    let mut params = match (cfg.warm_start, prior.kind()) {
        (true, GuideKind::FrozenCheckpoint(p)) if p.spec == cfg.task.spec => p.clone(),
        (true, _) => return Err(Error::config("warm start needs a checkpoint guide with the same observation layout")),
        _ => PolicyParams::new(&cfg.task.spec, 2, &cfg.hidden, cfg.init_log_std, seed)?,
    };
    params.stage = cfg.index;
    let mut opt = OptState::new(&params, cfg.ppo.learning_rate);
    let mut pool = EnvPool::new(cfg.task.clone(), cfg.ppo.num_envs, seed.wrapping_add(1), cfg.tracker)?;

    let mut rows = Vec::new();
    let mut successes = Vec::new();
    let (mut last_return, mut last_success) = (0.0, 0.0);
    let mut best: Option<(f64, u64, PolicyParams)> = None;
    let (mut anchor, mut stable, mut converged) = (f64::NAN, 0usize, false);

    for it in 0..cfg.iterations {
        let n_t = schedule_n(it, &cfg.schedule);
        let buf: PatchBuffer = {
            let mixed = MixedPolicy { guide: prior, learner: &params, n_t, patch_len: cfg.schedule.patch_len };
            pool.collect(&mixed, &params, cfg.ppo.patch_len)?
        };
        let stats = update(&mut params, &mut opt, &buf, &cfg.ppo, iteration_seed(seed, it))?;

        let episodes = buf.outcomes.len();
        if episodes > 0 {
            last_return = buf.outcomes.iter().map(|o| o.episode_return).sum::<f64>() / episodes as f64;
            last_success = buf.outcomes.iter().filter(|o| o.success).count() as f64 / episodes as f64;
        }
        let steps = buf.len() as f64;
        let row = IterationRow {
            iteration: it,
            n_t,
            episodes,
            mean_return: last_return,
            success_rate: last_success,
            mean_level: pool.tracker().mean_level(),
            guide_steps: buf.guide_steps(),
            term_means: buf.term_sums.map(|s| s / steps),
            clip_fraction: stats.clip_fraction,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
        };
        on_iteration(&row, &params);
        rows.push(row);

        if n_t == 0 {
            successes.push(last_success);
            let ma = moving_average(&successes, cfg.convergence.window);
            if best.as_ref().is_none_or(|(b, _, _)| ma > *b) {
                best = Some((ma, it, params.clone()));
            }
            if cfg.convergence.enabled {
                if (ma - anchor).abs() < cfg.convergence.tolerance {
                    stable += 1;
                } else {
                    anchor = ma;
                    stable = 0;
                }
                if stable >= cfg.convergence.patience {
                    converged = true;
                    break;
                }
            }
        }
    }

    let last = rows.last();
    let report = StageReport {
        index: cfg.index,
        iterations: rows.len() as u64,
        final_n_t: last.map_or(cfg.schedule.n0, |r| r.n_t),
        final_level: pool.tracker().mean_level(),
        success_rate: last.map_or(0.0, |r| r.success_rate),
        converged,
        best_iteration: best.as_ref().map(|b| b.1),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let best = best.map_or_else(|| params.clone(), |b| b.2);
    let levels = pool.tracker().levels();
    Ok(StageResult { params, opt, best, rows, report, guide_checksum, levels })
}

pub fn run_stage(cfg: &StageConfig, prior: &GuidePolicy, seed: u64) -> Result<StageResult> {
    run_stage_with(cfg, prior, seed, |_, _| {})
}

/// Seed used for stage `index` of a curriculum seeded with `seed`.
pub fn stage_seed(seed: u64, index: u32) -> u64 {
    seed.wrapping_add(u64::from(index) * 1_000_003)
}

pub fn checkpoint_path(dir: &Path, index: u32) -> PathBuf {
    dir.join(format!("stage{index}.ckpt"))
}

/// Writes the stage's best checkpoint, final checkpoint (with optimizer), CSV and report.
pub fn persist_stage(dir: &Path, result: &StageResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    let i = result.report.index;
    let mut f = fs::File::create(checkpoint_path(dir, i))?;
    save_checkpoint(&mut f, &result.best, None)?;
    let mut f = fs::File::create(dir.join(format!("stage{i}-final.ckpt")))?;
    save_checkpoint(&mut f, &result.params, Some(&result.opt))?;
    let f = fs::File::create(dir.join(format!("stage{i}.csv")))?;
    write_csv(std::io::BufWriter::new(f), &result.rows)?;
    fs::write(dir.join(format!("stage{i}.report")), result.report.render())?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CurriculumResult {
    pub stages: Vec<StageResult>,
    /// Checksum of the guide each stage trained under.
    pub guide_checksums: Vec<u64>,
}

impl CurriculumResult {
    pub fn final_policy(&self) -> Option<&PolicyParams> {
        self.stages.last().map(|s| &s.best)
    }
}

/// Chains stages, freezing each stage's best policy as the next guide.
///
/// With `out_dir` set, each stage is persisted as soon as it finishes, so a
/// failure later on leaves the earlier stages on disk.
pub fn run_curriculum(
    stages: &[StageConfig],
    first_guide: GuidePolicy,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<CurriculumResult> {
    if stages.is_empty() {
        return Err(Error::config("curriculum needs at least one stage"));
    }
    for (k, s) in stages.iter().enumerate() {
        if s.index as usize != k + 1 {
            return Err(Error::config(format!("stage {} listed in position {}", s.index, k + 1)));
        }
    }
    let mut guide = first_guide;
    let mut out = CurriculumResult { stages: Vec::new(), guide_checksums: Vec::new() };
    for cfg in stages {
        let result = run_stage(cfg, &guide, stage_seed(seed, cfg.index))?;
        if let Some(dir) = out_dir {
            persist_stage(dir, &result)?;
        }
        out.guide_checksums.push(result.guide_checksum);
        guide = GuidePolicy::frozen(result.best.clone());
        out.stages.push(result);
    }
    Ok(out)
}

/// For every decrement of `n_t` in `rows`, whether the moving-average return
/// regained its pre-decrement level within `horizon` iterations.
pub fn handover_recovery(rows: &[IterationRow], window: usize, horizon: u64) -> Vec<(u64, bool)> {
    let returns: Vec<f64> = rows.iter().map(|r| r.mean_return).collect();
    let mut out = Vec::new();
    for k in 1..rows.len() {
        if rows[k].n_t < rows[k - 1].n_t {
            let before = moving_average(&returns[..k], window);
            let end = (k as u64 + horizon).min(rows.len() as u64) as usize;
            let recovered = (k..end).any(|j| moving_average(&returns[..=j], window) >= before);
            out.push((rows[k].iteration, recovered));
        }
    }
    out
}
