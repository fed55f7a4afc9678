//! Terrain difficulty curriculum and evaluation metrics.
//!
//! Each environment carries its own level and a short window of recent
//! episode outcomes. Consistent success promotes, an all-failure window
//! demotes. [`evaluate`] runs noise-free rollouts and aggregates the metric
//! suite used to compare methods.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hopper::{assemble_obs, reset, step, Body, HopperState, TerminationReason};
use crate::neural::PolicyParams;
use crate::ppo::{EpisodeOutcome, TaskConfig};
use crate::reward::compute_reward;
use crate::terrain::{generate, TerrainKind, MAX_LEVEL};

/// Promotion/demotion thresholds as fractions of a full window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerRule {
    pub window: usize,
    pub promote: f64,
    pub demote: f64,
}

impl Default for TrackerRule {
    fn default() -> Self {
        TrackerRule { window: 5, promote: 0.8, demote: 0.0 }
    }
}

impl TrackerRule {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::key("curriculum.window", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.promote) || !(0.0..=1.0).contains(&self.demote) || self.demote >= self.promote
        {
            return Err(Error::key("curriculum.promote", "need 0 <= demote < promote <= 1"));
        }
        Ok(())
    }
}

/// Level state of one environment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnvLevel {
    level: u8,
    history: VecDeque<bool>,
}

impl EnvLevel {
    pub fn at(level: u8) -> Self {
        EnvLevel { level: level.min(MAX_LEVEL), history: VecDeque::new() }
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    /// Appends an outcome and returns the (possibly changed) level.
    pub fn record(&mut self, success: bool, rule: &TrackerRule) -> u8 {
        self.history.push_back(success);
        if self.history.len() > rule.window {
            self.history.pop_front();
        }
        let wins = self.history.iter().filter(|s| **s).count() as f64;
        let w = rule.window as f64;
        if wins >= rule.promote * w {
            self.level = (self.level + 1).min(MAX_LEVEL);
            self.history.clear();
        } else if self.history.len() == rule.window && wins <= rule.demote * w {
            self.level = self.level.saturating_sub(1);
            self.history.clear();
        }
        self.level
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelTracker {
    pub rule: TrackerRule,
    pub envs: Vec<EnvLevel>,
}

impl LevelTracker {
    pub fn new(num_envs: usize, rule: TrackerRule) -> Self {
        LevelTracker { rule, envs: vec![EnvLevel::default(); num_envs] }
    }

    pub fn record_episode(&mut self, env_index: usize, success: bool) -> u8 {
        let rule = self.rule;
        self.envs[env_index].record(success, &rule)
    }

    pub fn levels(&self) -> Vec<u8> {
        self.envs.iter().map(EnvLevel::level).collect()
    }

    pub fn mean_level(&self) -> f64 {
        if self.envs.is_empty() {
            return 0.0;
        }
        self.envs.iter().map(|e| e.level as f64).sum::<f64>() / self.envs.len() as f64
    }
}

/// A deterministic controller that can be evaluated.
pub trait EvalPolicy: Sync {
    /// Raw action and whether the assist spring is engaged.
    fn eval_action(&self, obs: &[f64], state: &HopperState) -> Result<([f64; 2], bool)>;
}

impl EvalPolicy for PolicyParams {
    fn eval_action(&self, obs: &[f64], _state: &HopperState) -> Result<([f64; 2], bool)> {
        let mean = self.dist(obs)?.mean;
        Ok(([mean[0], mean[1]], false))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub episodes: usize,
    pub r_air: f64,
    pub p_base: f64,
    pub p_mono: f64,
    pub t_vel: f64,
    pub t_reach: f64,
    pub mean_level: f64,
    /// Fraction of episodes that ran off the far end of the terrain.
    pub success_rate: f64,
    /// Fraction of episodes that met the task's own success rule.
    pub task_success_rate: f64,
}

/// Column order of [`MetricsReport::csv_row`].
pub const METRICS_HEADER: &str = "episodes,r_air,p_base,p_mono,t_vel,t_reach,mean_level,success_rate,task_success_rate";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.episodes,
            self.r_air,
            self.p_base,
            self.p_mono,
            self.t_vel,
            self.t_reach,
            self.mean_level,
            self.success_rate,
            self.task_success_rate
        )
    }
}

const MIN_GOAL_DISTANCE: f64 = 0.1;

/// Per-episode evaluation record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub outcome: EpisodeOutcome,
    pub air_steps: u32,
    pub track_lin_vel_sum: f64,
}

fn run_episode<P: EvalPolicy + ?Sized>(
    policy: &P,
    task: &TaskConfig,
    kind: TerrainKind,
    level: u8,
    seed: u64,
    env_index: usize,
) -> Result<EpisodeRow> {
    let hf = generate(kind, level, seed, task.extent)?;
    let mut state = reset(&task.model, &hf, seed.wrapping_add(1));
    state.command = [0.5 * (task.command_range[0] + task.command_range[1]), 0.0];
    let initial = (hf.goal_x() - state.x).abs();
    let mut ret = 0.0;
    let mut air = 0;
    let mut track = 0.0;
    loop {
        let obs = assemble_obs(&state, &hf, &task.spec, &task.model);
        let (raw, assist) = policy.eval_action(&obs.values, &state)?;
        let target = task.model.action_to_target(&raw);
        let (next, info) = step(&task.model, &state, &hf, &target, assist)?;
        let r = compute_reward(&info, &task.weights, task.objective);
        ret += r.total;
        track += r.terms[0].raw;
        let non_foot = [Body::Shank, Body::Thigh, Body::Torso]
            .iter()
            .any(|b| info.contact_forces[b.index()].iter().any(|f| *f != 0.0));
        if !non_foot {
            air += 1;
        }
        state = next;
        if let Some(reason) = info.termination_reason {
            let outcome = EpisodeOutcome {
                env_index,
                kind,
                level,
                success: task.success.is_success(reason),
                reason,
                episode_return: ret,
                length: state.step,
                initial_goal_distance: initial,
                final_goal_distance: (hf.goal_x() - state.x).abs(),
            };
            return Ok(EpisodeRow { outcome, air_steps: air, track_lin_vel_sum: track });
        }
    }
}

/// Aggregates the metric suite from episode rows.
pub fn summarize(rows: &[EpisodeRow]) -> MetricsReport {
    let n = rows.len();
    if n == 0 {
        return MetricsReport::default();
    }
    let nf = n as f64;
    let steps: f64 = rows.iter().map(|r| r.outcome.length as f64).sum();
    let frac = |f: &dyn Fn(&EpisodeRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / nf;
    MetricsReport {
        episodes: n,
        r_air: rows.iter().map(|r| r.air_steps as f64).sum::<f64>() / steps,
        p_base: frac(&|r| r.outcome.reason == TerminationReason::NonFootContact(Body::Torso)),
        p_mono: frac(&|r| matches!(r.outcome.reason, TerminationReason::NonFootContact(_))),
        t_vel: rows.iter().map(|r| r.track_lin_vel_sum).sum::<f64>() / steps,
        t_reach: rows.iter().map(|r| r.outcome.reach_progress()).sum::<f64>() / nf,
        mean_level: rows.iter().map(|r| r.outcome.level as f64).sum::<f64>() / nf,
        success_rate: frac(&|r| r.outcome.reason == TerminationReason::OutOfBounds),
        task_success_rate: frac(&|r| r.outcome.success),
    }
}

/// Noise-free rollouts of `policy` over `n_episodes` seeded episodes.
///
/// Episode `i` uses terrain kind `task.kinds[i % kinds]` at level
/// `levels[i % levels]`, with seed `seed + i`.
pub fn evaluate<P: EvalPolicy + ?Sized>(
    policy: &P,
    task: &TaskConfig,
    levels: &[u8],
    n_episodes: usize,
    seed: u64,
) -> Result<(MetricsReport, Vec<EpisodeRow>)> {
    if n_episodes == 0 {
        return Err(Error::input("need at least one evaluation episode"));
    }
    if levels.is_empty() || task.kinds.is_empty() {
        return Err(Error::input("need at least one level and one terrain kind"));
    }
    task.validate()?;
    let rows = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let kind = task.kinds[i % task.kinds.len()];
            let level = levels[i % levels.len()];
            run_episode(policy, task, kind, level, seed.wrapping_add(i as u64 * 7919), i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(&rows), rows))
}

pub const EPISODE_HEADER: &str = "episode,kind,level,reason,success,return,length,initial_goal_distance,final_goal_distance";

/// One CSV row per episode, then a `# summary` comment and the summary row.
pub fn write_eval_csv<W: Write>(mut w: W, report: &MetricsReport, rows: &[EpisodeRow]) -> std::io::Result<()> {
    writeln!(w, "# jumper-csv v1")?;
    writeln!(w, "{EPISODE_HEADER}")?;
    for (i, r) in rows.iter().enumerate() {
        let o = &r.outcome;
        writeln!(
            w,
            "{i},{},{},{},{},{:.6},{},{:.6},{:.6}",
            o.kind,
            o.level,
            o.reason.name(),
            u8::from(o.success),
            o.episode_return,
            o.length,
            o.initial_goal_distance,
            o.final_goal_distance
        )?;
    }
    writeln!(w, "# summary")?;
    writeln!(w, "{METRICS_HEADER}")?;
    writeln!(w, "{}", report.csv_row())
}

impl EpisodeOutcome {
    /// Normalized progress toward the goal in `[0, 1]`.
    pub fn reach_progress(&self) -> f64 {
        let start = self.initial_goal_distance.max(MIN_GOAL_DISTANCE);
        1.0 - (self.final_goal_distance / start).clamp(0.0, 1.0)
    }
}
