//! Run configuration, training/evaluation drivers and the baseline suite.
//!
//! Every method shares the same environment, PPO and terrain code paths.
//! JumpER differs from the baselines only in its guide patches and in
//! chaining stages; a vanilla run is JumpER with `n0 = 0` on one stage.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curriculum::{evaluate, write_eval_csv, EpisodeRow, MetricsReport, TrackerRule};
use crate::error::{Error, Result};
use crate::hopper::HopperModel;
use crate::jumpstart::{
    persist_stage, run_stage, stage_seed, ConvergenceRule, GuidePolicy, StageConfig, StageResult,
};
use crate::neural::{load_checkpoint, PolicyParams};
use crate::ppo::{PPOConfig, TaskConfig};
use crate::reward::RewardWeights;
use crate::terrain::{TerrainKind, MAX_LEVEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Method {
    #[default]
    JumpER,
    VanillaPPO,
    PPOPretrained,
    PPODense,
    PPODensePretrained,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::JumpER, Method::VanillaPPO, Method::PPOPretrained, Method::PPODense, Method::PPODensePretrained];

    pub fn name(self) -> &'static str {
        match self {
            Method::JumpER => "JumpER",
            Method::VanillaPPO => "VanillaPPO",
            Method::PPOPretrained => "PPOPretrained",
            Method::PPODense => "PPODense",
            Method::PPODensePretrained => "PPODensePretrained",
        }
    }

    pub fn needs_checkpoint(self) -> bool {
        matches!(self, Method::PPOPretrained | Method::PPODensePretrained)
    }

    pub fn dense(self) -> bool {
        matches!(self, Method::PPODense | Method::PPODensePretrained)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScheduleSection {
    n0: Option<u32>,
    m: Option<u64>,
    episode_patches: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct NetworkSection {
    hidden: Option<Vec<usize>>,
    init_log_std: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainingSection {
    iterations: Option<u64>,
    eval_episodes: Option<usize>,
    /// Keep every k-th iteration in the CSV.
    csv_every: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TerrainSection {
    extent: Option<f64>,
    /// Only allowed when a single stage is run.
    kinds: Option<Vec<TerrainKind>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchSection {
    methods: Option<Vec<Method>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    method: Method,
    seeds: Option<Vec<u64>>,
    stages: Option<Vec<u32>>,
    out_dir: Option<PathBuf>,
    pretrained: Option<PathBuf>,
    model: Option<HopperModel>,
    ppo: Option<PPOConfig>,
    reward: Option<RewardWeights>,
    tracker: Option<TrackerRule>,
    convergence: Option<ConvergenceRule>,
    schedule: ScheduleSection,
    network: NetworkSection,
    training: TrainingSection,
    terrain: TerrainSection,
    bench: BenchSection,
}

/// A validated run description. An empty file yields a runnable stage-1 JumpER run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    /// Stage configs as JumpER would run them; baselines derive from these.
    pub stages: Vec<StageConfig>,
    pub out_dir: PathBuf,
    pub pretrained: Option<PathBuf>,
    pub csv_every: u64,
    pub eval_episodes: usize,
    /// Reward weights given explicitly; otherwise each method picks its own.
    pub reward_override: Option<RewardWeights>,
    pub bench_methods: Vec<Method>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string().trim_end().to_string()))?;
        let indices = raw.stages.clone().unwrap_or_else(|| vec![1]);
        if indices.is_empty() {
            return Err(Error::key("stages", "must list at least one stage"));
        }
        let mut stages = Vec::with_capacity(indices.len());
        for &i in &indices {
            let mut s = StageConfig::standard(i).map_err(|_| Error::key("stages", format!("{i} is not one of 1, 2, 3")))?;
            if let Some(m) = &raw.model {
                s.task.model = m.clone();
            }
            if let Some(p) = &raw.ppo {
                s.ppo = p.clone();
            }
            s.schedule.patch_len = s.ppo.patch_len as u32;
            if let Some(v) = raw.schedule.n0 {
                s.schedule.n0 = v;
            }
            if let Some(v) = raw.schedule.m {
                s.schedule.m = v;
            }
            if let Some(v) = raw.schedule.episode_patches {
                s.schedule.episode_patches = v;
            }
            if let Some(w) = raw.reward {
                s.task.weights = w;
            }
            if let Some(t) = raw.tracker {
                s.tracker = t;
            }
            if let Some(c) = raw.convergence {
                s.convergence = c;
            }
            if let Some(h) = &raw.network.hidden {
                s.hidden = h.clone();
            }
            if let Some(v) = raw.network.init_log_std {
                s.init_log_std = v;
            }
            if let Some(v) = raw.training.iterations {
                s.iterations = v;
            }
            if let Some(v) = raw.terrain.extent {
                s.task.extent = v;
            }
            if let Some(k) = &raw.terrain.kinds {
                if indices.len() > 1 {
                    return Err(Error::key("terrain.kinds", "only allowed when a single stage is run"));
                }
                s.task.kinds = k.clone();
            }
            stages.push(s);
        }
        let cfg = RunConfig {
            method: raw.method,
            seeds: raw.seeds.unwrap_or_else(|| vec![0]),
            stages,
            out_dir: raw.out_dir.unwrap_or_else(|| PathBuf::from("runs")),
            pretrained: raw.pretrained,
            csv_every: raw.training.csv_every.unwrap_or(1),
            eval_episodes: raw.training.eval_episodes.unwrap_or(20),
            reward_override: raw.reward,
            bench_methods: raw.bench.methods.unwrap_or_else(|| vec![Method::JumpER, Method::VanillaPPO]),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::key("seeds", "must list at least one seed"));
        }
        if self.csv_every == 0 {
            return Err(Error::key("training.csv_every", "must be at least 1"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::key("training.eval_episodes", "must be at least 1"));
        }
        if self.bench_methods.is_empty() {
            return Err(Error::key("bench.methods", "must list at least one method"));
        }
        for (k, s) in self.stages.iter().enumerate() {
            if k > 0 && s.index != self.stages[k - 1].index + 1 {
                return Err(Error::key("stages", "must be consecutive and increasing"));
            }
        }
        if self.method == Method::JumpER && self.stages[0].index != 1 {
            return Err(Error::key("stages", "a JumpER run starts from stage 1, the only stage with a built-in guide"));
        }
        if self.method != Method::JumpER && self.stages.len() != 1 {
            return Err(Error::key("stages", format!("{} trains a single stage", self.method.name())));
        }
        if self.method.needs_checkpoint() && self.pretrained.is_none() {
            return Err(Error::key("pretrained", format!("{} needs a checkpoint path", self.method.name())));
        }
        for m in &self.bench_methods {
            if m.needs_checkpoint() && self.pretrained.is_none() {
                return Err(Error::key("pretrained", format!("bench method {} needs a checkpoint path", m.name())));
            }
        }
        for s in &self.stages {
            self.stage_for(self.method, s)?.validate()?;
        }
        Ok(())
    }

    /// The stage config `method` actually trains.
    pub fn stage_for(&self, method: Method, base: &StageConfig) -> Result<StageConfig> {
        let mut s = base.clone();
        if method != Method::JumpER {
            s.schedule.n0 = 0;
            s.relaxed = true;
            s.warm_start = method.needs_checkpoint();
        }
        if self.reward_override.is_none() {
            s.task.weights = if method.dense() { RewardWeights::default() } else { RewardWeights::sparse() };
        }
        Ok(s)
    }

    /// Directory for one method and seed under `out_dir`.
    pub fn run_dir(&self, method: Method, seed: u64) -> PathBuf {
        self.out_dir.join(method.name()).join(format!("seed{seed}"))
    }
}

pub fn load_params(path: &Path) -> Result<PolicyParams> {
    let mut f = fs::File::open(path)
        .map_err(|e| Error::config(format!("cannot open checkpoint {}: {e}", path.display())))?;
    Ok(load_checkpoint(&mut f)?.0)
}

/// Result of one method on one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub method: Method,
    pub seed: u64,
    pub stages: Vec<StageResult>,
    /// Evaluation of the final stage's last parameters.
    pub eval: MetricsReport,
    pub eval_rows: Vec<EpisodeRow>,
}

/// Evaluation levels: level 0 for flat balancing, all levels otherwise.
pub fn eval_levels(task: &TaskConfig) -> Vec<u8> {
    if task.kinds.iter().all(|&k| k == TerrainKind::Flat) {
        vec![0]
    } else {
        (0..=MAX_LEVEL).collect()
    }
}

/// Trains `method` for one seed without touching the disk.
pub fn train_seed(cfg: &RunConfig, method: Method, seed: u64) -> Result<SeedRun> {
    train_seed_inner(cfg, method, seed, None)
}

fn train_seed_inner(cfg: &RunConfig, method: Method, seed: u64, dir: Option<&Path>) -> Result<SeedRun> {
    let mut guide = match method {
        Method::JumpER | Method::VanillaPPO | Method::PPODense => GuidePolicy::scripted(),
        Method::PPOPretrained | Method::PPODensePretrained => {
            let path = cfg.pretrained.as_deref().ok_or_else(|| Error::key("pretrained", "missing checkpoint path"))?;
            GuidePolicy::frozen(load_params(path)?)
        }
    };
    let mut stages = Vec::new();
    for base in &cfg.stages {
        let s = cfg.stage_for(method, base)?;
        let result = run_stage(&s, &guide, stage_seed(seed, s.index))?;
        if let Some(dir) = dir {
            let mut thinned = result.clone();
            thinned.rows.retain(|r| r.iteration % cfg.csv_every == 0);
            persist_stage(dir, &thinned)?;
        }
        guide = GuidePolicy::frozen(result.best.clone());
        stages.push(result);
    }
    let last = stages.last().expect("validated: at least one stage");
    let task = &cfg.stage_for(method, cfg.stages.last().expect("nonempty"))?.task;
    let (eval, eval_rows) = evaluate(&last.params, task, &eval_levels(task), cfg.eval_episodes, seed)?;
    if let Some(dir) = dir {
        let f = fs::File::create(dir.join("eval.csv"))?;
        write_eval_csv(BufWriter::new(f), &eval, &eval_rows)?;
    }
    Ok(SeedRun { method, seed, stages, eval, eval_rows })
}

/// Trains the configured method on every seed, writing artifacts under `out_dir`.
pub fn train(cfg: &RunConfig) -> Result<Vec<SeedRun>> {
    cfg.seeds
        .iter()
        .map(|&seed| {
            let dir = cfg.run_dir(cfg.method, seed);
            fs::create_dir_all(&dir)?;
            train_seed_inner(cfg, cfg.method, seed, Some(&dir))
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub task: String,
    pub seeds: usize,
    /// (mean, std) over seeds, in `BENCH_METRICS` order.
    pub metrics: Vec<(f64, f64)>,
}

pub const BENCH_METRICS: [&str; 8] = ["task_success_rate", "success_rate", "mean_level", "r_air", "p_base", "p_mono", "t_vel", "t_reach"];

fn metric_values(r: &MetricsReport) -> [f64; 8] {
    [r.task_success_rate, r.success_rate, r.mean_level, r.r_air, r.p_base, r.p_mono, r.t_vel, r.t_reach]
}

pub fn task_label(cfg: &RunConfig) -> String {
    cfg.stages
        .last()
        .map(|s| s.task.kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join("+"))
        .unwrap_or_default()
}

/// Runs every bench method on every seed and aggregates the evaluations.
pub fn bench(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &method in &cfg.bench_methods {
        let mut per_metric = vec![Vec::new(); BENCH_METRICS.len()];
        for &seed in &cfg.seeds {
            // Baselines train only the final listed stage.
            let run_cfg = if method == Method::JumpER {
                cfg.clone()
            } else {
                RunConfig { stages: vec![cfg.stages.last().expect("nonempty").clone()], ..cfg.clone() }
            };
            let run = train_seed(&run_cfg, method, seed)?;
            for (k, v) in metric_values(&run.eval).into_iter().enumerate() {
                per_metric[k].push(v);
            }
        }
        rows.push(BenchRow {
            method,
            task: task_label(cfg),
            seeds: cfg.seeds.len(),
            metrics: per_metric.iter().map(|v| mean_std(v)).collect(),
        });
    }
    Ok(rows)
}

pub fn render_bench(rows: &[BenchRow]) -> String {
    let mut out = String::from("# jumper-csv v1\nmethod,task,seeds");
    for m in BENCH_METRICS {
        out.push_str(&format!(",{m}_mean,{m}_std"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}", r.method.name(), r.task, r.seeds));
        for (m, s) in &r.metrics {
            out.push_str(&format!(",{m:.6},{s:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Evaluates a checkpoint on the task of stage `stage` and writes the episode CSV.
pub fn eval_checkpoint(
    checkpoint: &Path,
    task: &TaskConfig,
    levels: &[u8],
    n_episodes: usize,
    seed: u64,
    out: &Path,
) -> Result<MetricsReport> {
    let params = load_params(checkpoint)?;
    if params.spec != task.spec {
        return Err(Error::config("checkpoint observation layout does not match the task"));
    }
    let (report, rows) = evaluate(&params, task, levels, n_episodes, seed)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    let f = fs::File::create(out)?;
    write_eval_csv(BufWriter::new(f), &report, &rows)?;
    Ok(report)
}
