//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exact and property criteria (1-7, 10) fail the process when they fail.
//! The two learning experiments (8, 9) are directional: their verdict is
//! printed, but a FAIL there does not abort the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use jumper_core::curriculum::TrackerRule;
use jumper_core::harness::{self, Method, RunConfig};
use jumper_core::hopper::{reset, step, substep, Body, HopperModel, ObsMode, ObsSpec, TerminationReason};
use jumper_core::jumpstart::{
    handover_recovery, mix_select, run_curriculum, run_stage, run_stage_with, schedule_n, stage_seed,
    GuideOnly, GuidePolicy, JumpSchedule, MixedPolicy, StageConfig,
};
use jumper_core::neural::{Dense, Mlp, PolicyParams};
use jumper_core::ppo::{ActorTag, clipped_objective, gae, ppo_loss, ppo_loss_grad, EnvPool, PPOConfig, Sample};
use jumper_core::reward::RewardWeights;
use jumper_core::terrain::{generate, level_params, TerrainKind, MAX_LEVEL, NOISE_STEP, STAIR_PLATFORM_WIDTH};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

// ---------------------------------------------------------------- 1

fn random_mlp(sizes: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
    let layers = sizes
        .windows(2)
        .map(|p| {
            let mut d = Dense::zeros(p[0], p[1]);
            for w in d.w.iter_mut().chain(d.b.iter_mut()) {
                let z: f64 = StandardNormal.sample(rng);
                *w = 0.7 * z;
            }
            d
        })
        .collect();
    Mlp { layers }
}

fn gradient_oracle() -> Outcome {
    const H: f64 = 1e-6;
    const FLOOR: f64 = 1e-3;
    const KINK_MARGIN: f64 = 1e-3;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let spec = ObsSpec {
        mode: ObsMode::Proprio,
        proprio_dim: 4,
        heightmap_offsets_body: Vec::new(),
        heightmap_offsets_foot: Vec::new(),
        total_dim: 4,
    };
    let params = PolicyParams {
        stage: 0,
        spec,
        actor: random_mlp(&[4, 2, 2], &mut rng),
        log_std: vec![-0.3, 0.2],
        critic: random_mlp(&[4, 2, 1], &mut rng),
    };
    let cfg = PPOConfig { entropy_coef: 0.01, value_coef: 0.5, clip: 0.2, ..PPOConfig::default() };

    let mut samples = Vec::with_capacity(100);
    while samples.len() < 100 {
        let obs: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let action: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let ratio: f64 = rng.random_range(0.5..1.5);
        if (ratio - (1.0 - cfg.clip)).abs() < KINK_MARGIN || (ratio - (1.0 + cfg.clip)).abs() < KINK_MARGIN {
            continue;
        }
        let lp = params.dist(&obs).unwrap().log_prob(&action);
        samples.push(Sample {
            obs,
            action,
            old_log_prob: lp - ratio.ln(),
            advantage: rng.random_range(-2.0..2.0),
            ret: rng.random_range(-3.0..3.0),
            in_surrogate: rng.random_bool(0.8),
        });
    }
    let batch: Vec<&Sample> = samples.iter().collect();
    let (_, grad) = ppo_loss_grad(&params, &batch, &cfg).unwrap();
    let analytic = grad.flatten();

    let mut numeric = Vec::with_capacity(analytic.len());
    let n = params.num_params();
    for k in 0..n {
        let loss_at = |delta: f64| {
            let mut p = params.clone();
            let mut i = 0;
            for s in p.slices_mut() {
                if k < i + s.len() {
                    s[k - i] += delta;
                    break;
                }
                i += s.len();
            }
            ppo_loss(&p, &batch, &cfg).unwrap().loss
        };
        numeric.push((loss_at(H) - loss_at(-H)) / (2.0 * H));
    }
    let max_rel = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(FLOOR))
        .fold(0.0, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        max_rel < 1e-4 && secs < 10.0 && analytic.len() == n,
        format!("{n} params, 100 samples, max rel err {max_rel:.2e} (denominator floor {FLOOR:e}), {secs:.2}s"),
    )
}

// ---------------------------------------------------------------- 2

fn brute_force_gae(r: &[f64], v: &[f64], d: &[bool], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let next_v = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
    let delta: Vec<f64> =
        (0..n).map(|t| r[t] + gamma * next_v(t) * if d[t] { 0.0 } else { 1.0 } - v[t]).collect();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for k in 0..n - t {
                // (γλ)^k, cut off by any episode end before step t+k.
                let alive = (t..t + k).all(|j| !d[j]);
                if !alive {
                    break;
                }
                acc += (gamma * lambda).powi(k as i32) * delta[t + k];
            }
            acc
        })
        .collect()
}

fn gae_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let r: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..10).map(|_| rng.random_bool(0.2)).collect();
        let boot = rng.random_range(-5.0..5.0);
        let gamma = rng.random_range(0.8..0.999);
        let lambda = rng.random_range(0.5..1.0);
        let (adv, ret) = gae(&r, &v, &d, boot, gamma, lambda);
        let oracle = brute_force_gae(&r, &v, &d, boot, gamma, lambda);
        for t in 0..10 {
            worst = worst.max((adv[t] - oracle[t]).abs());
            worst = worst.max((ret[t] - (oracle[t] + v[t])).abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(worst < 1e-10 && secs < 5.0, format!("1000 streams, max abs diff {worst:.2e}, {secs:.3}s"))
}

// ---------------------------------------------------------------- 3

fn clip_arithmetic() -> Outcome {
    let mut ok = clipped_objective(1.5, 1.0, 0.2) == 1.2 && clipped_objective(0.5, -1.0, 0.2) == -0.8;
    for a in [-3.7, -1.0, -1e-9, 0.0, 0.25, 1.0, 42.0] {
        for eps in [0.05, 0.2, 0.5] {
            ok &= clipped_objective(1.0, a, eps) == a;
        }
    }
    outcome(ok, "(1.5,1,0.2)->1.2, (0.5,-1,0.2)->-0.8, (1,a,eps)->a exact")
}

// ---------------------------------------------------------------- 4

fn schedule_law() -> Outcome {
    let s = JumpSchedule { n0: 2, m: 300, ..JumpSchedule::default() };
    let got: Vec<u32> = [0, 299, 300, 600, 1_000_000].iter().map(|&t| schedule_n(t, &s)).collect();
    outcome(got == [2, 2, 1, 0, 0], format!("n_t at t=0,299,300,600,1e6 -> {got:?}"))
}

// ---------------------------------------------------------------- 5

fn small_stage(index: u32, iterations: u64) -> StageConfig {
    let mut cfg = StageConfig::standard(index).unwrap();
    cfg.ppo = PPOConfig { num_envs: 4, minibatches: 2, epochs: 2, ..PPOConfig::default() };
    cfg.hidden = vec![8];
    cfg.iterations = iterations;
    cfg
}

fn mixing_boundaries() -> Outcome {
    let mut prior = PolicyParams::new(&ObsSpec::proprio(), 2, &[8], -0.5, 77).unwrap();
    prior.stage = 1;
    let guide = GuidePolicy::frozen(prior);
    let cfg = small_stage(2, 100);
    let learner = PolicyParams::new(&cfg.task.spec, 2, &[8], 0.0, 1).unwrap();
    let n = cfg.schedule.episode_patches;

    let collect = |mode: u8| {
        let mut pool = EnvPool::new(cfg.task.clone(), 4, 9, TrackerRule::default()).unwrap();
        (0..3)
            .map(|_| match mode {
                0 => pool.collect(&MixedPolicy { guide: &guide, learner: &learner, n_t: n, patch_len: 25 }, &learner, 25),
                1 => pool.collect(&GuideOnly { guide: &guide, learner_spec: &cfg.task.spec }, &learner, 25),
                2 => pool.collect(&MixedPolicy { guide: &guide, learner: &learner, n_t: 0, patch_len: 25 }, &learner, 25),
                _ => pool.collect(&learner, &learner, 25),
            })
            .collect::<Result<Vec<_>, _>>()
            .unwrap()
    };
    let full_is_guide = collect(0) == collect(1);
    let zero_is_learner = collect(2) == collect(3);
    let tags_ok = (0..1000).all(|k| {
        let expect = if k < 50 { ActorTag::Guide } else { ActorTag::Learner };
        mix_select(k, 2, 25) == expect
    });

    let before = guide.checksum();
    let mut train_cfg = cfg.clone();
    train_cfg.schedule.m = 40;
    let mut iters = 0;
    let result = run_stage_with(&train_cfg, &guide, 5, |_, _| iters += 1).unwrap();
    let unchanged = guide.checksum() == before && result.guide_checksum == before;
    outcome(
        full_is_guide && zero_is_learner && tags_ok && unchanged && iters == 100,
        format!(
            "n_t=N == pure guide: {full_is_guide}, n_t=0 == pure learner: {zero_is_learner}, \
             patch tags: {tags_ok}, guide checksum {before:016x} unchanged over {iters} iterations: {unchanged}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn table_fidelity() -> Outcome {
    let w = RewardWeights::default();
    let expected = [
        1.5, 0.5, -200.0, 200.0, 10.0, -0.5, -0.5, -0.05, -1.0, -1e-5, -0.01, -0.01, -2e-5, -2.5e-7, -0.01, -10.0, -1.0,
        -1.0,
    ];
    let weights_ok = w.as_array() == expected;

    let stone = |l: u8| {
        let p = level_params(TerrainKind::SteppingStone, l).unwrap();
        (p.gap_width, p.stone_size, p.stone_gap)
    };
    let stones_ok = stone(0) == (0.10, 0.50, 0.05) && stone(5) == (0.35, 0.25, 0.15) && stone(9) == (0.60, 0.125, 0.25);

    let rough = |l: u8| level_params(TerrainKind::RoughGround, l).unwrap();
    let slope = |l: u8| level_params(TerrainKind::SlopeStairs, l).unwrap();
    let ranges_ok = (slope(0).slope_grade, slope(MAX_LEVEL).slope_grade) == (0.0, 0.2)
        && (slope(0).stair_height, slope(MAX_LEVEL).stair_height) == (0.05, 0.2)
        && (0..=MAX_LEVEL).all(|l| slope(l).stair_width == 0.3 && slope(l).platform_width == 2.0)
        && STAIR_PLATFORM_WIDTH == 3.0
        && (rough(0).noise_amplitude, rough(MAX_LEVEL).noise_amplitude) == (0.02, 0.1)
        && NOISE_STEP == 0.02
        && (0..=MAX_LEVEL).all(|l| {
            let (a, b) = (slope(l), rough(l));
            (0.0..=0.2).contains(&a.slope_grade)
                && (0.05..=0.2).contains(&a.stair_height)
                && (0.02..=0.1).contains(&b.noise_amplitude)
        });
    outcome(
        weights_ok && stones_ok && ranges_ok,
        format!("18 reward weights: {weights_ok}, stepping-stone rows 0/5/9: {stones_ok}, rough/slope ranges: {ranges_ok}"),
    )
}

// ---------------------------------------------------------------- 7

fn monopedal_termination() -> Outcome {
    let m = HopperModel::default();
    let hf = generate(TerrainKind::Flat, 0, 0, 10.0).unwrap();
    let tuck = [1.8, -2.5];
    let tucked = || {
        let mut s = reset(&m, &hf, 2);
        s.pitch = std::f64::consts::PI - 1.8;
        s.joint_pos = tuck;
        s.z = 1.0;
        s
    };

    let mut probe = tucked();
    let mut first = None;
    for k in 0..10_000u32 {
        if substep(&m, &mut probe, &hf, &tuck, false).non_foot_contact().is_some() {
            first = Some(k);
            break;
        }
    }
    let mut s = tucked();
    let info = loop {
        let (next, info) = step(&m, &s, &hf, &tuck, false).unwrap();
        s = next;
        if info.terminated || s.step > 1000 {
            break info;
        }
    };
    let at = info.termination_substep.map(|k| (s.step - 1) * m.control_decimation + k);
    let drop_ok = matches!(info.termination_reason, Some(TerminationReason::NonFootContact(_))) && first.is_some() && at == first;

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut violations = 0usize;
    let mut terminations = 0usize;
    let mut episode = 0u64;
    let mut s = reset(&m, &hf, episode);
    for _ in 0..100_000 {
        let raw = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let (next, info) = step(&m, &s, &hf, &m.action_to_target(&raw), false).unwrap();
        let touched = [Body::Torso, Body::Thigh, Body::Shank]
            .iter()
            .any(|b| info.contact_forces[b.index()].iter().any(|f| *f != 0.0));
        if touched && !info.terminated {
            violations += 1;
        }
        if info.terminated {
            terminations += 1;
            episode += 1;
            s = reset(&m, &hf, episode);
        } else {
            s = next;
        }
    }
    outcome(
        drop_ok && violations == 0,
        format!(
            "torso drop ends at substep {at:?} (first contact {first:?}, {:?}); \
             1e5 random steps, {terminations} episodes, {violations} post-contact live steps",
            info.termination_reason
        ),
    )
}

// ---------------------------------------------------------------- 8

/// Reduced desk-scale network and pool shared by the learning experiments.
const REDUCED: &str = r#"
[ppo]
num_envs = 16
[network]
hidden = [64, 64]
init_log_std = -1.0
[convergence]
enabled = false
"#;

fn stage1_config(seed: u64) -> RunConfig {
    RunConfig::from_toml_str(&format!(
        "seeds = [{seed}]\n{REDUCED}\n[training]\niterations = 1500\neval_episodes = 20\n"
    ))
    .unwrap()
}

fn directional_learning() -> Outcome {
    let t0 = Instant::now();
    let mut jumper = Vec::new();
    let mut vanilla = Vec::new();
    let mut recovery = Vec::new();
    for seed in 0..5 {
        let cfg = stage1_config(seed);
        let j = harness::train_seed(&cfg, Method::JumpER, seed).unwrap();
        let v = harness::train_seed(&cfg, Method::VanillaPPO, seed).unwrap();
        println!(
            "  seed {seed}: JumpER {:.2}, VanillaPPO {:.2}",
            j.eval.task_success_rate, v.eval.task_success_rate
        );
        recovery.extend(handover_recovery(&j.stages[0].rows, 50, 2 * cfg.stages[0].schedule.m));
        jumper.push(j.eval.task_success_rate);
        vanilla.push(v.eval.task_success_rate);
    }
    let (mj, _) = harness::mean_std(&jumper);
    let (mv, _) = harness::mean_std(&vanilla);
    let recovered = recovery.iter().all(|(_, ok)| *ok) && recovery.len() == 10;
    let gap = mj - mv;
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        gap >= 0.20 && recovered && secs < 1800.0,
        format!(
            "mean final success JumpER {mj:.3} vs VanillaPPO {mv:.3} (gap {:+.1} pp, need >= 20); \
             recovery within 2m after {} decrements: {recovered}; {secs:.0}s",
            100.0 * gap,
            recovery.len()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn reduced(index: u32, iterations: u64) -> StageConfig {
    let mut s = StageConfig::standard(index).unwrap();
    s.ppo.num_envs = 16;
    s.hidden = vec![64, 64];
    s.init_log_std = -1.0;
    s.convergence.enabled = false;
    s.iterations = iterations;
    s
}

fn stage_chaining() -> Outcome {
    let t0 = Instant::now();
    let mut stage3 = reduced(3, 600);
    stage3.task.kinds = vec![TerrainKind::SteppingStone];
    let stages = [reduced(1, 1500), reduced(2, 1000), stage3.clone()];
    let mut chained = true;
    let mut with_prior = Vec::new();
    let mut with_random = Vec::new();
    for seed in 0..3 {
        let out = run_curriculum(&stages, GuidePolicy::scripted(), seed, None).unwrap();
        chained &= out.stages.len() == 3
            && out.guide_checksums[0] == GuidePolicy::scripted().checksum()
            && (1..3).all(|i| out.guide_checksums[i] == out.stages[i - 1].best.checksum());
        let mut random = PolicyParams::new(&ObsSpec::terrain_aware(), 2, &stage3.hidden, stage3.init_log_std, 1000 + seed).unwrap();
        random.stage = 2;
        let baseline = run_stage(&stage3, &GuidePolicy::frozen(random), stage_seed(seed, 3)).unwrap();
        let a = out.stages[2].report.final_level;
        let b = baseline.report.final_level;
        println!("  seed {seed}: stage-3 level with stage-2 prior {a:.3}, with random guide {b:.3}");
        with_prior.push(a);
        with_random.push(b);
    }
    let (ma, _) = harness::mean_std(&with_prior);
    let (mb, _) = harness::mean_std(&with_random);
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        chained && ma > mb,
        format!(
            "3 stages chained with matching guide checksums: {chained}; SteppingStone mean level \
             {ma:.3} (stage-2 prior) vs {mb:.3} (random guide); {secs:.0}s"
        ),
    )
}

// ---------------------------------------------------------------- 10

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let tiny = |dir: &Path| {
        RunConfig::from_toml_str(&format!(
            "seeds = [3, 4]\nout_dir = {:?}\n[ppo]\nnum_envs = 4\nminibatches = 2\nepochs = 2\n\
             [network]\nhidden = [8]\n[training]\niterations = 6\neval_episodes = 3\n",
            dir.display().to_string()
        ))
        .unwrap()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    harness::train(&tiny(&a)).unwrap();
    harness::train(&tiny(&b)).unwrap();
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    let train_ok = !ta.is_empty() && ta == tb && ta.keys().any(|k| k.ends_with(".ckpt")) && ta.keys().any(|k| k.ends_with(".csv"));

    let ckpt = a.join("JumpER/seed3/stage1.ckpt");
    let task = &tiny(&a).stages[0].task;
    let (ea, eb) = (tmp.path().join("ea.csv"), tmp.path().join("eb.csv"));
    harness::eval_checkpoint(&ckpt, task, &[0], 4, 9, &ea).unwrap();
    harness::eval_checkpoint(&ckpt, task, &[0], 4, 9, &eb).unwrap();
    let eval_ok = fs::read(&ea).unwrap() == fs::read(&eb).unwrap();

    let bench_ok = harness::render_bench(&harness::bench(&tiny(&a)).unwrap())
        == harness::render_bench(&harness::bench(&tiny(&b)).unwrap());

    let terrain_ok = TerrainKind::ALL.iter().all(|&k| {
        let render = || {
            let mut buf = Vec::new();
            generate(k, 7, 13, 10.0).unwrap().write_profile(&mut buf).unwrap();
            buf
        };
        render() == render()
    });
    outcome(
        train_ok && eval_ok && bench_ok && terrain_ok,
        format!(
            "train ({} files): {train_ok}, eval csv: {eval_ok}, bench csv: {bench_ok}, terrain profiles: {terrain_ok}",
            ta.len()
        ),
    )
}

fn main() {
    // libtest-style flags (e.g. `--quiet` from cargo) are accepted and ignored.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(u32, bool, fn() -> Outcome); 10] = [
        (1, true, gradient_oracle),
        (2, true, gae_oracle),
        (3, true, clip_arithmetic),
        (4, true, schedule_law),
        (5, true, mixing_boundaries),
        (6, true, table_fidelity),
        (7, true, monopedal_termination),
        (8, false, directional_learning),
        (9, false, stage_chaining),
        (10, true, determinism),
    ];
    let mut hard_failures = Vec::new();
    for (n, hard, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == &n.to_string()) {
            continue;
        }
        let o = run();
        println!("{} criterion {n}: {}", if o.ok { "PASS" } else { "FAIL" }, o.detail);
        if hard && !o.ok {
            hard_failures.push(n);
        }
    }
    if !hard_failures.is_empty() {
        eprintln!("failed criteria: {hard_failures:?}");
        std::process::exit(1);
    }
}
