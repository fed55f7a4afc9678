//! Actor-critic networks with hand-written backward passes.
//!
//! Both networks are plain MLPs with ELU hidden activations and a linear
//! output. The actor parameterizes a diagonal Gaussian whose log standard
//! deviation is a free, state-independent vector. Parameters live in `f64`
//! but are rounded to the nearest `f32` after every update so checkpoints
//! (stored as `f32`) round-trip exactly.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hopper::{ObsMode, ObsSpec};

pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 1.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

const MAGIC: &[u8; 4] = b"JMPR";
const FORMAT_VERSION: u32 = 1;

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Fully connected layer, weights row-major `[n_out][n_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense { n_in, n_out, w: vec![0.0; n_in * n_out], b: vec![0.0; n_out] }
    }

    /// Orthogonal rows (or columns) scaled by `gain`, zero bias.
    fn orthogonal<R: Rng>(n_in: usize, n_out: usize, gain: f64, rng: &mut R) -> Self {
        let (rows, cols) = if n_out >= n_in { (n_out, n_in) } else { (n_in, n_out) };
        let a = DMatrix::<f64>::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
        let qr = a.qr();
        let (q, r) = (qr.q(), qr.r());
        let mut q = q.columns(0, cols).into_owned();
        for c in 0..cols {
            if r[(c, c)] < 0.0 {
                q.column_mut(c).neg_mut();
            }
        }
        let mut w = vec![0.0; n_in * n_out];
        for o in 0..n_out {
            for i in 0..n_in {
                let v = if n_out >= n_in { q[(o, i)] } else { q[(i, o)] };
                w[o * n_in + i] = gain * v;
            }
        }
        Dense { n_in, n_out, w, b: vec![0.0; n_out] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Multilayer perceptron: ELU between layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations saved by [`Mlp::forward_tape`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp { layers: sizes.windows(2).map(|p| Dense::zeros(p[0], p[1])).collect() }
    }

    pub fn orthogonal<R: Rng>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let gain = if k + 1 == n { output_gain } else { 1.0 };
                Dense::orthogonal(sizes[k], sizes[k + 1], gain, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.n_in)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.in_dim()];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::input(format!("network expects {} inputs, got {}", self.in_dim(), x.len())));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        let mut out = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&h, &mut out);
            if k != last {
                out.iter_mut().for_each(|v| *v = elu(*v));
            }
            std::mem::swap(&mut h, &mut out);
        }
        Ok(h)
    }

    pub fn forward_tape(&self, x: &[f64]) -> Result<Tape> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.apply(&h, &mut z);
            let next = if k != last { z.iter().map(|v| elu(*v)).collect() } else { Vec::new() };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        Ok(Tape { inputs, pre })
    }

    /// Accumulates dL/dparams into `grad` given dL/doutput; returns dL/dinput.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let g = &mut grad.layers[k];
            let x = &tape.inputs[k];
            for o in 0..layer.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.b[o] += d;
                let row = &mut g.w[o * layer.n_in..(o + 1) * layer.n_in];
                for (gi, xi) in row.iter_mut().zip(x) {
                    *gi += d * xi;
                }
            }
            let mut d_in = vec![0.0; layer.n_in];
            for o in 0..layer.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                for (di, wi) in d_in.iter_mut().zip(row) {
                    *di += d * wi;
                }
            }
            if k > 0 {
                for (di, z) in d_in.iter_mut().zip(&tape.pre[k - 1]) {
                    *di *= elu_grad(*z);
                }
            }
            delta = d_in;
        }
        delta
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
    }
}

/// Diagonal Gaussian over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianDist {
    pub fn log_prob(&self, action: &[f64]) -> f64 {
        let mut lp = 0.0;
        for ((a, mu), ls) in action.iter().zip(&self.mean).zip(&self.log_std) {
            let z = (a - mu) / ls.exp();
            lp += -0.5 * z * z - ls - HALF_LN_2PI;
        }
        lp
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| 0.5 + HALF_LN_2PI + ls).sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let action: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.log_std)
            .map(|(mu, ls)| {
                let eps: f64 = rng.sample(StandardNormal);
                mu + ls.exp() * eps
            })
            .collect();
        let lp = self.log_prob(&action);
        (action, lp)
    }

    /// Gradient of `log_prob(action)` with respect to mean and log_std.
    pub fn log_prob_grad(&self, action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut d_mean = Vec::with_capacity(self.mean.len());
        let mut d_log_std = Vec::with_capacity(self.mean.len());
        for ((a, mu), ls) in action.iter().zip(&self.mean).zip(&self.log_std) {
            let var = (2.0 * ls).exp();
            let diff = a - mu;
            d_mean.push(diff / var);
            d_log_std.push(diff * diff / var - 1.0);
        }
        (d_mean, d_log_std)
    }
}

/// Actor, state-independent log-std, and critic.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    /// Curriculum stage the policy was trained for (0 for untrained).
    pub stage: u32,
    pub spec: ObsSpec,
    pub actor: Mlp,
    pub log_std: Vec<f64>,
    pub critic: Mlp,
}

impl PolicyParams {
    /// Fresh policy with orthogonal weights; hidden sizes shared by both nets.
    pub fn new(spec: &ObsSpec, act_dim: usize, hidden: &[usize], init_log_std: f64, seed: u64) -> Result<Self> {
        spec.validate()?;
        if act_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::config("network needs a nonzero action dim and hidden sizes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![spec.total_dim];
        sizes.extend_from_slice(hidden);
        let mut actor_sizes = sizes.clone();
        actor_sizes.push(act_dim);
        sizes.push(1);
        let actor = Mlp::orthogonal(&actor_sizes, 0.01, &mut rng);
        let critic = Mlp::orthogonal(&sizes, 1.0, &mut rng);
        let mut p = PolicyParams {
            stage: 0,
            spec: spec.clone(),
            actor,
            log_std: vec![init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); act_dim],
            critic,
        };
        p.quantize();
        Ok(p)
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.total_dim
    }

    pub fn dist(&self, obs: &[f64]) -> Result<GaussianDist> {
        Ok(GaussianDist { mean: self.actor.forward(obs)?, log_std: self.log_std.clone() })
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(obs)?[0])
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        PolicyParams {
            stage: self.stage,
            spec: self.spec.clone(),
            actor: Mlp::zeros(&self.actor.sizes()),
            log_std: vec![0.0; self.log_std.len()],
            critic: Mlp::zeros(&self.critic.sizes()),
        }
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.actor.slices().chain(std::iter::once(self.log_std.as_slice())).chain(self.critic.slices())
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.actor
            .slices_mut()
            .chain(std::iter::once(self.log_std.as_mut_slice()))
            .chain(self.critic.slices_mut())
    }

    pub fn num_params(&self) -> usize {
        self.slices().map(<[f64]>::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().flatten().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().flatten().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.slices().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.slices_mut().flatten().for_each(|v| *v *= k);
    }

    pub fn add_assign(&mut self, other: &PolicyParams) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Rounds to `f32` precision and clamps log_std.
    pub fn quantize(&mut self) {
        self.slices_mut().flatten().for_each(|v| *v = round_f32(*v));
        for ls in &mut self.log_std {
            *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// FNV-1a over the parameter bit patterns and shape.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for s in self.actor.sizes().iter().chain(&self.critic.sizes()) {
            eat(&(*s as u64).to_le_bytes());
        }
        for v in self.slices().flatten() {
            eat(&v.to_bits().to_le_bytes());
        }
        h
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptState {
    pub fn new(params: &PolicyParams, lr: f64) -> Self {
        let n = params.num_params();
        OptState { m: vec![0.0; n], v: vec![0.0; n], step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One update; parameters are re-quantized afterwards.
    pub fn apply(&mut self, params: &mut PolicyParams, grads: &PolicyParams) -> Result<()> {
        if self.m.len() != params.num_params() || grads.num_params() != self.m.len() {
            return Err(Error::input("optimizer state does not match parameter shapes"));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut k = 0;
        for (p, g) in params.slices_mut().zip(grads.slices()) {
            for (pi, gi) in p.iter_mut().zip(g) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                *pi -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                k += 1;
            }
        }
        params.quantize();
        Ok(())
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn put_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Checkpoint(format!("truncated: {e}")))?;
    Ok(b)
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(get_array(r)?))
}

fn get_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| Ok(f32::from_le_bytes(get_array(r)?) as f64)).collect()
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| Ok(f64::from_le_bytes(get_array(r)?))).collect()
}

fn put_mlp<W: Write>(w: &mut W, mlp: &Mlp) -> Result<()> {
    put_u32(w, mlp.layers.len() as u32)?;
    for l in &mlp.layers {
        put_u32(w, l.n_in as u32)?;
        put_u32(w, l.n_out as u32)?;
        put_f32s(w, &l.w)?;
        put_f32s(w, &l.b)?;
    }
    Ok(())
}

const MAX_WIDTH: u32 = 1 << 16;

fn get_mlp<R: Read>(r: &mut R) -> Result<Mlp> {
    let n = get_u32(r)?;
    if n == 0 || n > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {n}")));
    }
    let mut layers = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let (n_in, n_out) = (get_u32(r)?, get_u32(r)?);
        if n_in == 0 || n_out == 0 || n_in > MAX_WIDTH || n_out > MAX_WIDTH {
            return Err(Error::Checkpoint(format!("implausible layer shape {n_in}x{n_out}")));
        }
        let (n_in, n_out) = (n_in as usize, n_out as usize);
        if let Some(prev) = layers.last().map(|l: &Dense| l.n_out) {
            if prev != n_in {
                return Err(Error::Checkpoint("layer shapes do not chain".into()));
            }
        }
        let w = get_f32s(r, n_in * n_out)?;
        let b = get_f32s(r, n_out)?;
        layers.push(Dense { n_in, n_out, w, b });
    }
    Ok(Mlp { layers })
}

/// Writes a checkpoint; the optimizer section is optional.
pub fn save_checkpoint<W: Write>(w: &mut W, params: &PolicyParams, opt: Option<&OptState>) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u32(w, params.stage)?;
    let spec = &params.spec;
    put_u32(
        w,
        match spec.mode {
            ObsMode::Proprio => 0,
            ObsMode::TerrainAware => 1,
        },
    )?;
    put_u32(w, spec.proprio_dim as u32)?;
    put_u32(w, spec.heightmap_offsets_body.len() as u32)?;
    put_u32(w, spec.heightmap_offsets_foot.len() as u32)?;
    put_u32(w, spec.total_dim as u32)?;
    put_u32(w, params.act_dim() as u32)?;
    put_mlp(w, &params.actor)?;
    put_f32s(w, &params.log_std)?;
    put_mlp(w, &params.critic)?;
    match opt {
        None => put_u32(w, 0)?,
        Some(o) => {
            put_u32(w, 1)?;
            w.write_all(&o.step.to_le_bytes())?;
            put_f64s(w, &[o.lr, o.beta1, o.beta2, o.eps])?;
            put_u32(w, o.m.len() as u32)?;
            put_f64s(w, &o.m)?;
            put_f64s(w, &o.v)?;
        }
    }
    Ok(())
}

pub fn load_checkpoint<R: Read>(r: &mut R) -> Result<(PolicyParams, Option<OptState>)> {
    let magic: [u8; 4] = get_array(r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let stage = get_u32(r)?;
    let mode = match get_u32(r)? {
        0 => ObsMode::Proprio,
        1 => ObsMode::TerrainAware,
        t => return Err(Error::Checkpoint(format!("unknown observation mode tag {t}"))),
    };
    let dims = [get_u32(r)?, get_u32(r)?, get_u32(r)?, get_u32(r)?].map(|d| d as usize);
    let spec = ObsSpec::for_mode(mode);
    if dims
        != [spec.proprio_dim, spec.heightmap_offsets_body.len(), spec.heightmap_offsets_foot.len(), spec.total_dim]
    {
        return Err(Error::Checkpoint(format!("observation dims {dims:?} do not match the {mode:?} layout")));
    }
    let act_dim = get_u32(r)? as usize;
    let actor = get_mlp(r)?;
    let log_std = get_f32s(r, act_dim)?;
    let critic = get_mlp(r)?;
    if actor.in_dim() != spec.total_dim || critic.in_dim() != spec.total_dim {
        return Err(Error::Checkpoint("network input width differs from observation dim".into()));
    }
    if actor.out_dim() != act_dim || critic.out_dim() != 1 {
        return Err(Error::Checkpoint("network output widths are inconsistent".into()));
    }
    let params = PolicyParams { stage, spec, actor, log_std, critic };
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    let opt = match get_u32(r)? {
        0 => None,
        1 => {
            let step = u64::from_le_bytes(get_array(r)?);
            let h = get_f64s(r, 4)?;
            let n = get_u32(r)? as usize;
            if n != params.num_params() {
                return Err(Error::Checkpoint("optimizer moments do not match parameter count".into()));
            }
            let m = get_f64s(r, n)?;
            let v = get_f64s(r, n)?;
            Some(OptState { m, v, step, lr: h[0], beta1: h[1], beta2: h[2], eps: h[3] })
        }
        t => return Err(Error::Checkpoint(format!("unknown optimizer section tag {t}"))),
    };
    Ok((params, opt))
}
