//! Procedural 1D terrain profiles.
//!
//! Every terrain is a sampled heightfield along the direction of travel:
//! `heights[i]` is the ground elevation at `x = i * resolution`. Each family
//! has ten difficulty levels; [`level_params`] maps a level to generator
//! parameters and [`generate`] builds a seeded profile from them.
//!
//! Layouts always start with a flat spawn platform at `x = 0` and end with a
//! goal that sits on solid ground near the far end of the profile.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_LEVEL: u8 = 9;
pub const DEFAULT_RESOLUTION: f64 = 0.05;
/// Depth of gaps and stepping-stone pits below the spawn plane.
pub const PIT_DEPTH: f64 = 1.0;
/// Minimum height jump between neighbouring cells that counts as an edge.
pub const EDGE_THRESHOLD: f64 = 0.05;
/// Height quantum of rough-ground noise.
pub const NOISE_STEP: f64 = 0.02;

const NOISE_RANGE: (f64, f64) = (0.02, 0.1);
const SLOPE_RANGE: (f64, f64) = (0.0, 0.2);
const STAIR_HEIGHT_RANGE: (f64, f64) = (0.05, 0.2);
const STAIR_WIDTH: f64 = 0.3;
const SLOPE_PLATFORM_WIDTH: f64 = 2.0;
/// Width of the platform that closes a slope-and-stairs course.
pub const STAIR_PLATFORM_WIDTH: f64 = 3.0;
const GAP_RANGE: (f64, f64) = (0.10, 0.60);
const PLATFORM_WIDTH: f64 = 1.0;
/// Run-up between the spawn platform and a wide gap, drawn per seed.
const GAP_APPROACH: (f64, f64) = (0.25, 0.75);
const STONE_GAP_JITTER: f64 = 0.2;

/// `(level, gap, stone size, stone gap)` anchor rows of the stepping-stone curriculum.
const STONE_ANCHORS: [(u8, f64, f64, f64); 3] = [
    (0, 0.10, 0.50, 0.05),
    (5, 0.35, 0.25, 0.15),
    (9, 0.60, 0.125, 0.25),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerrainKind {
    Flat,
    RoughGround,
    SlopeStairs,
    WideGap,
    SteppingStone,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 5] = [
        TerrainKind::Flat,
        TerrainKind::RoughGround,
        TerrainKind::SlopeStairs,
        TerrainKind::WideGap,
        TerrainKind::SteppingStone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainKind::Flat => "flat",
            TerrainKind::RoughGround => "rough-ground",
            TerrainKind::SlopeStairs => "slope-stairs",
            TerrainKind::WideGap => "wide-gap",
            TerrainKind::SteppingStone => "stepping-stone",
        }
    }
}

impl fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TerrainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TerrainKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::input(format!("unknown terrain kind `{s}`")))
    }
}

/// Generator parameters for one `(kind, level)` pair. Lengths are meters;
/// fields that a kind does not use are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TerrainParams {
    pub slope_grade: f64,
    pub stair_height: f64,
    pub stair_width: f64,
    pub noise_amplitude: f64,
    pub gap_width: f64,
    pub stone_size: f64,
    pub stone_gap: f64,
    pub platform_width: f64,
    pub pit_depth: f64,
}

/// Blend that returns `a` at `t = 0` and `b` at `t = 1` exactly.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a * (1.0 - t) + b * t
}

fn level_fraction(level: u8) -> f64 {
    f64::from(level) / f64::from(MAX_LEVEL)
}

fn check_level(level: u8) -> Result<()> {
    if level > MAX_LEVEL {
        return Err(Error::input(format!("level {level} outside 0..={MAX_LEVEL}")));
    }
    Ok(())
}

/// Piecewise-linear interpolation between the stepping-stone anchor rows.
fn stone_row(level: u8) -> (f64, f64, f64) {
    let seg = if level <= STONE_ANCHORS[1].0 { 0 } else { 1 };
    let (l0, g0, s0, p0) = STONE_ANCHORS[seg];
    let (l1, g1, s1, p1) = STONE_ANCHORS[seg + 1];
    let t = f64::from(level - l0) / f64::from(l1 - l0);
    (lerp(g0, g1, t), lerp(s0, s1, t), lerp(p0, p1, t))
}

/// Difficulty-level parameters for a terrain family.
pub fn level_params(kind: TerrainKind, level: u8) -> Result<TerrainParams> {
    check_level(level)?;
    let t = level_fraction(level);
    let p = match kind {
        TerrainKind::Flat => TerrainParams { platform_width: PLATFORM_WIDTH, ..Default::default() },
        TerrainKind::RoughGround => TerrainParams {
            noise_amplitude: lerp(NOISE_RANGE.0, NOISE_RANGE.1, t),
            platform_width: PLATFORM_WIDTH,
            ..Default::default()
        },
        TerrainKind::SlopeStairs => TerrainParams {
            slope_grade: lerp(SLOPE_RANGE.0, SLOPE_RANGE.1, t),
            stair_height: lerp(STAIR_HEIGHT_RANGE.0, STAIR_HEIGHT_RANGE.1, t),
            stair_width: STAIR_WIDTH,
            platform_width: SLOPE_PLATFORM_WIDTH,
            ..Default::default()
        },
        TerrainKind::WideGap => TerrainParams {
            gap_width: lerp(GAP_RANGE.0, GAP_RANGE.1, t),
            platform_width: PLATFORM_WIDTH,
            pit_depth: PIT_DEPTH,
            ..Default::default()
        },
        TerrainKind::SteppingStone => {
            let (gap, stone, stone_gap) = stone_row(level);
            TerrainParams {
                gap_width: gap,
                stone_size: stone,
                stone_gap,
                platform_width: PLATFORM_WIDTH,
                pit_depth: PIT_DEPTH,
                ..Default::default()
            }
        }
    };
    Ok(p)
}

/// A sampled, immutable terrain profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    resolution: f64,
    heights: Vec<f64>,
    extent: f64,
    goal_x: f64,
    spawn_x: f64,
    edges: Vec<usize>,
    platform_width: f64,
}

impl Heightfield {
    /// Builds a heightfield from explicit samples; edges are derived from the profile.
    pub fn from_profile(resolution: f64, heights: Vec<f64>, goal_x: f64, spawn_x: f64) -> Result<Self> {
        if !(resolution > 0.0) || heights.len() < 2 {
            return Err(Error::input("heightfield needs a positive resolution and two samples"));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(Error::input("heightfield samples must be finite"));
        }
        let extent = (heights.len() - 1) as f64 * resolution;
        if !(0.0..=extent).contains(&goal_x) || !(0.0..=extent).contains(&spawn_x) {
            return Err(Error::input("goal and spawn must lie inside the profile"));
        }
        Ok(Self::assemble(resolution, heights, extent, goal_x, spawn_x, 0.0))
    }

    fn assemble(
        resolution: f64,
        heights: Vec<f64>,
        extent: f64,
        goal_x: f64,
        spawn_x: f64,
        platform_width: f64,
    ) -> Self {
        let edges = heights
            .windows(2)
            .enumerate()
            .filter(|(_, w)| (w[1] - w[0]).abs() >= EDGE_THRESHOLD - 1e-9)
            .map(|(i, _)| i)
            .collect();
        Heightfield { resolution, heights, extent, goal_x, spawn_x, edges, platform_width }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn goal_x(&self) -> f64 {
        self.goal_x
    }

    pub fn spawn_x(&self) -> f64 {
        self.spawn_x
    }

    /// Indices `i` such that the step between samples `i` and `i + 1` is an edge.
    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn platform_width(&self) -> f64 {
        self.platform_width
    }

    fn is_edge(&self, i: usize) -> bool {
        self.edges.binary_search(&i).is_ok()
    }

    /// Ground height under `x`, clamped to the profile.
    ///
    /// Interpolates linearly between samples except across an edge, where the
    /// nearer sample wins so that stair risers stay vertical.
    pub fn height_at(&self, x: f64) -> f64 {
        let last = self.heights.len() - 1;
        let x = x.clamp(0.0, last as f64 * self.resolution);
        let f = x / self.resolution;
        let i = (f.floor() as usize).min(last - 1);
        let t = (f - i as f64).clamp(0.0, 1.0);
        let (h0, h1) = (self.heights[i], self.heights[i + 1]);
        if self.is_edge(i) {
            if t < 0.5 {
                h0
            } else {
                h1
            }
        } else {
            h0 + (h1 - h0) * t
        }
    }

    /// Horizontal distance from `x` to the closest edge face, or infinity on edge-free terrain.
    pub fn nearest_edge_distance(&self, x: f64) -> f64 {
        if self.edges.is_empty() {
            return f64::INFINITY;
        }
        let face = |i: usize| (i as f64 + 0.5) * self.resolution;
        let pos = self.edges.partition_point(|&i| face(i) < x);
        let mut best = f64::INFINITY;
        if pos < self.edges.len() {
            best = best.min((face(self.edges[pos]) - x).abs());
        }
        if pos > 0 {
            best = best.min((x - face(self.edges[pos - 1])).abs());
        }
        best
    }

    /// Checks the structural invariants every generated profile must satisfy.
    pub fn validate(&self) -> Result<()> {
        let span = self.heights.len() as f64 * self.resolution;
        if (span - self.extent).abs() > self.resolution + 1e-9 {
            return Err(Error::input(format!("{} samples do not cover extent {}", self.heights.len(), self.extent)));
        }
        if !(0.0..=self.extent).contains(&self.goal_x) {
            return Err(Error::input("goal outside profile"));
        }
        if self.height_at(self.goal_x) <= -PIT_DEPTH + 0.01 {
            return Err(Error::input("goal above a pit"));
        }
        if self.platform_width > 0.0 {
            let h0 = self.height_at(self.spawn_x);
            let n = (self.platform_width / self.resolution).round() as usize;
            let start = ((self.spawn_x - self.platform_width / 2.0) / self.resolution).round().max(0.0) as usize;
            let flat = self.heights[start..(start + n).min(self.heights.len())]
                .iter()
                .all(|&h| (h - h0).abs() < 1e-12);
            if !flat {
                return Err(Error::input("spawn platform is not flat"));
            }
        }
        Ok(())
    }

    /// Writes the plain-text profile: a header with resolution, extent, goal
    /// and spawn, then one `x height` line per sample.
    pub fn write_profile<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "# {:.6} {:.6} {:.6} {:.6}",
            self.resolution, self.extent, self.goal_x, self.spawn_x
        )?;
        for (i, h) in self.heights.iter().enumerate() {
            writeln!(out, "{:.6} {:.6}", i as f64 * self.resolution, h)?;
        }
        Ok(())
    }
}

/// Relative terrain heights at `center_x + offset` for each offset.
pub fn sample_heightmap(hf: &Heightfield, center_x: f64, offsets: &[f64]) -> Vec<f64> {
    let base = hf.height_at(center_x);
    offsets.iter().map(|o| hf.height_at(center_x + o) - base).collect()
}

/// Generates the profile for `(kind, level, seed)` at the default resolution.
pub fn generate(kind: TerrainKind, level: u8, seed: u64, extent: f64) -> Result<Heightfield> {
    generate_with_resolution(kind, level, seed, extent, DEFAULT_RESOLUTION)
}

pub fn generate_with_resolution(
    kind: TerrainKind,
    level: u8,
    seed: u64,
    extent: f64,
    resolution: f64,
) -> Result<Heightfield> {
    let params = level_params(kind, level)?;
    let pw = params.platform_width;
    if !(extent >= 2.0 * pw + 1.0) || !extent.is_finite() {
        return Err(Error::input(format!(
            "extent {extent} m too small for {kind}: need at least {} m",
            2.0 * pw + 1.0
        )));
    }
    if !(resolution > 0.0) {
        return Err(Error::input("resolution must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (extent / resolution + 1e-9).floor() as usize + 1;
    let xs = |i: usize| i as f64 * resolution;
    let spawn_x = pw / 2.0;
    let mut goal_x = extent - pw / 2.0;

    let heights: Vec<f64> = match kind {
        TerrainKind::Flat => vec![0.0; n],
        TerrainKind::RoughGround => {
            let a = params.noise_amplitude;
            let kmax = (a / NOISE_STEP + 1e-9).floor();
            (0..n)
                .map(|i| {
                    let u: f64 = rng.random_range(-1.0..=1.0);
                    if xs(i) < pw {
                        0.0
                    } else {
                        (u * a / NOISE_STEP).round().clamp(-kmax, kmax) * NOISE_STEP
                    }
                })
                .collect()
        }
        TerrainKind::SlopeStairs => {
            let middle = (extent - pw - STAIR_PLATFORM_WIDTH).max(0.0);
            let slope_end = pw + middle / 2.0;
            let steps = ((middle / 2.0) / params.stair_width + 1e-9).floor() as usize;
            let slope_top = params.slope_grade * (slope_end - pw);
            goal_x = extent - STAIR_PLATFORM_WIDTH / 2.0;
            (0..n)
                .map(|i| {
                    let x = xs(i);
                    if x < pw {
                        0.0
                    } else if x < slope_end {
                        params.slope_grade * (x - pw)
                    } else {
                        let k = (((x - slope_end) / params.stair_width).floor() as usize + 1).min(steps);
                        slope_top + k as f64 * params.stair_height
                    }
                })
                .collect()
        }
        TerrainKind::WideGap => {
            let start = pw + rng.random_range(GAP_APPROACH.0..GAP_APPROACH.1);
            let end = start + params.gap_width;
            (0..n)
                .map(|i| if (start..end).contains(&xs(i)) { -params.pit_depth } else { 0.0 })
                .collect()
        }
        TerrainKind::SteppingStone => {
            // Solid spans as [start, end) intervals; everything else is pit.
            let mut solid = vec![(f64::NEG_INFINITY, pw)];
            let mut cursor = pw + params.gap_width;
            loop {
                let end = cursor + params.stone_size;
                if end + params.gap_width + pw > extent {
                    break;
                }
                solid.push((cursor, end));
                let jitter = rng.random_range(-STONE_GAP_JITTER..=STONE_GAP_JITTER);
                cursor = end + params.stone_gap * (1.0 + jitter);
            }
            let last_end = solid.last().map(|s| s.1).unwrap_or(pw);
            solid.push((last_end + params.gap_width, f64::INFINITY));
            (0..n)
                .map(|i| {
                    let x = xs(i);
                    if solid.iter().any(|&(a, b)| x >= a && x < b) {
                        0.0
                    } else {
                        -params.pit_depth
                    }
                })
                .collect()
        }
    };

    Ok(Heightfield::assemble(resolution, heights, extent, goal_x, spawn_x, pw))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Lengths of maximal runs of samples satisfying `pred`, in meters.
    fn runs(hf: &Heightfield, pred: impl Fn(f64) -> bool) -> Vec<f64> {
        let mut out = Vec::new();
        let mut len = 0usize;
        for &h in hf.heights() {
            if pred(h) {
                len += 1;
            } else if len > 0 {
                out.push(len as f64 * hf.resolution());
                len = 0;
            }
        }
        if len > 0 {
            out.push(len as f64 * hf.resolution());
        }
        out
    }

    #[test]
    fn stepping_stone_anchor_rows() {
        let p0 = level_params(TerrainKind::SteppingStone, 0).unwrap();
        assert_eq!((p0.gap_width, p0.stone_size, p0.stone_gap), (0.10, 0.50, 0.05));
        let p5 = level_params(TerrainKind::SteppingStone, 5).unwrap();
        assert_eq!((p5.gap_width, p5.stone_size, p5.stone_gap), (0.35, 0.25, 0.15));
        let p9 = level_params(TerrainKind::SteppingStone, 9).unwrap();
        assert_eq!((p9.gap_width, p9.stone_size, p9.stone_gap), (0.60, 0.125, 0.25));
    }

    #[test]
    fn stepping_stone_level_two_interpolates() {
        // Independent oracle: 2/5 of the way from the level-0 row to the level-5 row.
        let p = level_params(TerrainKind::SteppingStone, 2).unwrap();
        let t = 2.0 / 5.0;
        assert!((p.gap_width - (0.10 + t * 0.25)).abs() < 1e-12);
        assert!((p.gap_width - 0.20).abs() < 1e-12);
        assert!((p.stone_size - 0.40).abs() < 1e-12);
        assert!((p.stone_gap - 0.09).abs() < 1e-12);
    }

    #[test]
    fn wide_gap_extremes() {
        assert!((level_params(TerrainKind::WideGap, 9).unwrap().gap_width - 0.60).abs() < 1e-12);
        assert!((level_params(TerrainKind::WideGap, 0).unwrap().gap_width - 0.10).abs() < 1e-12);
    }

    #[test]
    fn uneven_ranges() {
        let r0 = level_params(TerrainKind::RoughGround, 0).unwrap();
        let r9 = level_params(TerrainKind::RoughGround, 9).unwrap();
        assert_eq!((r0.noise_amplitude, r9.noise_amplitude), (0.02, 0.1));
        let s0 = level_params(TerrainKind::SlopeStairs, 0).unwrap();
        let s9 = level_params(TerrainKind::SlopeStairs, 9).unwrap();
        assert_eq!((s0.slope_grade, s9.slope_grade), (0.0, 0.2));
        assert_eq!((s0.stair_height, s9.stair_height), (0.05, 0.2));
        assert_eq!(s0.stair_width, 0.3);
        assert_eq!(s0.platform_width, 2.0);
    }

    #[test]
    fn unused_fields_are_zero() {
        let p = level_params(TerrainKind::WideGap, 4).unwrap();
        assert_eq!(p.stone_size, 0.0);
        assert_eq!(p.noise_amplitude, 0.0);
        assert_eq!(p.slope_grade, 0.0);
        let f = level_params(TerrainKind::Flat, 7).unwrap();
        assert_eq!(f.gap_width + f.pit_depth + f.stair_height, 0.0);
    }

    #[test]
    fn out_of_range_level_rejected() {
        assert!(matches!(level_params(TerrainKind::Flat, 10), Err(Error::InvalidInput(_))));
        assert!(generate(TerrainKind::WideGap, 12, 0, 20.0).is_err());
    }

    #[test]
    fn small_extent_rejected() {
        assert!(generate(TerrainKind::SteppingStone, 0, 0, 2.5).is_err());
        assert!(generate(TerrainKind::SteppingStone, 0, 0, 3.0).is_ok());
    }

    #[test]
    fn flat_profile() {
        let hf = generate(TerrainKind::Flat, 0, 99, 20.0).unwrap();
        assert!(hf.heights().iter().all(|&h| h == 0.0));
        assert_eq!(hf.goal_x(), 20.0 - hf.platform_width() / 2.0);
        assert_eq!(hf.height_at(3.7), 0.0);
        assert!(hf.edges().is_empty());
    }

    #[test]
    fn wide_gap_has_single_pit() {
        for seed in 0..10 {
            let hf = generate(TerrainKind::WideGap, 9, seed, 20.0).unwrap();
            let pits = runs(&hf, |h| h < -0.5);
            assert_eq!(pits.len(), 1);
            assert!((pits[0] - 0.60).abs() <= hf.resolution() + 1e-9, "pit {}", pits[0]);
            assert!(hf.heights().iter().all(|&h| h == 0.0 || h == -1.0));
        }
    }

    #[test]
    fn stepping_stone_runs_match_stone_size() {
        for seed in 0..10 {
            let hf = generate(TerrainKind::SteppingStone, 5, seed, 20.0).unwrap();
            let solid = runs(&hf, |h| h > -0.5);
            assert!(solid.len() > 3);
            // Skip the leading and trailing platforms.
            for w in &solid[1..solid.len() - 1] {
                assert!((w - 0.25).abs() <= hf.resolution() + 1e-9, "stone {w}");
            }
        }
    }

    #[test]
    fn stone_gaps_are_jittered_within_bounds() {
        let hf = generate(TerrainKind::SteppingStone, 9, 3, 20.0).unwrap();
        let pits = runs(&hf, |h| h < -0.5);
        let inner = &pits[1..pits.len() - 1];
        assert!(!inner.is_empty());
        for w in inner {
            assert!(*w >= 0.25 * 0.8 - 0.05 - 1e-9 && *w <= 0.25 * 1.2 + 0.05 + 1e-9, "{w}");
        }
    }

    #[test]
    fn height_at_clamps() {
        let hf = generate(TerrainKind::SlopeStairs, 5, 1, 20.0).unwrap();
        assert_eq!(hf.height_at(-5.0), hf.height_at(0.0));
        assert_eq!(hf.height_at(1e6), *hf.heights().last().unwrap());
    }

    #[test]
    fn stair_treads_are_level() {
        // Three 0.3 m treads of 0.1 m rise after a 0.5 m landing.
        let res = 0.05;
        let heights: Vec<f64> = (0..=40)
            .map(|i| {
                let x = i as f64 * res;
                if x < 0.5 - 1e-9 {
                    0.0
                } else {
                    (((x - 0.5) / 0.3 + 1e-9).floor() + 1.0).min(3.0) * 0.1
                }
            })
            .collect();
        let hf = Heightfield::from_profile(res, heights, 1.9, 0.2).unwrap();
        for k in 1..=3 {
            let mid = 0.5 + (k as f64 - 0.5) * 0.3;
            assert!((hf.height_at(mid) - k as f64 * 0.1).abs() < 1e-12, "step {k}");
        }
        assert_eq!(hf.edges().len(), 3);
        // Riser stays vertical: no intermediate heights around the face.
        let face = (hf.edges()[0] as f64 + 0.5) * res;
        assert_eq!(hf.height_at(face - 1e-6), 0.0);
        assert!((hf.height_at(face + 1e-6) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn heightmap_relative_samples() {
        let flat = generate(TerrainKind::Flat, 0, 0, 10.0).unwrap();
        let offsets: Vec<f64> = (0..16).map(|i| -0.4 + 0.05 * i as f64).collect();
        assert!(sample_heightmap(&flat, 4.2, &offsets).iter().all(|&h| h == 0.0));

        let gap = generate(TerrainKind::WideGap, 9, 4, 10.0).unwrap();
        assert_eq!(sample_heightmap(&gap, 1.3, &[0.0]), vec![0.0]);
        let first_pit = gap.heights().iter().position(|&h| h < -0.5).unwrap();
        let rim = (first_pit as f64 - 1.0) * gap.resolution();
        let into = sample_heightmap(&gap, rim, &[0.3]);
        assert_eq!(into, vec![-PIT_DEPTH]);
    }

    #[test]
    fn edge_distance() {
        let hf = generate(TerrainKind::WideGap, 0, 0, 10.0).unwrap();
        assert_eq!(hf.edges().len(), 2);
        let face = (hf.edges()[0] as f64 + 0.5) * hf.resolution();
        assert!((hf.nearest_edge_distance(face - 0.2) - 0.2).abs() < 1e-12);
        let flat = generate(TerrainKind::Flat, 0, 0, 10.0).unwrap();
        assert!(flat.nearest_edge_distance(2.0).is_infinite());
    }

    #[test]
    fn profile_text_format() {
        let hf = generate(TerrainKind::Flat, 0, 0, 3.0).unwrap();
        let mut buf = Vec::new();
        hf.write_profile(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# 0.050000 3.000000 2.500000 0.500000"));
        assert_eq!(lines.next(), Some("0.000000 0.000000"));
        assert_eq!(text.lines().count(), 1 + hf.heights().len());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in TerrainKind::ALL {
            assert_eq!(k.name().parse::<TerrainKind>().unwrap(), k);
        }
        assert!("lava".parse::<TerrainKind>().is_err());
    }
}
