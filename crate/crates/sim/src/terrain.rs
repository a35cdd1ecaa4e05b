//! Procedural heightfields and the walked-distance curriculum.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};
use crate::spatial::V3;

pub const MAX_LEVEL: u32 = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TerrainKind {
    Flat,
    RandomRough,
    Boxes,
    PyramidSlope,
    Thresholds,
    Stairs,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 6] = [
        TerrainKind::Flat,
        TerrainKind::RandomRough,
        TerrainKind::Boxes,
        TerrainKind::PyramidSlope,
        TerrainKind::Thresholds,
        TerrainKind::Stairs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainKind::Flat => "flat",
            TerrainKind::RandomRough => "random-rough",
            TerrainKind::Boxes => "boxes",
            TerrainKind::PyramidSlope => "pyramid-slope",
            TerrainKind::Thresholds => "thresholds",
            TerrainKind::Stairs => "stairs",
        }
    }
}

impl fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TerrainKind {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        TerrainKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| SimError::UnknownTerrain(s.to_string()))
    }
}

/// Difficulty scalings at `MAX_LEVEL`; every amplitude grows linearly from 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TerrainSpec {
    pub resolution: f64,
    pub size: f64,
    pub rough_max: f64,
    pub slope_max_deg: f64,
    pub step_max: f64,
    pub box_max: f64,
    pub tread: f64,
    /// Side of the flat spawn platform at the tile centre.
    pub platform: f64,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            size: 8.0,
            rough_max: 0.06,
            slope_max_deg: 20.0,
            step_max: 0.12,
            box_max: 0.10,
            tread: 0.3,
            platform: 1.0,
        }
    }
}

/// Square grid of `n × n` nodes centred on the world origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Heightfield {
    pub resolution: f64,
    pub n: usize,
    pub heights: Vec<f64>,
    pub friction: Vec<f64>,
}

impl Heightfield {
    pub fn from_fn(resolution: f64, n: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let origin = -0.5 * resolution * (n - 1) as f64;
        let mut heights = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                heights.push(f(origin + i as f64 * resolution, origin + j as f64 * resolution));
            }
        }
        Self { resolution, n, heights, friction: vec![1.0; n * n] }
    }

    pub fn flat(spec: &TerrainSpec) -> Self {
        let n = nodes(spec);
        Self { resolution: spec.resolution, n, heights: vec![0.0; n * n], friction: vec![1.0; n * n] }
    }

    fn origin(&self) -> f64 {
        -0.5 * self.resolution * (self.n - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.n + i]
    }

    fn cell(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let max = (self.n - 1) as f64;
        let fx = ((x - self.origin()) / self.resolution).clamp(0.0, max);
        let fy = ((y - self.origin()) / self.resolution).clamp(0.0, max);
        let i = (fx.floor() as usize).min(self.n - 2);
        let j = (fy.floor() as usize).min(self.n - 2);
        (i, j, fx - i as f64, fy - j as f64)
    }

    /// Bilinear height and the unit normal of the interpolant; queries
    /// outside the grid are clamped to the border.
    pub fn height_at(&self, x: f64, y: f64) -> (f64, V3) {
        let (i, j, tx, ty) = self.cell(x, y);
        let h00 = self.node(i, j);
        let h10 = self.node(i + 1, j);
        let h01 = self.node(i, j + 1);
        let h11 = self.node(i + 1, j + 1);
        let z = (1.0 - tx) * (1.0 - ty) * h00 + tx * (1.0 - ty) * h10 + (1.0 - tx) * ty * h01 + tx * ty * h11;
        let dx = ((1.0 - ty) * (h10 - h00) + ty * (h11 - h01)) / self.resolution;
        let dy = ((1.0 - tx) * (h01 - h00) + tx * (h11 - h10)) / self.resolution;
        (z, V3::new(-dx, -dy, 1.0).normalize())
    }

    pub fn friction_at(&self, x: f64, y: f64) -> f64 {
        let (i, j, tx, ty) = self.cell(x, y);
        let i = if tx >= 0.5 { i + 1 } else { i };
        let j = if ty >= 0.5 { j + 1 } else { j };
        self.friction[j * self.n + i]
    }
}

fn nodes(spec: &TerrainSpec) -> usize {
    (spec.size / spec.resolution).round() as usize + 1
}

/// Pure function of `(kind, level, seed)` under the default `TerrainSpec`.
pub fn generate(kind: TerrainKind, level: u32, seed: u64) -> Result<Heightfield> {
    generate_with(&TerrainSpec::default(), kind, level, seed)
}

pub fn generate_with(spec: &TerrainSpec, kind: TerrainKind, level: u32, seed: u64) -> Result<Heightfield> {
    if level > MAX_LEVEL {
        return Err(SimError::BadLevel(level, MAX_LEVEL));
    }
    let frac = level as f64 / MAX_LEVEL as f64;
    let mut hf = Heightfield::flat(spec);
    let n = hf.n;
    let c = (n - 1) / 2;
    let res = spec.resolution;
    // Chebyshev distance of a node from the centre, in cells.
    let ring = |i: usize, j: usize| i.abs_diff(c).max(j.abs_diff(c));
    let platform_cells = (0.5 * spec.platform / res).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((kind as u64) << 56) ^ ((level as u64) << 48));
    match kind {
        TerrainKind::Flat => {}
        TerrainKind::RandomRough => {
            let a = spec.rough_max * frac;
            for j in 0..n {
                for i in 0..n {
                    let u: f64 = rng.random();
                    if ring(i, j) > platform_cells && a > 0.0 {
                        hf.heights[j * n + i] = a * (2.0 * u - 1.0);
                    }
                }
            }
        }
        TerrainKind::Boxes => {
            let hmax = spec.box_max * frac;
            let block = (0.5 / res).round() as usize;
            let nb = n.div_ceil(block);
            let tops: Vec<f64> = (0..nb * nb).map(|_| hmax * rng.random::<f64>()).collect();
            for j in 0..n {
                for i in 0..n {
                    if ring(i, j) > platform_cells {
                        hf.heights[j * n + i] = tops[(j / block) * nb + i / block];
                    }
                }
            }
        }
        TerrainKind::PyramidSlope => {
            let grad = (spec.slope_max_deg * frac).to_radians().tan();
            for j in 0..n {
                for i in 0..n {
                    let inward = c - ring(i, j).max(platform_cells);
                    hf.heights[j * n + i] = grad * inward as f64 * res;
                }
            }
        }
        TerrainKind::Thresholds => {
            let h = spec.box_max * frac;
            let spacing = (1.0 / res).round() as usize;
            let width = (0.1 / res).round() as usize;
            for j in 0..n {
                for i in 0..n {
                    let r = ring(i, j);
                    if r > platform_cells && (r - platform_cells) % spacing < width {
                        hf.heights[j * n + i] = h;
                    }
                }
            }
        }
        TerrainKind::Stairs => {
            let step = spec.step_max * frac;
            let tread = (spec.tread / res).round() as usize;
            for j in 0..n {
                for i in 0..n {
                    let inward = c - ring(i, j).max(platform_cells);
                    hf.heights[j * n + i] = step * (inward / tread) as f64;
                }
            }
        }
    }
    Ok(hf)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumRule {
    pub promote: f64,
    pub demote: f64,
    pub max_level: u32,
}

impl Default for CurriculumRule {
    fn default() -> Self {
        Self { promote: 0.8, demote: 0.4, max_level: MAX_LEVEL }
    }
}

/// Next level after an episode that covered `walked` of `commanded` metres.
pub fn curriculum_update(level: u32, walked: f64, commanded: f64, rule: &CurriculumRule) -> u32 {
    let next = if walked >= rule.promote * commanded {
        level + 1
    } else if walked < rule.demote * commanded {
        level.saturating_sub(1)
    } else {
        level
    };
    next.min(rule.max_level)
}

/// Per-environment terrain assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumState {
    pub levels: Vec<u32>,
    pub kinds: Vec<TerrainKind>,
    pub walked: Vec<f64>,
    pub rule: CurriculumRule,
}

impl CurriculumState {
    /// Kinds are dealt round-robin from `mix`; every env starts at level 0.
    pub fn new(n_env: usize, mix: &[TerrainKind], rule: CurriculumRule) -> Self {
        let kinds = (0..n_env).map(|e| mix[e % mix.len()]).collect();
        Self { levels: vec![0; n_env], kinds, walked: vec![0.0; n_env], rule }
    }

    pub fn update(&mut self, env: usize, walked: f64, commanded: f64) {
        self.levels[env] = curriculum_update(self.levels[env], walked, commanded, &self.rule);
        self.walked[env] = walked;
    }

    pub fn mean_level(&self) -> f64 {
        self.levels.iter().map(|&l| l as f64).sum::<f64>() / self.levels.len().max(1) as f64
    }
}
