//! Seeded synthetic test content: sphere shells colored by Perlin noise.

use noise::{NoiseFn, Perlin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{round_clamp_u8, VoxelCloud};
use crate::error::{Error, Result};
use crate::octree::MAX_DEPTH;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellParams {
    pub depth: u32,
    /// Shell radius as a fraction of half the grid side.
    pub radius: f64,
    /// Shell thickness in voxels.
    pub thickness: f64,
    /// Spatial frequency of the color field, in cycles per grid side.
    pub frequency: f64,
    /// Peak deviation of each channel from its base value.
    pub amplitude: f64,
    /// Standard deviation-like scale of i.i.d. per-voxel color noise.
    pub grain: f64,
    pub seed: u64,
}

impl Default for ShellParams {
    fn default() -> Self {
        Self {
            depth: 7,
            radius: 0.8,
            thickness: 1.5,
            frequency: 2.0,
            amplitude: 60.0,
            grain: 0.0,
            seed: 0,
        }
    }
}

impl ShellParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Smooth YCbCr field built from three independent Perlin generators.
struct ColorField {
    noise: [Perlin; 3],
    scale: f64,
    amplitude: f64,
}

impl ColorField {
    fn new(seed: u64, side: f64, frequency: f64, amplitude: f64) -> Self {
        let s = (seed as u32).wrapping_mul(3);
        Self {
            noise: [
                Perlin::new(s),
                Perlin::new(s.wrapping_add(1)),
                Perlin::new(s.wrapping_add(2)),
            ],
            scale: frequency / side,
            amplitude,
        }
    }

    fn sample(&self, p: [f64; 3], t: f64) -> [f64; 3] {
        const BASE: [f64; 3] = [128.0, 128.0, 128.0];
        let q = [
            p[0] * self.scale + t,
            p[1] * self.scale,
            p[2] * self.scale - 0.5 * t,
        ];
        [0, 1, 2].map(|ch| {
            let gain = if ch == 0 { 1.0 } else { 0.5 };
            BASE[ch] + gain * self.amplitude * self.noise[ch].get(q)
        })
    }
}

fn check_depth(depth: u32) -> Result<()> {
    if !(1..=MAX_DEPTH).contains(&depth) || depth > 12 {
        return Err(Error::InvalidDepth(depth));
    }
    Ok(())
}

/// Voxels within `thickness / 2` of a sphere centered in the grid.
pub fn shell_voxels(
    depth: u32,
    radius: f64,
    thickness: f64,
    center_offset: [f64; 3],
) -> Vec<[u32; 3]> {
    let side = f64::from(1u32 << depth);
    let c = center_offset.map(|o| side / 2.0 + o);
    let r = radius * side / 2.0;
    let (r_in, r_out) = ((r - thickness / 2.0).max(0.0), r + thickness / 2.0);
    let max = (1u32 << depth) - 1;
    let mut out = Vec::new();
    for x in 0..=max {
        let dx = f64::from(x) + 0.5 - c[0];
        for y in 0..=max {
            let dy = f64::from(y) + 0.5 - c[1];
            let rr = dx * dx + dy * dy;
            if rr > r_out * r_out {
                continue;
            }
            let hi = (r_out * r_out - rr).sqrt();
            let z0 = (c[2] - hi - 0.5).floor().max(0.0) as u32;
            let z1 = ((c[2] + hi - 0.5).ceil().max(0.0) as u32).min(max);
            for z in z0..=z1 {
                let dz = f64::from(z) + 0.5 - c[2];
                let d2 = rr + dz * dz;
                if d2 >= r_in * r_in && d2 <= r_out * r_out {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

fn colorize(
    voxels: &[[u32; 3]],
    field: &ColorField,
    t: f64,
    grain: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<[u8; 3]> {
    voxels
        .iter()
        .map(|v| {
            let c = field.sample(v.map(f64::from), t);
            c.map(|x| {
                let g = if grain > 0.0 {
                    rng.gen_range(-grain..=grain)
                } else {
                    0.0
                };
                round_clamp_u8(x + g)
            })
        })
        .collect()
}

pub fn sphere_shell(p: &ShellParams) -> Result<VoxelCloud> {
    sphere_shell_frame(p, 0, 0.0)
}

/// Frame `index` of a slowly evolving shell; `motion` is the color field
/// drift per frame in noise-space units.
pub fn sphere_shell_frame(p: &ShellParams, index: u32, motion: f64) -> Result<VoxelCloud> {
    check_depth(p.depth)?;
    let side = f64::from(1u32 << p.depth);
    let voxels = shell_voxels(p.depth, p.radius, p.thickness, [0.0; 3]);
    if voxels.is_empty() {
        return Err(Error::EmptyAfterVoxelize);
    }
    let field = ColorField::new(p.seed, side, p.frequency, p.amplitude);
    let mut rng =
        ChaCha8Rng::seed_from_u64(p.seed ^ u64::from(index).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let attrs = colorize(
        &voxels,
        &field,
        f64::from(index) * motion,
        p.grain,
        &mut rng,
    );
    VoxelCloud::new(p.depth, voxels, attrs)
}

pub fn shell_sequence(p: &ShellParams, frames: u32, motion: f64) -> Result<Vec<VoxelCloud>> {
    (0..frames)
        .map(|i| sphere_shell_frame(p, i, motion))
        .collect()
}

/// A thick, gently curved sheet spanning the grid with a smooth color
/// gradient: dense content where deep layers carry most coefficients.
pub fn dense_gradient(depth: u32, seed: u64) -> Result<VoxelCloud> {
    check_depth(depth)?;
    let side = 1u32 << depth;
    let s = f64::from(side);
    let field = ColorField::new(seed, s, 1.0, 20.0);
    let mut voxels = Vec::new();
    let mut attrs = Vec::new();
    for x in 0..side {
        for y in 0..side {
            let (u, v) = (f64::from(x) / s, f64::from(y) / s);
            let h = s * (0.4 + 0.1 * (u * 3.0).sin() * (v * 2.0).cos());
            let z0 = h.floor() as u32;
            for z in z0..(z0 + 3).min(side) {
                voxels.push([x, y, z]);
                let n = field.sample([f64::from(x), f64::from(y), f64::from(z)], 0.0);
                attrs.push([
                    round_clamp_u8(40.0 + 170.0 * u + n[0] * 0.2),
                    round_clamp_u8(100.0 + 50.0 * v),
                    round_clamp_u8(150.0 - 40.0 * u + 20.0 * v),
                ]);
            }
        }
    }
    VoxelCloud::new(depth, voxels, attrs)
}

/// Uniformly random distinct voxels with random colors.
pub fn random_cloud(rng: &mut impl Rng, points: usize, depth: u32) -> Result<VoxelCloud> {
    check_depth(depth)?;
    let side = 1u64 << depth;
    let cap = side.pow(3);
    if points == 0 || points as u64 > cap {
        return Err(Error::InvalidCloud(format!(
            "{points} points in a {side}^3 grid"
        )));
    }
    let mut seen = std::collections::HashSet::with_capacity(points);
    let mut voxels = Vec::with_capacity(points);
    while voxels.len() < points {
        let v = [0; 3].map(|_| rng.gen_range(0..side) as u32);
        if seen.insert(v) {
            voxels.push(v);
        }
    }
    let attrs = (0..points).map(|_| rng.gen()).collect();
    VoxelCloud::new(depth, voxels, attrs)
}
