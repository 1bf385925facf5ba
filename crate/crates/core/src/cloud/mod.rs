//! Point-cloud containers, PLY I/O, color conversion and voxelization.

mod color;
mod ply;

use std::collections::BTreeMap;

pub(crate) use color::round_clamp_u8;
pub use color::{rgb_to_ycbcr, ycbcr_to_rgb, ColorSpace, RGB_TO_YCBCR, YCBCR_TO_RGB};
pub use ply::{parse_ply, write_ply, write_ply_binary};

use crate::error::{Error, Result};
use crate::octree::{morton_encode, MortonKey, MAX_DEPTH};

/// Points as read from disk: real coordinates and 8-bit colors.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCloud {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[u8; 3]>,
    /// Color space of `colors`. PLY files are RGB unless tagged otherwise.
    pub colorspace: ColorSpace,
}

impl RawCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.colors.len() {
            return Err(Error::InvalidCloud(format!(
                "{} positions but {} colors",
                self.positions.len(),
                self.colors.len()
            )));
        }
        if self.positions.is_empty() {
            return Err(Error::InvalidCloud("no points".into()));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCloud("non-finite coordinate".into()));
        }
        Ok(())
    }
}

/// Deduplicated voxels at a fixed bit depth with YCbCr attributes, sorted by
/// Morton key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelCloud {
    depth: u32,
    voxels: Vec<[u32; 3]>,
    attrs: Vec<[u8; 3]>,
}

impl VoxelCloud {
    /// Build a canonical cloud. Voxels are sorted into Morton order; duplicates
    /// are rejected.
    pub fn new(depth: u32, voxels: Vec<[u32; 3]>, attrs: Vec<[u8; 3]>) -> Result<Self> {
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(Error::InvalidDepth(depth));
        }
        if voxels.len() != attrs.len() {
            return Err(Error::LengthMismatch(voxels.len(), attrs.len()));
        }
        if voxels.is_empty() {
            return Err(Error::InvalidCloud("no voxels".into()));
        }
        let mut keyed = voxels
            .into_iter()
            .zip(attrs)
            .map(|(v, a)| Ok((morton_encode(v[0], v[1], v[2], depth)?, v, a)))
            .collect::<Result<Vec<_>>>()?;
        keyed.sort_unstable_by_key(|e| e.0);
        if let Some(w) = keyed.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidCloud(format!("duplicate voxel {:?}", w[0].1)));
        }
        Ok(Self {
            depth,
            voxels: keyed.iter().map(|e| e.1).collect(),
            attrs: keyed.iter().map(|e| e.2).collect(),
        })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn voxels(&self) -> &[[u32; 3]] {
        &self.voxels
    }

    pub fn attrs(&self) -> &[[u8; 3]] {
        &self.attrs
    }

    pub fn morton_keys(&self) -> Vec<MortonKey> {
        self.voxels
            .iter()
            .map(|v| MortonKey::from_coords(*v))
            .collect()
    }

    /// Same geometry, new attributes (aligned with [`VoxelCloud::voxels`]).
    pub fn with_attrs(&self, attrs: Vec<[u8; 3]>) -> Result<Self> {
        if attrs.len() != self.voxels.len() {
            return Err(Error::LengthMismatch(self.voxels.len(), attrs.len()));
        }
        Ok(Self {
            depth: self.depth,
            voxels: self.voxels.clone(),
            attrs,
        })
    }

    /// Back to a raw cloud with integer coordinates, in the requested color
    /// space.
    pub fn to_raw(&self, colorspace: ColorSpace) -> RawCloud {
        RawCloud {
            positions: self.voxels.iter().map(|v| v.map(f64::from)).collect(),
            colors: match colorspace {
                ColorSpace::YCbCr => self.attrs.clone(),
                ColorSpace::Rgb => self.attrs.iter().map(|a| ycbcr_to_rgb(*a)).collect(),
            },
            colorspace,
        }
    }
}

/// Quantize positions onto a `2^depth` grid and merge duplicates.
///
/// Positions are multiplied by `scale`, floored and clamped into the grid.
/// RGB inputs are converted to YCbCr per point before merging; each merged
/// voxel takes the rounded per-channel mean of its contributors.
pub fn voxelize(raw: &RawCloud, depth: u32, scale: f64) -> Result<VoxelCloud> {
    if !(1..=MAX_DEPTH).contains(&depth) {
        return Err(Error::InvalidDepth(depth));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidCloud(format!(
            "scale must be positive, got {scale}"
        )));
    }
    raw.validate()?;
    let max = f64::from((1u32 << depth) - 1);
    let mut merged: BTreeMap<u64, ([u32; 3], [u64; 3], u64)> = BTreeMap::new();
    for (p, c) in raw.positions.iter().zip(&raw.colors) {
        let v = p.map(|x| (x * scale).floor().clamp(0.0, max) as u32);
        let attr = match raw.colorspace {
            ColorSpace::Rgb => rgb_to_ycbcr(*c),
            ColorSpace::YCbCr => *c,
        };
        let key = morton_encode(v[0], v[1], v[2], depth)?.value();
        let e = merged.entry(key).or_insert((v, [0; 3], 0));
        for (sum, a) in e.1.iter_mut().zip(attr) {
            *sum += u64::from(a);
        }
        e.2 += 1;
    }
    if merged.is_empty() {
        return Err(Error::EmptyAfterVoxelize);
    }
    let mut voxels = Vec::with_capacity(merged.len());
    let mut attrs = Vec::with_capacity(merged.len());
    for (v, sums, n) in merged.into_values() {
        voxels.push(v);
        // sums are nonnegative, so (2s + n) / 2n is round-half-up == half away from zero
        attrs.push(sums.map(|s| ((2 * s + n) / (2 * n)) as u8));
    }
    Ok(VoxelCloud {
        depth,
        voxels,
        attrs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn ycc_raw(positions: Vec<[f64; 3]>, colors: Vec<[u8; 3]>) -> RawCloud {
        RawCloud {
            positions,
            colors,
            colorspace: ColorSpace::YCbCr,
        }
    }

    #[test]
    fn duplicate_points_take_mean() {
        let raw = ycc_raw(
            vec![[1.2, 1.0, 1.0], [1.9, 1.5, 1.0]],
            vec![[10, 100, 200], [20, 101, 200]],
        );
        let v = voxelize(&raw, 3, 1.0).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.voxels(), &[[1, 1, 1]]);
        // 100.5 rounds away from zero
        assert_eq!(v.attrs(), &[[15, 101, 200]]);
    }

    #[test]
    fn integer_positions_are_identity() {
        let positions = vec![[3.0, 0.0, 7.0], [0.0, 0.0, 0.0], [5.0, 5.0, 5.0]];
        let raw = ycc_raw(positions.clone(), vec![[1, 2, 3], [4, 5, 6], [7, 8, 9]]);
        let v = voxelize(&raw, 3, 1.0).unwrap();
        let got: HashSet<[u32; 3]> = v.voxels().iter().copied().collect();
        let want: HashSet<[u32; 3]> = positions.iter().map(|p| p.map(|x| x as u32)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn clamps_into_grid() {
        let raw = ycc_raw(vec![[-4.0, 100.0, 3.5]], vec![[0, 0, 0]]);
        let v = voxelize(&raw, 2, 1.0).unwrap();
        assert_eq!(v.voxels(), &[[0, 3, 3]]);
    }

    #[test]
    fn rgb_input_is_converted() {
        let raw = RawCloud {
            positions: vec![[0.0; 3]],
            colors: vec![[255, 0, 0]],
            colorspace: ColorSpace::Rgb,
        };
        assert_eq!(voxelize(&raw, 1, 1.0).unwrap().attrs(), &[[54, 99, 255]]);
    }

    #[test]
    fn random_count_matches_distinct_floors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let positions: Vec<[f64; 3]> = (0..1000)
            .map(|_| [0; 3].map(|_: i32| rng.gen_range(0.0..64.0)))
            .collect();
        let colors = vec![[50, 60, 70]; 1000];
        let distinct: HashSet<[i64; 3]> = positions
            .iter()
            .map(|p| p.map(|x| x.floor() as i64))
            .collect();
        let v = voxelize(&ycc_raw(positions, colors), 6, 1.0).unwrap();
        assert_eq!(v.len(), distinct.len());
        let keys = v.morton_keys();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let raw = ycc_raw(vec![[0.0; 3]], vec![[0; 3]]);
        assert_eq!(voxelize(&raw, 0, 1.0).unwrap_err(), Error::InvalidDepth(0));
        assert_eq!(
            voxelize(&raw, 17, 1.0).unwrap_err(),
            Error::InvalidDepth(17)
        );
        assert!(voxelize(&raw, 4, 0.0).is_err());
        let nan = ycc_raw(vec![[f64::NAN, 0.0, 0.0]], vec![[0; 3]]);
        assert!(voxelize(&nan, 4, 1.0).is_err());
    }

    #[test]
    fn new_sorts_and_rejects_duplicates() {
        let c = VoxelCloud::new(2, vec![[1, 0, 0], [0, 0, 1]], vec![[1; 3], [2; 3]]).unwrap();
        assert_eq!(c.voxels(), &[[0, 0, 1], [1, 0, 0]]);
        assert_eq!(c.attrs(), &[[2; 3], [1; 3]]);
        assert!(VoxelCloud::new(2, vec![[1, 0, 0], [1, 0, 0]], vec![[0; 3]; 2]).is_err());
        assert!(VoxelCloud::new(2, vec![[4, 0, 0]], vec![[0; 3]]).is_err());
    }
}
