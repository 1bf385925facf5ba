//! Prediction of child attribute means and of the AC coefficients they imply.
//!
//! Intra prediction up-samples the parent layer: a child is predicted from
//! its parent (weight 4), the three parent-layer face neighbours on the
//! child's side of the parent (weight 2 each) and the three edge neighbours
//! between them (weight 1 each). Across the eight possible children this
//! touches all 6 face and 12 edge neighbours of the parent. Missing
//! neighbours are dropped and the remaining weights renormalized. Children
//! of the root block are predicted as zero.
//!
//! Inter prediction takes the reconstructed mean of the node with the same
//! Morton prefix at the same layer of a reference frame, falling back to the
//! intra value when that node does not exist.
//!
//! Predictions are always driven by reconstructed means of the layer above,
//! so encoder and decoder derive identical values.

use serde::{Deserialize, Serialize};

use crate::cloud::VoxelCloud;
use crate::error::{Error, Result};
use crate::octree::{Block, LayeredOctree, MortonKey};
use crate::raht::{layer_sums, BlockTransform};

pub const PARENT_WEIGHT: u32 = 4;
pub const FACE_WEIGHT: u32 = 2;
pub const EDGE_WEIGHT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    Intra,
    Inter,
}

/// Reconstructed previous frame: its tree and the mean attribute of every node.
#[derive(Debug, Clone)]
pub struct Reference {
    tree: LayeredOctree,
    means: Vec<Vec<[f64; 3]>>,
}

impl Reference {
    pub fn from_cloud(cloud: &VoxelCloud) -> Self {
        let tree = LayeredOctree::build(cloud);
        let attrs: Vec<[f64; 3]> = cloud.attrs().iter().map(|a| a.map(f64::from)).collect();
        let sums = layer_sums(&tree, &attrs);
        let means = sums
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                layer
                    .iter()
                    .zip(tree.node_weights(l))
                    .map(|(s, &w)| s.map(|v| v / w as f64))
                    .collect()
            })
            .collect();
        Self { tree, means }
    }

    pub fn tree(&self) -> &LayeredOctree {
        &self.tree
    }

    pub fn mean(&self, layer: usize, index: usize) -> [f64; 3] {
        self.means[layer][index]
    }
}

/// Per child of one parent layer, the parent-layer neighbours it is predicted from.
#[derive(Debug, Clone, Default)]
struct NeighborPlan {
    offsets: Vec<u32>,
    items: Vec<(u32, u32)>,
}

impl NeighborPlan {
    fn of(&self, child: usize) -> &[(u32, u32)] {
        &self.items[self.offsets[child] as usize..self.offsets[child + 1] as usize]
    }
}

/// Parent-layer neighbours of a child at `local` inside parent `parent_key`,
/// with their weights. Coordinates outside the layer grid are skipped, as
/// are unoccupied nodes.
fn child_neighbors(
    tree: &LayeredOctree,
    layer: usize,
    parent_key: u64,
    local: u8,
) -> Vec<(u32, u32)> {
    let p = MortonKey::new(parent_key).coords().map(i64::from);
    let dir = [
        if local & 4 != 0 { 1 } else { -1 },
        if local & 2 != 0 { 1 } else { -1 },
        if local & 1 != 0 { 1 } else { -1 },
    ];
    let limit = 1i64 << layer;
    let lookup = |off: [i64; 3]| -> Option<u32> {
        let c = [p[0] + off[0], p[1] + off[1], p[2] + off[2]];
        if c.iter().any(|&v| v < 0 || v >= limit) {
            return None;
        }
        let key = MortonKey::from_coords(c.map(|v| v as u32)).value();
        tree.find(layer, key).map(|i| i as u32)
    };
    let mut out = Vec::with_capacity(7);
    if let Some(i) = lookup([0, 0, 0]) {
        out.push((i, PARENT_WEIGHT));
    }
    for axis in 0..3 {
        let mut off = [0; 3];
        off[axis] = dir[axis];
        if let Some(i) = lookup(off) {
            out.push((i, FACE_WEIGHT));
        }
    }
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let mut off = [0; 3];
        off[a] = dir[a];
        off[b] = dir[b];
        if let Some(i) = lookup(off) {
            out.push((i, EDGE_WEIGHT));
        }
    }
    out
}

/// Weighted average of `(value, weight)` pairs; zero when empty.
pub fn weighted_mean(samples: impl IntoIterator<Item = (f64, u32)>) -> f64 {
    let (mut acc, mut total) = (0.0, 0u32);
    for (v, w) in samples {
        acc += v * f64::from(w);
        total += w;
    }
    if total == 0 {
        0.0
    } else {
        acc / f64::from(total)
    }
}

/// Geometry-dependent prediction tables for one frame.
#[derive(Debug, Clone)]
pub struct PredictionContext<'a> {
    mode: PredictionMode,
    intra: Vec<NeighborPlan>,
    /// `hits[l][i]`: index in the reference's layer `l` of node `i`, if present.
    hits: Vec<Vec<Option<u32>>>,
    reference: Option<&'a Reference>,
}

impl<'a> PredictionContext<'a> {
    pub fn new(
        tree: &LayeredOctree,
        mode: PredictionMode,
        reference: Option<&'a Reference>,
    ) -> Result<Self> {
        let depth = tree.depth();
        let mut intra = Vec::with_capacity(depth);
        for l in 0..depth {
            let mut plan = NeighborPlan {
                offsets: vec![0],
                items: Vec::new(),
            };
            for block in tree.blocks_of_layer(l)? {
                for c in block.children() {
                    if l > 0 {
                        plan.items
                            .extend(child_neighbors(tree, l, block.parent_key, c.local));
                    }
                    plan.offsets.push(plan.items.len() as u32);
                }
            }
            intra.push(plan);
        }
        let (hits, reference) = match mode {
            PredictionMode::Intra => (Vec::new(), None),
            PredictionMode::Inter => {
                let r = reference.ok_or(Error::MissingReference)?;
                let same_grid = r.tree.depth() == depth;
                let hits = (0..=depth)
                    .map(|l| {
                        tree.layer(l)
                            .iter()
                            .map(|&k| {
                                if same_grid {
                                    r.tree.find(l, k).map(|i| i as u32)
                                } else {
                                    None
                                }
                            })
                            .collect()
                    })
                    .collect();
                (hits, Some(r))
            }
        };
        Ok(Self {
            mode,
            intra,
            hits,
            reference,
        })
    }

    pub fn mode(&self) -> PredictionMode {
        self.mode
    }

    /// Intra prediction of the children of `block` (a block of parent layer
    /// `layer`), given reconstructed means of every node in that layer.
    pub fn intra_predict_block(
        &self,
        layer: usize,
        block: &Block,
        parent_means: &[f64],
    ) -> Vec<f64> {
        block
            .children()
            .map(|c| self.intra_child(layer, c.index, parent_means))
            .collect()
    }

    /// Inter prediction of the children of `block`, with intra fallback.
    pub fn inter_predict_block(
        &self,
        layer: usize,
        block: &Block,
        channel: usize,
        parent_means: &[f64],
    ) -> Vec<f64> {
        block
            .children()
            .map(|c| {
                self.inter_child(layer, c.index, channel)
                    .unwrap_or_else(|| self.intra_child(layer, c.index, parent_means))
            })
            .collect()
    }

    #[inline]
    fn intra_child(&self, layer: usize, child: usize, parent_means: &[f64]) -> f64 {
        if layer == 0 {
            return 0.0;
        }
        weighted_mean(
            self.intra[layer]
                .of(child)
                .iter()
                .map(|&(i, w)| (parent_means[i as usize], w)),
        )
    }

    #[inline]
    fn inter_child(&self, layer: usize, child: usize, channel: usize) -> Option<f64> {
        let r = self.reference?;
        self.hits[layer + 1][child].map(|i| r.means[layer + 1][i as usize][channel])
    }

    /// Predicted mean of every node of layer `layer + 1`.
    pub fn predict_layer(
        &self,
        layer: usize,
        channel: usize,
        parent_means: &[f64],
        out: &mut Vec<f64>,
    ) {
        let n = self.intra[layer].offsets.len() - 1;
        out.clear();
        out.extend((0..n).map(|child| {
            match self.mode {
                PredictionMode::Intra => self.intra_child(layer, child, parent_means),
                PredictionMode::Inter => self
                    .inter_child(layer, child, channel)
                    .unwrap_or_else(|| self.intra_child(layer, child, parent_means)),
            }
        }));
    }
}

/// Transform predicted child means into predicted ACs (the DC is dropped).
pub fn predict_ac(transform: &BlockTransform, predicted_means: &[f64], acs: &mut [f64]) {
    let mut norm = [0.0f64; 8];
    for ((n, &m), &w) in norm
        .iter_mut()
        .zip(predicted_means)
        .zip(transform.child_weights())
    {
        *n = m * (w as f64).sqrt();
    }
    transform.forward(&norm[..transform.len()], acs);
}

pub fn residuals(ac_org: &[f64], ac_pre: &[f64]) -> Result<Vec<f64>> {
    if ac_org.len() != ac_pre.len() {
        return Err(Error::LengthMismatch(ac_org.len(), ac_pre.len()));
    }
    Ok(ac_org.iter().zip(ac_pre).map(|(o, p)| o - p).collect())
}
