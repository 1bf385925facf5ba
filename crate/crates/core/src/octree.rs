//! Morton keys and the layered octree the transform runs over.
//!
//! Key layout: bit `i` of x goes to key bit `3i + 2`, y to `3i + 1`, z to
//! `3i`, so x is the most significant axis within each triple. A child's local
//! index inside its parent block is the low three bits of its key
//! (`x << 2 | y << 1 | z`).
//!
//! Layers are numbered from 0 (the root, a single node) to `depth` (the
//! voxels). A node at layer `l` is identified by the top `3l` bits of the
//! Morton keys of the voxels it contains.

use crate::cloud::VoxelCloud;
use crate::error::{Error, Result};

pub const MAX_DEPTH: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MortonKey(u64);

impl MortonKey {
    pub fn new(value: u64) -> Self {
        Self(value)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Interleave without range checks; coordinates must fit in 16 bits.
    pub(crate) fn from_coords(c: [u32; 3]) -> Self {
        Self(spread(c[0]) << 2 | spread(c[1]) << 1 | spread(c[2]))
    }

    pub fn coords(self) -> [u32; 3] {
        [compact(self.0 >> 2), compact(self.0 >> 1), compact(self.0)]
    }
}

fn spread(v: u32) -> u64 {
    let mut x = u64::from(v) & 0xffff;
    x = (x | x << 16) & 0x0000_ff00_00ff;
    x = (x | x << 8) & 0x00f0_0f00_f00f;
    x = (x | x << 4) & 0x0c30_c30c_30c3;
    x = (x | x << 2) & 0x2492_4924_9249;
    x
}

fn compact(v: u64) -> u32 {
    let mut x = v & 0x2492_4924_9249;
    x = (x | x >> 2) & 0x0c30_c30c_30c3;
    x = (x | x >> 4) & 0x00f0_0f00_f00f;
    x = (x | x >> 8) & 0x0000_ff00_00ff;
    x = (x | x >> 16) & 0xffff;
    x as u32
}

pub fn morton_encode(x: u32, y: u32, z: u32, depth: u32) -> Result<MortonKey> {
    if !(1..=MAX_DEPTH).contains(&depth) {
        return Err(Error::InvalidDepth(depth));
    }
    let limit = 1u32 << depth;
    if x >= limit || y >= limit || z >= limit {
        return Err(Error::CoordinateOutOfRange { x, y, z, depth });
    }
    Ok(MortonKey::from_coords([x, y, z]))
}

pub fn morton_decode(key: MortonKey) -> [u32; 3] {
    key.coords()
}

/// One occupied child inside a transform block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Child {
    /// Index of the child node in layer `l + 1`.
    pub index: usize,
    /// Local Morton index 0..8 within the parent.
    pub local: u8,
    pub weight: u64,
}

/// A transform block: a parent node at layer `l` and its occupied children,
/// listed in ascending local index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub parent: usize,
    pub parent_key: u64,
    pub first_child: usize,
    len: u8,
    locals: [u8; 8],
    weights: [u64; 8],
}

impl Block {
    pub fn len(&self) -> usize {
        usize::from(self.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights[..self.len()]
    }

    pub fn locals(&self) -> &[u8] {
        &self.locals[..self.len()]
    }

    pub fn children(&self) -> impl Iterator<Item = Child> + '_ {
        (0..self.len()).map(move |i| Child {
            index: self.first_child + i,
            local: self.locals[i],
            weight: self.weights[i],
        })
    }

    pub fn total_weight(&self) -> u64 {
        self.weights().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayeredOctree {
    depth: usize,
    /// Per layer, sorted node prefixes (`3 * layer` bits each).
    layers: Vec<Vec<u64>>,
    weights: Vec<Vec<u64>>,
    /// `parents[l][i]` is the index in layer `l - 1` of node `i`; empty at l = 0.
    parents: Vec<Vec<u32>>,
    /// For `l < depth`, children of node `i` are `child_start[l][i]..child_start[l][i + 1]`
    /// in layer `l + 1`.
    child_start: Vec<Vec<u32>>,
}

impl LayeredOctree {
    pub fn build(cloud: &VoxelCloud) -> Self {
        let depth = cloud.depth() as usize;
        let leaves: Vec<u64> = cloud
            .morton_keys()
            .into_iter()
            .map(MortonKey::value)
            .collect();
        Self::from_sorted_keys(depth, leaves)
    }

    /// Keys must be strictly increasing and fit in `3 * depth` bits.
    pub(crate) fn from_sorted_keys(depth: usize, leaves: Vec<u64>) -> Self {
        debug_assert!(leaves.windows(2).all(|w| w[0] < w[1]));
        let mut layers = vec![Vec::new(); depth + 1];
        let mut weights = vec![Vec::new(); depth + 1];
        let mut parents = vec![Vec::new(); depth + 1];
        let mut child_start = vec![Vec::new(); depth];
        weights[depth] = vec![1u64; leaves.len()];
        layers[depth] = leaves;
        for l in (0..depth).rev() {
            let (upper, lower) = layers.split_at_mut(l + 1);
            let (up_w, low_w) = weights.split_at_mut(l + 1);
            let children = &lower[0];
            let child_w = &low_w[0];
            let mut nodes = Vec::new();
            let mut node_w: Vec<u64> = Vec::new();
            let mut starts = Vec::new();
            let mut links = Vec::with_capacity(children.len());
            for (i, (&key, &w)) in children.iter().zip(child_w).enumerate() {
                let p = key >> 3;
                if nodes.last() != Some(&p) {
                    nodes.push(p);
                    node_w.push(0);
                    starts.push(i as u32);
                }
                *node_w.last_mut().unwrap() += w;
                links.push((nodes.len() - 1) as u32);
            }
            starts.push(children.len() as u32);
            upper[l] = nodes;
            up_w[l] = node_w;
            parents[l + 1] = links;
            child_start[l] = starts;
        }
        Self {
            depth,
            layers,
            weights,
            parents,
            child_start,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn point_count(&self) -> usize {
        self.layers[self.depth].len()
    }

    pub fn layer(&self, l: usize) -> &[u64] {
        &self.layers[l]
    }

    pub fn node_weights(&self, l: usize) -> &[u64] {
        &self.weights[l]
    }

    pub fn parent_of(&self, l: usize, i: usize) -> Option<usize> {
        (l > 0).then(|| self.parents[l][i] as usize)
    }

    /// Index of the node with prefix `key` in layer `l`.
    pub fn find(&self, l: usize, key: u64) -> Option<usize> {
        self.layers[l].binary_search(&key).ok()
    }

    /// Transform blocks rooted at layer `layer`, in ascending parent Morton order.
    pub fn blocks_of_layer(&self, layer: usize) -> Result<Vec<Block>> {
        if layer >= self.depth {
            return Err(Error::LayerOutOfRange {
                layer,
                depth: self.depth,
            });
        }
        let children = &self.layers[layer + 1];
        let child_w = &self.weights[layer + 1];
        let starts = &self.child_start[layer];
        let blocks = self.layers[layer]
            .iter()
            .enumerate()
            .map(|(p, &parent_key)| {
                let (s, e) = (starts[p] as usize, starts[p + 1] as usize);
                let mut b = Block {
                    parent: p,
                    parent_key,
                    first_child: s,
                    len: (e - s) as u8,
                    locals: [0; 8],
                    weights: [0; 8],
                };
                for (j, c) in (s..e).enumerate() {
                    b.locals[j] = (children[c] & 7) as u8;
                    b.weights[j] = child_w[c];
                }
                b
            })
            .collect();
        Ok(blocks)
    }

    /// All blocks, indexed by parent layer.
    pub fn all_blocks(&self) -> Vec<Vec<Block>> {
        (0..self.depth)
            .map(|l| self.blocks_of_layer(l).expect("layer in range"))
            .collect()
    }
}
