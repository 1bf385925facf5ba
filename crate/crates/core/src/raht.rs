//! Region-adaptive hierarchical transform over a [`LayeredOctree`].
//!
//! Every block is transformed with a cascade of weighted two-point Haar
//! butterflies, first along Y, then Z, then X. Inputs and outputs are
//! "normalized" sums `A / sqrt(w)`, so a node holding `w` points of constant
//! value `v` carries `sqrt(w) * v` and the butterfly is orthonormal:
//!
//! ```text
//! [dc]   [ a  b] [x1]        a = sqrt(w1 / (w1 + w2))
//! [ac] = [-b  a] [x2],       b = sqrt(w2 / (w1 + w2))
//! ```
//!
//! Coefficients are emitted layer by layer from the root downward, blocks in
//! Morton order, and within a block all Y-stage ACs, then Z, then X.

use crate::error::{Error, Result};
use crate::octree::{Block, LayeredOctree};

/// Forward weighted Haar butterfly on normalized inputs.
#[inline]
pub fn haar2(x1: f64, x2: f64, w1: u64, w2: u64) -> (f64, f64) {
    let (a, b) = butterfly_coeffs(w1, w2);
    (a * x1 + b * x2, -b * x1 + a * x2)
}

#[inline]
pub fn haar2_inv(dc: f64, ac: f64, w1: u64, w2: u64) -> (f64, f64) {
    let (a, b) = butterfly_coeffs(w1, w2);
    (a * dc - b * ac, b * dc + a * ac)
}

#[inline]
fn butterfly_coeffs(w1: u64, w2: u64) -> (f64, f64) {
    let total = (w1 + w2) as f64;
    ((w1 as f64 / total).sqrt(), (w2 as f64 / total).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    /// Butterfly between two occupied slots; DC lands in `lo`.
    Pair {
        lo: u8,
        hi: u8,
        w_lo: u64,
        w_hi: u64,
    },
    /// Lone `hi` slot carried into `lo`.
    Move { lo: u8, hi: u8 },
}

/// Transform of one block, fixed by the occupied children and their weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockTransform {
    locals: Vec<u8>,
    weights: Vec<u64>,
    steps: Vec<Step>,
}

/// Slot pairs per stage, ordered by the local index of the lower slot.
const Y_PAIRS: [(u8, u8); 4] = [(0, 2), (1, 3), (4, 6), (5, 7)];
const Z_PAIRS: [(u8, u8); 2] = [(0, 1), (4, 5)];
const X_PAIRS: [(u8, u8); 1] = [(0, 4)];

impl BlockTransform {
    /// `locals` must be strictly increasing in `0..8` and aligned with `weights`.
    pub fn new(locals: &[u8], weights: &[u64]) -> Self {
        assert_eq!(locals.len(), weights.len());
        assert!(!locals.is_empty() && locals.len() <= 8);
        let mut slot_w = [0u64; 8];
        for (&l, &w) in locals.iter().zip(weights) {
            debug_assert!(w > 0);
            slot_w[usize::from(l)] = w;
        }
        let mut steps = Vec::with_capacity(7);
        for stage in [&Y_PAIRS[..], &Z_PAIRS[..], &X_PAIRS[..]] {
            for &(lo, hi) in stage {
                let (wl, wh) = (slot_w[usize::from(lo)], slot_w[usize::from(hi)]);
                match (wl > 0, wh > 0) {
                    (true, true) => {
                        steps.push(Step::Pair {
                            lo,
                            hi,
                            w_lo: wl,
                            w_hi: wh,
                        });
                        slot_w[usize::from(lo)] = wl + wh;
                        slot_w[usize::from(hi)] = 0;
                    }
                    (false, true) => {
                        steps.push(Step::Move { lo, hi });
                        slot_w[usize::from(lo)] = wh;
                        slot_w[usize::from(hi)] = 0;
                    }
                    _ => {}
                }
            }
        }
        Self {
            locals: locals.to_vec(),
            weights: weights.to_vec(),
            steps,
        }
    }

    pub fn from_block(block: &Block) -> Self {
        Self::new(block.locals(), block.weights())
    }

    pub fn len(&self) -> usize {
        self.locals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locals.is_empty()
    }

    pub fn ac_count(&self) -> usize {
        self.locals.len() - 1
    }

    pub fn child_weights(&self) -> &[u64] {
        &self.weights
    }

    /// Weight pairs `(w1, w2)` of each AC, in emission order.
    pub fn ac_weights(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.steps.iter().filter_map(|s| match *s {
            Step::Pair { w_lo, w_hi, .. } => Some((w_lo, w_hi)),
            Step::Move { .. } => None,
        })
    }

    /// Forward transform of normalized child values; writes `N - 1` ACs into
    /// `acs` and returns the DC.
    pub fn forward(&self, values: &[f64], acs: &mut [f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        debug_assert_eq!(acs.len(), self.ac_count());
        let mut slots = [0.0f64; 8];
        for (&l, &v) in self.locals.iter().zip(values) {
            slots[usize::from(l)] = v;
        }
        let mut k = 0;
        for step in &self.steps {
            match *step {
                Step::Pair { lo, hi, w_lo, w_hi } => {
                    let (dc, ac) =
                        haar2(slots[usize::from(lo)], slots[usize::from(hi)], w_lo, w_hi);
                    slots[usize::from(lo)] = dc;
                    acs[k] = ac;
                    k += 1;
                }
                Step::Move { lo, hi } => slots[usize::from(lo)] = slots[usize::from(hi)],
            }
        }
        slots[0]
    }

    /// Inverse of [`BlockTransform::forward`]; writes normalized child values.
    pub fn inverse(&self, dc: f64, acs: &[f64], values: &mut [f64]) {
        debug_assert_eq!(values.len(), self.len());
        debug_assert_eq!(acs.len(), self.ac_count());
        let mut slots = [0.0f64; 8];
        slots[0] = dc;
        let mut k = acs.len();
        for step in self.steps.iter().rev() {
            match *step {
                Step::Pair { lo, hi, w_lo, w_hi } => {
                    k -= 1;
                    let (a, b) = haar2_inv(slots[usize::from(lo)], acs[k], w_lo, w_hi);
                    slots[usize::from(lo)] = a;
                    slots[usize::from(hi)] = b;
                }
                Step::Move { lo, hi } => slots[usize::from(hi)] = slots[usize::from(lo)],
            }
        }
        for (&l, v) in self.locals.iter().zip(values.iter_mut()) {
            *v = slots[usize::from(l)];
        }
    }

    /// The N x N matrix mapping normalized inputs to `[DC, AC_1, ..., AC_{N-1}]`.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut m = vec![vec![0.0; n]; n];
        let mut unit = vec![0.0; n];
        let mut acs = vec![0.0; n - 1];
        for col in 0..n {
            unit.iter_mut().for_each(|u| *u = 0.0);
            unit[col] = 1.0;
            m[0][col] = self.forward(&unit, &mut acs);
            for (r, ac) in acs.iter().enumerate() {
                m[r + 1][col] = *ac;
            }
        }
        m
    }
}

/// Convenience wrapper: forward transform of one block.
pub fn block_forward(locals: &[u8], weights: &[u64], values: &[f64]) -> (f64, Vec<f64>) {
    let t = BlockTransform::new(locals, weights);
    let mut acs = vec![0.0; t.ac_count()];
    let dc = t.forward(values, &mut acs);
    (dc, acs)
}

pub fn block_inverse(locals: &[u8], weights: &[u64], dc: f64, acs: &[f64]) -> Vec<f64> {
    let t = BlockTransform::new(locals, weights);
    let mut values = vec![0.0; t.len()];
    t.inverse(dc, acs, &mut values);
    values
}

/// Geometry-side description of one AC coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcEntry {
    /// Layer of the parent node (0 = root block).
    pub layer: u8,
    /// Block index within the layer.
    pub block: u32,
    pub ac_index: u8,
    pub weights: (u64, u64),
}

/// All transform coefficients of a cloud in coding order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffStream {
    pub dc_root: [f64; 3],
    pub entries: Vec<AcEntry>,
    /// Per channel, AC values aligned with `entries`.
    pub values: [Vec<f64>; 3],
    /// `layer_offsets[l]..layer_offsets[l + 1]` are the ACs of layer `l`.
    pub layer_offsets: Vec<usize>,
}

impl CoeffStream {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn layer_count(&self) -> usize {
        self.layer_offsets.len() - 1
    }

    /// Little-endian dump of every field, in a fixed order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.len() * 48);
        for dc in self.dc_root {
            out.extend_from_slice(&dc.to_le_bytes());
        }
        out.extend_from_slice(&(self.layer_offsets.len() as u64).to_le_bytes());
        for o in &self.layer_offsets {
            out.extend_from_slice(&(*o as u64).to_le_bytes());
        }
        for (i, e) in self.entries.iter().enumerate() {
            out.push(e.layer);
            out.extend_from_slice(&e.block.to_le_bytes());
            out.push(e.ac_index);
            out.extend_from_slice(&e.weights.0.to_le_bytes());
            out.extend_from_slice(&e.weights.1.to_le_bytes());
            for ch in &self.values {
                out.extend_from_slice(&ch[i].to_le_bytes());
            }
        }
        out
    }
}

/// Per-layer attribute sums, leaves upward.
pub(crate) fn layer_sums(tree: &LayeredOctree, attrs: &[[f64; 3]]) -> Vec<Vec<[f64; 3]>> {
    let d = tree.depth();
    let mut sums = vec![Vec::new(); d + 1];
    sums[d] = attrs.to_vec();
    for l in (0..d).rev() {
        let mut s = vec![[0.0; 3]; tree.layer(l).len()];
        for (i, v) in sums[l + 1].iter().enumerate() {
            let p = tree.parent_of(l + 1, i).unwrap();
            for ch in 0..3 {
                s[p][ch] += v[ch];
            }
        }
        sums[l] = s;
    }
    sums
}

pub fn forward_raht(tree: &LayeredOctree, attrs: &[[f64; 3]]) -> Result<CoeffStream> {
    if attrs.len() != tree.point_count() {
        return Err(Error::LengthMismatch(tree.point_count(), attrs.len()));
    }
    let sums = layer_sums(tree, attrs);
    let total = tree.point_count() as f64;
    let dc_root = sums[0][0].map(|s| s / total.sqrt());

    let mut entries = Vec::new();
    let mut values: [Vec<f64>; 3] = Default::default();
    let mut layer_offsets = vec![0];
    let mut norm = [0.0f64; 8];
    let mut acs = [0.0f64; 7];
    for l in 0..tree.depth() {
        let child_w = tree.node_weights(l + 1);
        for (bi, block) in tree.blocks_of_layer(l)?.iter().enumerate() {
            let t = BlockTransform::from_block(block);
            let n = t.len();
            for (k, pair) in t.ac_weights().enumerate() {
                entries.push(AcEntry {
                    layer: l as u8,
                    block: bi as u32,
                    ac_index: k as u8,
                    weights: pair,
                });
            }
            for (ch, out) in values.iter_mut().enumerate() {
                for (j, c) in block.children().enumerate() {
                    norm[j] = sums[l + 1][c.index][ch] / (child_w[c.index] as f64).sqrt();
                }
                t.forward(&norm[..n], &mut acs[..n - 1]);
                out.extend_from_slice(&acs[..n - 1]);
            }
        }
        layer_offsets.push(entries.len());
    }
    Ok(CoeffStream {
        dc_root,
        entries,
        values,
        layer_offsets,
    })
}

/// Number of AC coefficients the tree produces.
pub fn ac_count(tree: &LayeredOctree) -> usize {
    tree.point_count() - 1
}

pub fn inverse_raht(tree: &LayeredOctree, coeffs: &CoeffStream) -> Result<Vec<[f64; 3]>> {
    let expected = ac_count(tree);
    for ch in &coeffs.values {
        if ch.len() != expected {
            return Err(Error::CoefficientCount {
                expected,
                actual: ch.len(),
            });
        }
    }
    let total = tree.point_count() as f64;
    // normalized node values, per layer
    let mut current: Vec<[f64; 3]> = vec![coeffs.dc_root];
    let mut cursor = 0;
    let mut vals = [0.0f64; 8];
    for l in 0..tree.depth() {
        let mut next = vec![[0.0; 3]; tree.layer(l + 1).len()];
        for block in tree.blocks_of_layer(l)? {
            let t = BlockTransform::from_block(&block);
            let (n, m) = (t.len(), t.ac_count());
            for ch in 0..3 {
                let acs = &coeffs.values[ch][cursor..cursor + m];
                t.inverse(current[block.parent][ch], acs, &mut vals[..n]);
                for j in 0..n {
                    next[block.first_child + j][ch] = vals[j];
                }
            }
            cursor += m;
        }
        current = next;
    }
    debug_assert!(total >= 1.0);
    // leaves hold one point each, so the normalized value is the attribute
    Ok(current)
}
