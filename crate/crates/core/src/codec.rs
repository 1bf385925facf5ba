//! Frame encoder and decoder.
//!
//! Per channel the encoder walks the tree from the root down. At each layer
//! it predicts the child means from the reconstructed means above, turns
//! them into predicted ACs, quantizes the residuals and reconstructs the
//! layer before moving on, so the decoder can repeat the walk exactly.

use std::time::Instant;

use serde::Serialize;

use crate::bitstream::{
    decode_dc, decode_geometry, encode_dc, encode_geometry, read_sequence, split_frame,
    write_sequence, FrameHeader, VERSION,
};
use crate::cloud::{round_clamp_u8, VoxelCloud};
use crate::coder::{decode_stream, encode_levels, Contexts, Quantizer};
use crate::error::{Error, Result};
use crate::octree::{Block, LayeredOctree, MortonKey};
use crate::predict::{predict_ac, PredictionContext, PredictionMode, Reference};
use crate::raht::{forward_raht, BlockTransform};
use crate::rdoskip::{
    decide, distortion_table, lambda, max_skip, rate_table, skip_boundary, SkipCandidateTable,
    SkipDecision, CANDIDATES, DEFAULT_C, FLAG_BITS,
};

/// Bits spent on the three skip flags.
pub const SKIP_FLAG_BITS: u64 = 3 * FLAG_BITS as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    /// Every residual is coded.
    Off,
    /// Rate-distortion decision per channel.
    Rdo,
    /// Fixed flags for Y, Cb, Cr.
    Forced([u8; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EncoderConfig {
    pub qp_luma: i32,
    pub qp_chroma: i32,
    pub mode: PredictionMode,
    pub skip: SkipMode,
    pub c: f64,
    /// Fill candidate tables even when they do not drive the decision, and
    /// measure the real size of every candidate.
    pub analyze: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            qp_luma: 34,
            qp_chroma: 34,
            mode: PredictionMode::Intra,
            skip: SkipMode::Rdo,
            c: DEFAULT_C,
            analyze: false,
        }
    }
}

impl EncoderConfig {
    pub fn with_qp(qp: i32) -> Self {
        Self {
            qp_luma: qp,
            qp_chroma: qp,
            ..Self::default()
        }
    }

    pub fn qp(&self, channel: usize) -> i32 {
        if channel == 0 {
            self.qp_luma
        } else {
            self.qp_chroma
        }
    }

    fn c_times_1000(&self) -> Result<u16> {
        let v = (self.c * 1000.0).round();
        if !self.c.is_finite() || self.c <= 0.0 || v > f64::from(u16::MAX) {
            return Err(Error::InvalidLambdaConstant(self.c));
        }
        Ok(v as u16)
    }
}

/// Tree, blocks and block transforms shared by all channels of a frame.
#[derive(Debug, Clone)]
pub struct FrameGeometry {
    tree: LayeredOctree,
    blocks: Vec<Vec<Block>>,
    transforms: Vec<Vec<BlockTransform>>,
    layer_offsets: Vec<usize>,
}

impl FrameGeometry {
    pub fn new(tree: LayeredOctree) -> Self {
        let blocks = tree.all_blocks();
        let transforms: Vec<Vec<BlockTransform>> = blocks
            .iter()
            .map(|layer| layer.iter().map(BlockTransform::from_block).collect())
            .collect();
        let mut layer_offsets = vec![0];
        for layer in &transforms {
            let n = layer.iter().map(BlockTransform::ac_count).sum::<usize>();
            layer_offsets.push(layer_offsets.last().unwrap() + n);
        }
        Self {
            tree,
            blocks,
            transforms,
            layer_offsets,
        }
    }

    pub fn tree(&self) -> &LayeredOctree {
        &self.tree
    }

    pub fn layer_offsets(&self) -> &[usize] {
        &self.layer_offsets
    }

    pub fn ac_count(&self) -> usize {
        *self.layer_offsets.last().unwrap()
    }

    fn boundary(&self, k: u8) -> usize {
        if k == 0 {
            self.ac_count()
        } else {
            skip_boundary(&self.layer_offsets, k)
        }
    }

    /// Reconstruct layers `start..=depth` of one channel. `means` holds the
    /// reconstructed means of layer `start`; `level_at(i, pre)` supplies the
    /// level of coefficient `i` given its prediction.
    fn walk(
        &self,
        pctx: &PredictionContext,
        channel: usize,
        q: Quantizer,
        start: usize,
        means: Vec<f64>,
        mut level_at: impl FnMut(usize, f64) -> i64,
    ) -> Walk {
        let depth = self.tree.depth();
        let base = self.layer_offsets[start];
        let n_ac = self.ac_count() - base;
        let mut out = Walk {
            ac_pre: Vec::with_capacity(n_ac),
            levels: Vec::with_capacity(n_ac),
            means: vec![means],
        };
        let mut pred = Vec::new();
        let mut pre = [0.0f64; 7];
        let mut rec = [0.0f64; 7];
        let mut vals = [0.0f64; 8];
        for l in start..depth {
            let parent = out.means.last().unwrap();
            pctx.predict_layer(l, channel, parent, &mut pred);
            let mut next = vec![0.0; self.tree.layer(l + 1).len()];
            for (block, t) in self.blocks[l].iter().zip(&self.transforms[l]) {
                let (n, m, fc) = (t.len(), t.ac_count(), block.first_child);
                predict_ac(t, &pred[fc..fc + n], &mut pre[..m]);
                for j in 0..m {
                    let level = level_at(base + out.levels.len(), pre[j]);
                    out.ac_pre.push(pre[j]);
                    out.levels.push(level);
                    rec[j] = pre[j] + q.dequantize(level);
                }
                let dc = parent[block.parent] * (block.total_weight() as f64).sqrt();
                t.inverse(dc, &rec[..m], &mut vals[..n]);
                for j in 0..n {
                    next[fc + j] = vals[j] / (block.weights()[j] as f64).sqrt();
                }
            }
            out.means.push(next);
        }
        out
    }
}

struct Walk {
    ac_pre: Vec<f64>,
    levels: Vec<i64>,
    /// Reconstructed means of layers `start..=depth`.
    means: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub transform_s: f64,
    pub prediction_s: f64,
    pub rdo_s: f64,
    pub entropy_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelStats {
    pub qp: i32,
    pub flag: u8,
    /// Candidate table; present when skipping was evaluated.
    pub table: Option<SkipCandidateTable>,
    /// Real coded size of each candidate including flag bits, when analyzed.
    pub measured_bits: Option<[Option<u64>; CANDIDATES]>,
    pub payload_bits: u64,
    pub payload_bytes: usize,
    pub dc_level: i64,
    /// Squared quantization error of the root DC.
    pub dc_error: f64,
    /// Levels before any skipping, in coding order.
    #[serde(skip)]
    pub levels: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncodeStats {
    pub point_count: usize,
    pub depth: usize,
    pub mode: PredictionMode,
    pub flags: SkipDecision,
    pub layer_offsets: Vec<usize>,
    pub channels: [ChannelStats; 3],
    pub dc_bytes: usize,
    pub geometry_bytes: usize,
    pub total_bytes: usize,
    /// DC and residual payloads plus the skip flags.
    pub attribute_bits: u64,
    pub bpop: f64,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct EncodedFrame {
    pub bytes: Vec<u8>,
    pub stats: EncodeStats,
    /// Decoder-side reconstruction, rounded to 8 bits.
    pub reconstruction: VoxelCloud,
    /// Decoder-side reconstruction before rounding.
    pub float_attrs: Vec<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct DecodedFrame {
    pub header: FrameHeader,
    pub cloud: VoxelCloud,
    pub float_attrs: Vec<[f64; 3]>,
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn assemble_cloud(
    tree: &LayeredOctree,
    channels: &[Vec<f64>; 3],
) -> Result<(VoxelCloud, Vec<[f64; 3]>)> {
    let keys = tree.layer(tree.depth());
    let float_attrs: Vec<[f64; 3]> = (0..keys.len())
        .map(|i| [channels[0][i], channels[1][i], channels[2][i]])
        .collect();
    let voxels = keys.iter().map(|&k| MortonKey::new(k).coords()).collect();
    let attrs = float_attrs.iter().map(|a| a.map(round_clamp_u8)).collect();
    Ok((
        VoxelCloud::new(tree.depth() as u32, voxels, attrs)?,
        float_attrs,
    ))
}

fn prediction_context<'a>(
    tree: &LayeredOctree,
    mode: PredictionMode,
    reference: Option<&'a Reference>,
) -> Result<PredictionContext<'a>> {
    PredictionContext::new(tree, mode, reference)
}

pub fn encode_frame(
    cloud: &VoxelCloud,
    cfg: &EncoderConfig,
    reference: Option<&Reference>,
) -> Result<EncodedFrame> {
    let t_all = Instant::now();
    let mut timings = StageTimings::default();
    let c_code = cfg.c_times_1000()?;
    let quantizers = [
        Quantizer::new(cfg.qp(0))?,
        Quantizer::new(cfg.qp(1))?,
        Quantizer::new(cfg.qp(2))?,
    ];
    let n = cloud.len();
    if u32::try_from(n).is_err() {
        return Err(Error::InvalidCloud(format!(
            "{n} points exceed the container limit"
        )));
    }

    let t = Instant::now();
    let geom = FrameGeometry::new(LayeredOctree::build(cloud));
    let attrs: Vec<[f64; 3]> = cloud.attrs().iter().map(|a| a.map(f64::from)).collect();
    let coeffs = forward_raht(&geom.tree, &attrs)?;
    timings.transform_s = secs(t);

    let depth = geom.tree.depth();
    let kmax = max_skip(depth);
    if let SkipMode::Forced(f) = cfg.skip {
        if let Some(&bad) = f.iter().find(|&&k| k > kmax) {
            return Err(Error::InvalidSkipFlag {
                flag: bad,
                layers: depth,
            });
        }
    }
    let pctx = prediction_context(&geom.tree, cfg.mode, reference)?;
    let evaluate = cfg.skip == SkipMode::Rdo || cfg.analyze;

    let mut full: Vec<Walk> = Vec::with_capacity(3);
    let mut tables: [Option<SkipCandidateTable>; 3] = [None; 3];
    let mut dc_levels = [0i64; 3];
    let mut dc_errors = [0.0f64; 3];
    for ch in 0..3 {
        let q = quantizers[ch];
        let t = Instant::now();
        let dc_level = q.quantize(coeffs.dc_root[ch]);
        let dc_rec = q.dequantize(dc_level);
        dc_levels[ch] = dc_level;
        dc_errors[ch] = (coeffs.dc_root[ch] - dc_rec).powi(2);
        let org = &coeffs.values[ch];
        let root = vec![dc_rec / (n as f64).sqrt()];
        let w = geom.walk(&pctx, ch, q, 0, root, |i, pre| q.quantize(org[i] - pre));
        timings.prediction_s += secs(t);

        if evaluate {
            let t = Instant::now();
            // Predictions inside skipped layers depend on the skipped
            // reconstruction, so each candidate re-walks its own suffix.
            let mut pres: Vec<Vec<f64>> = vec![w.ac_pre.clone()];
            for k in 1..=kmax {
                let start = depth - usize::from(k);
                let b = geom.layer_offsets[start];
                let suffix = geom.walk(&pctx, ch, q, start, w.means[start].clone(), |_, _| 0);
                let mut pre = w.ac_pre[..b].to_vec();
                pre.extend_from_slice(&suffix.ac_pre);
                pres.push(pre);
            }
            let pre_refs: Vec<&[f64]> = pres.iter().map(Vec::as_slice).collect();
            let d = distortion_table(org, &pre_refs, &w.levels, q, &geom.layer_offsets)?;
            let r = rate_table(&w.levels, &geom.layer_offsets, &Contexts::default());
            tables[ch] = Some(SkipCandidateTable::new(d, r, lambda(cfg.c, q.qp())?));
            timings.rdo_s += secs(t);
        }
        full.push(w);
    }

    let t = Instant::now();
    let decision = match cfg.skip {
        SkipMode::Off => SkipDecision::default(),
        SkipMode::Forced(f) => SkipDecision::new(f),
        SkipMode::Rdo => decide(&tables.map(|t| t.expect("tables evaluated"))),
    };
    timings.rdo_s += secs(t);

    // Final reconstruction follows exactly the decoder's walk.
    let t = Instant::now();
    let flags = decision.flags();
    let mut recon: [Vec<f64>; 3] = Default::default();
    for ch in 0..3 {
        let b = geom.boundary(flags[ch]);
        let w = &full[ch];
        recon[ch] = if b == geom.ac_count() {
            w.means[depth].clone()
        } else {
            let start = depth - usize::from(flags[ch]);
            let s = geom.walk(
                &pctx,
                ch,
                quantizers[ch],
                start,
                w.means[start].clone(),
                |_, _| 0,
            );
            s.means.last().unwrap().clone()
        };
    }
    timings.prediction_s += secs(t);

    let t = Instant::now();
    let payloads: Vec<_> = (0..3)
        .map(|ch| encode_levels(&full[ch].levels[..geom.boundary(flags[ch])]))
        .collect();
    let measured: Vec<Option<[Option<u64>; CANDIDATES]>> = (0..3)
        .map(|ch| {
            cfg.analyze.then(|| {
                let mut m = [None; CANDIDATES];
                for k in 0..=kmax {
                    let bits = encode_levels(&full[ch].levels[..geom.boundary(k)]).bits;
                    m[usize::from(k)] = Some(bits + if k == 0 { 0 } else { u64::from(FLAG_BITS) });
                }
                m
            })
        })
        .collect();
    let keys = geom.tree.layer(depth);
    let geometry = encode_geometry(keys);
    let dc = encode_dc(dc_levels);
    timings.entropy_s = secs(t);

    let header = FrameHeader {
        version: VERSION,
        depth: depth as u8,
        point_count: n as u32,
        qp_luma: cfg.qp_luma as u8,
        qp_chroma: cfg.qp_chroma as u8,
        c_times_1000: c_code,
        mode: cfg.mode,
        flags: decision,
        geometry_len: geometry.len() as u32,
        dc_len: dc.len() as u32,
        payload_lens: [0, 1, 2].map(|ch| payloads[ch].bytes.len() as u32),
    };
    let mut bytes = Vec::with_capacity(header.total_len());
    header.write(&mut bytes);
    bytes.extend_from_slice(&geometry);
    bytes.extend_from_slice(&dc);
    for p in &payloads {
        bytes.extend_from_slice(&p.bytes);
    }

    let (reconstruction, float_attrs) = assemble_cloud(&geom.tree, &recon)?;
    let payload_bytes: usize = payloads.iter().map(|p| p.bytes.len()).sum();
    let attribute_bits = 8 * (dc.len() + payload_bytes) as u64 + SKIP_FLAG_BITS;
    let mut full = full.into_iter();
    let channels = [0, 1, 2].map(|ch| ChannelStats {
        qp: cfg.qp(ch),
        flag: flags[ch],
        table: tables[ch],
        measured_bits: measured[ch],
        payload_bits: payloads[ch].bits,
        payload_bytes: payloads[ch].bytes.len(),
        dc_level: dc_levels[ch],
        dc_error: dc_errors[ch],
        levels: full.next().unwrap().levels,
    });
    timings.total_s = secs(t_all);
    let stats = EncodeStats {
        point_count: n,
        depth,
        mode: cfg.mode,
        flags: decision,
        layer_offsets: geom.layer_offsets.clone(),
        channels,
        dc_bytes: dc.len(),
        geometry_bytes: geometry.len(),
        total_bytes: bytes.len(),
        attribute_bits,
        bpop: attribute_bits as f64 / n as f64,
        timings,
    };
    Ok(EncodedFrame {
        bytes,
        stats,
        reconstruction,
        float_attrs,
    })
}

pub fn decode_frame(bytes: &[u8], reference: Option<&Reference>) -> Result<DecodedFrame> {
    let parts = split_frame(bytes)?;
    let h = parts.header;
    let depth = u32::from(h.depth);
    if !(1..=crate::octree::MAX_DEPTH).contains(&depth) {
        return Err(Error::InvalidDepth(depth));
    }
    if h.point_count == 0 {
        return Err(Error::CorruptPayload("zero points".into()));
    }
    let quantizers = [
        Quantizer::new(i32::from(h.qp_luma))?,
        Quantizer::new(i32::from(h.qp_chroma))?,
        Quantizer::new(i32::from(h.qp_chroma))?,
    ];
    let n = h.point_count as usize;
    // every key needs at least one byte
    if parts.geometry.len() < n {
        return Err(Error::Truncated("geometry"));
    }
    let keys = decode_geometry(parts.geometry, n, depth)?;
    let geom = FrameGeometry::new(LayeredOctree::from_sorted_keys(depth as usize, keys));
    let kmax = max_skip(geom.tree.depth());
    let flags = h.flags.flags();
    if let Some(&bad) = flags.iter().find(|&&k| k > kmax) {
        return Err(Error::InvalidSkipFlag {
            flag: bad,
            layers: geom.tree.depth(),
        });
    }
    let pctx = prediction_context(&geom.tree, h.mode, reference)?;
    let dc_levels = decode_dc(parts.dc)?;

    let mut recon: [Vec<f64>; 3] = Default::default();
    for ch in 0..3 {
        let q = quantizers[ch];
        let b = geom.boundary(flags[ch]);
        let mut levels = decode_stream(parts.payloads[ch], &mut Contexts::default(), b)?;
        if levels.len() != b {
            return Err(Error::CorruptPayload(format!(
                "channel {ch}: {} levels, expected {b}",
                levels.len()
            )));
        }
        levels.resize(geom.ac_count(), 0);
        let root = vec![q.dequantize(dc_levels[ch]) / (n as f64).sqrt()];
        let w = geom.walk(&pctx, ch, q, 0, root, |i, _| levels[i]);
        recon[ch] = w.means.into_iter().last().unwrap();
    }
    let (cloud, float_attrs) = assemble_cloud(&geom.tree, &recon)?;
    Ok(DecodedFrame {
        header: h,
        cloud,
        float_attrs,
    })
}

#[derive(Debug, Clone)]
pub struct EncodedSequence {
    pub bytes: Vec<u8>,
    pub frames: Vec<EncodedFrame>,
}

/// The first frame is always intra; later frames use `cfg.mode` with the
/// previous reconstruction as reference.
pub fn encode_sequence(frames: &[VoxelCloud], cfg: &EncoderConfig) -> Result<EncodedSequence> {
    let mut out = Vec::with_capacity(frames.len());
    let mut reference: Option<Reference> = None;
    for (i, cloud) in frames.iter().enumerate() {
        let mut fc = *cfg;
        if i == 0 {
            fc.mode = PredictionMode::Intra;
        }
        let enc = encode_frame(cloud, &fc, reference.as_ref())?;
        if cfg.mode == PredictionMode::Inter {
            reference = Some(Reference::from_cloud(&enc.reconstruction));
        }
        out.push(enc);
    }
    let bytes = write_sequence(&out.iter().map(|f| f.bytes.clone()).collect::<Vec<_>>());
    Ok(EncodedSequence { bytes, frames: out })
}

pub fn decode_sequence(bytes: &[u8]) -> Result<Vec<DecodedFrame>> {
    let mut out: Vec<DecodedFrame> = Vec::new();
    let mut reference: Option<Reference> = None;
    for frame in read_sequence(bytes)? {
        let dec = decode_frame(frame, reference.as_ref())?;
        reference = Some(Reference::from_cloud(&dec.cloud));
        out.push(dec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize, depth: u32) -> VoxelCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = 1u32 << depth;
        let mut map = std::collections::BTreeMap::new();
        while map.len() < n {
            let v = [0; 3].map(|_| rng.gen_range(0..side));
            let base = (v[0] * 200 / side) as u8;
            map.insert(
                v,
                [base, 128 + (v[1] % 7) as u8, 100 + rng.gen_range(0..5u8)],
            );
        }
        let (v, a) = map.into_iter().unzip();
        VoxelCloud::new(depth, v, a).unwrap()
    }

    #[test]
    fn roundtrip_matches_encoder_reconstruction() {
        let c = cloud(1, 400, 6);
        for skip in [SkipMode::Off, SkipMode::Rdo, SkipMode::Forced([2, 1, 4])] {
            let cfg = EncoderConfig {
                skip,
                ..EncoderConfig::with_qp(30)
            };
            let enc = encode_frame(&c, &cfg, None).unwrap();
            let dec = decode_frame(&enc.bytes, None).unwrap();
            assert_eq!(dec.cloud, enc.reconstruction);
            assert_eq!(dec.float_attrs, enc.float_attrs);
        }
    }

    #[test]
    fn distortion_matches_attribute_error() {
        let c = cloud(2, 300, 5);
        let cfg = EncoderConfig {
            analyze: true,
            ..EncoderConfig::with_qp(40)
        };
        for k in 0..=4u8 {
            let enc = encode_frame(
                &c,
                &EncoderConfig {
                    skip: SkipMode::Forced([k; 3]),
                    ..cfg
                },
                None,
            )
            .unwrap();
            for ch in 0..3 {
                let s = &enc.stats.channels[ch];
                let d = s.table.unwrap().entries[usize::from(k)].unwrap().distortion;
                let sse: f64 = c
                    .attrs()
                    .iter()
                    .zip(&enc.float_attrs)
                    .map(|(a, r)| (f64::from(a[ch]) - r[ch]).powi(2))
                    .sum();
                assert!(
                    (d + s.dc_error - sse).abs() <= 1e-6 * sse.max(1.0),
                    "k={k} ch={ch}"
                );
            }
        }
    }

    #[test]
    fn single_point_and_bad_flags() {
        let c = VoxelCloud::new(3, vec![[1, 2, 3]], vec![[10, 20, 30]]).unwrap();
        let enc = encode_frame(&c, &EncoderConfig::with_qp(4), None).unwrap();
        assert_eq!(decode_frame(&enc.bytes, None).unwrap().cloud, c);
        let cfg = EncoderConfig {
            skip: SkipMode::Forced([3, 0, 0]),
            ..EncoderConfig::default()
        };
        assert!(matches!(
            encode_frame(&c, &cfg, None),
            Err(Error::InvalidSkipFlag { .. })
        ));
    }

    #[test]
    fn inter_requires_reference() {
        let c = cloud(3, 50, 4);
        let cfg = EncoderConfig {
            mode: PredictionMode::Inter,
            ..EncoderConfig::default()
        };
        assert_eq!(
            encode_frame(&c, &cfg, None).unwrap_err(),
            Error::MissingReference
        );
        let r = Reference::from_cloud(&c);
        let enc = encode_frame(&c, &cfg, Some(&r)).unwrap();
        assert_eq!(
            decode_frame(&enc.bytes, None).unwrap_err(),
            Error::MissingReference
        );
        assert_eq!(
            decode_frame(&enc.bytes, Some(&r)).unwrap().cloud,
            enc.reconstruction
        );
    }

    #[test]
    fn sequence_roundtrip() {
        let frames = vec![cloud(4, 200, 5), cloud(4, 200, 5), cloud(5, 150, 5)];
        let cfg = EncoderConfig {
            mode: PredictionMode::Inter,
            ..EncoderConfig::with_qp(28)
        };
        let seq = encode_sequence(&frames, &cfg).unwrap();
        let dec = decode_sequence(&seq.bytes).unwrap();
        assert_eq!(dec.len(), 3);
        assert!(seq.frames[1].bytes.len() < seq.frames[0].bytes.len());
        for (d, e) in dec.iter().zip(&seq.frames) {
            assert_eq!(d.cloud, e.reconstruction);
        }
    }
}
