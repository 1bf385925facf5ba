//! Container layout. All integers are little-endian.
//!
//! ```text
//! offset size field
//!      0    4 magic "RSKC"
//!      4    1 version (1)
//!      5    1 octree depth
//!      6    4 point count
//!     10    1 luma QP
//!     11    1 chroma QP
//!     12    2 round(c * 1000)
//!     14    1 mode (0 intra, 1 inter)
//!     15    2 skip flags: luma bits 0-2, Cb bits 3-5, Cr bits 6-8
//!     17    4 geometry payload length
//!     21    4 DC payload length
//!     25   12 Y, Cb, Cr residual payload lengths
//!     37      geometry, DC, Y, Cb, Cr payloads back to back
//! ```
//!
//! Bytes after the last payload are ignored.

use crate::coder::{BitReader, BitWriter};
use crate::error::{Error, Result};
use crate::predict::PredictionMode;
use crate::rdoskip::{SkipDecision, MAX_SKIP};

pub const MAGIC: [u8; 4] = *b"RSKC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 37;
pub const SEQUENCE_MAGIC: [u8; 4] = *b"RSKS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub version: u8,
    pub depth: u8,
    pub point_count: u32,
    pub qp_luma: u8,
    pub qp_chroma: u8,
    pub c_times_1000: u16,
    pub mode: PredictionMode,
    pub flags: SkipDecision,
    pub geometry_len: u32,
    pub dc_len: u32,
    pub payload_lens: [u32; 3],
}

impl FrameHeader {
    pub fn packed_flags(&self) -> u16 {
        let f = self.flags.flags();
        u16::from(f[0]) | u16::from(f[1]) << 3 | u16::from(f[2]) << 6
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.push(self.depth);
        out.extend_from_slice(&self.point_count.to_le_bytes());
        out.push(self.qp_luma);
        out.push(self.qp_chroma);
        out.extend_from_slice(&self.c_times_1000.to_le_bytes());
        out.push(match self.mode {
            PredictionMode::Intra => 0,
            PredictionMode::Inter => 1,
        });
        out.extend_from_slice(&self.packed_flags().to_le_bytes());
        out.extend_from_slice(&self.geometry_len.to_le_bytes());
        out.extend_from_slice(&self.dc_len.to_le_bytes());
        for l in self.payload_lens {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }

    pub fn read(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated("header"));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = bytes[4];
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let mode = match bytes[14] {
            0 => PredictionMode::Intra,
            1 => PredictionMode::Inter,
            m => return Err(Error::CorruptPayload(format!("unknown mode {m}"))),
        };
        let packed = u16_at(15);
        let flags = [packed & 7, packed >> 3 & 7, packed >> 6 & 7].map(|f| f as u8);
        if let Some(&f) = flags.iter().find(|&&f| f > MAX_SKIP) {
            return Err(Error::InvalidSkipFlag {
                flag: f,
                layers: usize::from(bytes[5]),
            });
        }
        if packed >> 9 != 0 {
            return Err(Error::CorruptPayload("reserved flag bits set".into()));
        }
        Ok(Self {
            version,
            depth: bytes[5],
            point_count: u32_at(6),
            qp_luma: bytes[10],
            qp_chroma: bytes[11],
            c_times_1000: u16_at(12),
            mode,
            flags: SkipDecision::new(flags),
            geometry_len: u32_at(17),
            dc_len: u32_at(21),
            payload_lens: [u32_at(25), u32_at(29), u32_at(33)],
        })
    }

    pub fn total_len(&self) -> usize {
        HEADER_LEN
            + self.geometry_len as usize
            + self.dc_len as usize
            + self.payload_lens.iter().map(|&l| l as usize).sum::<usize>()
    }
}

/// Payload slices of a frame, located from the header's length fields.
#[derive(Debug, Clone, Copy)]
pub struct FrameParts<'a> {
    pub header: FrameHeader,
    pub geometry: &'a [u8],
    pub dc: &'a [u8],
    pub payloads: [&'a [u8]; 3],
}

pub fn split_frame(bytes: &[u8]) -> Result<FrameParts<'_>> {
    let header = FrameHeader::read(bytes)?;
    if bytes.len() < header.total_len() {
        return Err(Error::Truncated("payload"));
    }
    let mut at = HEADER_LEN;
    let mut take = |n: u32| {
        let s = &bytes[at..at + n as usize];
        at += n as usize;
        s
    };
    let geometry = take(header.geometry_len);
    let dc = take(header.dc_len);
    let payloads = header.payload_lens.map(&mut take);
    Ok(FrameParts {
        header,
        geometry,
        dc,
        payloads,
    })
}

pub fn write_varint(mut v: u64, out: &mut Vec<u8>) {
    while v >= 0x80 {
        out.push((v as u8 & 0x7f) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub fn read_varint(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *bytes.get(*pos).ok_or(Error::Truncated("geometry"))?;
        *pos += 1;
        v |= u64::from(b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(Error::CorruptPayload("varint too long".into()))
}

/// Morton keys as varint deltas (first key relative to 0).
pub fn encode_geometry(keys: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(keys.len() * 2);
    let mut prev = 0u64;
    for (i, &k) in keys.iter().enumerate() {
        let delta = if i == 0 { k } else { k - prev - 1 };
        write_varint(delta, &mut out);
        prev = k;
    }
    out
}

pub fn decode_geometry(bytes: &[u8], count: usize, depth: u32) -> Result<Vec<u64>> {
    let limit = 1u64 << (3 * depth);
    let mut keys = Vec::with_capacity(count);
    let mut pos = 0;
    let mut prev = 0u64;
    for i in 0..count {
        let d = read_varint(bytes, &mut pos)?;
        let k = if i == 0 {
            Some(d)
        } else {
            prev.checked_add(d).and_then(|v| v.checked_add(1))
        };
        let k = k
            .filter(|&k| k < limit)
            .ok_or_else(|| Error::CorruptPayload("geometry key out of range".into()))?;
        keys.push(k);
        prev = k;
    }
    Ok(keys)
}

/// Quantized root DCs, exp-Golomb magnitude plus a sign bit when nonzero.
pub fn encode_dc(levels: [i64; 3]) -> Vec<u8> {
    let mut w = BitWriter::new();
    for l in levels {
        w.put_eg0(l.unsigned_abs());
        if l != 0 {
            w.put(l < 0);
        }
    }
    w.into_bytes()
}

pub fn decode_dc(bytes: &[u8]) -> Result<[i64; 3]> {
    let mut r = BitReader::new(bytes);
    let mut out = [0i64; 3];
    for slot in &mut out {
        let mag = r
            .get_eg0(40)
            .ok_or_else(|| Error::CorruptPayload("DC prefix too long".into()))?;
        let v = mag as i64;
        *slot = if v != 0 && r.get() { -v } else { v };
    }
    if r.exhausted() {
        return Err(Error::Truncated("dc"));
    }
    Ok(out)
}

/// Frames of a sequence: magic, count, then length-prefixed frames.
pub fn write_sequence(frames: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&SEQUENCE_MAGIC);
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for f in frames {
        out.extend_from_slice(&(f.len() as u32).to_le_bytes());
        out.extend_from_slice(f);
    }
    out
}

pub fn read_sequence(bytes: &[u8]) -> Result<Vec<&[u8]>> {
    if bytes.len() < 8 || bytes[..4] != SEQUENCE_MAGIC {
        return Err(Error::BadMagic);
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let mut at = 8;
    let mut frames = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len_bytes = bytes.get(at..at + 4).ok_or(Error::Truncated("sequence"))?;
        let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        at += 4;
        frames.push(
            bytes
                .get(at..at + len)
                .ok_or(Error::Truncated("sequence"))?,
        );
        at += len;
    }
    Ok(frames)
}
