//! Quantization and entropy coding of coefficient residual levels.
//!
//! A level sequence is tokenized into alternating zero runs and nonzero
//! values. The stream starts with the number of nonzero values (bypass
//! exp-Golomb), then each `(run, value)` pair, then a terminal run covering
//! the zeros after the last nonzero value.
//!
//! Nonzero values are binarized as a sign bin, an `isone` bin (`|v| == 1`),
//! an `istwo` bin (`|v| == 2`) when `|v| > 1`, and a bypass exp-Golomb
//! suffix of `|v| - 3` when `|v| > 2`. Zero is never coded as a value, so
//! the "is zero" decision is carried by the run lengths. Runs use truncated
//! unary with three context-coded bins followed by a bypass exp-Golomb
//! suffix of `len - 3` when `len >= 3`.

mod arith;
mod bits;

pub use arith::{
    ArithDecoder, ArithEncoder, BinSink, Context, RateEstimator, ADAPT_SHIFT, PROB_MAX, PROB_MIN,
    PROB_ONE,
};
pub use bits::{eg0_bits, eg0_len, BitReader, BitWriter};

use crate::error::{Error, Result};

pub const QP_MIN: i32 = 4;
pub const QP_MAX: i32 = 51;
pub const RUN_CMAX: u32 = 3;

/// Longest exp-Golomb prefix accepted when decoding.
const MAX_EG0_PREFIX: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    qp: i32,
    step: f64,
}

impl Quantizer {
    /// Step size `2^((qp - 12) / 6)`.
    pub fn new(qp: i32) -> Result<Self> {
        if !(QP_MIN..=QP_MAX).contains(&qp) {
            return Err(Error::InvalidQp(qp));
        }
        Ok(Self {
            qp,
            step: 2f64.powf(f64::from(qp - 12) / 6.0),
        })
    }

    pub fn qp(&self) -> i32 {
        self.qp
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    #[inline]
    pub fn quantize(&self, residual: f64) -> i64 {
        (residual / self.step).round() as i64
    }

    #[inline]
    pub fn dequantize(&self, level: i64) -> f64 {
        level as f64 * self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinKind {
    Sign,
    IsOne,
    IsTwo,
    Run(u8),
    Bypass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bin {
    pub kind: BinKind,
    pub bit: bool,
}

/// Adaptive contexts for one residual stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Contexts {
    pub sign: Context,
    pub isone: Context,
    pub istwo: Context,
    pub run: [Context; RUN_CMAX as usize],
}

/// Records bins instead of coding them.
#[derive(Debug, Default)]
struct Recorder {
    bins: Vec<Bin>,
    kind: Option<BinKind>,
}

impl BinSink for Recorder {
    fn bin(&mut self, _ctx: &mut Context, bit: bool) {
        let kind = self.kind.expect("kind set before each context bin");
        self.bins.push(Bin { kind, bit });
    }

    fn bypass(&mut self, bit: bool) {
        self.bins.push(Bin {
            kind: BinKind::Bypass,
            bit,
        });
    }
}

fn put_value<S: BinSink>(
    v: i64,
    ctx: &mut Contexts,
    sink: &mut S,
    mut tag: impl FnMut(&mut S, BinKind),
) {
    debug_assert!(v != 0);
    let mag = v.unsigned_abs();
    tag(sink, BinKind::Sign);
    sink.bin(&mut ctx.sign, v < 0);
    tag(sink, BinKind::IsOne);
    sink.bin(&mut ctx.isone, mag == 1);
    if mag > 1 {
        tag(sink, BinKind::IsTwo);
        sink.bin(&mut ctx.istwo, mag == 2);
        if mag > 2 {
            sink.bypass_eg0(mag - 3);
        }
    }
}

fn put_run<S: BinSink>(
    len: u64,
    cmax: u32,
    ctx: &mut Contexts,
    sink: &mut S,
    mut tag: impl FnMut(&mut S, BinKind),
) {
    let cmax = cmax.min(RUN_CMAX);
    for i in 0..cmax {
        let one = len > u64::from(i);
        tag(sink, BinKind::Run(i as u8));
        sink.bin(&mut ctx.run[i as usize], one);
        if !one {
            return;
        }
    }
    sink.bypass_eg0(len - u64::from(cmax));
}

fn no_tag<S>(_: &mut S, _: BinKind) {}

/// Bins for a nonzero level.
pub fn binarize_value(v: i64) -> Result<Vec<Bin>> {
    if v == 0 {
        return Err(Error::ZeroValue);
    }
    let mut r = Recorder::default();
    put_value(v, &mut Contexts::default(), &mut r, |s, k| s.kind = Some(k));
    Ok(r.bins)
}

/// Bins for a zero run (truncated unary, `cmax <= 3`, plus exp-Golomb suffix).
pub fn binarize_run(len: u64, cmax: u32) -> Vec<Bin> {
    let mut r = Recorder::default();
    put_run(len, cmax, &mut Contexts::default(), &mut r, |s, k| {
        s.kind = Some(k)
    });
    r.bins
}

/// Run/value tokens of a level sequence: `(zeros before, value)` pairs and the
/// terminal run.
pub fn tokenize(levels: &[i64]) -> (Vec<(u64, i64)>, u64) {
    let mut tokens = Vec::new();
    let mut run = 0u64;
    for &l in levels {
        if l == 0 {
            run += 1;
        } else {
            tokens.push((run, l));
            run = 0;
        }
    }
    (tokens, run)
}

fn write_levels<S: BinSink>(levels: &[i64], ctx: &mut Contexts, sink: &mut S) {
    let (tokens, tail) = tokenize(levels);
    sink.bypass_eg0(tokens.len() as u64);
    for (run, v) in tokens {
        put_run(run, RUN_CMAX, ctx, sink, no_tag);
        put_value(v, ctx, sink, no_tag);
    }
    put_run(tail, RUN_CMAX, ctx, sink, no_tag);
}

/// Arithmetic-coded residual payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPayload {
    pub bytes: Vec<u8>,
    /// Exact number of meaningful bits; `bytes` is zero-padded to a byte boundary.
    pub bits: u64,
}

/// Encode `levels` starting from the context state `ctx`, which is advanced.
pub fn encode_stream(levels: &[i64], ctx: &mut Contexts) -> EncodedPayload {
    let mut enc = ArithEncoder::new();
    write_levels(levels, ctx, &mut enc);
    let (bytes, bits) = enc.finish();
    EncodedPayload { bytes, bits }
}

/// Encode with fresh contexts.
pub fn encode_levels(levels: &[i64]) -> EncodedPayload {
    encode_stream(levels, &mut Contexts::default())
}

fn get_run(dec: &mut ArithDecoder, ctx: &mut Contexts) -> Result<u64> {
    for i in 0..RUN_CMAX {
        if !dec.bin(&mut ctx.run[i as usize]) {
            return Ok(u64::from(i));
        }
    }
    dec.bypass_eg0(MAX_EG0_PREFIX)
        .map(|n| n + u64::from(RUN_CMAX))
        .ok_or_else(|| Error::CorruptPayload("run length prefix too long".into()))
}

fn get_value(dec: &mut ArithDecoder, ctx: &mut Contexts) -> Result<i64> {
    let negative = dec.bin(&mut ctx.sign);
    let mag = if dec.bin(&mut ctx.isone) {
        1
    } else if dec.bin(&mut ctx.istwo) {
        2
    } else {
        dec.bypass_eg0(MAX_EG0_PREFIX)
            .ok_or_else(|| Error::CorruptPayload("value prefix too long".into()))?
            + 3
    };
    let mag = i64::try_from(mag).map_err(|_| Error::CorruptPayload("value overflow".into()))?;
    Ok(if negative { -mag } else { mag })
}

/// Decode a payload produced by [`encode_stream`]. `max_len` bounds the number
/// of levels accepted.
pub fn decode_stream(bytes: &[u8], ctx: &mut Contexts, max_len: usize) -> Result<Vec<i64>> {
    let too_long = || Error::CorruptPayload(format!("stream exceeds {max_len} levels"));
    let mut dec = ArithDecoder::new(bytes);
    let nnz = dec
        .bypass_eg0(MAX_EG0_PREFIX)
        .ok_or_else(|| Error::CorruptPayload("count prefix too long".into()))?;
    if nnz > max_len as u64 {
        return Err(too_long());
    }
    let mut levels = Vec::new();
    let push_zeros = |levels: &mut Vec<i64>, n: u64| -> Result<()> {
        if levels.len() as u64 + n > max_len as u64 {
            return Err(too_long());
        }
        levels.resize(levels.len() + n as usize, 0);
        Ok(())
    };
    for _ in 0..nnz {
        let run = get_run(&mut dec, ctx)?;
        push_zeros(&mut levels, run)?;
        let v = get_value(&mut dec, ctx)?;
        if levels.len() >= max_len {
            return Err(too_long());
        }
        levels.push(v);
    }
    let tail = get_run(&mut dec, ctx)?;
    push_zeros(&mut levels, tail)?;
    Ok(levels)
}

pub fn decode_levels(bytes: &[u8], max_len: usize) -> Result<Vec<i64>> {
    decode_stream(bytes, &mut Contexts::default(), max_len)
}

/// Estimated coded size in bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct RateEstimate {
    pub bits: f64,
}

/// Estimate the cost of coding `levels` from the context state `snapshot`.
/// The caller's contexts are never touched; the snapshot copy is advanced.
pub fn estimate_bits(levels: &[i64], snapshot: &Contexts) -> RateEstimate {
    let mut ctx = *snapshot;
    let mut est = RateEstimator::default();
    write_levels(levels, &mut ctx, &mut est);
    RateEstimate { bits: est.bits() }
}
