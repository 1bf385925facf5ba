//! Adaptive binary arithmetic coder with 32-bit registers.
//!
//! Probabilities are stored as `P(bit = 1)` in units of 1/65536, start at
//! 1/2, move a sixteenth of the way toward each coded bit and are clamped to
//! `[1/512, 511/512]`. Bypass bins use a fixed probability of 1/2.

use super::bits::{BitReader, BitWriter};

pub const PROB_BITS: u32 = 16;
pub const PROB_ONE: u32 = 1 << PROB_BITS;
pub const PROB_MIN: u32 = PROB_ONE / 512;
pub const PROB_MAX: u32 = PROB_ONE - PROB_MIN;
pub const ADAPT_SHIFT: u32 = 4;

const TOP: u64 = (1 << 32) - 1;
const HALF: u64 = 1 << 31;
const QUARTER: u64 = 1 << 30;
const THREE_QUARTERS: u64 = 3 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Context {
    p1: u32,
}

impl Default for Context {
    fn default() -> Self {
        Self { p1: PROB_ONE / 2 }
    }
}

impl Context {
    pub fn p1(&self) -> u32 {
        self.p1
    }

    /// Probability of `bit` as a fraction.
    pub fn probability(&self, bit: bool) -> f64 {
        let p = if bit { self.p1 } else { PROB_ONE - self.p1 };
        f64::from(p) / f64::from(PROB_ONE)
    }

    /// Cost of coding `bit` in this state, in bits.
    pub fn cost(&self, bit: bool) -> f64 {
        -self.probability(bit).log2()
    }

    #[inline]
    pub fn update(&mut self, bit: bool) {
        let p = self.p1 as i32;
        let target = if bit { PROB_ONE as i32 } else { 0 };
        let next = p + (target - p) / (1 << ADAPT_SHIFT);
        self.p1 = (next as u32).clamp(PROB_MIN, PROB_MAX);
    }
}

/// Anything that consumes bins: the encoder, the rate estimator, a recorder.
pub trait BinSink {
    fn bin(&mut self, ctx: &mut Context, bit: bool);
    fn bypass(&mut self, bit: bool);

    fn bypass_eg0(&mut self, n: u64) {
        let m = n + 1;
        let len = 64 - m.leading_zeros();
        for _ in 1..len {
            self.bypass(false);
        }
        for i in (0..len).rev() {
            self.bypass(m >> i & 1 == 1);
        }
    }
}

#[inline]
fn split(low: u64, high: u64, p1: u32) -> u64 {
    let range = high - low + 1;
    let p0 = u64::from(PROB_ONE - p1);
    low + ((range * p0) >> PROB_BITS) - 1
}

#[derive(Debug, Clone)]
pub struct ArithEncoder {
    low: u64,
    high: u64,
    pending: u64,
    out: BitWriter,
}

impl Default for ArithEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl ArithEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            high: TOP,
            pending: 0,
            out: BitWriter::new(),
        }
    }

    fn emit(&mut self, bit: bool) {
        self.out.put(bit);
        for _ in 0..self.pending {
            self.out.put(!bit);
        }
        self.pending = 0;
    }

    fn encode(&mut self, bit: bool, p1: u32) {
        let mid = split(self.low, self.high, p1);
        if bit {
            self.low = mid + 1;
        } else {
            self.high = mid;
        }
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < THREE_QUARTERS {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = self.high << 1 | 1;
        }
    }

    /// Flush with two disambiguating bits; returns the bytes and exact bit count.
    pub fn finish(mut self) -> (Vec<u8>, u64) {
        self.pending += 1;
        let bit = self.low >= QUARTER;
        self.emit(bit);
        let bits = self.out.bit_len();
        (self.out.into_bytes(), bits)
    }

    pub fn bits_so_far(&self) -> u64 {
        self.out.bit_len() + self.pending
    }
}

impl BinSink for ArithEncoder {
    fn bin(&mut self, ctx: &mut Context, bit: bool) {
        self.encode(bit, ctx.p1);
        ctx.update(bit);
    }

    fn bypass(&mut self, bit: bool) {
        self.encode(bit, PROB_ONE / 2);
    }
}

#[derive(Debug, Clone)]
pub struct ArithDecoder<'a> {
    low: u64,
    high: u64,
    value: u64,
    input: BitReader<'a>,
}

impl<'a> ArithDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        let mut input = BitReader::new(bytes);
        let value = input.get_bits(32);
        Self {
            low: 0,
            high: TOP,
            value,
            input,
        }
    }

    fn decode(&mut self, p1: u32) -> bool {
        let mid = split(self.low, self.high, p1);
        let bit = self.value > mid;
        if bit {
            self.low = mid + 1;
        } else {
            self.high = mid;
        }
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.low -= HALF;
                self.high -= HALF;
                self.value -= HALF;
            } else if self.low >= QUARTER && self.high < THREE_QUARTERS {
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.value -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = self.high << 1 | 1;
            self.value = self.value << 1 | u64::from(self.input.get());
        }
        bit
    }

    pub fn bin(&mut self, ctx: &mut Context) -> bool {
        let bit = self.decode(ctx.p1);
        ctx.update(bit);
        bit
    }

    pub fn bypass(&mut self) -> bool {
        self.decode(PROB_ONE / 2)
    }

    /// `None` if the prefix runs past `max_prefix` zeros.
    pub fn bypass_eg0(&mut self, max_prefix: u32) -> Option<u64> {
        let mut zeros = 0;
        while !self.bypass() {
            zeros += 1;
            if zeros > max_prefix {
                return None;
            }
        }
        let mut m = 1u64;
        for _ in 0..zeros {
            m = m << 1 | u64::from(self.bypass());
        }
        Some(m - 1)
    }
}

/// Accumulates `-log2 p` per context bin and one bit per bypass bin.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RateEstimator {
    bits: f64,
}

impl RateEstimator {
    pub fn bits(&self) -> f64 {
        self.bits
    }
}

impl BinSink for RateEstimator {
    #[inline]
    fn bin(&mut self, ctx: &mut Context, bit: bool) {
        self.bits += ctx.cost(bit);
        ctx.update(bit);
    }

    #[inline]
    fn bypass(&mut self, _bit: bool) {
        self.bits += 1.0;
    }
}
