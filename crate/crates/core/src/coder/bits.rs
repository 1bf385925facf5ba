//! MSB-first bit writer/reader and order-0 exp-Golomb helpers.

#[derive(Debug, Clone, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn put(&mut self, bit: bool) {
        let shift = 7 - (self.bits % 8) as u8;
        if shift == 7 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 1 << shift;
        }
        self.bits += 1;
    }

    pub fn put_bits(&mut self, value: u64, count: u32) {
        for i in (0..count).rev() {
            self.put(value >> i & 1 == 1);
        }
    }

    pub fn put_eg0(&mut self, n: u64) {
        let m = n + 1;
        let len = 64 - m.leading_zeros();
        self.put_bits(0, len - 1);
        self.put_bits(m, len);
    }

    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Reads bits MSB-first; past the end it yields zeros.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    #[inline]
    pub fn get(&mut self) -> bool {
        let byte = (self.pos / 8) as usize;
        let bit = match self.bytes.get(byte) {
            Some(b) => b >> (7 - self.pos % 8) & 1 == 1,
            None => false,
        };
        self.pos += 1;
        bit
    }

    pub fn get_bits(&mut self, count: u32) -> u64 {
        (0..count).fold(0, |acc, _| acc << 1 | u64::from(self.get()))
    }

    /// `None` if the prefix runs past `max_prefix` zeros.
    pub fn get_eg0(&mut self, max_prefix: u32) -> Option<u64> {
        let mut zeros = 0;
        while !self.get() {
            zeros += 1;
            if zeros > max_prefix {
                return None;
            }
        }
        let rest = self.get_bits(zeros);
        Some(((1u64 << zeros) | rest) - 1)
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn exhausted(&self) -> bool {
        self.pos > self.bytes.len() as u64 * 8
    }
}

/// Order-0 exp-Golomb code of `n` as a bit vector.
pub fn eg0_bits(n: u64) -> Vec<bool> {
    let m = n + 1;
    let len = 64 - m.leading_zeros();
    let mut out = vec![false; (len - 1) as usize];
    out.extend((0..len).rev().map(|i| m >> i & 1 == 1));
    out
}

pub fn eg0_len(n: u64) -> u32 {
    2 * (64 - (n + 1).leading_zeros()) - 1
}
