//! BT.709 full-range RGB <-> YCbCr conversion on 8-bit triples.
//!
//! Forward matrix (offsets of 128 on the chroma rows):
//!
//! ```text
//! Y  =  0.212600 R + 0.715200 G + 0.072200 B
//! Cb = -0.114572 R - 0.385428 G + 0.500000 B + 128
//! Cr =  0.500000 R - 0.454153 G - 0.045847 B + 128
//! ```
//!
//! Inverse:
//!
//! ```text
//! R = Y                        + 1.574800 (Cr - 128)
//! G = Y - 0.187324 (Cb - 128)  - 0.468124 (Cr - 128)
//! B = Y + 1.855600 (Cb - 128)
//! ```
//!
//! Results are rounded half away from zero and clamped to `[0, 255]`.

use serde::{Deserialize, Serialize};

pub const RGB_TO_YCBCR: [[f64; 3]; 3] = [
    [0.212600, 0.715200, 0.072200],
    [-0.114572, -0.385428, 0.500000],
    [0.500000, -0.454153, -0.045847],
];

pub const YCBCR_TO_RGB: [[f64; 3]; 3] = [
    [1.0, 0.0, 1.574800],
    [1.0, -0.187324, -0.468124],
    [1.0, 1.855600, 0.0],
];

pub const CHROMA_OFFSET: f64 = 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColorSpace {
    Rgb,
    YCbCr,
}

#[inline]
pub(crate) fn round_clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn rgb_to_ycbcr(rgb: [u8; 3]) -> [u8; 3] {
    let v = rgb.map(f64::from);
    let mut out = [0u8; 3];
    for (ch, row) in RGB_TO_YCBCR.iter().enumerate() {
        let offset = if ch == 0 { 0.0 } else { CHROMA_OFFSET };
        out[ch] = round_clamp_u8(row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + offset);
    }
    out
}

pub fn ycbcr_to_rgb(ycbcr: [u8; 3]) -> [u8; 3] {
    let y = f64::from(ycbcr[0]);
    let cb = f64::from(ycbcr[1]) - CHROMA_OFFSET;
    let cr = f64::from(ycbcr[2]) - CHROMA_OFFSET;
    YCBCR_TO_RGB.map(|row| round_clamp_u8(row[0] * y + row[1] * cb + row[2] * cr))
}
