//! Quality and rate metrics.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cloud::VoxelCloud;
use crate::error::{Error, Result};

pub const PEAK: f64 = 255.0;
pub const LUMA_WEIGHT: f64 = 7.0;
pub const BD_MIN_POINTS: usize = 4;

/// Per-channel PSNR in dB; `f64::INFINITY` for a perfect match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub y: f64,
    pub cb: f64,
    pub cr: f64,
}

impl Psnr {
    pub fn weighted(&self) -> f64 {
        weighted_psnr(self.y, self.cb, self.cr)
    }

    pub fn channel(&self, ch: usize) -> f64 {
        [self.y, self.cb, self.cr][ch]
    }
}

/// 7:1:1 luma-weighted average.
pub fn weighted_psnr(y: f64, cb: f64, cr: f64) -> f64 {
    (LUMA_WEIGHT * y + cb + cr) / (LUMA_WEIGHT + 2.0)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

/// Attribute PSNR between two clouds with identical geometry.
pub fn psnr(orig: &VoxelCloud, recon: &VoxelCloud) -> Result<Psnr> {
    if orig.depth() != recon.depth() || orig.voxels() != recon.voxels() {
        return Err(Error::GeometryMismatch(format!(
            "{} voxels at depth {} vs {} at depth {}",
            orig.len(),
            orig.depth(),
            recon.len(),
            recon.depth()
        )));
    }
    let mut sse = [0.0f64; 3];
    for (a, b) in orig.attrs().iter().zip(recon.attrs()) {
        for ch in 0..3 {
            let e = f64::from(a[ch]) - f64::from(b[ch]);
            sse[ch] += e * e;
        }
    }
    let n = orig.len() as f64;
    let [y, cb, cr] = sse.map(|s| psnr_from_mse(s / n));
    Ok(Psnr { y, cb, cr })
}

/// One rate-distortion sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub bpop: f64,
    pub psnr_y: f64,
    pub psnr_cb: f64,
    pub psnr_cr: f64,
}

impl RdPoint {
    pub fn new(bpop: f64, p: Psnr) -> Self {
        Self {
            bpop,
            psnr_y: p.y,
            psnr_cb: p.cb,
            psnr_cr: p.cr,
        }
    }

    pub fn psnr(&self) -> Psnr {
        Psnr {
            y: self.psnr_y,
            cb: self.psnr_cb,
            cr: self.psnr_cr,
        }
    }

    pub fn psnr_weighted(&self) -> f64 {
        self.psnr().weighted()
    }
}

/// BD-rate per channel, in percent. Negative means fewer bits at equal quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdResult {
    pub y: f64,
    pub cb: f64,
    pub cr: f64,
}

impl BdResult {
    pub fn total(&self) -> f64 {
        bdbr_total(self.y, self.cb, self.cr, LUMA_WEIGHT)
    }
}

/// Least-squares cubic `ln(rate) ≈ poly(psnr - center)`; coefficients lowest first.
fn fit_cubic(points: &[(f64, f64)], center: f64) -> Result<[f64; 4]> {
    let n = points.len();
    let a = DMatrix::from_fn(n, 4, |i, j| (points[i].1 - center).powi(j as i32));
    let b = DVector::from_iterator(n, points.iter().map(|p| p.0.ln()));
    let x = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::InvalidRdData(e.to_string()))?;
    Ok([x[0], x[1], x[2], x[3]])
}

fn integral(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let prim = |t: f64| {
        c[0] * t + c[1] * t.powi(2) / 2.0 + c[2] * t.powi(3) / 3.0 + c[3] * t.powi(4) / 4.0
    };
    prim(hi) - prim(lo)
}

fn check_curve(points: &[(f64, f64)]) -> Result<()> {
    if points.len() < BD_MIN_POINTS {
        return Err(Error::InsufficientPoints(points.len()));
    }
    for &(r, p) in points {
        if !(r.is_finite() && r > 0.0 && p.is_finite()) {
            return Err(Error::InvalidRdData(format!("rate {r}, psnr {p}")));
        }
    }
    let mut ps: Vec<f64> = points.iter().map(|p| p.1).collect();
    ps.sort_by(f64::total_cmp);
    if ps.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidRdData("duplicate PSNR values".into()));
    }
    Ok(())
}

/// Bjøntegaard delta rate of one channel from `(rate, psnr)` samples.
pub fn bd_rate_curve(anchor: &[(f64, f64)], test: &[(f64, f64)]) -> Result<f64> {
    check_curve(anchor)?;
    check_curve(test)?;
    let range = |c: &[(f64, f64)]| {
        c.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.1), hi.max(p.1))
            })
    };
    let (alo, ahi) = range(anchor);
    let (tlo, thi) = range(test);
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    if lo >= hi {
        return Err(Error::NoOverlap);
    }
    let center = (lo + hi) / 2.0;
    let fa = fit_cubic(anchor, center)?;
    let ft = fit_cubic(test, center)?;
    let (u, v) = (lo - center, hi - center);
    let avg = (integral(&ft, u, v) - integral(&fa, u, v)) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}

/// Per-channel BD-rate, each channel's PSNR against the total attribute BPOP.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<BdResult> {
    let curve = |pts: &[RdPoint], ch: usize| -> Vec<(f64, f64)> {
        pts.iter().map(|p| (p.bpop, p.psnr().channel(ch))).collect()
    };
    let [y, cb, cr] = [0, 1, 2].map(|ch| bd_rate_curve(&curve(anchor, ch), &curve(test, ch)));
    Ok(BdResult {
        y: y?,
        cb: cb?,
        cr: cr?,
    })
}

/// `a * y + cb + cr`.
pub fn bdbr_total(y: f64, cb: f64, cr: f64, a: f64) -> f64 {
    a * y + cb + cr
}

/// Run time of the proposal relative to the anchor, in percent.
pub fn complexity_ratio(t_pro: f64, t_anc: f64) -> Result<f64> {
    if !(t_anc.is_finite() && t_anc > 0.0) || !(t_pro.is_finite() && t_pro >= 0.0) {
        return Err(Error::InvalidRdData(format!("times {t_pro} / {t_anc}")));
    }
    Ok(100.0 * t_pro / t_anc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerStat {
    pub layer: usize,
    pub ac_count: usize,
    pub zeros: usize,
}

impl LayerStat {
    /// 1.0 for an empty layer.
    pub fn zero_fraction(&self) -> f64 {
        if self.ac_count == 0 {
            1.0
        } else {
            self.zeros as f64 / self.ac_count as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerStats {
    pub layers: Vec<LayerStat>,
}

impl LayerStats {
    pub fn total_ac(&self) -> usize {
        self.layers.iter().map(|l| l.ac_count).sum()
    }
}

/// Zero residual counts per layer of a coding-order level sequence.
pub fn layer_stats(levels: &[i64], layer_offsets: &[usize]) -> LayerStats {
    let layers = layer_offsets
        .windows(2)
        .enumerate()
        .map(|(layer, w)| {
            let (s, e) = (w[0].min(levels.len()), w[1].min(levels.len()));
            let slice = &levels[s..e];
            LayerStat {
                layer,
                ac_count: slice.len(),
                zeros: slice.iter().filter(|&&v| v == 0).count(),
            }
        })
        .collect();
    LayerStats { layers }
}

pub fn write_rd_csv<W: Write>(points: &[RdPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p).map_err(|e| Error::Csv(e.to_string()))?;
    }
    if points.is_empty() {
        w.write_record(["bpop", "psnr_y", "psnr_cb", "psnr_cr"])
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

pub fn read_rd_csv<R: Read>(input: R) -> Result<Vec<RdPoint>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = r.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    for need in ["bpop", "psnr_y", "psnr_cb", "psnr_cr"] {
        if !headers.iter().any(|h| h == need) {
            return Err(Error::Csv(format!("missing column {need}")));
        }
    }
    r.deserialize()
        .map(|rec| rec.map_err(|e| Error::Csv(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        [30.0, 34.0, 38.0, 42.0, 46.0]
            .iter()
            .map(|&p| (f(p), p))
            .collect()
    }

    #[test]
    fn psnr_formula() {
        let c = VoxelCloud::new(
            2,
            vec![[0, 0, 0], [1, 0, 0]],
            vec![[10, 20, 30], [40, 50, 60]],
        )
        .unwrap();
        let p = psnr(&c, &c).unwrap();
        assert!(p.y.is_infinite() && p.cb.is_infinite() && p.cr.is_infinite());
        let r = c.with_attrs(vec![[11, 20, 30], [39, 50, 60]]).unwrap();
        let p = psnr(&c, &r).unwrap();
        assert!((p.y - 48.1308036086791).abs() < 1e-9);
        assert!((weighted_psnr(50.0, 40.0, 40.0) - 430.0 / 9.0).abs() < 1e-12);
        let other = VoxelCloud::new(2, vec![[0, 0, 0], [2, 0, 0]], vec![[0; 3]; 2]).unwrap();
        assert!(matches!(psnr(&c, &other), Err(Error::GeometryMismatch(_))));
    }

    #[test]
    fn bd_rate_basics() {
        let a = curve(|p| (p / 10.0 - 2.0).exp());
        assert_eq!(bd_rate_curve(&a, &a).unwrap(), 0.0);
        let doubled: Vec<_> = a.iter().map(|&(r, p)| (2.0 * r, p)).collect();
        assert!((bd_rate_curve(&a, &doubled).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(
            bd_rate_curve(&a[..3], &a).unwrap_err(),
            Error::InsufficientPoints(3)
        );
        let far: Vec<_> = a.iter().map(|&(r, p)| (r, p + 100.0)).collect();
        assert_eq!(bd_rate_curve(&a, &far).unwrap_err(), Error::NoOverlap);
    }

    #[test]
    fn bd_rate_analytic() {
        // ln r_test - ln r_anchor = 0.01 * p, so the average log gap over
        // [34, 46] is 0.01 * 40.
        let a = curve(|p| (0.2 * p - 5.0).exp());
        let t: Vec<_> = curve(|p| (0.21 * p - 5.0).exp())
            .into_iter()
            .skip(1)
            .collect();
        let expected = ((0.01f64 * 40.0).exp() - 1.0) * 100.0;
        let got = bd_rate_curve(&a, &t).unwrap();
        assert!(
            (got - expected).abs() / expected < 1e-3,
            "{got} vs {expected}"
        );
    }

    #[test]
    fn totals_and_ratios() {
        assert_eq!(bdbr_total(0.0, 0.0, 0.0, 7.0), 0.0);
        assert_eq!(bdbr_total(-1.0, -1.0, -1.0, 7.0), -9.0);
        assert!((bdbr_total(-3.50, -5.56, -4.18, 7.0) + 34.24).abs() < 1e-9);
        assert_eq!(complexity_ratio(2.0, 2.0).unwrap(), 100.0);
        assert_eq!(complexity_ratio(0.0, 2.0).unwrap(), 0.0);
        assert!(complexity_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn layer_counts() {
        let s = layer_stats(&[0; 10], &[0, 1, 4, 10]);
        assert!(s.layers.iter().all(|l| l.zero_fraction() == 1.0));
        let s = layer_stats(&[1, 0, 2, 0, 0, 0, -1, 0, 0, 3], &[0, 1, 4, 10]);
        let f: Vec<f64> = s.layers.iter().map(LayerStat::zero_fraction).collect();
        assert_eq!(f, vec![0.0, 2.0 / 3.0, 4.0 / 6.0]);
        assert_eq!(s.total_ac(), 10);
    }

    #[test]
    fn csv_roundtrip() {
        let pts = vec![
            RdPoint {
                bpop: 0.5,
                psnr_y: 30.0,
                psnr_cb: 35.5,
                psnr_cr: 36.0,
            },
            RdPoint {
                bpop: 1.25,
                psnr_y: f64::INFINITY,
                psnr_cb: 40.0,
                psnr_cr: 41.0,
            },
        ];
        let mut buf = Vec::new();
        write_rd_csv(&pts, &mut buf).unwrap();
        assert!(buf.starts_with(b"bpop,psnr_y,psnr_cb,psnr_cr\n"));
        assert_eq!(read_rd_csv(buf.as_slice()).unwrap(), pts);
        assert!(read_rd_csv(&b"bpop,psnr_y\n1,2\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn swapping_flips_sign(shift in 0.01f64..0.5, tilt in -0.005f64..0.005) {
            let a = curve(|p| (0.2 * p - 5.0).exp());
            let t = curve(|p| (0.2 * p - 5.0 + shift + tilt * (p - 38.0)).exp());
            let fwd = bd_rate_curve(&a, &t).unwrap();
            let back = bd_rate_curve(&t, &a).unwrap();
            prop_assert!(fwd > 0.0 && back < 0.0);
            let (lf, lb) = ((1.0 + fwd / 100.0).ln(), (1.0 + back / 100.0).ln());
            prop_assert!((lf + lb).abs() < 2e-3 * lf.abs());
        }

        #[test]
        fn zero_fractions_bounded(levels in proptest::collection::vec(-2i64..3, 0..200), cuts in proptest::collection::vec(0usize..200, 0..6)) {
            let mut offsets: Vec<usize> = cuts.into_iter().map(|c| c.min(levels.len())).collect();
            offsets.push(0);
            offsets.push(levels.len());
            offsets.sort_unstable();
            let s = layer_stats(&levels, &offsets);
            prop_assert_eq!(s.total_ac(), levels.len());
            for l in &s.layers {
                prop_assert!((0.0..=1.0).contains(&l.zero_fraction()));
            }
        }
    }
}
