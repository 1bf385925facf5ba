//! Python bindings: clouds, the frame/sequence codec, metrics and synthetic
//! content. Clouds cross the boundary as `Cloud` objects; everything else is
//! plain Python data.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use rskc::cloud::{self as rc, ColorSpace, VoxelCloud};
use rskc::codec::{self, EncoderConfig, SkipMode};
use rskc::metrics::{self, RdPoint};
use rskc::octree::{self, MortonKey};
use rskc::predict::{PredictionMode, Reference};
use rskc::synth::{self, ShellParams};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type Triple = (u8, u8, u8);

// `[u8; 3]` would surface in Python as `bytes`
fn triple(a: [u8; 3]) -> Triple {
    (a[0], a[1], a[2])
}

fn colorspace(rgb: bool) -> ColorSpace {
    if rgb {
        ColorSpace::Rgb
    } else {
        ColorSpace::YCbCr
    }
}

/// A voxelized cloud with 8-bit YCbCr attributes in Morton order.
#[pyclass(module = "rskc_py", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
pub struct Cloud {
    inner: VoxelCloud,
}

#[pymethods]
impl Cloud {
    #[new]
    fn new(depth: u32, voxels: Vec<[u32; 3]>, attrs: Vec<[u8; 3]>) -> PyResult<Self> {
        VoxelCloud::new(depth, voxels, attrs)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    /// Parse PLY bytes and voxelize onto a `2^depth` grid.
    #[staticmethod]
    #[pyo3(signature = (data, depth, scale = 1.0))]
    fn from_ply(data: &[u8], depth: u32, scale: f64) -> PyResult<Self> {
        let raw = rc::parse_ply(data).map_err(err)?;
        rc::voxelize(&raw, depth, scale)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[pyo3(signature = (rgb = true))]
    fn to_ply<'py>(&self, py: Python<'py>, rgb: bool) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &rc::write_ply(&self.inner, colorspace(rgb)))
    }

    #[getter]
    fn depth(&self) -> u32 {
        self.inner.depth()
    }

    #[getter]
    fn voxels(&self) -> Vec<[u32; 3]> {
        self.inner.voxels().to_vec()
    }

    #[getter]
    fn attrs(&self) -> Vec<Triple> {
        self.inner.attrs().iter().copied().map(triple).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Cloud(depth={}, points={})",
            self.inner.depth(),
            self.inner.len()
        )
    }
}

/// Result of encoding one frame.
#[pyclass(module = "rskc_py", frozen)]
pub struct Encoded {
    frame: codec::EncodedFrame,
}

#[pymethods]
impl Encoded {
    #[getter]
    fn data<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.frame.bytes)
    }

    #[getter]
    fn reconstruction(&self) -> Cloud {
        Cloud {
            inner: self.frame.reconstruction.clone(),
        }
    }

    #[getter]
    fn flags(&self) -> Triple {
        triple(self.frame.stats.flags.flags())
    }

    #[getter]
    fn attribute_bits(&self) -> u64 {
        self.frame.stats.attribute_bits
    }

    #[getter]
    fn bpop(&self) -> f64 {
        self.frame.stats.bpop
    }

    /// Full encoder statistics as a JSON string.
    fn stats_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.frame.stats).map_err(err)
    }
}

fn config(
    qp: i32,
    qp_chroma: Option<i32>,
    mode: &str,
    skip: Option<&Bound<'_, PyAny>>,
    c: f64,
) -> PyResult<EncoderConfig> {
    let mode = match mode {
        "intra" => PredictionMode::Intra,
        "inter" => PredictionMode::Inter,
        other => {
            return Err(err(format!(
                "mode must be 'intra' or 'inter', got {other:?}"
            )))
        }
    };
    let skip = match skip {
        None => SkipMode::Rdo,
        Some(s) => {
            if let Ok(b) = s.extract::<bool>() {
                if b {
                    SkipMode::Rdo
                } else {
                    SkipMode::Off
                }
            } else if let Ok(k) = s.extract::<u8>() {
                SkipMode::Forced([k; 3])
            } else {
                SkipMode::Forced(s.extract::<[u8; 3]>()?)
            }
        }
    };
    Ok(EncoderConfig {
        qp_luma: qp,
        qp_chroma: qp_chroma.unwrap_or(qp),
        mode,
        skip,
        c,
        analyze: false,
    })
}

/// Encode one frame. `skip` is True (RDO), False (off), an int k for all
/// channels, or a per-channel triple.
#[pyfunction]
#[pyo3(signature = (cloud, qp = 34, qp_chroma = None, mode = "intra", skip = None, c = 0.26, reference = None))]
fn encode(
    cloud: &Cloud,
    qp: i32,
    qp_chroma: Option<i32>,
    mode: &str,
    skip: Option<&Bound<'_, PyAny>>,
    c: f64,
    reference: Option<&Cloud>,
) -> PyResult<Encoded> {
    let cfg = config(qp, qp_chroma, mode, skip, c)?;
    let reference = reference.map(|r| Reference::from_cloud(&r.inner));
    codec::encode_frame(&cloud.inner, &cfg, reference.as_ref())
        .map(|frame| Encoded { frame })
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (data, reference = None))]
fn decode(data: &[u8], reference: Option<&Cloud>) -> PyResult<Cloud> {
    let reference = reference.map(|r| Reference::from_cloud(&r.inner));
    codec::decode_frame(data, reference.as_ref())
        .map(|d| Cloud { inner: d.cloud })
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (frames, qp = 34, qp_chroma = None, mode = "inter", skip = None, c = 0.26))]
fn encode_sequence<'py>(
    py: Python<'py>,
    frames: Vec<PyRef<'py, Cloud>>,
    qp: i32,
    qp_chroma: Option<i32>,
    mode: &str,
    skip: Option<&Bound<'py, PyAny>>,
    c: f64,
) -> PyResult<Bound<'py, PyBytes>> {
    let cfg = config(qp, qp_chroma, mode, skip, c)?;
    let clouds: Vec<VoxelCloud> = frames.iter().map(|f| f.inner.clone()).collect();
    let seq = codec::encode_sequence(&clouds, &cfg).map_err(err)?;
    Ok(PyBytes::new(py, &seq.bytes))
}

#[pyfunction]
fn decode_sequence(data: &[u8]) -> PyResult<Vec<Cloud>> {
    let frames = codec::decode_sequence(data).map_err(err)?;
    Ok(frames
        .into_iter()
        .map(|d| Cloud { inner: d.cloud })
        .collect())
}

/// `(y, cb, cr, weighted)` in dB.
#[pyfunction]
fn psnr(orig: &Cloud, recon: &Cloud) -> PyResult<(f64, f64, f64, f64)> {
    let p = metrics::psnr(&orig.inner, &recon.inner).map_err(err)?;
    Ok((p.y, p.cb, p.cr, p.weighted()))
}

/// BD-rate in percent per channel; points are `(bpop, psnr_y, psnr_cb, psnr_cr)`.
#[pyfunction]
fn bd_rate(anchor: Vec<[f64; 4]>, test: Vec<[f64; 4]>) -> PyResult<(f64, f64, f64)> {
    let pts = |v: Vec<[f64; 4]>| -> Vec<RdPoint> {
        v.into_iter()
            .map(|p| RdPoint {
                bpop: p[0],
                psnr_y: p[1],
                psnr_cb: p[2],
                psnr_cr: p[3],
            })
            .collect()
    };
    let r = metrics::bd_rate(&pts(anchor), &pts(test)).map_err(err)?;
    Ok((r.y, r.cb, r.cr))
}

#[pyfunction]
#[pyo3(signature = (y, cb, cr, a = 7.0))]
fn bdbr_total(y: f64, cb: f64, cr: f64, a: f64) -> f64 {
    metrics::bdbr_total(y, cb, cr, a)
}

#[pyfunction]
fn complexity_ratio(t_proposed: f64, t_anchor: f64) -> PyResult<f64> {
    metrics::complexity_ratio(t_proposed, t_anchor).map_err(err)
}

#[pyfunction]
#[pyo3(name = "lambda_")]
fn lambda(c: f64, qp: i32) -> PyResult<f64> {
    rskc::rdoskip::lambda(c, qp).map_err(err)
}

#[pyfunction]
fn rgb_to_ycbcr(rgb: [u8; 3]) -> Triple {
    triple(rc::rgb_to_ycbcr(rgb))
}

#[pyfunction]
fn ycbcr_to_rgb(ycbcr: [u8; 3]) -> Triple {
    triple(rc::ycbcr_to_rgb(ycbcr))
}

#[pyfunction]
fn morton_encode(x: u32, y: u32, z: u32, depth: u32) -> PyResult<u64> {
    octree::morton_encode(x, y, z, depth)
        .map(MortonKey::value)
        .map_err(err)
}

#[pyfunction]
fn morton_decode(key: u64) -> [u32; 3] {
    octree::morton_decode(MortonKey::new(key))
}

#[pyfunction]
#[pyo3(signature = (depth = 7, seed = 0, frequency = 2.0, grain = 0.0, frame = 0, motion = 0.0))]
fn sphere_shell(
    depth: u32,
    seed: u64,
    frequency: f64,
    grain: f64,
    frame: u32,
    motion: f64,
) -> PyResult<Cloud> {
    let p = ShellParams {
        depth,
        frequency,
        grain,
        ..ShellParams::with_seed(seed)
    };
    synth::sphere_shell_frame(&p, frame, motion)
        .map(|inner| Cloud { inner })
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (depth, seed = 0))]
fn dense_gradient(depth: u32, seed: u64) -> PyResult<Cloud> {
    synth::dense_gradient(depth, seed)
        .map(|inner| Cloud { inner })
        .map_err(err)
}

#[pymodule]
fn rskc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Cloud>()?;
    m.add_class::<Encoded>()?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(encode_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(decode_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(bd_rate, m)?)?;
    m.add_function(wrap_pyfunction!(bdbr_total, m)?)?;
    m.add_function(wrap_pyfunction!(complexity_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(lambda, m)?)?;
    m.add_function(wrap_pyfunction!(rgb_to_ycbcr, m)?)?;
    m.add_function(wrap_pyfunction!(ycbcr_to_rgb, m)?)?;
    m.add_function(wrap_pyfunction!(morton_encode, m)?)?;
    m.add_function(wrap_pyfunction!(morton_decode, m)?)?;
    m.add_function(wrap_pyfunction!(sphere_shell, m)?)?;
    m.add_function(wrap_pyfunction!(dense_gradient, m)?)?;
    Ok(())
}
