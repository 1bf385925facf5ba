//! PLY reader (ASCII and binary little-endian) and ASCII writer.

use std::fmt::Write as _;

use super::color::{ycbcr_to_rgb, ColorSpace};
use super::{RawCloud, VoxelCloud};
use crate::error::PlyError;

/// Header comment used to tag files whose color columns already hold YCbCr.
const COLORSPACE_COMMENT: &str = "colorspace";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => f64::from(b[0] as i8),
            Scalar::U8 => f64::from(b[0]),
            Scalar::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Scalar::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Scalar::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar {
        name: String,
        ty: Scalar,
    },
    List {
        name: String,
        count: Scalar,
        item: Scalar,
    },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    colorspace: ColorSpace,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let malformed = |m: &str| PlyError::MalformedHeader(m.to_string());
    let mut offset = 0;
    let mut next_line = || -> Result<&str, PlyError> {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| malformed("missing end_header"))?;
        offset += end + 1;
        std::str::from_utf8(&rest[..end])
            .map(|s| s.trim_end_matches('\r'))
            .map_err(|_| malformed("non-UTF-8 header line"))
    };

    if next_line()?.trim() != "ply" {
        return Err(malformed("missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut colorspace = ColorSpace::Rgb;
    loop {
        let line = next_line()?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            None => continue,
            Some("end_header") => break,
            Some("comment") | Some("obj_info") => {
                if tok.next() == Some(COLORSPACE_COMMENT) {
                    colorspace = match tok.next() {
                        Some(s) if s.eq_ignore_ascii_case("ycbcr") => ColorSpace::YCbCr,
                        _ => ColorSpace::Rgb,
                    };
                }
            }
            Some("format") => {
                let f = tok.next().ok_or_else(|| malformed("empty format line"))?;
                format = Some(match f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => return Err(PlyError::UnsupportedFormat(other.to_string())),
                });
            }
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| malformed("element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| malformed("element without valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before any element"))?;
                let ty = tok
                    .next()
                    .ok_or_else(|| malformed("property without type"))?;
                let prop = if ty == "list" {
                    let count = tok.next().and_then(Scalar::parse);
                    let item = tok.next().and_then(Scalar::parse);
                    let name = tok.next();
                    match (count, item, name) {
                        (Some(count), Some(item), Some(name)) => Property::List {
                            name: name.to_string(),
                            count,
                            item,
                        },
                        _ => return Err(malformed(line)),
                    }
                } else {
                    let ty = Scalar::parse(ty)
                        .ok_or_else(|| PlyError::MalformedHeader(format!("unknown type `{ty}`")))?;
                    let name = tok
                        .next()
                        .ok_or_else(|| malformed("property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                el.props.push(prop);
            }
            Some(other) => {
                return Err(PlyError::MalformedHeader(format!(
                    "unknown keyword `{other}`"
                )))
            }
        }
    }
    let format = format.ok_or_else(|| malformed("missing format line"))?;
    Ok(Header {
        format,
        elements,
        colorspace,
        body_offset: offset,
    })
}

/// Column indices of the properties we extract from the vertex element.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: [usize; 3],
}

fn vertex_layout(el: &Element) -> Result<VertexLayout, PlyError> {
    let find = |name: &str| el.props.iter().position(|p| p.name() == name);
    let mut xyz = [0; 3];
    for (slot, name) in xyz.iter_mut().zip(["x", "y", "z"]) {
        *slot = find(name).ok_or(PlyError::MissingCoordinate(name))?;
    }
    let mut rgb = [0; 3];
    for (slot, name) in rgb.iter_mut().zip(["red", "green", "blue"]) {
        *slot = find(name).ok_or(PlyError::MissingColor(name))?;
        if let Property::List { .. } = el.props[*slot] {
            return Err(PlyError::MalformedHeader(format!("`{name}` is a list")));
        }
    }
    Ok(VertexLayout { xyz, rgb })
}

fn to_color(v: f64, prop: &str, index: usize) -> Result<u8, PlyError> {
    if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
        return Err(PlyError::BadValue {
            property: prop.to_string(),
            index,
            value: v.to_string(),
        });
    }
    Ok(v as u8)
}

/// Parse a PLY file into a raw cloud; vertex order is preserved.
pub fn parse_ply(bytes: &[u8]) -> Result<RawCloud, PlyError> {
    let header = parse_header(bytes)?;
    let vertex_idx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::MalformedHeader("no vertex element".into()))?;
    let vertex = &header.elements[vertex_idx];
    let layout = vertex_layout(vertex)?;
    if vertex.count == 0 {
        return Err(PlyError::Empty);
    }
    let body = &bytes[header.body_offset..];
    let (positions, colors) = match header.format {
        Format::Ascii => read_ascii(body, &header.elements, vertex_idx, &layout)?,
        Format::BinaryLe => read_binary(body, &header.elements, vertex_idx, &layout)?,
    };
    Ok(RawCloud {
        positions,
        colors,
        colorspace: header.colorspace,
    })
}

type Columns = (Vec<[f64; 3]>, Vec<[u8; 3]>);

fn read_ascii(
    body: &[u8],
    elements: &[Element],
    vertex_idx: usize,
    layout: &VertexLayout,
) -> Result<Columns, PlyError> {
    let text = String::from_utf8_lossy(body);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    for el in &elements[..vertex_idx] {
        for index in 0..el.count {
            lines.next().ok_or_else(|| PlyError::Truncated {
                element: el.name.clone(),
                index,
            })?;
        }
    }
    let vertex = &elements[vertex_idx];
    let mut positions = Vec::with_capacity(vertex.count);
    let mut colors = Vec::with_capacity(vertex.count);
    let mut values = Vec::with_capacity(vertex.props.len());
    for index in 0..vertex.count {
        let truncated = || PlyError::Truncated {
            element: vertex.name.clone(),
            index,
        };
        let line = lines.next().ok_or_else(truncated)?;
        let mut tok = line.split_whitespace();
        values.clear();
        for prop in &vertex.props {
            let mut take = || -> Result<f64, PlyError> {
                let t = tok.next().ok_or_else(truncated)?;
                t.parse::<f64>().map_err(|_| PlyError::BadValue {
                    property: prop.name().to_string(),
                    index,
                    value: t.to_string(),
                })
            };
            match prop {
                Property::Scalar { .. } => values.push(take()?),
                Property::List { .. } => {
                    let n = take()? as usize;
                    for _ in 0..n {
                        take()?;
                    }
                    values.push(f64::NAN);
                }
            }
        }
        push_vertex(&values, vertex, layout, index, &mut positions, &mut colors)?;
    }
    Ok((positions, colors))
}

fn read_binary(
    body: &[u8],
    elements: &[Element],
    vertex_idx: usize,
    layout: &VertexLayout,
) -> Result<Columns, PlyError> {
    let mut pos = 0usize;
    let skip_record = |el: &Element, index: usize, pos: &mut usize| -> Result<(), PlyError> {
        for prop in &el.props {
            let need = |n: usize, pos: usize| {
                if pos + n > body.len() {
                    Err(PlyError::Truncated {
                        element: el.name.clone(),
                        index,
                    })
                } else {
                    Ok(())
                }
            };
            match prop {
                Property::Scalar { ty, .. } => {
                    need(ty.size(), *pos)?;
                    *pos += ty.size();
                }
                Property::List { count, item, .. } => {
                    need(count.size(), *pos)?;
                    let n = count.read_le(&body[*pos..]) as usize;
                    *pos += count.size();
                    need(n * item.size(), *pos)?;
                    *pos += n * item.size();
                }
            }
        }
        Ok(())
    };
    for el in &elements[..vertex_idx] {
        for index in 0..el.count {
            skip_record(el, index, &mut pos)?;
        }
    }
    let vertex = &elements[vertex_idx];
    let mut positions = Vec::with_capacity(vertex.count);
    let mut colors = Vec::with_capacity(vertex.count);
    let mut values = Vec::with_capacity(vertex.props.len());
    for index in 0..vertex.count {
        let truncated = || PlyError::Truncated {
            element: vertex.name.clone(),
            index,
        };
        values.clear();
        for prop in &vertex.props {
            match prop {
                Property::Scalar { ty, .. } => {
                    if pos + ty.size() > body.len() {
                        return Err(truncated());
                    }
                    values.push(ty.read_le(&body[pos..]));
                    pos += ty.size();
                }
                Property::List { count, item, .. } => {
                    if pos + count.size() > body.len() {
                        return Err(truncated());
                    }
                    let n = count.read_le(&body[pos..]) as usize;
                    pos += count.size() + n * item.size();
                    if pos > body.len() {
                        return Err(truncated());
                    }
                    values.push(f64::NAN);
                }
            }
        }
        push_vertex(&values, vertex, layout, index, &mut positions, &mut colors)?;
    }
    Ok((positions, colors))
}

fn push_vertex(
    values: &[f64],
    vertex: &Element,
    layout: &VertexLayout,
    index: usize,
    positions: &mut Vec<[f64; 3]>,
    colors: &mut Vec<[u8; 3]>,
) -> Result<(), PlyError> {
    let p = layout.xyz.map(|i| values[i]);
    if let Some(axis) = p.iter().position(|v| !v.is_finite()) {
        return Err(PlyError::BadValue {
            property: vertex.props[layout.xyz[axis]].name().to_string(),
            index,
            value: p[axis].to_string(),
        });
    }
    let mut c = [0u8; 3];
    for (slot, &col) in c.iter_mut().zip(&layout.rgb) {
        *slot = to_color(values[col], vertex.props[col].name(), index)?;
    }
    positions.push(p);
    colors.push(c);
    Ok(())
}

/// Write a voxel cloud as ASCII PLY.
///
/// With [`ColorSpace::Rgb`] the stored YCbCr attributes are converted back to
/// RGB first. With [`ColorSpace::YCbCr`] the attributes are written verbatim
/// into the `red`/`green`/`blue` columns and the header is tagged so that
/// [`parse_ply`] reports the color space.
pub fn write_ply(cloud: &VoxelCloud, colorspace: ColorSpace) -> Vec<u8> {
    let mut out = String::with_capacity(64 + cloud.len() * 24);
    out.push_str("ply\nformat ascii 1.0\n");
    if colorspace == ColorSpace::YCbCr {
        out.push_str("comment colorspace YCbCr\n");
    }
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for (v, a) in cloud.voxels().iter().zip(cloud.attrs()) {
        let c = match colorspace {
            ColorSpace::Rgb => ycbcr_to_rgb(*a),
            ColorSpace::YCbCr => *a,
        };
        let _ = writeln!(out, "{} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2]);
    }
    out.into_bytes()
}

/// Write a raw cloud as binary little-endian PLY (float coordinates).
pub fn write_ply_binary(cloud: &RawCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(256 + cloud.len() * 15);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    if cloud.colorspace == ColorSpace::YCbCr {
        header.push_str("comment colorspace YCbCr\n");
    }
    let _ = writeln!(header, "element vertex {}", cloud.len());
    header.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    out.extend_from_slice(header.as_bytes());
    for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_VERTEX: &str = "ply\nformat ascii 1.0\nelement vertex 1\n\
        property float x\nproperty float y\nproperty float z\n\
        property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n\
        0 0 0 128 64 32\n";

    #[test]
    fn single_ascii_vertex() {
        let c = parse_ply(ONE_VERTEX.as_bytes()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.positions, vec![[0.0, 0.0, 0.0]]);
        assert_eq!(c.colors, vec![[128, 64, 32]]);
        assert_eq!(c.colorspace, ColorSpace::Rgb);
    }

    #[test]
    fn missing_red_is_reported() {
        let text = ONE_VERTEX.replace("property uchar red\n", "");
        assert_eq!(
            parse_ply(text.as_bytes()).unwrap_err(),
            PlyError::MissingColor("red")
        );
    }

    #[test]
    fn missing_coordinate_is_reported() {
        let text = ONE_VERTEX.replace("property float y\n", "");
        assert_eq!(
            parse_ply(text.as_bytes()).unwrap_err(),
            PlyError::MissingCoordinate("y")
        );
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(
            parse_ply(b"plx\n").unwrap_err(),
            PlyError::MalformedHeader(_)
        ));
        let no_end = "ply\nformat ascii 1.0\nelement vertex 1\n";
        assert!(matches!(
            parse_ply(no_end.as_bytes()).unwrap_err(),
            PlyError::MalformedHeader(_)
        ));
        let big_endian = ONE_VERTEX.replace("ascii", "binary_big_endian");
        assert!(matches!(
            parse_ply(big_endian.as_bytes()).unwrap_err(),
            PlyError::UnsupportedFormat(_)
        ));
    }

    #[test]
    fn truncated_ascii_payload() {
        let text = ONE_VERTEX.replace("element vertex 1", "element vertex 2");
        assert_eq!(
            parse_ply(text.as_bytes()).unwrap_err(),
            PlyError::Truncated {
                element: "vertex".into(),
                index: 1
            }
        );
        let short_line = ONE_VERTEX.replace("0 0 0 128 64 32", "0 0 0 128");
        assert!(matches!(
            parse_ply(short_line.as_bytes()).unwrap_err(),
            PlyError::Truncated { index: 0, .. }
        ));
    }

    #[test]
    fn truncated_binary_payload() {
        let raw = RawCloud {
            positions: vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
            colors: vec![[1, 2, 3], [4, 5, 6]],
            colorspace: ColorSpace::Rgb,
        };
        let bytes = write_ply_binary(&raw);
        let cut = &bytes[..bytes.len() - 3];
        assert_eq!(
            parse_ply(cut).unwrap_err(),
            PlyError::Truncated {
                element: "vertex".into(),
                index: 1
            }
        );
    }

    #[test]
    fn extra_properties_and_elements_are_skipped() {
        let text = "ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\n\
            property double x\nproperty double y\nproperty double z\n\
            property float nx\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n\
            property uchar alpha\nelement face 1\nproperty list uchar int vertex_indices\n\
            end_header\n1.5 2 3 0.1 1 2 3 255\n4 5 6 0.2 4 5 6 255\n3 0 1 1\n";
        let c = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(c.positions, vec![[1.5, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(c.colors, vec![[1, 2, 3], [4, 5, 6]]);
    }

    #[test]
    fn binary_with_double_coordinates() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n\
            property double x\nproperty double y\nproperty double z\n\
            property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
            .to_vec();
        for v in [0.25f64, 7.0, 1e3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[9, 8, 7]);
        let c = parse_ply(&bytes).unwrap();
        assert_eq!(c.positions, vec![[0.25, 7.0, 1000.0]]);
        assert_eq!(c.colors, vec![[9, 8, 7]]);
    }

    #[test]
    fn colorspace_tag_roundtrips() {
        let text = ONE_VERTEX.replace(
            "format ascii 1.0\n",
            "format ascii 1.0\ncomment colorspace YCbCr\n",
        );
        assert_eq!(
            parse_ply(text.as_bytes()).unwrap().colorspace,
            ColorSpace::YCbCr
        );
    }
}
