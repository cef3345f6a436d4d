//! Binary little-endian `.ply` codec for splat assets.
//!
//! Emitted files always use the 17-property float32 layout below. The reader
//! also accepts foreign files that reorder properties, carry extra ones
//! (higher-order `f_rest_*` coefficients, normals, custom attributes) or store
//! the required ones as doubles.

use super::{normalize_quaternion, GaussianSplatAsset, Provenance, Splat};

/// Property order of emitted files.
pub const PLY_PROPERTIES: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1",
    "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

pub const PLY_RECORD_SIZE: usize = PLY_PROPERTIES.len() * 4;

/// Properties a file must provide, in [`Splat`] field order.
const REQUIRED: [&str; 14] = [
    "x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "opacity",
    "f_dc_0", "f_dc_1", "f_dc_2",
];

const MAX_HEADER_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlyError {
    #[error("MalformedHeader at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("UnsupportedLayout ({property}): {reason}")]
    UnsupportedLayout { property: String, reason: String },
    #[error("TruncatedBody at byte {offset}: expected {expected} body bytes, found {found}")]
    TruncatedBody { offset: usize, expected: usize, found: usize },
}

fn malformed(offset: usize, reason: impl Into<String>) -> PlyError {
    PlyError::MalformedHeader { offset, reason: reason.into() }
}

fn unsupported(property: impl Into<String>, reason: impl Into<String>) -> PlyError {
    PlyError::UnsupportedLayout { property: property.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

struct Property {
    name: String,
    ty: ScalarType,
    offset: usize,
}

struct Header {
    vertex_count: usize,
    properties: Vec<Property>,
    record_size: usize,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut offset = 0usize;
    let mut lines = Vec::new();
    loop {
        if offset >= bytes.len() || offset > MAX_HEADER_BYTES {
            return Err(malformed(offset, "missing end_header"));
        }
        let end = match bytes[offset..].iter().position(|&b| b == b'\n') {
            Some(i) => offset + i,
            None => return Err(malformed(offset, "missing end_header")),
        };
        let raw = &bytes[offset..end];
        let line = std::str::from_utf8(raw)
            .map_err(|_| malformed(offset, "header line is not ASCII"))?
            .trim_end_matches('\r');
        let start = offset;
        offset = end + 1;
        if line == "end_header" {
            break;
        }
        lines.push((start, line));
    }

    let mut iter = lines.into_iter();
    match iter.next() {
        Some((_, "ply")) => {}
        _ => return Err(malformed(0, "missing ply magic")),
    }

    let mut format_seen = false;
    let mut vertex: Option<(usize, Vec<Property>)> = None;
    let mut in_vertex = false;
    let mut before_vertex_nonempty: Option<String> = None;
    for (line_offset, line) in iter {
        let mut words = line.split_ascii_whitespace();
        match words.next() {
            Some("format") => {
                let kind = words.next().unwrap_or_default();
                if kind != "binary_little_endian" {
                    return Err(unsupported("format", format!("unsupported format {kind:?}")));
                }
                format_seen = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = words.next().ok_or_else(|| malformed(line_offset, "element without name"))?;
                let count: usize = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| malformed(line_offset, format!("bad count for element {name}")))?;
                in_vertex = name == "vertex";
                if in_vertex {
                    if vertex.is_some() {
                        return Err(malformed(line_offset, "duplicate vertex element"));
                    }
                    if let Some(other) = before_vertex_nonempty.take() {
                        return Err(unsupported(other, "non-empty element precedes vertex"));
                    }
                    vertex = Some((count, Vec::new()));
                } else if vertex.is_none() && count > 0 {
                    before_vertex_nonempty = Some(name.to_owned());
                }
            }
            Some("property") => {
                let ty = words.next().ok_or_else(|| malformed(line_offset, "property without type"))?;
                if !in_vertex {
                    continue;
                }
                let props = &mut vertex.as_mut().expect("in_vertex implies vertex").1;
                if ty == "list" {
                    let name = words.last().unwrap_or("list");
                    return Err(unsupported(name, "list properties are not supported on vertices"));
                }
                let name = words
                    .next()
                    .ok_or_else(|| malformed(line_offset, "property without name"))?;
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| unsupported(name, format!("unknown scalar type {ty:?}")))?;
                let offset = props.last().map_or(0, |p: &Property| p.offset + p.ty.size());
                props.push(Property { name: name.to_owned(), ty, offset });
            }
            Some(other) => {
                return Err(malformed(line_offset, format!("unexpected header keyword {other:?}")));
            }
        }
    }
    if !format_seen {
        return Err(malformed(0, "missing format line"));
    }
    let (vertex_count, properties) =
        vertex.ok_or_else(|| unsupported("vertex", "no vertex element"))?;
    let record_size = properties.last().map_or(0, |p| p.offset + p.ty.size());
    Ok(Header { vertex_count, properties, record_size, body_offset: offset })
}

/// Parses a splat `.ply` file, tagging the asset as loaded from a file.
pub fn parse_ply(bytes: &[u8]) -> Result<GaussianSplatAsset, PlyError> {
    parse_ply_with(bytes, Provenance::File)
}

pub fn parse_ply_with(bytes: &[u8], provenance: Provenance) -> Result<GaussianSplatAsset, PlyError> {
    let header = parse_header(bytes)?;
    let mut fields = [(0usize, ScalarType::F32); 14];
    for (slot, name) in fields.iter_mut().zip(REQUIRED) {
        let prop = header
            .properties
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| unsupported(name, "missing required property"))?;
        if !matches!(prop.ty, ScalarType::F32 | ScalarType::F64) {
            return Err(unsupported(name, "required property must be float or double"));
        }
        *slot = (prop.offset, prop.ty);
    }

    let expected = header
        .vertex_count
        .checked_mul(header.record_size)
        .ok_or_else(|| malformed(header.body_offset, "vertex count overflows"))?;
    let body = &bytes[header.body_offset..];
    if body.len() < expected {
        return Err(PlyError::TruncatedBody {
            offset: header.body_offset + body.len(),
            expected,
            found: body.len(),
        });
    }

    let mut splats = Vec::with_capacity(header.vertex_count);
    for record in body[..expected].chunks_exact(header.record_size.max(1)).take(header.vertex_count) {
        let v = fields.map(|(offset, ty)| read_scalar(record, offset, ty));
        splats.push(Splat {
            position: [v[0], v[1], v[2]],
            rotation: normalize_quaternion([v[3], v[4], v[5], v[6]]),
            log_scale: [v[7], v[8], v[9]],
            raw_opacity: v[10],
            color_dc: [v[11], v[12], v[13]],
        });
    }
    Ok(GaussianSplatAsset::new(splats, provenance))
}

fn read_scalar(record: &[u8], offset: usize, ty: ScalarType) -> f32 {
    match ty {
        ScalarType::F64 => {
            f64::from_le_bytes(record[offset..offset + 8].try_into().expect("8 bytes")) as f32
        }
        _ => f32::from_le_bytes(record[offset..offset + 4].try_into().expect("4 bytes")),
    }
}

/// Serializes an asset in the 17-property float32 layout.
pub fn serialize_ply(asset: &GaussianSplatAsset) -> Vec<u8> {
    encode(asset.splats())
}

pub(super) fn encode(splats: &[Splat]) -> Vec<u8> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        splats.len()
    );
    for name in PLY_PROPERTIES {
        header.push_str("property float ");
        header.push_str(name);
        header.push('\n');
    }
    header.push_str("end_header\n");

    let mut out = Vec::with_capacity(header.len() + splats.len() * PLY_RECORD_SIZE);
    out.extend_from_slice(header.as_bytes());
    for s in splats {
        let record: [f32; 17] = [
            s.position[0],
            s.position[1],
            s.position[2],
            0.0,
            0.0,
            0.0,
            s.color_dc[0],
            s.color_dc[1],
            s.color_dc[2],
            s.raw_opacity,
            s.log_scale[0],
            s.log_scale[1],
            s.log_scale[2],
            s.rotation[0],
            s.rotation[1],
            s.rotation[2],
            s.rotation[3],
        ];
        for v in record {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}
