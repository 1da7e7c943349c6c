//! PLY (ascii, binary little-endian) and OBJ geometry.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::geometry::Point3;
use crate::ObjectId;

use super::{MeshError, TriMesh};

#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: TriMesh,
    /// Degenerate triangles removed during loading.
    pub dropped_degenerate: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

/// Loads a PLY or OBJ file; the format is chosen by extension, falling back
/// to the `ply` magic. Polygons are fan-triangulated.
pub fn load_mesh(path: &Path, object_id: ObjectId) -> Result<LoadedMesh, MeshError> {
    let display = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| MeshError::Io { path: display.clone(), source })?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let (vertices, polygons) = match ext.as_deref() {
        Some("obj") => parse_obj(&bytes),
        Some("ply") => parse_ply(&bytes),
        _ if bytes.starts_with(b"ply") => parse_ply(&bytes),
        _ => Err(Failure::Unsupported(format!("unknown extension {:?}", ext.unwrap_or_default()))),
    }
    .map_err(|f| f.into_error(&display))?;

    let mut triangles = Vec::new();
    for (f, poly) in polygons.iter().enumerate() {
        if poly.len() < 3 {
            return Err(MeshError::Parse { path: display, message: format!("face {f} has {} vertices", poly.len()) });
        }
        for i in 1..poly.len() - 1 {
            triangles.push([poly[0], poly[i], poly[i + 1]]);
        }
    }
    let (mesh, dropped_degenerate) = TriMesh::new(object_id, vertices, triangles).map_err(|e| match e {
        MeshError::IndexOutOfRange { .. } => MeshError::Parse { path: display.clone(), message: e.to_string() },
        MeshError::Parse { message, .. } => MeshError::Parse { path: display.clone(), message },
        other => other,
    })?;
    if dropped_degenerate > 0 {
        log::info!("{display}: dropped {dropped_degenerate} degenerate triangle(s)");
    }
    Ok(LoadedMesh { mesh, dropped_degenerate })
}

enum Failure {
    Parse(String),
    Unsupported(String),
}

impl Failure {
    fn into_error(self, path: &str) -> MeshError {
        match self {
            Failure::Parse(message) => MeshError::Parse { path: path.to_string(), message },
            Failure::Unsupported(message) => MeshError::UnsupportedFormat { path: path.to_string(), message },
        }
    }
}

fn parse_err<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Parse(msg.into()))
}

type Geometry = (Vec<Point3>, Vec<Vec<u32>>);

fn parse_obj(bytes: &[u8]) -> Result<Geometry, Failure> {
    let text = std::str::from_utf8(bytes).map_err(|e| Failure::Parse(e.to_string()))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let c: Vec<f64> = tok.take(3).map(str::parse).collect::<Result<_, _>>().map_err(|e| Failure::Parse(format!("line {}: {e}", ln + 1)))?;
                if c.len() != 3 {
                    return parse_err(format!("line {}: vertex needs 3 coordinates", ln + 1));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut face = Vec::new();
                for t in tok {
                    let idx: i64 = t.split('/').next().unwrap_or("").parse().map_err(|_| Failure::Parse(format!("line {}: bad index {t:?}", ln + 1)))?;
                    let n = vertices.len() as i64;
                    let resolved = match idx {
                        i if i > 0 && i <= n => i - 1,
                        i if i < 0 && -i <= n => n + i,
                        _ => return parse_err(format!("line {}: vertex index {idx} out of range", ln + 1)),
                    };
                    face.push(resolved as u32);
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

#[derive(Debug, Clone, Copy)]
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
    fn parse(name: &str) -> Result<Self, Failure> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return parse_err(format!("unknown property type {other:?}")),
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
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Next scalar of a PLY body, ASCII or binary little-endian.
trait RecordSource {
    fn scalar(&mut self, ty: Scalar) -> Result<f64, Failure>;
}

struct AsciiSource<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl RecordSource for AsciiSource<'_> {
    fn scalar(&mut self, _ty: Scalar) -> Result<f64, Failure> {
        let t = self.tokens.next().ok_or_else(|| Failure::Parse("unexpected end of data (element count mismatch)".into()))?;
        t.parse::<f64>().map_err(|_| Failure::Parse(format!("bad number {t:?}")))
    }
}

struct BinarySource<'a> {
    data: &'a [u8],
    pos: usize,
}

impl RecordSource for BinarySource<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64, Failure> {
        let n = ty.size();
        if self.pos + n > self.data.len() {
            return parse_err("unexpected end of binary data (element count mismatch)");
        }
        let v = ty.read_le(&self.data[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }
}

fn parse_ply(bytes: &[u8]) -> Result<Geometry, Failure> {
    let header_end = find_subslice(bytes, b"end_header").ok_or_else(|| Failure::Parse("missing end_header".into()))?;
    let body_start = bytes[header_end..].iter().position(|&b| b == b'\n').map(|p| header_end + p + 1).unwrap_or(bytes.len());
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| Failure::Parse(e.to_string()))?;

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return parse_err("missing ply magic");
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => encoding = Some(PlyEncoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(PlyEncoding::BinaryLittleEndian),
            ["format", other, _] => return Err(Failure::Unsupported(format!("PLY format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Failure::Parse(format!("bad element count {count:?}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", cnt, item, name] => elements
                .last_mut()
                .ok_or_else(|| Failure::Parse("property before element".into()))?
                .properties
                .push(Property::List(name.to_string(), Scalar::parse(cnt)?, Scalar::parse(item)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Failure::Parse("property before element".into()))?
                .properties
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return parse_err(format!("unrecognized header line {line:?}")),
        }
    }
    let encoding = encoding.ok_or_else(|| Failure::Parse("missing format line".into()))?;

    let body = &bytes[body_start..];
    let text;
    let mut source: Box<dyn RecordSource> = match encoding {
        PlyEncoding::Ascii => {
            text = std::str::from_utf8(body).map_err(|e| Failure::Parse(e.to_string()))?;
            Box::new(AsciiSource { tokens: text.split_ascii_whitespace() })
        }
        PlyEncoding::BinaryLittleEndian => Box::new(BinarySource { data: body, pos: 0 }),
    };

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        let xyz: Option<[usize; 3]> = if el.name == "vertex" {
            let find = |n: &str| el.properties.iter().position(|p| matches!(p, Property::Scalar(name, _) if name == n));
            match (find("x"), find("y"), find("z")) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                _ => return parse_err("vertex element lacks x, y, z"),
            }
        } else {
            None
        };
        let face_prop = (el.name == "face")
            .then(|| el.properties.iter().position(|p| matches!(p, Property::List(n, ..) if n == "vertex_indices" || n == "vertex_index")))
            .flatten();
        if el.name == "face" && face_prop.is_none() {
            return parse_err("face element lacks vertex_indices");
        }

        for _ in 0..el.count {
            let mut scalars = [0.0f64; 3];
            for (pi, prop) in el.properties.iter().enumerate() {
                match prop {
                    Property::Scalar(_, ty) => {
                        let v = source.scalar(*ty)?;
                        if let Some(k) = xyz.and_then(|xyz| xyz.iter().position(|&i| i == pi)) {
                            scalars[k] = v;
                        }
                    }
                    Property::List(_, cnt_ty, item_ty) => {
                        let n = source.scalar(*cnt_ty)?;
                        if !(n >= 0.0) || n.fract() != 0.0 {
                            return parse_err(format!("bad list length {n}"));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            let v = source.scalar(*item_ty)?;
                            if !(v >= 0.0) || v.fract() != 0.0 || v > u32::MAX as f64 {
                                return parse_err(format!("bad vertex index {v}"));
                            }
                            items.push(v as u32);
                        }
                        if face_prop == Some(pi) {
                            faces.push(items);
                        }
                    }
                }
            }
            if xyz.is_some() {
                vertices.push(Point3::new(scalars[0], scalars[1], scalars[2]));
            }
        }
    }
    if let Some(bad) = faces.iter().flatten().find(|&&i| i as usize >= vertices.len()) {
        return parse_err(format!("vertex index {bad} out of range ({} vertices)", vertices.len()));
    }
    Ok((vertices, faces))
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

pub fn write_ply(path: &Path, mesh: &TriMesh, encoding: PlyEncoding) -> Result<(), MeshError> {
    let mut out = Vec::new();
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        out,
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )
    .unwrap();
    match encoding {
        PlyEncoding::Ascii => {
            for v in &mesh.vertices {
                writeln!(out, "{} {} {}", v.x, v.y, v.z).unwrap();
            }
            for t in &mesh.triangles {
                writeln!(out, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            for v in &mesh.vertices {
                for c in [v.x, v.y, v.z] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            for t in &mesh.triangles {
                out.push(3);
                for i in t {
                    out.extend_from_slice(&(*i as i32).to_le_bytes());
                }
            }
        }
    }
    fs::write(path, out).map_err(|source| MeshError::Io { path: path.display().to_string(), source })
}

pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<(), MeshError> {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in &mesh.triangles {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    fs::write(path, out).map_err(|source| MeshError::Io { path: path.display().to_string(), source })
}
