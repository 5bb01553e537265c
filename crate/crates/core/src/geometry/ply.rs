//! PLY point clouds.
//!
//! Reads `ascii 1.0` and `binary_little_endian 1.0` files. Only the `vertex`
//! element is interpreted: `x`, `y`, `z` are required, `nx`, `ny`, `nz` are
//! optional. Other elements and properties, including list properties, are
//! parsed and skipped. Header lines are `ply`, `format`, `comment`,
//! `obj_info`, `element <name> <count>`, `property <type> <name>`,
//! `property list <count-type> <item-type> <name>` and `end_header`.
//!
//! The writer emits `float` properties when every value is exactly
//! representable in single precision and `double` otherwise, so saving and
//! loading a cloud never changes a coordinate. ASCII values are printed in
//! their shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GeometryError, PointCloud, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body: usize,
    /// Line number of the first body line (ASCII only).
    body_line: usize,
}

fn parse_err(line: usize, msg: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut lineno = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        lineno += 1;
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(lineno, "header ends before end_header"))?;
        let raw = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| parse_err(lineno, "header line is not valid UTF-8"))?;
        pos += end + 1;
        let line = raw.trim_end_matches('\r').trim();
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if lineno == 1 {
            if line != "ply" {
                return Err(parse_err(lineno, format!("expected 'ply', found '{line}'")));
            }
            continue;
        }
        match tokens.first().copied() {
            None => return Err(parse_err(lineno, "empty header line")),
            Some("comment") | Some("obj_info") => {}
            Some("format") => {
                encoding = Some(match tokens.get(1..) {
                    Some(["ascii", "1.0"]) => Encoding::Ascii,
                    Some(["binary_little_endian", "1.0"]) => Encoding::BinaryLe,
                    _ => {
                        return Err(parse_err(
                            lineno,
                            format!("unsupported format line '{line}'"),
                        ))
                    }
                });
            }
            Some("element") => {
                let [_, name, count] = tokens[..] else {
                    return Err(parse_err(
                        lineno,
                        format!("malformed element line '{line}'"),
                    ));
                };
                let count = count
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(lineno, "property before any element"))?;
                let scalar = |s: &str| {
                    Scalar::parse(s)
                        .ok_or_else(|| parse_err(lineno, format!("unknown property type '{s}'")))
                };
                let prop = match tokens[..] {
                    [_, "list", ct, it, _] => Property::List(scalar(ct)?, scalar(it)?),
                    [_, ty, name] if ty != "list" => {
                        Property::Scalar(name.to_string(), scalar(ty)?)
                    }
                    _ => {
                        return Err(parse_err(
                            lineno,
                            format!("malformed property line '{line}'"),
                        ))
                    }
                };
                elem.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_err(
                    lineno,
                    format!("unknown header keyword '{other}'"),
                ))
            }
        }
    }
    let encoding = encoding.ok_or_else(|| parse_err(lineno, "header has no format line"))?;
    Ok(Header {
        encoding,
        elements,
        body: pos,
        body_line: lineno + 1,
    })
}

/// Column indices of the vertex properties we care about.
struct VertexLayout {
    xyz: [usize; 3],
    normals: Option<[usize; 3]>,
}

fn vertex_layout(elem: &Element) -> Result<VertexLayout> {
    let find = |name: &str| {
        elem.props
            .iter()
            .position(|p| matches!(p, Property::Scalar(n, _) if n == name))
    };
    let xyz = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => {
            return Err(GeometryError::Schema(
                "vertex element lacks x, y or z".into(),
            ))
        }
    };
    let normals = match (find("nx"), find("ny"), find("nz")) {
        (Some(x), Some(y), Some(z)) => Some([x, y, z]),
        (None, None, None) => None,
        _ => {
            return Err(GeometryError::Schema(
                "vertex element has an incomplete normal".into(),
            ))
        }
    };
    Ok(VertexLayout { xyz, normals })
}

/// Parses PLY bytes into a point cloud.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vertex = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| GeometryError::Schema("no vertex element".into()))?;
    let layout = vertex_layout(&header.elements[vertex])?;
    let body = &bytes[header.body..];
    let rows = match header.encoding {
        Encoding::Ascii => read_ascii(body, header.body_line, &header.elements, vertex)?,
        Encoding::BinaryLe => read_binary(body, &header.elements, vertex)?,
    };
    let pick = |row: &[f64], idx: [usize; 3]| idx.map(|i| row[i]);
    let points = rows.iter().map(|r| pick(r, layout.xyz)).collect();
    let mut pc = PointCloud::new(points)?;
    if let Some(n) = layout.normals {
        pc = pc.with_normals(rows.iter().map(|r| pick(r, n)).collect())?;
    }
    Ok(pc)
}

/// Scalar values of every vertex row, in property order. List properties
/// contribute a placeholder so column indices stay aligned.
fn read_ascii(
    body: &[u8],
    first_line: usize,
    elements: &[Element],
    vertex: usize,
) -> Result<Vec<Vec<f64>>> {
    let text = std::str::from_utf8(body)
        .map_err(|_| parse_err(first_line, "ASCII body is not valid UTF-8"))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (first_line + i, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut out = Vec::new();
    for (ei, elem) in elements.iter().enumerate() {
        for row in 0..elem.count {
            let (lineno, line) = lines.next().ok_or_else(|| {
                parse_err(
                    first_line + row,
                    format!(
                        "element '{}' declares {} rows but the body ends after {row}",
                        elem.name, elem.count
                    ),
                )
            })?;
            let mut tokens = line.split_whitespace();
            let mut next = || -> Result<f64> {
                let t = tokens
                    .next()
                    .ok_or_else(|| parse_err(lineno, "row has too few values"))?;
                t.parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("bad number '{t}'")))
            };
            let mut values = Vec::with_capacity(elem.props.len());
            for p in &elem.props {
                match p {
                    Property::Scalar(..) => values.push(next()?),
                    Property::List(..) => {
                        let n = next()?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(parse_err(lineno, format!("bad list length {n}")));
                        }
                        for _ in 0..n as usize {
                            next()?;
                        }
                        values.push(0.0);
                    }
                }
            }
            if tokens.next().is_some() {
                return Err(parse_err(lineno, "row has too many values"));
            }
            if ei == vertex {
                out.push(values);
            }
        }
    }
    Ok(out)
}

fn read_binary(body: &[u8], elements: &[Element], vertex: usize) -> Result<Vec<Vec<f64>>> {
    let mut pos = 0;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        let s = body.get(pos..pos + n).ok_or_else(|| {
            GeometryError::Format(format!("binary body truncated while reading {what}"))
        })?;
        pos += n;
        Ok(s)
    };
    let mut out = Vec::new();
    for (ei, elem) in elements.iter().enumerate() {
        for _ in 0..elem.count {
            let mut values = Vec::with_capacity(elem.props.len());
            for p in &elem.props {
                match *p {
                    Property::Scalar(_, ty) => {
                        values.push(ty.read_le(take(ty.size(), &elem.name)?))
                    }
                    Property::List(ct, it) => {
                        let n = ct.read_le(take(ct.size(), &elem.name)?);
                        if n < 0.0 {
                            return Err(GeometryError::Format(format!("negative list length {n}")));
                        }
                        take(n as usize * it.size(), &elem.name)?;
                        values.push(0.0);
                    }
                }
            }
            if ei == vertex {
                out.push(values);
            }
        }
    }
    Ok(out)
}

pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| GeometryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ply(&bytes)
}

/// Serializes a cloud as PLY.
pub fn write_ply(pc: &PointCloud, binary: bool) -> Vec<u8> {
    let all = pc
        .points()
        .iter()
        .chain(pc.normals().unwrap_or(&[]))
        .flatten();
    let single = all.clone().all(|&v| (v as f32) as f64 == v);
    let ty = if single { "float" } else { "double" };
    let mut names = vec!["x", "y", "z"];
    if pc.normals().is_some() {
        names.extend(["nx", "ny", "nz"]);
    }
    let mut header = String::from("ply\n");
    header += if binary {
        "format binary_little_endian 1.0\n"
    } else {
        "format ascii 1.0\n"
    };
    let _ = writeln!(header, "element vertex {}", pc.len());
    for n in &names {
        let _ = writeln!(header, "property {ty} {n}");
    }
    header += "end_header\n";
    let mut out = header.into_bytes();
    let row = |i: usize| {
        let p = pc.points()[i];
        let n = pc.normals().map(|n| n[i]);
        p.into_iter().chain(n.into_iter().flatten())
    };
    for i in 0..pc.len() {
        if binary {
            for v in row(i) {
                if single {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                } else {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        } else {
            let fields: Vec<String> = row(i)
                .map(|v| {
                    if single {
                        (v as f32).to_string()
                    } else {
                        v.to_string()
                    }
                })
                .collect();
            out.extend_from_slice(fields.join(" ").as_bytes());
            out.push(b'\n');
        }
    }
    out
}

pub fn save_point_cloud(pc: &PointCloud, path: impl AsRef<Path>, binary: bool) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_ply(pc, binary)).map_err(|source| GeometryError::Io {
        path: path.to_path_buf(),
        source,
    })
}
