//! Minimal PLY 1.0 reader/writer.
//!
//! The reader understands `ascii` and `binary_little_endian` bodies with any
//! number of elements. Scalar properties are widened to `f64`; list properties
//! must have integer items and are kept as `i64`. The writer emits a `vertex`
//! element (float32 `x y z [nx ny nz]`) and an optional `face` element
//! (`list uchar int vertex_indices`).

use std::io::Write;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("PLY parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err<T>(offset: usize, message: impl Into<String>) -> Result<T, PlyError> {
    Err(PlyError::Parse {
        offset,
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

impl PlyFormat {
    fn header_name(self) -> &'static str {
        match self {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary_little_endian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
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

    fn is_integer(self) -> bool {
        !matches!(self, Self::F32 | Self::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
pub struct PropertyDef {
    pub name: String,
    pub kind: PropertyKind,
}

#[derive(Debug, Clone)]
pub enum Column {
    Scalar(Vec<f64>),
    List(Vec<Vec<i64>>),
}

#[derive(Debug, Clone)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<PropertyDef>,
    pub columns: Vec<Column>,
}

impl Element {
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        let i = self.properties.iter().position(|p| p.name == name)?;
        match &self.columns[i] {
            Column::Scalar(v) => Some(v),
            Column::List(_) => None,
        }
    }

    pub fn list(&self, name: &str) -> Option<&[Vec<i64>]> {
        let i = self.properties.iter().position(|p| p.name == name)?;
        match &self.columns[i] {
            Column::List(v) => Some(v),
            Column::Scalar(_) => None,
        }
    }

    pub fn has(&self, name: &str) -> bool {
        self.properties.iter().any(|p| p.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct PlyData {
    pub format: PlyFormat,
    pub elements: Vec<Element>,
}

impl PlyData {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }
}

pub fn read_ply(bytes: &[u8]) -> Result<PlyData, PlyError> {
    let (format, mut elements, body_start) = parse_header(bytes)?;
    match format {
        PlyFormat::Ascii => read_ascii_body(bytes, body_start, &mut elements)?,
        PlyFormat::BinaryLittleEndian => read_binary_body(bytes, body_start, &mut elements)?,
    }
    Ok(PlyData { format, elements })
}

fn parse_header(bytes: &[u8]) -> Result<(PlyFormat, Vec<Element>, usize), PlyError> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String), PlyError> {
        let start = *pos;
        let Some(rel) = bytes[start..].iter().position(|&b| b == b'\n') else {
            return parse_err(start, "unterminated header");
        };
        *pos = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| PlyError::Parse {
                offset: start,
                message: "header is not valid UTF-8".into(),
            })?
            .trim_end_matches('\r')
            .to_string();
        Ok((start, line))
    };

    let (off, magic) = next_line(&mut pos)?;
    if magic.trim() != "ply" {
        return parse_err(off, "missing 'ply' magic");
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (off, line) = next_line(&mut pos)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                if tokens.len() != 3 || tokens[2] != "1.0" {
                    return parse_err(off, format!("unsupported format line '{line}'"));
                }
                format = Some(match tokens[1] {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return parse_err(off, format!("unsupported encoding '{other}'")),
                });
            }
            Some("element") => {
                if tokens.len() != 3 {
                    return parse_err(off, format!("malformed element line '{line}'"));
                }
                let count = tokens[2]
                    .parse::<usize>()
                    .or_else(|_| parse_err(off, format!("bad element count '{}'", tokens[2])))?;
                elements.push(Element {
                    name: tokens[1].to_string(),
                    count,
                    properties: Vec::new(),
                    columns: Vec::new(),
                });
            }
            Some("property") => {
                let Some(element) = elements.last_mut() else {
                    return parse_err(off, "property before any element");
                };
                let def = match tokens.as_slice() {
                    ["property", "list", count, item, name] => {
                        let (Some(count), Some(item)) =
                            (ScalarType::parse(count), ScalarType::parse(item))
                        else {
                            return parse_err(off, format!("unknown list types in '{line}'"));
                        };
                        if !count.is_integer() || !item.is_integer() {
                            return parse_err(off, "list properties must be integer typed");
                        }
                        PropertyDef {
                            name: name.to_string(),
                            kind: PropertyKind::List { count, item },
                        }
                    }
                    ["property", ty, name] => {
                        let Some(ty) = ScalarType::parse(ty) else {
                            return parse_err(off, format!("unknown property type '{ty}'"));
                        };
                        PropertyDef {
                            name: name.to_string(),
                            kind: PropertyKind::Scalar(ty),
                        }
                    }
                    _ => return parse_err(off, format!("malformed property line '{line}'")),
                };
                if element.has(&def.name) {
                    return parse_err(off, format!("duplicate property '{}'", def.name));
                }
                element.properties.push(def);
            }
            Some("end_header") => break,
            Some(other) => return parse_err(off, format!("unknown header keyword '{other}'")),
        }
    }
    let Some(format) = format else {
        return parse_err(0, "header has no format line");
    };
    Ok((format, elements, pos))
}

fn read_ascii_body(bytes: &[u8], start: usize, elements: &mut [Element]) -> Result<(), PlyError> {
    let body = std::str::from_utf8(&bytes[start..]).map_err(|e| PlyError::Parse {
        offset: start + e.valid_up_to(),
        message: "ASCII body is not valid UTF-8".into(),
    })?;
    // (byte offset of line start, line)
    let mut lines = body
        .split('\n')
        .scan(start, |off, line| {
            let this = *off;
            *off += line.len() + 1;
            Some((this, line.trim()))
        })
        .filter(|(_, l)| !l.is_empty());

    for element in elements.iter_mut() {
        let mut columns: Vec<Column> = element
            .properties
            .iter()
            .map(|p| match p.kind {
                PropertyKind::Scalar(_) => Column::Scalar(Vec::with_capacity(element.count)),
                PropertyKind::List { .. } => Column::List(Vec::with_capacity(element.count)),
            })
            .collect();
        for row in 0..element.count {
            let Some((off, line)) = lines.next() else {
                return parse_err(
                    bytes.len(),
                    format!(
                        "element '{}' declares {} rows but body ends after {row}",
                        element.name, element.count
                    ),
                );
            };
            let mut tokens = line.split_whitespace();
            for (prop, column) in element.properties.iter().zip(columns.iter_mut()) {
                let mut take = |what: &str| -> Result<f64, PlyError> {
                    let Some(tok) = tokens.next() else {
                        return parse_err(off, format!("row {row} of '{}' is missing {what}", element.name));
                    };
                    tok.parse::<f64>()
                        .or_else(|_| parse_err(off, format!("cannot parse '{tok}' as a number")))
                };
                match (&prop.kind, column) {
                    (PropertyKind::Scalar(_), Column::Scalar(v)) => v.push(take(&prop.name)?),
                    (PropertyKind::List { .. }, Column::List(v)) => {
                        let n = take("list length")?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return parse_err(off, format!("bad list length {n}"));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            let x = take(&prop.name)?;
                            if x.fract() != 0.0 {
                                return parse_err(off, format!("non-integer list item {x}"));
                            }
                            items.push(x as i64);
                        }
                        v.push(items);
                    }
                    _ => unreachable!(),
                }
            }
            if tokens.next().is_some() {
                return parse_err(off, format!("row {row} of '{}' has extra values", element.name));
            }
        }
        element.columns = columns;
    }
    if let Some((off, _)) = lines.next() {
        return parse_err(off, "data after the last declared element (element count mismatch)");
    }
    Ok(())
}

fn read_binary_body(bytes: &[u8], start: usize, elements: &mut [Element]) -> Result<(), PlyError> {
    let mut pos = start;
    let need = |pos: usize, n: usize, what: &str| -> Result<(), PlyError> {
        if pos + n > bytes.len() {
            parse_err(pos, format!("unexpected end of data while reading {what} (element count mismatch)"))
        } else {
            Ok(())
        }
    };
    for element in elements.iter_mut() {
        let mut columns: Vec<Column> = element
            .properties
            .iter()
            .map(|p| match p.kind {
                PropertyKind::Scalar(_) => Column::Scalar(Vec::with_capacity(element.count)),
                PropertyKind::List { .. } => Column::List(Vec::with_capacity(element.count)),
            })
            .collect();
        for _ in 0..element.count {
            for (prop, column) in element.properties.iter().zip(columns.iter_mut()) {
                match (&prop.kind, column) {
                    (PropertyKind::Scalar(ty), Column::Scalar(v)) => {
                        need(pos, ty.size(), &prop.name)?;
                        v.push(ty.read_le(&bytes[pos..]));
                        pos += ty.size();
                    }
                    (PropertyKind::List { count, item }, Column::List(v)) => {
                        need(pos, count.size(), "list length")?;
                        let n = count.read_le(&bytes[pos..]);
                        if n < 0.0 {
                            return parse_err(pos, format!("negative list length {n}"));
                        }
                        pos += count.size();
                        let n = n as usize;
                        need(pos, n * item.size(), &prop.name)?;
                        let items = (0..n)
                            .map(|k| item.read_le(&bytes[pos + k * item.size()..]) as i64)
                            .collect();
                        pos += n * item.size();
                        v.push(items);
                    }
                    _ => unreachable!(),
                }
            }
        }
        element.columns = columns;
    }
    if pos != bytes.len() {
        return parse_err(pos, "trailing bytes after the last declared element (element count mismatch)");
    }
    Ok(())
}

/// Writes a vertex element with float32 positions and optional normals, plus
/// an optional triangle `face` element.
pub fn write_ply<W: Write>(
    mut out: W,
    format: PlyFormat,
    positions: &[[f64; 3]],
    normals: Option<&[[f64; 3]]>,
    faces: Option<&[[u32; 3]]>,
) -> std::io::Result<()> {
    let mut header = format!(
        "ply\nformat {} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        format.header_name(),
        positions.len()
    );
    if normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    if let Some(faces) = faces {
        header.push_str(&format!(
            "element face {}\nproperty list uchar int vertex_indices\n",
            faces.len()
        ));
    }
    header.push_str("end_header\n");
    out.write_all(header.as_bytes())?;

    match format {
        PlyFormat::Ascii => {
            let mut line = String::new();
            for (i, p) in positions.iter().enumerate() {
                line.clear();
                use std::fmt::Write as _;
                let _ = write!(line, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32);
                if let Some(n) = normals {
                    let n = n[i];
                    let _ = write!(line, " {} {} {}", n[0] as f32, n[1] as f32, n[2] as f32);
                }
                line.push('\n');
                out.write_all(line.as_bytes())?;
            }
            if let Some(faces) = faces {
                for f in faces {
                    writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride = if normals.is_some() { 24 } else { 12 };
            let mut buf = Vec::with_capacity(positions.len() * stride);
            for (i, p) in positions.iter().enumerate() {
                for c in p {
                    buf.extend_from_slice(&(*c as f32).to_le_bytes());
                }
                if let Some(n) = normals {
                    for c in n[i] {
                        buf.extend_from_slice(&(c as f32).to_le_bytes());
                    }
                }
            }
            if let Some(faces) = faces {
                for f in faces {
                    buf.push(3u8);
                    for &v in f {
                        buf.extend_from_slice(&(v as i32).to_le_bytes());
                    }
                }
            }
            out.write_all(&buf)?;
        }
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_header_and_body() {
        let text = b"ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 2 3\n3 0 1 1\n";
        let ply = read_ply(text).unwrap();
        let v = ply.element("vertex").unwrap();
        assert_eq!(v.scalar("y").unwrap(), &[0.0, 2.0]);
        let f = ply.element("face").unwrap();
        assert_eq!(f.list("vertex_indices").unwrap()[0], vec![0, 1, 1]);
    }

    #[test]
    fn truncated_ascii_body_reports_count_mismatch() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nend_header\n1\n2\n";
        match read_ply(text) {
            Err(PlyError::Parse { message, .. }) => assert!(message.contains("declares 3 rows")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_binary_body_names_offset() {
        let mut bytes =
            b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nend_header\n".to_vec();
        let header_len = bytes.len();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        match read_ply(&bytes) {
            Err(PlyError::Parse { offset, .. }) => assert_eq!(offset, header_len + 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_encoding_rejected() {
        let text = b"ply\nformat binary_big_endian 1.0\nend_header\n";
        assert!(read_ply(text).is_err());
    }
}
