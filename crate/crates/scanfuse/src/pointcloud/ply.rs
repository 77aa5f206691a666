//! PLY point-cloud I/O: ASCII and binary-little-endian readers, ASCII
//! writer. Only the vertex element with x/y/z properties is interpreted;
//! other scalar vertex properties are skipped, later elements (faces) are
//! ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

#[derive(Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Option<ScalarType> {
        Some(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            ScalarType::I32 => {
                i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as f64
            }
            ScalarType::U32 => {
                u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as f64
            }
            ScalarType::F32 => {
                f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as f64
            }
            ScalarType::F64 => f64::from_le_bytes(bytes[0..8].try_into().unwrap()),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { what: "ply", line, message: message.into() }
}

/// Writes an ASCII PLY with float32 x/y/z vertex properties. Values are
/// printed with nine significant digits, enough to round-trip the stored
/// single-precision coordinates exactly.
pub fn write_ply_ascii(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "end_header")?;
    for p in &cloud.points {
        writeln!(w, "{:.8e} {:.8e} {:.8e}", p.x as f32, p.y as f32, p.z as f32)?;
    }
    w.flush()?;
    Ok(())
}

struct Header {
    format: Format,
    vertex_count: usize,
    /// Scalar vertex properties in declaration order.
    properties: Vec<(String, ScalarType)>,
    header_lines: usize,
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut lineno = 0usize;
    let next = |r: &mut R, line: &mut String| -> Result<usize> {
        line.clear();
        let n = r.read_line(line)?;
        Ok(n)
    };

    next(r, &mut line)?;
    lineno += 1;
    if line.trim() != "ply" {
        return Err(parse_err(lineno, "missing ply magic"));
    }

    let mut format = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut in_vertex_element = false;
    loop {
        if next(r, &mut line)? == 0 {
            return Err(parse_err(lineno, "unexpected end of header"));
        }
        lineno += 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                format = Some(match tokens.get(1).copied() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLittleEndian,
                    Some(other) => {
                        return Err(parse_err(lineno, format!("unsupported format {other}")))
                    }
                    None => return Err(parse_err(lineno, "format line without a type")),
                });
            }
            Some("element") => {
                let name = tokens.get(1).copied().unwrap_or("");
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(parse_err(lineno, "duplicate vertex element"));
                    }
                    let count = tokens
                        .get(2)
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| parse_err(lineno, "bad vertex count"))?;
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    if vertex_count.is_none() {
                        return Err(parse_err(
                            lineno,
                            format!("element {name} precedes the vertex element"),
                        ));
                    }
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue;
                }
                if tokens.get(1).copied() == Some("list") {
                    return Err(parse_err(lineno, "list properties on vertices unsupported"));
                }
                let ty = tokens
                    .get(1)
                    .and_then(|s| ScalarType::parse(s))
                    .ok_or_else(|| parse_err(lineno, "unknown property type"))?;
                let name = tokens
                    .get(2)
                    .ok_or_else(|| parse_err(lineno, "property without a name"))?;
                properties.push((name.to_string(), ty));
            }
            Some("end_header") => break,
            Some(other) => return Err(parse_err(lineno, format!("unknown keyword {other}"))),
        }
    }

    let format = format.ok_or_else(|| parse_err(lineno, "no format line"))?;
    let vertex_count = vertex_count.ok_or_else(|| parse_err(lineno, "no vertex element"))?;
    Ok(Header { format, vertex_count, properties, header_lines: lineno })
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r)?;

    let mut xyz = [usize::MAX; 3];
    for (i, (name, _)) in header.properties.iter().enumerate() {
        match name.as_str() {
            "x" => xyz[0] = i,
            "y" => xyz[1] = i,
            "z" => xyz[2] = i,
            _ => {}
        }
    }
    if xyz.contains(&usize::MAX) {
        return Err(parse_err(header.header_lines, "vertex element lacks x/y/z"));
    }

    let mut points = Vec::with_capacity(header.vertex_count);
    match header.format {
        Format::Ascii => {
            let mut line = String::new();
            let mut lineno = header.header_lines;
            while points.len() < header.vertex_count {
                line.clear();
                if r.read_line(&mut line)? == 0 {
                    return Err(parse_err(lineno, "file ends before all vertices"));
                }
                lineno += 1;
                if line.trim().is_empty() {
                    continue;
                }
                let values: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(lineno, e.to_string()))?;
                if values.len() != header.properties.len() {
                    return Err(parse_err(lineno, "wrong number of vertex values"));
                }
                points.push(Vector3::new(values[xyz[0]], values[xyz[1]], values[xyz[2]]));
            }
        }
        Format::BinaryLittleEndian => {
            let stride: usize = header.properties.iter().map(|(_, t)| t.size()).sum();
            let mut offsets = Vec::with_capacity(header.properties.len());
            let mut off = 0;
            for (_, t) in &header.properties {
                offsets.push(off);
                off += t.size();
            }
            let mut record = vec![0u8; stride];
            for _ in 0..header.vertex_count {
                r.read_exact(&mut record).map_err(|_| {
                    parse_err(header.header_lines, "binary payload shorter than vertex count")
                })?;
                let fetch = |slot: usize| {
                    let (_, ty) = header.properties[slot];
                    ty.read_le(&record[offsets[slot]..])
                };
                points.push(Vector3::new(fetch(xyz[0]), fetch(xyz[1]), fetch(xyz[2])));
            }
        }
    }
    Ok(PointCloud::from_points(points))
}
