use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::{Error, Point3, PointCloud, Result};

/// Whitespace separated `x y z` per line; blank lines and `#` comments are skipped.
pub fn parse_xyz<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut pts = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = s
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("xyz line {}: {e}", n + 1)))?;
        if v.len() != 3 {
            return Err(Error::Parse(format!(
                "xyz line {}: expected 3 values, got {}",
                n + 1,
                v.len()
            )));
        }
        pts.push(Point3::new(v[0], v[1], v[2]));
    }
    PointCloud::new(pts)
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    parse_xyz(BufReader::new(fs::File::open(path)?))
}

/// Shortest round-trip representation of every coordinate.
pub fn write_xyz_to<W: Write>(cloud: &PointCloud, mut w: W) -> Result<()> {
    for p in cloud {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

pub fn write_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_xyz_to(cloud, &mut f)?;
    f.flush()?;
    Ok(())
}

fn scalar_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, String)>,
}

/// Binary little-endian PLY; `x`, `y`, `z` of the `vertex` element as float or double.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    const END: &[u8] = b"end_header";
    let pos = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Parse("ply: missing end_header".into()))?;
    let mut body = pos + END.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) != Some(&b'\n') {
        return Err(Error::Parse("ply: malformed end_header line".into()));
    }
    body += 1;
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| Error::Parse("ply: header is not UTF-8".into()))?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(Error::Parse("ply: missing magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_ok = false;
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", f, _] => return Err(Error::Parse(format!("ply: unsupported format {f}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Parse(format!("ply: bad count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => return Err(Error::Parse("ply: list properties are not supported".into())),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Parse("ply: property before element".into()))?
                .props
                .push((ty.to_string(), name.to_string())),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(Error::Parse(format!("ply: unexpected header line {line:?}"))),
        }
    }
    if !format_ok {
        return Err(Error::Parse("ply: missing format line".into()));
    }
    let mut offset = body;
    for el in &elements {
        let sizes: Vec<usize> = el
            .props
            .iter()
            .map(|(ty, _)| scalar_size(ty).ok_or_else(|| Error::Parse(format!("ply: unknown type {ty}"))))
            .collect::<Result<_>>()?;
        let stride: usize = sizes.iter().sum();
        if el.name != "vertex" {
            offset += stride * el.count;
            continue;
        }
        let field = |axis: &str| -> Result<(usize, &str)> {
            let i = el
                .props
                .iter()
                .position(|(_, n)| n == axis)
                .ok_or_else(|| Error::Parse(format!("ply: vertex has no {axis}")))?;
            Ok((sizes[..i].iter().sum(), el.props[i].0.as_str()))
        };
        let fields = [field("x")?, field("y")?, field("z")?];
        let need = offset + stride * el.count;
        if bytes.len() < need {
            return Err(Error::Parse(format!(
                "ply: truncated body ({} of {need} bytes)",
                bytes.len()
            )));
        }
        let mut pts = Vec::with_capacity(el.count);
        for v in 0..el.count {
            let base = offset + v * stride;
            let mut c = [0.0; 3];
            for (k, (off, ty)) in fields.iter().enumerate() {
                let at = base + off;
                c[k] = match *ty {
                    "float" | "float32" => f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64,
                    "double" | "float64" => f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()),
                    other => return Err(Error::Parse(format!("ply: coordinate type {other} unsupported"))),
                };
            }
            pts.push(Point3::new(c[0], c[1], c[2]));
        }
        return PointCloud::new(pts);
    }
    Err(Error::Parse("ply: no vertex element".into()))
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_ply(&bytes)
}

/// Binary little-endian PLY with `float` x/y/z.
pub fn ply_bytes(cloud: &PointCloud) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    )
    .into_bytes();
    for p in cloud {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ply_bytes(cloud))?;
    Ok(())
}

/// Dispatches on extension: `.ply` or anything else as XYZ.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ply") => read_ply(path),
        _ => read_xyz(path),
    }
}

pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ply") => write_ply(cloud, path),
        _ => write_xyz(cloud, path),
    }
}
