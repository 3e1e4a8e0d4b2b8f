//! ENVI-header-compatible cube files: a `<name>.hdr` text header next to a
//! `<name>.raw` little-endian 32-bit float payload.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::HsiCube;

/// Header and payload locations for a cube base name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubePaths {
    pub header: PathBuf,
    pub raw: PathBuf,
}

impl CubePaths {
    /// Accepts `name`, `name.hdr` or `name.raw`.
    pub fn new(path: impl AsRef<Path>) -> Self {
        let path = path.as_ref();
        let base = match path.extension().and_then(|e| e.to_str()) {
            Some("hdr" | "raw") => path.with_extension(""),
            _ => path.to_path_buf(),
        };
        Self {
            header: append_ext(&base, "hdr"),
            raw: append_ext(&base, "raw"),
        }
    }
}

fn append_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn write_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<CubePaths> {
    let paths = CubePaths::new(path);
    let header = format!(
        "ENVI\nsamples = {}\nlines = {}\nbands = {}\nheader offset = 0\nfile type = ENVI Standard\ndata type = 4\ninterleave = bsq\nbyte order = 0\n",
        cube.width(),
        cube.height(),
        cube.bands()
    );
    fs::write(&paths.header, header).map_err(|e| Error::io(&paths.header, e))?;

    let file = fs::File::create(&paths.raw).map_err(|e| Error::io(&paths.raw, e))?;
    let mut out = BufWriter::new(file);
    for v in cube.data() {
        out.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&paths.raw, e))?;
    }
    out.flush().map_err(|e| Error::io(&paths.raw, e))?;
    Ok(paths)
}

fn parse_header(text: &str, path: &Path) -> Result<HashMap<String, String>> {
    let mut fields = HashMap::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let line = line.trim();
        if line.is_empty() || line.eq_ignore_ascii_case("ENVI") || line.starts_with(';') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::format(path, format!("unparseable header line `{line}`")));
        };
        let mut value = value.trim().to_string();
        if value.starts_with('{') {
            while !value.contains('}') {
                let next = lines
                    .next()
                    .ok_or_else(|| Error::format(path, format!("unterminated `{{` in `{}`", key.trim())))?;
                value.push(' ');
                value.push_str(next.trim());
            }
        }
        fields.insert(key.trim().to_ascii_lowercase(), value);
    }
    Ok(fields)
}

fn field_usize(fields: &HashMap<String, String>, key: &str, path: &Path) -> Result<usize> {
    let raw = fields
        .get(key)
        .ok_or_else(|| Error::format(path, format!("missing header field `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::format(path, format!("header field `{key}` is not an integer: `{raw}`")))
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let paths = CubePaths::new(path);
    let text = fs::read_to_string(&paths.header).map_err(|e| Error::io(&paths.header, e))?;
    let hdr = &paths.header;
    let fields = parse_header(&text, hdr)?;

    let width = field_usize(&fields, "samples", hdr)?;
    let height = field_usize(&fields, "lines", hdr)?;
    let bands = field_usize(&fields, "bands", hdr)?;
    let data_type = field_usize(&fields, "data type", hdr)?;
    let offset = match fields.get("header offset") {
        Some(_) => field_usize(&fields, "header offset", hdr)?,
        None => 0,
    };
    let byte_order = match fields.get("byte order") {
        Some(_) => field_usize(&fields, "byte order", hdr)?,
        None => 0,
    };
    let interleave = fields
        .get("interleave")
        .map(|s| s.to_ascii_lowercase())
        .unwrap_or_else(|| "bsq".into());

    if data_type != 4 {
        return Err(Error::Unsupported(format!(
            "{}: data type {data_type} (only 4, 32-bit float, is supported)",
            hdr.display()
        )));
    }
    if byte_order != 0 {
        return Err(Error::Unsupported(format!(
            "{}: big-endian byte order",
            hdr.display()
        )));
    }
    if !matches!(interleave.as_str(), "bsq" | "bil" | "bip") {
        return Err(Error::Unsupported(format!("{}: interleave `{interleave}`", hdr.display())));
    }
    if width == 0 || height == 0 || bands == 0 {
        return Err(Error::format(hdr, "zero-sized cube"));
    }

    let bytes = fs::read(&paths.raw).map_err(|e| Error::io(&paths.raw, e))?;
    let count = width * height * bands;
    let expected = offset + 4 * count;
    if bytes.len() != expected {
        return Err(Error::format(
            &paths.raw,
            format!(
                "payload is {} bytes, header ({width}x{height}x{bands}, offset {offset}) implies {expected}",
                bytes.len()
            ),
        ));
    }
    let values: Vec<f32> = bytes[offset..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(&paths.raw, format!("non-finite value at element {i}")));
    }

    let plane = width * height;
    let data = match interleave.as_str() {
        "bsq" => values,
        "bil" => {
            // line-major: [y][band][x]
            let mut d = vec![0.0; count];
            for y in 0..height {
                for b in 0..bands {
                    let src = (y * bands + b) * width;
                    let dst = b * plane + y * width;
                    d[dst..dst + width].copy_from_slice(&values[src..src + width]);
                }
            }
            d
        }
        _ => {
            // pixel-major: [y][x][band]
            let mut d = vec![0.0; count];
            for p in 0..plane {
                for b in 0..bands {
                    d[b * plane + p] = values[p * bands + b];
                }
            }
            d
        }
    };
    HsiCube::new(height, width, bands, data)
}
