//! Grayscale PFM maps ("Pf"), little-endian, written with scale -1.0.
//!
//! Rows are stored bottom-to-top as the format prescribes; readers of
//! either endianness are supported, writers always emit little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Writes a single-channel float map as PFM.
pub fn write_pfm(path: impl AsRef<Path>, map: &ArrayView2<f32>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = map.dim();
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "Pf\n{} {}\n-1.0\n", w, h)?;
    // Bottom row first.
    for y in (0..h).rev() {
        for x in 0..w {
            out.write_all(&map[(y, x)].to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Convenience for f64 maps; values are narrowed to f32 at the boundary.
pub fn write_pfm_f64(path: impl AsRef<Path>, map: &ArrayView2<f64>) -> Result<()> {
    let cast = map.mapv(|v| v as f32);
    write_pfm(path, &cast.view())
}

/// Reads a single-channel PFM map.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;

    // Header: three whitespace-separated tokens ("Pf", "W H", scale), each
    // conventionally on its own line.
    let mut pos = 0usize;
    let mut line = 1usize;
    let mut token = |bytes: &[u8], line: &mut usize| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            if bytes[pos] == b'\n' {
                *line += 1;
            }
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(path, *line, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token(&bytes, &mut line)?;
    if magic == "PF" {
        return Err(parse_err(path, line, "color PFM is not supported, expected grayscale 'Pf'"));
    }
    if magic != "Pf" {
        return Err(parse_err(path, line, format!("bad magic {magic:?}, expected 'Pf'")));
    }
    let w: usize = token(&bytes, &mut line)?
        .parse()
        .map_err(|e| parse_err(path, line, format!("bad width: {e}")))?;
    let h: usize = token(&bytes, &mut line)?
        .parse()
        .map_err(|e| parse_err(path, line, format!("bad height: {e}")))?;
    let scale: f64 = token(&bytes, &mut line)?
        .parse()
        .map_err(|e| parse_err(path, line, format!("bad scale: {e}")))?;
    if scale == 0.0 {
        return Err(parse_err(path, line, "scale must be non-zero"));
    }
    let little_endian = scale < 0.0;
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() {
        return Err(parse_err(path, line, "missing payload"));
    }
    pos += 1;

    let expected = w * h * 4;
    if bytes.len() - pos < expected {
        return Err(parse_err(       path,
            line,
            format!("payload too short: {} bytes, expected {expected}", bytes.len() - pos),
        ));
    }
    let mut map = Array2::<f32>::zeros((h, w));
    for y in (0..h).rev() {
        for x in 0..w {
            let raw: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
            pos += 4;
            map[(y, x)] = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    Ok(map)
}

/// Reads a PFM map widened to f64.
pub fn read_pfm_f64(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    Ok(read_pfm(path)?.mapv(|v| v as f64))
}
