//! Binary PPM (P6) images, 8 bits per channel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;

use crate::image::ViewImage;
use crate::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Writes a `[0, 1]` float image as P6 with round-to-nearest quantization.
pub fn write_ppm(path: impl AsRef<Path>, image: &ViewImage) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (image.width(), image.height());
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P6\n{} {}\n255\n", w, h)?;
    let mut row = Vec::with_capacity(w * 3);
    for y in 0..h {
        row.clear();
        for x in 0..w {
            for c in image.pixel(x, y) {
                row.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out.write_all(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a P6 image into `[0, 1]` floats.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<ViewImage> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;

    let mut pos = 0usize;
    let mut line = 1usize;
    let mut token = |bytes: &[u8], line: &mut usize| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                if bytes[pos] == b'\n' {
                    *line += 1;
                }
                pos += 1;
            }
            // PPM comments run to end of line.
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
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
    if magic != "P6" {
        return Err(parse_err(path, line, format!("bad magic {magic:?}, expected 'P6'")));
    }
    let w: usize = token(&bytes, &mut line)?
        .parse()
        .map_err(|e| parse_err(path, line, format!("bad width: {e}")))?;
    let h: usize = token(&bytes, &mut line)?
        .parse()
        .map_err(|e| parse_err(path, line, format!("bad height: {e}")))?;
    let maxval: usize = token(&bytes, &mut line)?
        .parse()
        .map_err(|e| parse_err(path, line, format!("bad maxval: {e}")))?;
    if maxval != 255 {
        return Err(parse_err(path, line, format!("unsupported maxval {maxval}, expected 255")));
    }
    if pos >= bytes.len() {
        return Err(parse_err(path, line, "missing payload"));
    }
    pos += 1; // single whitespace after maxval

    let expected = w * h * 3;
    if bytes.len() - pos < expected {
        return Err(parse_err(
            path,
            line,
            format!("payload too short: {} bytes, expected {expected}", bytes.len() - pos),
        ));
    }
    let mut data = Array3::<f32>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[(y, x, c)] = bytes[pos] as f32 / 255.0;
                pos += 1;
            }
        }
    }
    ViewImage::new(data)
}
