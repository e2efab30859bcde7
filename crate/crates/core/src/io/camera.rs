//! MVS camera text files.
//!
//! Layout (one camera per file, whitespace-separated decimals):
//!
//! ```text
//! extrinsic
//! <4x4 world-to-camera matrix, row-major, 4 lines>
//! intrinsic
//! <3x3 matrix, 3 lines>
//! d_min d_interval d_count d_max
//! ```
//!
//! Blank lines between sections are tolerated on read so public DTU-style
//! camera files parse directly.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::geometry::CameraModel;
use crate::{Error, Result};

/// The depth-range line carried by camera files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFileRange {
    pub d_min: f64,
    pub d_interval: f64,
    pub d_count: usize,
    pub d_max: f64,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Writes `camera` in the 10-line layout above. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_camera_file(
    path: impl AsRef<Path>,
    camera: &CameraModel,
    range: &CameraFileRange,
) -> Result<()> {
    let mut text = String::from("extrinsic\n");
    let ext = camera.extrinsic();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{}", ext[(r, c)])).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    text.push_str("intrinsic\n");
    let k = camera.intrinsics();
    for r in 0..3 {
        let row: Vec<String> = (0..3).map(|c| format!("{}", k[(r, c)])).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    text.push_str(&format!(
        "{} {} {} {}\n",
        range.d_min, range.d_interval, range.d_count, range.d_max
    ));
    fs::write(path, text)?;
    Ok(())
}

/// Parses a camera file; `image_size` comes from the dataset manifest since
/// the format itself does not carry it.
pub fn read_camera_file(
    path: impl AsRef<Path>,
    image_size: (usize, usize),
) -> Result<(CameraModel, CameraFileRange)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    // Non-blank lines with their 1-based numbers.
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();

    let mut it = lines.into_iter();
    let mut next = |what: &str| {
        it.next()
            .ok_or_else(|| parse_err(path, 0, format!("unexpected end of file, expected {what}")))
    };

    let (ln, tag) = next("'extrinsic'")?;
    if !tag.eq_ignore_ascii_case("extrinsic") {
        return Err(parse_err(path, ln, format!("expected 'extrinsic', got {tag:?}")));
    }
    let mut ext = [[0.0f64; 4]; 4];
    for row in ext.iter_mut() {
        let (ln, l) = next("extrinsic row")?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, ln, format!("bad extrinsic entry: {e}")))?;
        if vals.len() != 4 {
            return Err(parse_err(path, ln, format!("expected 4 entries, got {}", vals.len())));
        }
        row.copy_from_slice(&vals);
    }
    let (ln, tag) = next("'intrinsic'")?;
    if !tag.eq_ignore_ascii_case("intrinsic") {
        return Err(parse_err(path, ln, format!("expected 'intrinsic', got {tag:?}")));
    }
    let mut intr = [[0.0f64; 3]; 3];
    for row in intr.iter_mut() {
        let (ln, l) = next("intrinsic row")?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, ln, format!("bad intrinsic entry: {e}")))?;
        if vals.len() != 3 {
            return Err(parse_err(path, ln, format!("expected 3 entries, got {}", vals.len())));
        }
        row.copy_from_slice(&vals);
    }
    let (ln, l) = next("depth range line")?;
    let vals: Vec<f64> = l
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(path, ln, format!("bad range entry: {e}")))?;
    if vals.len() != 4 {
        return Err(parse_err(
            path,
            ln,
            format!("expected 'd_min d_interval d_count d_max', got {} entries", vals.len()),
        ));
    }
    let range = CameraFileRange {
        d_min: vals[0],
        d_interval: vals[1],
        d_count: vals[2] as usize,
        d_max: vals[3],
    };

    // Verify the bottom extrinsic row is the homogeneous (0 0 0 1).
    if ext[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(parse_err(path, ln, "extrinsic bottom row must be 0 0 0 1"));
    }
    let rotation = Matrix3::from_fn(|r, c| ext[r][c]);
    let translation = Vector3::new(ext[0][3], ext[1][3], ext[2][3]);
    let intrinsics = Matrix3::from_fn(|r, c| intr[r][c]);
    let camera = CameraModel::new(intrinsics, rotation, translation, image_size)?;
    Ok((camera, range))
}
