//! Multi-view geometric-consistency fusion and ASCII PLY IO.
//!
//! Every view takes a turn as the reference: each of its pixels is lifted
//! to 3D and checked against the other views' depth maps. A source view
//! agrees when the projected depth matches its own stored depth within a
//! relative tolerance and the source pixel reprojects back near the start.
//! Pixels with enough agreeing views (the count includes the reference)
//! become points, positioned at the mean of the agreeing unprojections;
//! source pixels absorbed by a point are not allowed to seed one of their
//! own later.
//!
//! Reference passes run in a canonical order derived from the camera
//! parameters, all per-point reductions sort their inputs, and emitted
//! points follow (pass, row, column) order — so the fused cloud does not
//! depend on how the caller ordered the views.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::geometry::CameraModel;
use crate::image::ViewImage;
use crate::parallel;
use crate::{Error, Result};

/// One fused surface point.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPoint {
    pub position: Vector3<f64>,
    /// RGB in `[0, 1]`, taken from the reference view.
    pub color: [f32; 3],
    /// Input index of the view whose pixel seeded the point.
    pub source_view: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Geometric-consistency thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// `|d_proj - d_src| / d_src` tolerance.
    pub max_relative_depth_diff: f64,
    /// Forward-backward reprojection tolerance in pixels.
    pub max_reprojection_dist: f64,
    /// Minimum number of agreeing views, the reference included.
    pub min_consistent_views: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            max_relative_depth_diff: 0.01,
            max_reprojection_dist: 1.0,
            min_consistent_views: 3,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_relative_depth_diff > 0.0)
            || !(self.max_reprojection_dist > 0.0)
            || self.min_consistent_views == 0
        {
            return Err(Error::input("fusion thresholds must be positive"));
        }
        Ok(())
    }
}

/// Canonical pass order: sort view indices by the camera payload so the
/// result is independent of the caller's view ordering. Ties (identical
/// cameras) keep the input order.
fn canonical_view_order(cameras: &[CameraModel]) -> Vec<usize> {
    let key = |cam: &CameraModel| -> Vec<f64> {
        let mut k = Vec::with_capacity(21);
        k.extend_from_slice(cam.translation().as_slice());
        k.extend_from_slice(cam.rotation().as_slice());
        k.extend_from_slice(cam.intrinsics().as_slice());
        k
    };
    let keys: Vec<Vec<f64>> = cameras.iter().map(key).collect();
    let mut order: Vec<usize> = (0..cameras.len()).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .iter()
            .zip(keys[b].iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

struct RowOutcome {
    points: Vec<CloudPoint>,
    /// Source pixels absorbed by this row's points: (view, y, x).
    marks: Vec<(usize, usize, usize)>,
}

/// Fuses per-view depth maps into one point cloud.
///
/// Inconsistent pixels are dropped silently; an empty cloud is a valid
/// outcome.
pub fn fuse_depth_maps(
    depths: &[Array2<f64>],
    cameras: &[CameraModel],
    images: &[ViewImage],
    config: &FusionConfig,
) -> Result<PointCloud> {
    config.validate()?;
    let n = depths.len();
    if n < 2 {
        return Err(Error::input("fusion needs at least two views"));
    }
    if cameras.len() != n || images.len() != n {
        return Err(Error::input("depths, cameras and images must align"));
    }
    for i in 0..n {
        let (w, h) = cameras[i].image_size();
        if depths[i].dim() != (h, w) || images[i].height() != h || images[i].width() != w {
            return Err(Error::input(format!("view {i}: inconsistent shapes")));
        }
    }

    let order = canonical_view_order(cameras);
    let mut consumed: Vec<Array2<bool>> = depths
        .iter()
        .map(|d| Array2::from_elem(d.dim(), false))
        .collect();
    let mut cloud = PointCloud::default();

    for &reference in &order {
        let (w, h) = cameras[reference].image_size();
        let consumed_ref = &consumed[reference];
        let outcomes = parallel::map_indexed(h, |y| {
            fuse_row(reference, y, w, depths, cameras, images, config, consumed_ref)
        });
        for outcome in outcomes {
            for (view, my, mx) in outcome.marks {
                consumed[view][(my, mx)] = true;
            }
            cloud.points.extend(outcome.points);
        }
    }
    Ok(cloud)
}

#[allow(clippy::too_many_arguments)]
fn fuse_row(
    reference: usize,
    y: usize,
    width: usize,
    depths: &[Array2<f64>],
    cameras: &[CameraModel],
    images: &[ViewImage],
    config: &FusionConfig,
    consumed_ref: &Array2<bool>,
) -> RowOutcome {
    let n = depths.len();
    let ref_cam = &cameras[reference];
    let mut out = RowOutcome {
        points: Vec::new(),
        marks: Vec::new(),
    };
    let mut agreeing: Vec<Vector3<f64>> = Vec::with_capacity(n);
    let mut marks: Vec<(usize, usize, usize)> = Vec::with_capacity(n);

    for x in 0..width {
        let d = depths[reference][(y, x)];
        if !(d > 0.0 && d.is_finite()) || consumed_ref[(y, x)] {
            continue;
        }
        let world = ref_cam.unproject(x as f64, y as f64, d);
        agreeing.clear();
        marks.clear();
        agreeing.push(world);

        for (i, cam) in cameras.iter().enumerate() {
            if i == reference {
                continue;
            }
            let Some((px, py, d_proj)) = cam.project(&world) else {
                continue;
            };
            let (sw, sh) = cam.image_size();
            let qx = px.round();
            let qy = py.round();
            if qx < 0.0 || qy < 0.0 || qx > (sw - 1) as f64 || qy > (sh - 1) as f64 {
                continue;
            }
            let (qxi, qyi) = (qx as usize, qy as usize);
            let d_src = depths[i][(qyi, qxi)];
            if !(d_src > 0.0 && d_src.is_finite()) {
                continue;
            }
            if (d_proj - d_src).abs() / d_src > config.max_relative_depth_diff {
                continue;
            }
            let src_world = cam.unproject(qx, qy, d_src);
            let Some((bx, by, _)) = ref_cam.project(&src_world) else {
                continue;
            };
            let reproj = ((bx - x as f64).powi(2) + (by - y as f64).powi(2)).sqrt();
            if reproj > config.max_reprojection_dist {
                continue;
            }
            agreeing.push(src_world);
            marks.push((i, qyi, qxi));
        }

        if agreeing.len() < config.min_consistent_views {
            continue;
        }

        // Average in a canonical component order so view permutations
        // cannot change the floating-point result.
        agreeing.sort_unstable_by(|a, b| {
            a.x.total_cmp(&b.x)
                .then(a.y.total_cmp(&b.y))
                .then(a.z.total_cmp(&b.z))
        });
        let mut sum = Vector3::zeros();
        for p in &agreeing {
            sum += p;
        }
        let position = sum / agreeing.len() as f64;

        // The averaged point must still reproject near its seed pixel.
        let Some((ax, ay, _)) = ref_cam.project(&position) else {
            continue;
        };
        if ((ax - x as f64).powi(2) + (ay - y as f64).powi(2)).sqrt()
            > config.max_reprojection_dist
        {
            continue;
        }

        out.points.push(CloudPoint {
            position,
            color: images[reference].pixel(x, y),
            source_view: reference,
        });
        out.marks.extend_from_slice(&marks);
    }
    out
}

/// Optional diagnostic: per-pixel count of agreeing views for one
/// reference view (the reference itself included), without emitting
/// points or consuming pixels.
pub fn consistency_count_map(
    reference: usize,
    depths: &[Array2<f64>],
    cameras: &[CameraModel],
    config: &FusionConfig,
) -> Result<Array2<u32>> {
    config.validate()?;
    if reference >= depths.len() {
        return Err(Error::input("reference view out of range"));
    }
    let (w, h) = cameras[reference].image_size();
    let rows = parallel::map_indexed(h, |y| {
        let mut row = vec![0u32; w];
        let ref_cam = &cameras[reference];
        for (x, out) in row.iter_mut().enumerate() {
            let d = depths[reference][(y, x)];
            if !(d > 0.0 && d.is_finite()) {
                continue;
            }
            let world = ref_cam.unproject(x as f64, y as f64, d);
            let mut count = 1u32;
            for (i, cam) in cameras.iter().enumerate() {
                if i == reference {
                    continue;
                }
                let Some((px, py, d_proj)) = cam.project(&world) else {
                    continue;
                };
                let (sw, sh) = cam.image_size();
                let qx = px.round();
                let qy = py.round();
                if qx < 0.0 || qy < 0.0 || qx > (sw - 1) as f64 || qy > (sh - 1) as f64 {
                    continue;
                }
                let d_src = depths[i][(qy as usize, qx as usize)];
                if d_src > 0.0 && (d_proj - d_src).abs() / d_src <= config.max_relative_depth_diff
                {
                    count += 1;
                }
            }
            *out = count;
        }
        row
    });
    let mut map = Array2::<u32>::zeros((h, w));
    for (y, row) in rows.into_iter().enumerate() {
        for (x, v) in row.into_iter().enumerate() {
            map[(y, x)] = v;
        }
    }
    Ok(map)
}

fn quantize_color(c: f32) -> u8 {
    ((c.clamp(0.0, 1.0) as f64) * 255.0).floor().min(255.0) as u8
}

/// Writes the cloud as ASCII PLY: `x y z red green blue` per vertex,
/// positions in full precision, colors floor-quantized to 8 bits.
pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.points.len()
    )?;
    for p in &cloud.points {
        writeln!(
            out,
            "{} {} {} {} {} {}",
            p.position.x,
            p.position.y,
            p.position.z,
            quantize_color(p.color[0]),
            quantize_color(p.color[1]),
            quantize_color(p.color[2]),
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an ASCII PLY written by [`write_ply`] (or an equivalent layout).
/// `source_view` is not stored in the format and comes back as 0.
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let mut next = |expected: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(err(i + 1, format!("read failure: {e}"))),
            None => Err(err(0, format!("unexpected end of file, expected {expected}"))),
        }
    };

    let (ln, magic) = next("'ply'")?;
    if magic.trim() != "ply" {
        return Err(err(ln, format!("bad magic {magic:?}")));
    }
    let (ln, format) = next("format line")?;
    if format.trim() != "format ascii 1.0" {
        return Err(err(ln, format!("unsupported format {format:?}")));
    }
    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    loop {
        let (ln, line) = next("'end_header'")?;
        let line = line.trim().to_string();
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            vertex_count = Some(
                rest.trim()
                    .parse()
                    .map_err(|e| err(ln, format!("bad vertex count: {e}")))?,
            );
        } else if let Some(rest) = line.strip_prefix("element ") {
            return Err(err(ln, format!("unsupported element {rest:?}")));
        } else if let Some(rest) = line.strip_prefix("property ") {
            properties.push(rest.split_whitespace().last().unwrap_or("").to_string());
        } else if line.starts_with("comment") || line.is_empty() {
            continue;
        } else {
            return Err(err(ln, format!("unrecognized header line {line:?}")));
        }
    }
    let count = vertex_count.ok_or_else(|| err(0, "missing 'element vertex'".into()))?;
    if properties != ["x", "y", "z", "red", "green", "blue"] {
        return Err(err(
            0,
            format!("expected properties x y z red green blue, got {properties:?}"),
        ));
    }

    let mut cloud = PointCloud::default();
    cloud.points.reserve(count);
    for _ in 0..count {
        let (ln, line) = next("vertex line")?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 6 {
            return Err(err(ln, format!("expected 6 values, got {}", tokens.len())));
        }
        let coord = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| err(ln, format!("bad coordinate {s:?}: {e}")))
        };
        let chan = |s: &str| -> Result<u8> {
            s.parse::<u8>()
                .map_err(|e| err(ln, format!("bad color {s:?}: {e}")))
        };
        cloud.points.push(CloudPoint {
            position: Vector3::new(coord(tokens[0])?, coord(tokens[1])?, coord(tokens[2])?),
            color: [
                chan(tokens[3])? as f32 / 255.0,
                chan(tokens[4])? as f32 / 255.0,
                chan(tokens[5])? as f32 / 255.0,
            ],
            source_view: 0,
        });
    }
    Ok(cloud)
}
