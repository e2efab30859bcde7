//! Pinhole camera algebra: warp-matrix composition, homogeneous pixel
//! warping and bilinear sampling with validity tracking.
//!
//! Conventions used throughout the crate:
//! - pixel centers sit at integer coordinates; the image domain is
//!   `[0, W-1] x [0, H-1]`;
//! - camera frames are x-right, y-down, z-forward; depth is the z
//!   coordinate of a point in the camera frame;
//! - all geometry runs in `f64`, image/feature payloads are `f32`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;
const SINGULAR_TOL: f64 = 1e-12;

/// Projection threshold below which a warped point counts as being on or
/// behind the camera plane.
pub const MIN_PROJECTED_DEPTH: f64 = 1e-12;

/// Calibrated pinhole camera: intrinsics `K`, world-to-camera rotation `R`
/// and translation `t`, plus the pixel size of its image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraModelRaw", into = "CameraModelRaw")]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    image_size: (usize, usize),
    inv_intrinsics: Matrix3<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraModelRaw {
    intrinsics: [[f64; 3]; 3],
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    image_size: (usize, usize),
}

impl TryFrom<CameraModelRaw> for CameraModel {
    type Error = Error;
    fn try_from(raw: CameraModelRaw) -> Result<Self> {
        CameraModel::new(
            Matrix3::from_fn(|r, c| raw.intrinsics[r][c]),
            Matrix3::from_fn(|r, c| raw.rotation[r][c]),
            Vector3::from_column_slice(&raw.translation),
            raw.image_size,
        )
    }
}

impl From<CameraModel> for CameraModelRaw {
    fn from(cam: CameraModel) -> Self {
        let m = |m: &Matrix3<f64>| [[m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                                    [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                                    [m[(2, 0)], m[(2, 1)], m[(2, 2)]]];
        CameraModelRaw {
            intrinsics: m(&cam.intrinsics),
            rotation: m(&cam.rotation),
            translation: [cam.translation.x, cam.translation.y, cam.translation.z],
            image_size: cam.image_size,
        }
    }
}

impl CameraModel {
    /// Validates the camera invariants and caches `K^-1`.
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image_size: (usize, usize),
    ) -> Result<Self> {
        if image_size.0 < 1 || image_size.1 < 1 {
            return Err(Error::geometry(format!(
                "image size must be at least 1x1, got {}x{}",
                image_size.0, image_size.1
            )));
        }
        let rtr = rotation.transpose() * rotation;
        let dev = (rtr - Matrix3::identity()).abs().max();
        if !dev.is_finite() || dev >= ORTHONORMAL_TOL {
            return Err(Error::geometry(format!(
                "rotation is not orthonormal (max |R^T R - I| = {dev:.3e})"
            )));
        }
        if intrinsics[(0, 0)] <= 0.0 || intrinsics[(1, 1)] <= 0.0 {
            return Err(Error::geometry("intrinsics need positive focal lengths"));
        }
        if (intrinsics[(2, 2)] - 1.0).abs() > SINGULAR_TOL {
            return Err(Error::geometry("intrinsics must have 1 in the bottom-right"));
        }
        if intrinsics[(1, 0)].abs() > SINGULAR_TOL
            || intrinsics[(2, 0)].abs() > SINGULAR_TOL
            || intrinsics[(2, 1)].abs() > SINGULAR_TOL
        {
            return Err(Error::geometry("intrinsics must be upper-triangular"));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::geometry("translation must be finite"));
        }
        let inv_intrinsics = intrinsics
            .try_inverse()
            .ok_or_else(|| Error::geometry("singular intrinsics"))?;
        Ok(CameraModel {
            intrinsics,
            rotation,
            translation,
            image_size,
            inv_intrinsics,
        })
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `(width, height)` in pixels.
    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn width(&self) -> usize {
        self.image_size.0
    }

    pub fn height(&self) -> usize {
        self.image_size.1
    }

    /// The 4x4 world-to-camera rigid transform assembled from `R` and `t`.
    pub fn extrinsic(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Exact inverse of [`Self::extrinsic`] using the rotation transpose.
    pub fn extrinsic_inverse(&self) -> Matrix4<f64> {
        let rt = self.rotation.transpose();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&(-rt * self.translation));
        m
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }

    /// Ray through pixel `(x, y)`: `origin + d * direction` is the world
    /// point at camera-frame depth `d`.
    pub fn pixel_ray(&self, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
        let dir_cam = self.inv_intrinsics * Vector3::new(x, y, 1.0);
        let dir_world = self.rotation.transpose() * dir_cam;
        (self.center(), dir_world)
    }

    /// World point seen at pixel `(x, y)` with camera-frame depth `d`.
    pub fn unproject(&self, x: f64, y: f64, depth: f64) -> Vector3<f64> {
        let (origin, dir) = self.pixel_ray(x, y);
        origin + dir * depth
    }

    /// Projects a world point, returning `(x, y, depth)`; `None` when the
    /// point lies on or behind the camera plane.
    pub fn project(&self, world: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let cam = self.rotation * world + self.translation;
        if cam.z < MIN_PROJECTED_DEPTH {
            return None;
        }
        let px = self.intrinsics * cam;
        Some((px.x / px.z, px.y / px.z, cam.z))
    }

    /// Camera for an image downscaled by integer factor `s`: focal lengths
    /// and principal point divide by `s`, image size becomes the ceiling of
    /// `size / s`.
    pub fn scaled_down(&self, factor: usize) -> Result<CameraModel> {
        if factor == 0 {
            return Err(Error::geometry("scale factor must be positive"));
        }
        let s = factor as f64;
        let mut k = self.intrinsics;
        for col in 0..3 {
            k[(0, col)] /= s;
            k[(1, col)] /= s;
        }
        CameraModel::new(
            k,
            self.rotation,
            self.translation,
            (
                self.image_size.0.div_ceil(factor),
                self.image_size.1.div_ceil(factor),
            ),
        )
    }
}

/// 4x4 matrix mapping homogeneous reference-pixel vectors `(xd, yd, d, 1)`
/// into a source view. The composition itself is depth-independent; depth
/// enters through the vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpMatrix {
    entries: Matrix4<f64>,
}

impl WarpMatrix {
    pub fn entries(&self) -> &Matrix4<f64> {
        &self.entries
    }

    pub fn identity() -> Self {
        WarpMatrix {
            entries: Matrix4::identity(),
        }
    }

    pub fn inverse(&self) -> Result<WarpMatrix> {
        let entries = self
            .entries
            .try_inverse()
            .ok_or_else(|| Error::geometry("warp matrix is singular"))?;
        Ok(WarpMatrix { entries })
    }
}

fn embed_intrinsics(k: &Matrix3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(k);
    m
}

/// Composes `K_src * T_src * T_ref^-1 * K_ref^-1` with the 3x3 intrinsics
/// embedded into 4x4 form (identity on the homogeneous row/column).
pub fn compose_warp(src: &CameraModel, reference: &CameraModel) -> Result<WarpMatrix> {
    for (name, cam) in [("source", src), ("reference", reference)] {
        if cam.intrinsics.determinant().abs() <= SINGULAR_TOL {
            return Err(Error::geometry(format!("singular {name} intrinsics")));
        }
    }
    let k_src = embed_intrinsics(&src.intrinsics);
    let k_ref_inv = embed_intrinsics(&reference.inv_intrinsics);
    let entries = k_src * src.extrinsic() * reference.extrinsic_inverse() * k_ref_inv;
    if !entries.iter().all(|v| v.is_finite()) {
        return Err(Error::geometry("warp matrix has non-finite entries"));
    }
    Ok(WarpMatrix { entries })
}

/// Warps reference pixel `(x, y)` at depth `d` into the source view.
///
/// Returns `None` when the projected depth falls below
/// [`MIN_PROJECTED_DEPTH`] (point on or behind the source camera plane).
pub fn warp_pixel(h: &WarpMatrix, x: f64, y: f64, d: f64) -> Option<(f64, f64)> {
    warp_pixel_with_depth(h, x, y, d).map(|(x, y, _)| (x, y))
}

/// Like [`warp_pixel`] but also returns the projected source-frame depth.
pub fn warp_pixel_with_depth(h: &WarpMatrix, x: f64, y: f64, d: f64) -> Option<(f64, f64, f64)> {
    let p = h.entries * Vector4::new(x * d, y * d, d, 1.0);
    if p.z.abs() < MIN_PROJECTED_DEPTH {
        return None;
    }
    Some((p.x / p.z, p.y / p.z, p.z))
}

/// One interpolated feature/color sample; `valid == false` means the
/// sampling footprint fell outside the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub value: Vec<f32>,
    pub valid: bool,
}

/// Bilinear interpolation of `image` (shape `H x W x C`) at `(x, y)`.
///
/// Out-of-bounds footprints yield `valid == false` with a zero value; they
/// are a result, not an error.
pub fn bilinear_sample(image: &ndarray::ArrayView3<f32>, x: f64, y: f64) -> SampleResult {
    let (h, w, c) = image.dim();
    let mut value = vec![0.0f64; c];
    let data = image
        .as_slice()
        .expect("feature arrays use standard layout");
    let valid = bilinear_into(data, h, w, c, x, y, &mut value);
    SampleResult {
        value: value.into_iter().map(|v| v as f32).collect(),
        valid,
    }
}

/// Raw-slice bilinear kernel shared by [`bilinear_sample`] and the cost
/// volume inner loop. `data` is `H x W x C` in row-major order; writes the
/// per-channel result into `out` and reports footprint validity.
pub(crate) fn bilinear_into(
    data: &[f32],
    height: usize,
    width: usize,
    channels: usize,
    x: f64,
    y: f64,
    out: &mut [f64],
) -> bool {
    if !(x.is_finite() && y.is_finite()) {
        return false;
    }
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    // Collapse the footprint onto the lattice when the coordinate is exact,
    // so the image border column/row itself stays sampleable.
    let x1f = if fx > 0.0 { x0f + 1.0 } else { x0f };
    let y1f = if fy > 0.0 { y0f + 1.0 } else { y0f };
    if x0f < 0.0 || y0f < 0.0 || x1f > (width - 1) as f64 || y1f > (height - 1) as f64 {
        return false;
    }
    let (x0, x1) = (x0f as usize, x1f as usize);
    let (y0, y1) = (y0f as usize, y1f as usize);
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w10 = fx * (1.0 - fy);
    let w01 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    let base00 = (y0 * width + x0) * channels;
    let base10 = (y0 * width + x1) * channels;
    let base01 = (y1 * width + x0) * channels;
    let base11 = (y1 * width + x1) * channels;
    for ch in 0..channels {
        out[ch] = w00 * data[base00 + ch] as f64
            + w10 * data[base10 + ch] as f64
            + w01 * data[base01 + ch] as f64
            + w11 * data[base11 + ch] as f64;
    }
    true
}
