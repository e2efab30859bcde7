//! Procedural multi-view scene renderer.
//!
//! Ray-casts planes and spheres through pinhole cameras and shades them
//! with a world-anchored procedural texture (checkerboard modulated by
//! seeded value noise), producing images, exact per-pixel ground-truth
//! depth and validity masks. Albedo depends only on the 3D surface point,
//! so views are photo-consistent by construction; there is no shading.
//!
//! Rendering uses integer hashing and IEEE arithmetic only, so identical
//! scene specs produce bit-identical output on any platform.

use ndarray::{Array2, Array3};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::CameraModel;
use crate::image::ViewImage;
use crate::{Error, Result};

const RAY_EPS: f64 = 1e-9;

/// Fixed permutation driving the value noise; shipping the table keeps
/// renders identical everywhere.
const PERM: [u8; 64] = [
    23, 3, 55, 16, 59, 14, 17, 15, 18, 30, 5, 0, 51, 31, 40, 42,
    44, 37, 56, 33, 2, 43, 11, 52, 63, 22, 49, 39, 61, 53, 19, 27,
    9, 13, 62, 58, 32, 50, 60, 54, 38, 41, 25, 8, 20, 6, 45, 26,
    29, 28, 48, 7, 10, 1, 47, 35, 12, 24, 34, 4, 21, 57, 46, 36,
];

/// In-plane rectangular extent of a bounded plane, measured along axes
/// derived deterministically from the normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneBounds {
    pub half_u: f64,
    pub half_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        /// `None` renders an unbounded plane; bounds cut a rectangle out of
        /// it, which is how occlusion edges between parallel surfaces are
        /// modeled.
        #[serde(default)]
        bounds: Option<PlaneBounds>,
    },
    Sphere { center: [f64; 3], radius: f64 },
}

/// One textured surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfacePrimitive {
    pub shape: Shape,
    pub texture_seed: u32,
    /// Per-channel base albedo in `[0, 1]`.
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureParams {
    /// Checker cell edge length in scene units.
    pub checker_size: f64,
    /// Base frequency of the value noise (cycles per scene unit).
    pub noise_frequency: f64,
    pub noise_octaves: usize,
    /// Modulation depth of the noise on top of the checker, in `[0, 1]`.
    pub noise_amplitude: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            checker_size: 0.35,
            noise_frequency: 3.0,
            noise_octaves: 4,
            noise_amplitude: 0.5,
        }
    }
}

/// A complete renderable scene: primitives, cameras and the depth range
/// downstream stages will sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub primitives: Vec<SurfacePrimitive>,
    pub cameras: Vec<CameraModel>,
    pub d_min: f64,
    pub d_max: f64,
    #[serde(default)]
    pub texture: TextureParams,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::input("scene needs at least one primitive"));
        }
        if self.cameras.is_empty() {
            return Err(Error::input("scene needs at least one camera"));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return Err(Error::input(format!(
                "bad depth range [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        if !(self.texture.checker_size > 0.0 && self.texture.noise_frequency > 0.0) {
            return Err(Error::input("texture sizes must be positive"));
        }
        for (i, cam) in self.cameras.iter().enumerate() {
            let (w, h) = cam.image_size();
            let cx = (w - 1) as f64 / 2.0;
            let cy = (h - 1) as f64 / 2.0;
            let (origin, dir) = cam.pixel_ray(cx, cy);
            if intersect_scene(&self.primitives, &origin, &dir).is_none() {
                return Err(Error::input(format!(
                    "camera {i}: forward axis does not hit any primitive"
                )));
            }
        }
        Ok(())
    }
}

fn vec3(v: [f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

/// Orthonormal in-plane axes derived from the normal alone, so bounded
/// planes mean the same rectangle no matter who constructs them.
fn plane_axes(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let n = normal.normalize();
    let helper = if n.y.abs() < 0.9 {
        Vector3::new(0.0, 1.0, 0.0)
    } else {
        Vector3::new(1.0, 0.0, 0.0)
    };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// Nearest positive ray parameter hitting the shape, if any.
fn intersect_shape(shape: &Shape, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    match shape {
        Shape::Plane {
            point,
            normal,
            bounds,
        } => {
            let p0 = vec3(*point);
            let n = vec3(*normal);
            let denom = dir.dot(&n);
            if denom.abs() < 1e-12 {
                return None;
            }
            let t = (p0 - origin).dot(&n) / denom;
            if t <= RAY_EPS {
                return None;
            }
            if let Some(b) = bounds {
                let hit = origin + dir * t;
                let (u, v) = plane_axes(&n);
                let rel = hit - p0;
                if rel.dot(&u).abs() > b.half_u || rel.dot(&v).abs() > b.half_v {
                    return None;
                }
            }
            Some(t)
        }
        Shape::Sphere { center, radius } => {
            let oc = origin - vec3(*center);
            let a = dir.dot(dir);
            let b = 2.0 * dir.dot(&oc);
            let c = oc.dot(&oc) - radius * radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t_near = (-b - sq) / (2.0 * a);
            if t_near > RAY_EPS {
                return Some(t_near);
            }
            let t_far = (-b + sq) / (2.0 * a);
            (t_far > RAY_EPS).then_some(t_far)
        }
    }
}

fn intersect_scene(
    primitives: &[SurfacePrimitive],
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, prim) in primitives.iter().enumerate() {
        if let Some(t) = intersect_shape(&prim.shape, origin, dir) {
            if best.map_or(true, |(_, bt)| t < bt) {
                best = Some((i, t));
            }
        }
    }
    best
}

fn lattice_value(ix: i64, iy: i64, iz: i64, seed: u32) -> f64 {
    let idx = |v: i64| PERM[v.rem_euclid(64) as usize] as i64;
    let a = idx(ix.wrapping_add(seed as i64));
    let b = idx(iy.wrapping_add(a));
    let c = idx(iz.wrapping_add(b));
    let mixed = (c as u32)
        .wrapping_mul(2654435761)
        .wrapping_add(seed.wrapping_mul(40503))
        .wrapping_add((a as u32) << 16)
        .wrapping_add((b as u32) << 8);
    ((mixed >> 8) & 0xFFFF) as f64 / 65535.0
}

fn fade(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinear value noise in `[0, 1]`.
fn value_noise(p: &Vector3<f64>, seed: u32) -> f64 {
    let x0 = p.x.floor();
    let y0 = p.y.floor();
    let z0 = p.z.floor();
    let (ix, iy, iz) = (x0 as i64, y0 as i64, z0 as i64);
    let fx = fade(p.x - x0);
    let fy = fade(p.y - y0);
    let fz = fade(p.z - z0);
    let mut acc = 0.0;
    for (dz, wz) in [(0i64, 1.0 - fz), (1, fz)] {
        for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                acc += wx * wy * wz * lattice_value(ix + dx, iy + dy, iz + dz, seed);
            }
        }
    }
    acc
}

fn fbm(p: &Vector3<f64>, octaves: usize, seed: u32) -> f64 {
    let mut amp = 1.0;
    let mut total_amp = 0.0;
    let mut freq = 1.0;
    let mut acc = 0.0;
    for octave in 0..octaves.max(1) {
        acc += amp * value_noise(&(p * freq), seed.wrapping_add(octave as u32 * 97));
        total_amp += amp;
        // Slow falloff keeps fine-scale contrast, which is what sub-pixel
        // matching feeds on.
        amp *= 0.6;
        freq *= 2.0;
    }
    acc / total_amp
}

/// Albedo of `prim` at world point `p`: checkerboard base modulated by
/// per-channel value noise. Pure function of the surface point.
fn shade(prim: &SurfacePrimitive, texture: &TextureParams, p: &Vector3<f64>) -> [f32; 3] {
    let cell = p / texture.checker_size;
    let parity =
        (cell.x.floor() as i64 + cell.y.floor() as i64 + cell.z.floor() as i64).rem_euclid(2);
    let checker = if parity == 0 { 1.0 } else { 0.45 };
    let q = p * texture.noise_frequency;
    let mut out = [0.0f32; 3];
    for (c, out_c) in out.iter_mut().enumerate() {
        let n = fbm(&q, texture.noise_octaves, prim.texture_seed.wrapping_add(131 * c as u32));
        let v = prim.albedo[c] * checker * (1.0 - texture.noise_amplitude + texture.noise_amplitude * n);
        *out_c = v.clamp(0.0, 1.0) as f32;
    }
    out
}

/// Renders every camera of the scene.
///
/// Returns per-view images, ground-truth depth maps (camera-frame z of the
/// nearest hit; 0 where no primitive is hit) and hit masks.
#[allow(clippy::type_complexity)]
pub fn render_views(
    scene: &SceneSpec,
) -> Result<(Vec<ViewImage>, Vec<Array2<f64>>, Vec<Array2<bool>>)> {
    scene.validate()?;
    let mut images = Vec::with_capacity(scene.cameras.len());
    let mut depths = Vec::with_capacity(scene.cameras.len());
    let mut masks = Vec::with_capacity(scene.cameras.len());
    for cam in &scene.cameras {
        let (w, h) = cam.image_size();
        let mut color = Array3::<f32>::zeros((h, w, 3));
        let mut depth = Array2::<f64>::zeros((h, w));
        let mut mask = Array2::<bool>::from_elem((h, w), false);

        let color_slice = color.as_slice_mut().unwrap();
        let depth_slice = depth.as_slice_mut().unwrap();
        let mask_slice = mask.as_slice_mut().unwrap();
        color_slice
            .par_chunks_mut(w * 3)
            .zip(depth_slice.par_chunks_mut(w))
            .zip(mask_slice.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, ((color_row, depth_row), mask_row))| {
                for x in 0..w {
                    let (origin, dir) = cam.pixel_ray(x as f64, y as f64);
                    // dir has unit camera-frame z, so the ray parameter is
                    // exactly the camera depth of the hit.
                    if let Some((pi, t)) = intersect_scene(&scene.primitives, &origin, &dir) {
                        let hit = origin + dir * t;
                        let rgb = shade(&scene.primitives[pi], &scene.texture, &hit);
                        color_row[x * 3..x * 3 + 3].copy_from_slice(&rgb);
                        depth_row[x] = t;
                        mask_row[x] = true;
                    }
                }
            });
        images.push(ViewImage::new(color)?);
        depths.push(depth);
        masks.push(mask);
    }
    Ok((images, depths, masks))
}

/// Default render size of the builtin scenes (divisible by 4).
pub const BUILTIN_IMAGE_SIZE: (usize, usize) = (320, 256);

fn builtin_camera(pos: Vector3<f64>, target: Vector3<f64>) -> CameraModel {
    let (w, h) = BUILTIN_IMAGE_SIZE;
    let k = Matrix3::new(
        360.0,
        0.0,
        (w - 1) as f64 / 2.0,
        0.0,
        360.0,
        (h - 1) as f64 / 2.0,
        0.0,
        0.0,
        1.0,
    );
    let fwd = (target - pos).normalize();
    let down_hint = Vector3::new(0.0, 1.0, 0.0);
    let right = down_hint.cross(&fwd).normalize();
    let down = fwd.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
    let translation = -rotation * pos;
    CameraModel::new(k, rotation, translation, (w, h)).expect("builtin camera is valid")
}

/// Five cameras on a small arc around the z axis, all aimed at `target`.
/// The central camera comes first: a centered reference keeps symmetric
/// view coverage, so its image borders never fall below three views.
fn builtin_arc(target: Vector3<f64>) -> Vec<CameraModel> {
    let radius = target.z;
    [0.0f64, -0.4, 0.4, -0.8, 0.8]
        .iter()
        .zip([0.0f64, -0.1, 0.1, 0.12, -0.12])
        .map(|(&x, y)| {
            let z = radius - (radius * radius - x * x - y * y).sqrt();
            builtin_camera(Vector3::new(x, y, z), target)
        })
        .collect()
}

/// A named scene from [`builtin_scenes`].
#[derive(Debug, Clone)]
pub struct NamedScene {
    pub name: &'static str,
    pub spec: SceneSpec,
}

/// The bundled verification scenes: a fronto-parallel plane, two planes
/// with an occlusion edge, and a sphere resting in front of a plane.
pub fn builtin_scenes() -> Vec<NamedScene> {
    let target = Vector3::new(0.0, 0.0, 4.0);
    // Backdrop rectangles are sized to fit inside the intersection of all
    // five view frustums at their depth, so every surface point the
    // ground truth records is observable by every camera (up to
    // occlusion). Pixels whose ray leaves the backdrop have no surface
    // and a false validity mask.
    let flat = SceneSpec {
        primitives: vec![SurfacePrimitive {
            shape: Shape::Plane {
                point: [0.0, 0.0, 4.0],
                normal: [0.0, 0.0, -1.0],
                bounds: Some(PlaneBounds {
                    half_u: 1.5,
                    half_v: 1.15,
                }),
            },
            texture_seed: 11,
            albedo: [0.9, 0.75, 0.55],
        }],
        cameras: builtin_arc(target),
        d_min: 3.0,
        d_max: 5.5,
        texture: TextureParams::default(),
    };

    let two_plane = SceneSpec {
        primitives: vec![
            SurfacePrimitive {
                shape: Shape::Plane {
                    point: [0.0, 0.0, 5.0],
                    normal: [0.0, 0.0, -1.0],
                    bounds: Some(PlaneBounds {
                        half_u: 1.9,
                        half_v: 1.45,
                    }),
                },
                texture_seed: 23,
                albedo: [0.55, 0.8, 0.95],
            },
            SurfacePrimitive {
                shape: Shape::Plane {
                    point: [0.65, 0.0, 3.5],
                    normal: [0.0, 0.0, -1.0],
                    // u is the world x axis here: the rectangle spans
                    // x in [0, 1.3], putting a vertical occlusion edge at
                    // x = 0 in front of the far plane.
                    bounds: Some(PlaneBounds {
                        half_u: 0.65,
                        half_v: 1.0,
                    }),
                },
                texture_seed: 37,
                albedo: [0.95, 0.65, 0.4],
            },
        ],
        cameras: builtin_arc(target),
        d_min: 2.8,
        d_max: 6.0,
        texture: TextureParams::default(),
    };

    let sphere_on_plane = SceneSpec {
        primitives: vec![
            SurfacePrimitive {
                shape: Shape::Plane {
                    point: [0.0, 0.0, 5.5],
                    normal: [0.0, 0.0, -1.0],
                    bounds: Some(PlaneBounds {
                        half_u: 2.1,
                        half_v: 1.6,
                    }),
                },
                texture_seed: 5,
                albedo: [0.7, 0.85, 0.6],
            },
            SurfacePrimitive {
                shape: Shape::Sphere {
                    center: [0.0, 0.2, 4.2],
                    radius: 1.1,
                },
                texture_seed: 43,
                albedo: [0.9, 0.6, 0.75],
            },
        ],
        cameras: builtin_arc(target),
        d_min: 2.5,
        d_max: 6.5,
        texture: TextureParams::default(),
    };

    vec![
        NamedScene {
            name: "flat",
            spec: flat,
        },
        NamedScene {
            name: "two-plane",
            spec: two_plane,
        },
        NamedScene {
            name: "sphere-on-plane",
            spec: sphere_on_plane,
        },
    ]
}

pub fn builtin_scene(name: &str) -> Option<SceneSpec> {
    builtin_scenes()
        .into_iter()
        .find(|s| s.name == name)
        .map(|s| s.spec)
}
