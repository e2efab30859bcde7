//! Reconstruction metrics: point-cloud accuracy/completeness with a
//! grid-accelerated nearest neighbor, and masked depth-map error
//! statistics.

use std::collections::HashMap;

use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::fusion::{CloudPoint, PointCloud};
use crate::geometry::CameraModel;
use crate::parallel;
use crate::{Error, Result};

/// Distance scores between a reconstruction and a reference cloud.
/// All distances are capped at `max_dist` before averaging, so a stray
/// point cannot dominate the score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionScore {
    /// Mean capped distance reconstruction -> reference.
    pub accuracy: f64,
    /// Mean capped distance reference -> reconstruction.
    pub completeness: f64,
    /// `(accuracy + completeness) / 2`.
    pub overall: f64,
    /// The cap that was applied.
    pub max_dist: f64,
    /// True when the reconstruction was empty and the score is the full
    /// penalty rather than a measured distance.
    pub penalized_empty: bool,
}

/// Uniform spatial hash over points with cell size = `max_dist`; queries
/// only ever need the 27 surrounding cells because farther distances are
/// capped anyway.
struct PointGrid<'a> {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    points: &'a [CloudPoint],
}

impl<'a> PointGrid<'a> {
    fn build(points: &'a [CloudPoint], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(&p.position, cell)).or_default().push(i);
        }
        PointGrid {
            cell,
            cells,
            points,
        }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Distance from `query` to the nearest stored point, capped at the
    /// cell size. Exact for all pairs within the cap.
    fn capped_distance(&self, query: &Vector3<f64>) -> f64 {
        let (kx, ky, kz) = Self::key(query, self.cell);
        let mut best_sq = self.cell * self.cell;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &i in bucket {
                            let d = self.points[i].position - query;
                            let sq = d.norm_squared();
                            if sq < best_sq {
                                best_sq = sq;
                            }
                        }
                    }
                }
            }
        }
        best_sq.sqrt()
    }
}

/// DTU-style accuracy / completeness / overall between two clouds.
///
/// An empty reference is an input error; an empty reconstruction yields
/// the full penalty `(max_dist, max_dist, max_dist)` with the
/// `penalized_empty` flag set.
pub fn accuracy_completeness(
    pred: &PointCloud,
    gt: &PointCloud,
    max_dist: f64,
) -> Result<ReconstructionScore> {
    if !(max_dist > 0.0) {
        return Err(Error::input("distance cap must be positive"));
    }
    if gt.is_empty() {
        return Err(Error::input("reference cloud must be non-empty"));
    }
    if pred.is_empty() {
        return Ok(ReconstructionScore {
            accuracy: max_dist,
            completeness: max_dist,
            overall: max_dist,
            max_dist,
            penalized_empty: true,
        });
    }

    let accuracy = mean_capped_distance(&pred.points, &gt.points, max_dist);
    let completeness = mean_capped_distance(&gt.points, &pred.points, max_dist);
    Ok(ReconstructionScore {
        accuracy,
        completeness,
        overall: 0.5 * (accuracy + completeness),
        max_dist,
        penalized_empty: false,
    })
}

fn mean_capped_distance(queries: &[CloudPoint], targets: &[CloudPoint], max_dist: f64) -> f64 {
    let grid = PointGrid::build(targets, max_dist);
    // Fixed-size query blocks with an ordered fold keep the reduction
    // deterministic under any worker count.
    const BLOCK: usize = 1024;
    let blocks = queries.len().div_ceil(BLOCK);
    let sum = parallel::map_reduce_rows(
        blocks,
        |b| {
            let start = b * BLOCK;
            let end = (start + BLOCK).min(queries.len());
            let mut acc = 0.0f64;
            for q in &queries[start..end] {
                acc += grid.capped_distance(&q.position);
            }
            acc
        },
        0.0f64,
        |a, b| a + b,
    );
    sum / queries.len() as f64
}

/// Masked depth-map errors plus inlier fractions at 1x / 2x / 4x of a
/// reference spacing (typically a stage's unit sampling distance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthErrorStats {
    pub mae: f64,
    pub rmse: f64,
    pub inlier_1: f64,
    pub inlier_2: f64,
    pub inlier_4: f64,
    pub reference_spacing: f64,
    pub valid_pixels: u64,
}

pub fn depth_error(
    pred: &Array2<f64>,
    gt: &Array2<f64>,
    mask: &Array2<bool>,
    reference_spacing: f64,
) -> Result<DepthErrorStats> {
    if pred.dim() != gt.dim() || pred.dim() != mask.dim() {
        return Err(Error::input("depth error inputs must share one shape"));
    }
    if !(reference_spacing > 0.0) {
        return Err(Error::input("reference spacing must be positive"));
    }
    let (h, w) = pred.dim();
    #[derive(Clone, Copy, Default)]
    struct Partial {
        n: u64,
        abs: f64,
        sq: f64,
        in1: u64,
        in2: u64,
        in4: u64,
    }
    let total = parallel::map_reduce_rows(
        h,
        |y| {
            let mut p = Partial::default();
            for x in 0..w {
                if !mask[(y, x)] {
                    continue;
                }
                let e = (pred[(y, x)] - gt[(y, x)]).abs();
                p.n += 1;
                p.abs += e;
                p.sq += e * e;
                if e <= reference_spacing {
                    p.in1 += 1;
                }
                if e <= 2.0 * reference_spacing {
                    p.in2 += 1;
                }
                if e <= 4.0 * reference_spacing {
                    p.in4 += 1;
                }
            }
            p
        },
        Partial::default(),
        |mut a, b| {
            a.n += b.n;
            a.abs += b.abs;
            a.sq += b.sq;
            a.in1 += b.in1;
            a.in2 += b.in2;
            a.in4 += b.in4;
            a
        },
    );
    if total.n == 0 {
        return Err(Error::statistics("no valid pixels for depth error"));
    }
    let n = total.n as f64;
    Ok(DepthErrorStats {
        mae: total.abs / n,
        rmse: (total.sq / n).sqrt(),
        inlier_1: total.in1 as f64 / n,
        inlier_2: total.in2 as f64 / n,
        inlier_4: total.in4 as f64 / n,
        reference_spacing,
        valid_pixels: total.n,
    })
}

/// Dense reference cloud from ground-truth depth maps: one point per valid
/// pixel of every view, deduplicated on a grid of `dedup_cell` (first
/// point per cell wins, in view/row order).
pub fn cloud_from_depth_maps(
    depths: &[Array2<f64>],
    cameras: &[CameraModel],
    dedup_cell: f64,
) -> Result<PointCloud> {
    if depths.len() != cameras.len() {
        return Err(Error::input("depths and cameras must align"));
    }
    if !(dedup_cell > 0.0) {
        return Err(Error::input("dedup cell must be positive"));
    }
    let mut seen: HashMap<(i64, i64, i64), ()> = HashMap::new();
    let mut cloud = PointCloud::default();
    for (view, (depth, cam)) in depths.iter().zip(cameras.iter()).enumerate() {
        let (h, w) = depth.dim();
        if cam.image_size() != (w, h) {
            return Err(Error::input(format!("view {view}: camera/depth size mismatch")));
        }
        for y in 0..h {
            for x in 0..w {
                let d = depth[(y, x)];
                if !(d > 0.0 && d.is_finite()) {
                    continue;
                }
                let p = cam.unproject(x as f64, y as f64, d);
                let key = (
                    (p.x / dedup_cell).floor() as i64,
                    (p.y / dedup_cell).floor() as i64,
                    (p.z / dedup_cell).floor() as i64,
                );
                if seen.insert(key, ()).is_none() {
                    cloud.points.push(CloudPoint {
                        position: p,
                        color: [1.0, 1.0, 1.0],
                        source_view: view,
                    });
                }
            }
        }
    }
    Ok(cloud)
}

/// Interior mask: valid pixels at least `margin` pixels away from the
/// image border and from any invalid pixel.
pub fn interior_mask(valid: &Array2<bool>, margin: usize) -> Array2<bool> {
    let (h, w) = valid.dim();
    let m = margin as isize;
    Array2::from_shape_fn((h, w), |(y, x)| {
        if y < margin || x < margin || y + margin >= h || x + margin >= w {
            return false;
        }
        for dy in -m..=m {
            for dx in -m..=m {
                let yy = (y as isize + dy) as usize;
                let xx = (x as isize + dx) as usize;
                if !valid[(yy, xx)] {
                    return false;
                }
            }
        }
        true
    })
}

/// Stride subsampling of a full-resolution map onto the stage grid; exact
/// under the pyramid intrinsic-scaling convention (coarse pixel centers
/// coincide with every `factor`-th full-resolution pixel).
pub fn subsample<T: Copy>(full: &Array2<T>, factor: usize) -> Array2<T> {
    let (h, w) = full.dim();
    Array2::from_shape_fn((h.div_ceil(factor), w.div_ceil(factor)), |(y, x)| {
        full[(y * factor, x * factor)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cloud_of(points: Vec<Vector3<f64>>) -> PointCloud {
        PointCloud {
            points: points
                .into_iter()
                .map(|position| CloudPoint {
                    position,
                    color: [1.0, 1.0, 1.0],
                    source_view: 0,
                })
                .collect(),
        }
    }

    fn planar_grid(n: usize, spacing: f64) -> Vec<Vector3<f64>> {
        let mut points = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                points.push(Vector3::new(i as f64 * spacing, j as f64 * spacing, 4.0));
            }
        }
        points
    }

    #[test]
    fn identical_clouds_score_zero() {
        let cloud = cloud_of(planar_grid(20, 0.1));
        let score = accuracy_completeness(&cloud, &cloud, 1.0).unwrap();
        assert_eq!(score.accuracy, 0.0);
        assert_eq!(score.completeness, 0.0);
        assert_eq!(score.overall, 0.0);
        assert!(!score.penalized_empty);
    }

    #[test]
    fn empty_prediction_is_fully_penalized() {
        let gt = cloud_of(planar_grid(5, 0.2));
        let score = accuracy_completeness(&PointCloud::default(), &gt, 0.75).unwrap();
        assert_eq!(score.accuracy, 0.75);
        assert_eq!(score.completeness, 0.75);
        assert_eq!(score.overall, 0.75);
        assert!(score.penalized_empty);
    }

    #[test]
    fn empty_reference_is_an_input_error() {
        let pred = cloud_of(planar_grid(3, 0.2));
        assert!(accuracy_completeness(&pred, &PointCloud::default(), 1.0).is_err());
    }

    #[test]
    fn translated_plane_scores_the_shift_and_matches_exhaustive() {
        let spacing = 0.05;
        let delta = 0.1;
        let gt_pts = planar_grid(50, spacing);
        let pred_pts: Vec<Vector3<f64>> = gt_pts
            .iter()
            .map(|p| p + Vector3::new(delta, 0.0, 0.0))
            .collect();
        let gt = cloud_of(gt_pts.clone());
        let pred = cloud_of(pred_pts.clone());
        let max_dist = 1.0;
        let score = accuracy_completeness(&pred, &gt, max_dist).unwrap();

        // Exhaustive O(n^2) oracle.
        let exhaustive = |qs: &[Vector3<f64>], ts: &[Vector3<f64>]| -> f64 {
            qs.iter()
                .map(|q| {
                    ts.iter()
                        .map(|t| (q - t).norm())
                        .fold(f64::INFINITY, f64::min)
                        .min(max_dist)
                })
                .sum::<f64>()
                / qs.len() as f64
        };
        let acc_ref = exhaustive(&pred_pts, &gt_pts);
        let comp_ref = exhaustive(&gt_pts, &pred_pts);
        assert_abs_diff_eq!(score.accuracy, acc_ref, epsilon = 1e-12);
        assert_abs_diff_eq!(score.completeness, comp_ref, epsilon = 1e-12);

        // Interior points see their x-shifted twin at distance 0.05 (the
        // lattice realigns except at the swept-past boundary), so the mean
        // sits within 10% of min(delta, spacing-resolved distance).
        assert!((score.accuracy - acc_ref).abs() < 1e-12);
        assert!(score.accuracy <= delta * 1.1);
        assert!(score.completeness <= delta * 1.1);
        assert!(score.accuracy > 0.0);
    }

    #[test]
    fn swapping_clouds_swaps_accuracy_and_completeness() {
        let a = cloud_of(planar_grid(15, 0.11));
        let b = cloud_of(
            planar_grid(12, 0.13)
                .into_iter()
                .map(|p| p + Vector3::new(0.03, -0.02, 0.01))
                .collect(),
        );
        let s1 = accuracy_completeness(&a, &b, 0.5).unwrap();
        let s2 = accuracy_completeness(&b, &a, 0.5).unwrap();
        assert_eq!(s1.accuracy.to_bits(), s2.completeness.to_bits());
        assert_eq!(s1.completeness.to_bits(), s2.accuracy.to_bits());
    }

    #[test]
    fn depth_error_trivial_cases() {
        let gt = Array2::from_shape_fn((4, 4), |(y, x)| 4.0 + 0.1 * (x + y) as f64);
        let mask = Array2::from_elem((4, 4), true);
        let zero = depth_error(&gt, &gt, &mask, 1.0).unwrap();
        assert_eq!(zero.mae, 0.0);
        assert_eq!(zero.rmse, 0.0);
        assert_eq!(zero.inlier_1, 1.0);

        let pred = gt.mapv(|v| v + 1.0);
        let one = depth_error(&pred, &gt, &mask, 1.0).unwrap();
        assert_abs_diff_eq!(one.mae, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(one.rmse, 1.0, epsilon = 1e-12);
        assert_eq!(one.inlier_1, 1.0);

        // Thresholds strictly below the error catch nothing.
        let below = depth_error(&pred, &gt, &mask, 0.2).unwrap();
        assert_eq!(below.inlier_1, 0.0);
        assert_eq!(below.inlier_2, 0.0);
        assert_eq!(below.inlier_4, 0.0);
    }

    #[test]
    fn depth_error_matches_direct_sums() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let gt = Array2::from_shape_fn((4, 4), |_| rng.random_range(2.0..6.0));
        let pred = gt.mapv(|v| v + rng.random_range(-0.5..0.5));
        let mut mask = Array2::from_elem((4, 4), true);
        mask[(0, 0)] = false;
        let stats = depth_error(&pred, &gt, &mask, 0.25).unwrap();

        let mut abs = 0.0;
        let mut sq = 0.0;
        let mut n = 0.0;
        for y in 0..4 {
            for x in 0..4 {
                if !mask[(y, x)] {
                    continue;
                }
                let e = (pred[(y, x)] - gt[(y, x)]).abs();
                abs += e;
                sq += e * e;
                n += 1.0;
            }
        }
        assert!((stats.mae - abs / n).abs() < 1e-12);
        assert!((stats.rmse - (sq / n).sqrt()).abs() < 1e-12);
        assert_eq!(stats.valid_pixels, 15);
    }

    #[test]
    fn depth_error_rejects_empty_mask() {
        let gt = Array2::from_elem((2, 2), 1.0);
        let mask = Array2::from_elem((2, 2), false);
        assert!(matches!(
            depth_error(&gt, &gt, &mask, 1.0),
            Err(Error::Statistics(_))
        ));
    }

    #[test]
    fn interior_mask_erodes_borders_and_holes() {
        let mut valid = Array2::from_elem((13, 13), true);
        valid[(6, 6)] = false;
        let interior = interior_mask(&valid, 2);
        assert!(!interior[(0, 0)]);
        assert!(!interior[(1, 6)]);
        // Chebyshev distance > margin from the hole and the border.
        assert!(interior[(2, 2)]);
        assert!(interior[(3, 6)]);
        assert!(interior[(10, 10)]);
        // Within margin of the hole.
        assert!(!interior[(5, 5)]);
        assert!(!interior[(6, 4)]);
        assert!(!interior[(8, 8)]);
    }

    #[test]
    fn subsample_takes_every_kth_pixel() {
        let full = Array2::from_shape_fn((9, 13), |(y, x)| (y * 100 + x) as f64);
        let quarter = subsample(&full, 4);
        assert_eq!(quarter.dim(), (3, 4));
        assert_eq!(quarter[(0, 0)], 0.0);
        assert_eq!(quarter[(1, 2)], 408.0);
        assert_eq!(quarter[(2, 3)], 812.0);
    }

    #[test]
    fn dedup_keeps_first_point_per_cell() {
        use nalgebra::Matrix3;
        let size = (4, 4);
        let k = Matrix3::new(10.0, 0.0, 1.5, 0.0, 10.0, 1.5, 0.0, 0.0, 1.0);
        let cam = CameraModel::new(k, Matrix3::identity(), Vector3::zeros(), size).unwrap();
        let depth = Array2::from_elem((4, 4), 5.0);
        // Two identical views project to identical world points; dedup
        // collapses them onto the first view's points.
        let cloud = cloud_from_depth_maps(
            &[depth.clone(), depth],
            &[cam.clone(), cam],
            0.001,
        )
        .unwrap();
        assert_eq!(cloud.len(), 16);
        assert!(cloud.points.iter().all(|p| p.source_view == 0));
    }
}
