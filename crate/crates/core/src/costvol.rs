//! Depth-hypothesis volumes and cross-view variance cost volumes.
//!
//! A hypothesis volume stores one candidate depth per plane and pixel;
//! uniform sweeps share a single depth per plane, adaptive thin volumes
//! vary per pixel. The matching cost of a cell is the per-channel variance
//! of the feature vectors that all views contribute at that depth,
//! averaged over channels. The reference view always contributes its own
//! (unwarped) features; source views contribute bilinear samples at the
//! warped location and are skipped when the footprint leaves the image.
//!
//! Cells observed by fewer than two views carry [`SENTINEL_COST`] so the
//! downstream softmax assigns them negligible probability.

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::features::FeatureMap;
use crate::geometry::{bilinear_into, compose_warp, warp_pixel, CameraModel, WarpMatrix};
use crate::{Error, Result};

/// Cost stored where the cross-view variance is undefined (fewer than two
/// contributing views). Far above any standardized-feature variance.
pub const SENTINEL_COST: f32 = 1.0e6;

/// Minimum per-pixel gap between consecutive depth planes.
pub const MIN_PLANE_GAP: f64 = 1e-9;

pub fn is_sentinel(cost: f32) -> bool {
    cost >= SENTINEL_COST
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypothesisKind {
    Uniform,
    Adaptive,
}

/// Per-pixel depth hypotheses, `D x H x W`, strictly increasing along the
/// plane axis at every pixel.
#[derive(Debug, Clone)]
pub struct HypothesisVolume {
    depths: Array3<f64>,
    kind: HypothesisKind,
    stage_index: u8,
}

impl HypothesisVolume {
    pub fn new(depths: Array3<f64>, kind: HypothesisKind, stage_index: u8) -> Result<Self> {
        let (d, h, w) = depths.dim();
        if d == 0 || h == 0 || w == 0 {
            return Err(Error::input("hypothesis volume must be non-empty"));
        }
        for y in 0..h {
            for x in 0..w {
                let mut prev = f64::NEG_INFINITY;
                for j in 0..d {
                    let v = depths[(j, y, x)];
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::input(format!(
                            "hypothesis at plane {j}, pixel ({x}, {y}) must be positive, got {v}"
                        )));
                    }
                    if j > 0 && v - prev < MIN_PLANE_GAP {
                        return Err(Error::input(format!(
                            "hypotheses must increase by at least {MIN_PLANE_GAP} along planes; \
                             plane {j} at ({x}, {y}) has gap {}",
                            v - prev
                        )));
                    }
                    prev = v;
                }
            }
        }
        Ok(HypothesisVolume {
            depths,
            kind,
            stage_index,
        })
    }

    pub fn depths(&self) -> &Array3<f64> {
        &self.depths
    }

    pub fn kind(&self) -> HypothesisKind {
        self.kind
    }

    pub fn stage_index(&self) -> u8 {
        self.stage_index
    }

    pub fn with_stage_index(mut self, stage_index: u8) -> Self {
        self.stage_index = stage_index;
        self
    }

    pub fn planes(&self) -> usize {
        self.depths.dim().0
    }

    /// `(width, height)` of the pixel grid.
    pub fn size(&self) -> (usize, usize) {
        let (_, h, w) = self.depths.dim();
        (w, h)
    }

    /// Smallest and largest hypothesis at a pixel.
    pub fn span_at(&self, x: usize, y: usize) -> (f64, f64) {
        let d = self.planes();
        (self.depths[(0, y, x)], self.depths[(d - 1, y, x)])
    }
}

/// Cell-centered uniform sweep: `d_j = d_min + (j + 0.5) * (d_max - d_min) / D`,
/// identical at every pixel. The plane spacing (unit sampling distance) is
/// exactly `(d_max - d_min) / D`.
pub fn uniform_hypotheses(
    d_min: f64,
    d_max: f64,
    planes: usize,
    width: usize,
    height: usize,
) -> Result<HypothesisVolume> {
    if !(d_min > 0.0 && d_min < d_max) {
        return Err(Error::input(format!(
            "need 0 < d_min < d_max, got [{d_min}, {d_max}]"
        )));
    }
    if planes == 0 || width == 0 || height == 0 {
        return Err(Error::input("plane count and size must be positive"));
    }
    let step = (d_max - d_min) / planes as f64;
    let mut depths = Array3::<f64>::zeros((planes, height, width));
    for j in 0..planes {
        let d = d_min + (j as f64 + 0.5) * step;
        depths.index_axis_mut(ndarray::Axis(0), j).fill(d);
    }
    HypothesisVolume::new(depths, HypothesisKind::Uniform, 1)
}

/// Matching costs and per-cell contributing-view counts, `D x H x W`.
#[derive(Debug, Clone)]
pub struct CostVolume {
    costs: Array3<f32>,
    valid_views: Array3<u8>,
}

impl CostVolume {
    pub fn new(costs: Array3<f32>, valid_views: Array3<u8>) -> Result<Self> {
        if costs.dim() != valid_views.dim() {
            return Err(Error::input("cost and view-count shapes differ"));
        }
        Ok(CostVolume { costs, valid_views })
    }

    pub fn costs(&self) -> &Array3<f32> {
        &self.costs
    }

    pub fn valid_views(&self) -> &Array3<u8> {
        &self.valid_views
    }

    pub fn planes(&self) -> usize {
        self.costs.dim().0
    }

    pub fn size(&self) -> (usize, usize) {
        let (_, h, w) = self.costs.dim();
        (w, h)
    }
}

struct ViewData<'a> {
    data: &'a [f32],
    warp: Option<WarpMatrix>,
}

fn check_inputs(
    features: &[&FeatureMap],
    cameras: &[CameraModel],
    hyps: &HypothesisVolume,
) -> Result<(usize, usize, usize)> {
    if features.len() < 2 {
        return Err(Error::input("cost volume needs at least two views"));
    }
    if features.len() != cameras.len() {
        return Err(Error::input(format!(
            "{} feature maps vs {} cameras",
            features.len(),
            cameras.len()
        )));
    }
    if features.len() > u8::MAX as usize {
        return Err(Error::input("more than 255 views are not supported"));
    }
    let (w, h) = features[0].size();
    let channels = features[0].channels();
    let scale = features[0].scale_index();
    for (i, f) in features.iter().enumerate() {
        if f.size() != (w, h) || f.channels() != channels || f.scale_index() != scale {
            return Err(Error::input(format!(
                "feature map {i} does not match the reference shape"
            )));
        }
    }
    for (i, cam) in cameras.iter().enumerate() {
        if cam.image_size() != (w, h) {
            return Err(Error::input(format!(
                "camera {i} size {:?} does not match feature size {:?}",
                cam.image_size(),
                (w, h)
            )));
        }
    }
    if hyps.size() != (w, h) {
        return Err(Error::input(format!(
            "hypothesis grid {:?} does not match feature size {:?}",
            hyps.size(),
            (w, h)
        )));
    }
    Ok((w, h, channels))
}

/// Builds the cross-view variance cost volume. `features[0]` / `cameras[0]`
/// form the reference view.
///
/// Fails with a pipeline error when no cell anywhere gathers two views.
pub fn build_cost_volume(
    features: &[&FeatureMap],
    cameras: &[CameraModel],
    hyps: &HypothesisVolume,
) -> Result<CostVolume> {
    let (w, h, channels) = check_inputs(features, cameras, hyps)?;
    let planes = hyps.planes();

    let mut views = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let warp = if i == 0 {
            None
        } else {
            Some(compose_warp(&cameras[i], &cameras[0])?)
        };
        views.push(ViewData {
            data: f.values().as_slice().expect("standard layout"),
            warp,
        });
    }

    let mut costs = Array3::<f32>::zeros((planes, h, w));
    let mut valid = Array3::<u8>::zeros((planes, h, w));
    let depth_slice = hyps.depths().as_slice().expect("standard layout");
    {
        let cost_rows = costs.as_slice_mut().expect("standard layout");
        let valid_rows = valid.as_slice_mut().expect("standard layout");
        cost_rows
            .par_chunks_mut(w)
            .zip(valid_rows.par_chunks_mut(w))
            .enumerate()
            .for_each(|(row_idx, (cost_row, valid_row))| {
                let y = row_idx % h;
                let row_offset = row_idx * w; // == (plane * h + y) * w
                cost_row_kernel(
                    &views,
                    &depth_slice[row_offset..row_offset + w],
                    y,
                    w,
                    h,
                    channels,
                    cost_row,
                    valid_row,
                );
            });
    }

    if valid.iter().all(|&m| m < 2) {
        return Err(Error::pipeline(
            "no cell is observed by two or more views; cameras do not overlap",
        ));
    }
    CostVolume::new(costs, valid)
}

/// Computes a single plane of the cost volume in isolation.
///
/// Shares the row kernel with [`build_cost_volume`], so the produced slice
/// is bit-identical to the corresponding slice of the full volume.
pub fn build_cost_plane(
    features: &[&FeatureMap],
    cameras: &[CameraModel],
    hyps: &HypothesisVolume,
    plane: usize,
) -> Result<(Array2<f32>, Array2<u8>)> {
    let (w, h, channels) = check_inputs(features, cameras, hyps)?;
    if plane >= hyps.planes() {
        return Err(Error::input(format!(
            "plane {plane} out of range 0..{}",
            hyps.planes()
        )));
    }
    let mut views = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let warp = if i == 0 {
            None
        } else {
            Some(compose_warp(&cameras[i], &cameras[0])?)
        };
        views.push(ViewData {
            data: f.values().as_slice().expect("standard layout"),
            warp,
        });
    }
    let depth_slice = hyps.depths().as_slice().expect("standard layout");
    let mut costs = Array2::<f32>::zeros((h, w));
    let mut valid = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        let offset = (plane * h + y) * w;
        cost_row_kernel(
            &views,
            &depth_slice[offset..offset + w],
            y,
            w,
            h,
            channels,
            &mut costs.as_slice_mut().unwrap()[y * w..(y + 1) * w],
            &mut valid.as_slice_mut().unwrap()[y * w..(y + 1) * w],
        );
    }
    Ok((costs, valid))
}

/// Per-row cost kernel: warps every source view to each pixel of one
/// (plane, row) slice and reduces the samples to a variance cost.
///
/// Per-channel samples are sorted into a canonical order before summation,
/// so the result is bit-identical under any permutation of source views.
#[allow(clippy::too_many_arguments)]
fn cost_row_kernel(
    views: &[ViewData],
    row_depths: &[f64],
    y: usize,
    w: usize,
    h: usize,
    channels: usize,
    cost_row: &mut [f32],
    valid_row: &mut [u8],
) {
    let n = views.len();
    let mut samples = vec![0.0f64; n * channels];
    let mut valid = vec![false; n];
    let mut chan_buf = vec![0.0f64; n];

    for x in 0..w {
        let d = row_depths[x];
        valid[0] = true;
        let ref_base = (y * w + x) * channels;
        for c in 0..channels {
            samples[c] = views[0].data[ref_base + c] as f64;
        }
        let mut count = 1usize;
        for (i, view) in views.iter().enumerate().skip(1) {
            let warp = view.warp.as_ref().unwrap();
            valid[i] = match warp_pixel(warp, x as f64, y as f64, d) {
                Some((sx, sy)) => bilinear_into(
                    view.data,
                    h,
                    w,
                    channels,
                    sx,
                    sy,
                    &mut samples[i * channels..(i + 1) * channels],
                ),
                None => false,
            };
            if valid[i] {
                count += 1;
            }
        }

        if count < 2 {
            cost_row[x] = SENTINEL_COST;
            valid_row[x] = count as u8;
            continue;
        }

        let inv_m = 1.0 / count as f64;
        let mut var_sum = 0.0f64;
        for c in 0..channels {
            let mut m = 0usize;
            for i in 0..n {
                if valid[i] {
                    chan_buf[m] = samples[i * channels + c];
                    m += 1;
                }
            }
            let vals = &mut chan_buf[..m];
            vals.sort_unstable_by(f64::total_cmp);
            let mean = vals.iter().sum::<f64>() * inv_m;
            var_sum += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_m;
        }
        cost_row[x] = (var_sum / channels as f64) as f32;
        valid_row[x] = count as u8;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMap;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix3, Vector3};

    fn camera(tx: f64, size: (usize, usize)) -> CameraModel {
        let k = Matrix3::new(
            40.0,
            0.0,
            (size.0 - 1) as f64 / 2.0,
            0.0,
            40.0,
            (size.1 - 1) as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        CameraModel::new(k, Matrix3::identity(), Vector3::new(tx, 0.0, 0.0), size).unwrap()
    }

    fn constant_features(value: f32, w: usize, h: usize, c: usize, view: usize) -> FeatureMap {
        FeatureMap::from_values(ndarray::Array3::from_elem((h, w, c), value), 1, view).unwrap()
    }

    #[test]
    fn uniform_cell_centers() {
        // Offsets of the [0, 1] example shifted into the valid domain.
        let hyps = uniform_hypotheses(1.0, 2.0, 2, 3, 2).unwrap();
        assert_abs_diff_eq!(hyps.depths()[(0, 0, 0)], 1.25, epsilon = 1e-15);
        assert_abs_diff_eq!(hyps.depths()[(1, 1, 2)], 1.75, epsilon = 1e-15);
    }

    #[test]
    fn uniform_dtu_spacing_is_7_95() {
        let hyps = uniform_hypotheses(425.0, 933.8, 64, 4, 4).unwrap();
        let spacing = hyps.depths()[(1, 0, 0)] - hyps.depths()[(0, 0, 0)];
        assert_abs_diff_eq!(spacing, 7.95, epsilon = 1e-12);
        assert_abs_diff_eq!((933.8 - 425.0) / 64.0, 7.95, epsilon = 1e-12);
    }

    #[test]
    fn uniform_single_plane_sits_at_midpoint() {
        let hyps = uniform_hypotheses(2.0, 4.0, 1, 2, 2).unwrap();
        assert_abs_diff_eq!(hyps.depths()[(0, 0, 0)], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn uniform_rejects_bad_ranges() {
        assert!(uniform_hypotheses(0.0, 1.0, 4, 2, 2).is_err());
        assert!(uniform_hypotheses(2.0, 1.0, 4, 2, 2).is_err());
        assert!(uniform_hypotheses(1.0, 2.0, 0, 2, 2).is_err());
    }

    #[test]
    fn hypothesis_volume_rejects_non_increasing() {
        let mut depths = ndarray::Array3::<f64>::zeros((2, 1, 1));
        depths[(0, 0, 0)] = 2.0;
        depths[(1, 0, 0)] = 2.0;
        assert!(HypothesisVolume::new(depths, HypothesisKind::Adaptive, 2).is_err());
    }

    #[test]
    fn identical_views_give_zero_cost_and_full_count() {
        let size = (12, 10);
        let feats: Vec<FeatureMap> = (0..4)
            .map(|i| constant_features(3.7, size.0, size.1, 5, i))
            .collect();
        let refs: Vec<&FeatureMap> = feats.iter().collect();
        let cams: Vec<CameraModel> = (0..4).map(|_| camera(0.0, size)).collect();
        let hyps = uniform_hypotheses(2.0, 6.0, 3, size.0, size.1).unwrap();
        let vol = build_cost_volume(&refs, &cams, &hyps).unwrap();
        for &c in vol.costs() {
            assert!(c.abs() < 1e-9, "cost should vanish, got {c}");
        }
        assert!(vol.valid_views().iter().all(|&m| m == 4));
    }

    #[test]
    fn out_of_frame_sources_leave_sentinel() {
        let size = (8, 8);
        let feats: Vec<FeatureMap> = (0..2)
            .map(|i| constant_features(1.0, size.0, size.1, 2, i))
            .collect();
        let refs: Vec<&FeatureMap> = feats.iter().collect();
        // Source shifted so that part of the reference frustum misses it.
        let cams = vec![camera(0.0, size), camera(-0.2, size)];
        let hyps = uniform_hypotheses(1.0, 2.0, 2, size.0, size.1).unwrap();
        let vol = build_cost_volume(&refs, &cams, &hyps).unwrap();
        let mut saw_sentinel = false;
        for j in 0..vol.planes() {
            for y in 0..size.1 {
                for x in 0..size.0 {
                    let m = vol.valid_views()[(j, y, x)];
                    let c = vol.costs()[(j, y, x)];
                    if m < 2 {
                        saw_sentinel = true;
                        assert_eq!(m, 1);
                        assert!(is_sentinel(c));
                    } else {
                        assert!(!is_sentinel(c));
                    }
                }
            }
        }
        assert!(saw_sentinel, "expected some occluded cells in this setup");
    }

    #[test]
    fn fully_disjoint_views_are_a_pipeline_error() {
        let size = (8, 8);
        let feats: Vec<FeatureMap> = (0..2)
            .map(|i| constant_features(1.0, size.0, size.1, 2, i))
            .collect();
        let refs: Vec<&FeatureMap> = feats.iter().collect();
        let cams = vec![camera(0.0, size), camera(-1000.0, size)];
        let hyps = uniform_hypotheses(1.0, 2.0, 2, size.0, size.1).unwrap();
        match build_cost_volume(&refs, &cams, &hyps) {
            Err(Error::Pipeline(_)) => {}
            other => panic!("expected pipeline error, got {other:?}"),
        }
    }

    fn textured_features(seed: u32, w: usize, h: usize, c: usize, view: usize) -> FeatureMap {
        let values = ndarray::Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
            let t = (x as f32 * 0.77 + y as f32 * 1.31 + ch as f32 * 0.513 + seed as f32 * 0.1).sin();
            t * 0.8 + 0.1 * (x as f32 * 2.1).cos()
        });
        FeatureMap::from_values(values, 1, view).unwrap()
    }

    #[test]
    fn cost_is_invariant_to_source_view_permutation() {
        let size = (16, 12);
        let feats: Vec<FeatureMap> = (0..4)
            .map(|i| textured_features(i, size.0, size.1, 3, i as usize))
            .collect();
        let cams: Vec<CameraModel> = [0.0, 0.4, -0.3, 0.8]
            .iter()
            .map(|&tx| camera(tx, size))
            .collect();
        let hyps = uniform_hypotheses(2.0, 8.0, 4, size.0, size.1).unwrap();

        let fwd: Vec<&FeatureMap> = feats.iter().collect();
        let vol_a = build_cost_volume(&fwd, &cams, &hyps).unwrap();

        let perm = [0usize, 3, 1, 2];
        let feats_p: Vec<&FeatureMap> = perm.iter().map(|&i| &feats[i]).collect();
        let cams_p: Vec<CameraModel> = perm.iter().map(|&i| cams[i].clone()).collect();
        let vol_b = build_cost_volume(&feats_p, &cams_p, &hyps).unwrap();

        for (a, b) in vol_a.costs().iter().zip(vol_b.costs().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(vol_a.valid_views(), vol_b.valid_views());
    }

    #[test]
    fn cost_is_translation_invariant_across_views() {
        let size = (16, 12);
        let feats: Vec<FeatureMap> = (0..3)
            .map(|i| textured_features(i, size.0, size.1, 3, i as usize))
            .collect();
        let shifted: Vec<FeatureMap> = feats
            .iter()
            .enumerate()
            .map(|(i, f)| {
                FeatureMap::from_values(f.values().mapv(|v| v + 0.5), 1, i).unwrap()
            })
            .collect();
        let cams: Vec<CameraModel> = [0.0, 0.4, -0.3].iter().map(|&tx| camera(tx, size)).collect();
        let hyps = uniform_hypotheses(2.0, 8.0, 4, size.0, size.1).unwrap();
        let a = build_cost_volume(&feats.iter().collect::<Vec<_>>(), &cams, &hyps).unwrap();
        let b = build_cost_volume(&shifted.iter().collect::<Vec<_>>(), &cams, &hyps).unwrap();
        for (ca, cb) in a.costs().iter().zip(b.costs().iter()) {
            if !is_sentinel(*ca) {
                assert!((ca - cb).abs() < 1e-5, "{ca} vs {cb}");
            }
        }
    }

    #[test]
    fn single_plane_rebuild_matches_full_volume() {
        let size = (16, 12);
        let feats: Vec<FeatureMap> = (0..3)
            .map(|i| textured_features(i, size.0, size.1, 4, i as usize))
            .collect();
        let refs: Vec<&FeatureMap> = feats.iter().collect();
        let cams: Vec<CameraModel> = [0.0, 0.4, -0.3].iter().map(|&tx| camera(tx, size)).collect();
        let hyps = uniform_hypotheses(2.0, 8.0, 5, size.0, size.1).unwrap();
        let vol = build_cost_volume(&refs, &cams, &hyps).unwrap();
        for j in [0usize, 2, 4] {
            let (costs, valid) = build_cost_plane(&refs, &cams, &hyps, j).unwrap();
            for y in 0..size.1 {
                for x in 0..size.0 {
                    assert_eq!(costs[(y, x)].to_bits(), vol.costs()[(j, y, x)].to_bits());
                    assert_eq!(valid[(y, x)], vol.valid_views()[(j, y, x)]);
                }
            }
        }
    }
}
