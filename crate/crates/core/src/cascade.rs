//! Three-stage coarse-to-fine depth estimation.
//!
//! Stage 1 sweeps a uniform plane-sweep volume over `[d_min, d_max]` at
//! quarter resolution. Each following stage upsamples the previous
//! confidence-interval map to its own resolution and samples an adaptive
//! thin volume from it — half resolution with fewer planes, then full
//! resolution with fewer still. Every stage runs the same kernel chain:
//! cost volume, box regularization, depth-wise softmax, expectation,
//! variance, confidence interval.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::costvol::{build_cost_volume, uniform_hypotheses, HypothesisVolume};
use crate::features::{build_feature_pyramid, scale_size, FeatureConfig, FeatureMap};
use crate::geometry::CameraModel;
use crate::image::ViewImage;
use crate::probability::{estimate_depth, regularize_cost, softmax_probability, DepthEstimate, ProbabilityVolume};
use crate::uncertainty::{atv_hypotheses, confidence_interval, IntervalMap};
use crate::{Error, Result};

/// Full pipeline configuration for one reconstruction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeConfig {
    /// Number of input views including the reference.
    pub n_views: usize,
    pub d_min: f64,
    pub d_max: f64,
    /// Planes per stage; trailing zeros disable stages 2/3.
    pub planes: [usize; 3],
    /// Confidence-interval scale on the distribution deviation.
    pub lambda: f64,
    /// Softmax temperature on the variance costs.
    pub beta: f64,
    /// Box-filter half-widths of the per-stage cost regularizer.
    pub smoothing_radii: [usize; 3],
    /// Floor on confidence-interval widths (scene units).
    pub min_interval_width: f64,
    pub features: FeatureConfig,
}

impl CascadeConfig {
    /// The paper-default profile: five views, 64/32/8 planes, lambda 1.5.
    /// Depth range must still be set per scene.
    pub fn with_range(d_min: f64, d_max: f64) -> Self {
        CascadeConfig {
            n_views: 5,
            d_min,
            d_max,
            planes: [64, 32, 8],
            lambda: 1.5,
            beta: 40.0,
            smoothing_radii: [2, 4, 8],
            min_interval_width: 0.1,
            features: FeatureConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views < 2 {
            return Err(Error::input("cascade needs at least two views"));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return Err(Error::input(format!(
                "bad depth range [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        if self.planes[0] == 0 {
            return Err(Error::input("stage 1 needs at least one plane"));
        }
        let mut seen_zero = false;
        for &p in &self.planes {
            if p == 0 {
                seen_zero = true;
            } else if seen_zero {
                return Err(Error::input(
                    "disabled stages (zero planes) must be trailing",
                ));
            }
        }
        if !(self.lambda > 0.0) {
            return Err(Error::input("lambda must be positive"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::input("beta must be positive"));
        }
        if !(self.min_interval_width > 0.0) {
            return Err(Error::input("minimum interval width must be positive"));
        }
        self.features.validate()
    }

    /// Number of enabled stages (1..=3).
    pub fn active_stages(&self) -> usize {
        self.planes.iter().take_while(|&&p| p > 0).count()
    }

    pub fn total_planes(&self) -> usize {
        self.planes.iter().sum()
    }
}

/// Everything one stage produces, at that stage's resolution.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub estimate: DepthEstimate,
    /// Confidence intervals around the estimate. Stage 3 keeps them for
    /// reporting even though no further stage consumes them.
    pub intervals: IntervalMap,
    pub probability: ProbabilityVolume,
    pub hypotheses: HypothesisVolume,
    pub width: usize,
    pub height: usize,
}

/// Output of the full cascade for one reference view.
#[derive(Debug, Clone)]
pub struct CascadeOutput {
    pub stages: Vec<StageOutput>,
    /// `consumed_intervals[k]` is the interval map the stage-`k+1` volume
    /// was sampled from, at that stage's resolution; entry 0 is the full
    /// `[d_min, d_max]` range (the plane-sweep case).
    pub consumed_intervals: Vec<IntervalMap>,
}

impl CascadeOutput {
    pub fn final_estimate(&self) -> &DepthEstimate {
        &self.stages.last().expect("at least one stage").estimate
    }
}

/// Runs one cascade stage on features and cameras already scaled to the
/// stage resolution.
pub fn run_stage(
    stage_number: u8,
    features: &[&FeatureMap],
    cameras: &[CameraModel],
    hyps: &HypothesisVolume,
    config: &CascadeConfig,
) -> Result<StageOutput> {
    config.validate()?;
    let (w, h) = hyps.size();
    let raw = build_cost_volume(features, cameras, hyps)?;
    let radius = config.smoothing_radii[(stage_number as usize - 1).min(2)];
    let regularized = regularize_cost(&raw, radius);
    let probability = softmax_probability(&regularized, config.beta)?;
    let estimate = estimate_depth(&probability, hyps, stage_number)?;
    let intervals = confidence_interval(
        &estimate,
        config.lambda,
        config.min_interval_width,
        (config.d_min, config.d_max),
    )?;
    Ok(StageOutput {
        estimate,
        intervals,
        probability,
        hypotheses: hyps.clone(),
        width: w,
        height: h,
    })
}

/// Bilinear resize of both interval bounds onto a target grid.
///
/// Sample centers align area-wise (`src = (dst + 0.5) * s - 0.5`); convex
/// interpolation of ordered pairs keeps `lower <= upper` everywhere.
pub fn upsample_intervals(intervals: &IntervalMap, target: (usize, usize)) -> IntervalMap {
    let (tw, th) = target;
    let (sw, sh) = intervals.size();
    let sx = sw as f64 / tw as f64;
    let sy = sh as f64 / th as f64;
    let mut lower = Array2::<f64>::zeros((th, tw));
    let mut upper = Array2::<f64>::zeros((th, tw));
    let sample = |map: &Array2<f64>, x: f64, y: f64| -> f64 {
        let x = x.clamp(0.0, (sw - 1) as f64);
        let y = y.clamp(0.0, (sh - 1) as f64);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(sw - 1);
        let y1 = (y0 + 1).min(sh - 1);
        (1.0 - fx) * (1.0 - fy) * map[(y0, x0)]
            + fx * (1.0 - fy) * map[(y0, x1)]
            + (1.0 - fx) * fy * map[(y1, x0)]
            + fx * fy * map[(y1, x1)]
    };
    for ty in 0..th {
        let y = (ty as f64 + 0.5) * sy - 0.5;
        for tx in 0..tw {
            let x = (tx as f64 + 0.5) * sx - 0.5;
            lower[(ty, tx)] = sample(intervals.lower(), x, y);
            upper[(ty, tx)] = sample(intervals.upper(), x, y);
        }
    }
    IntervalMap::new(lower, upper, intervals.lambda_used()).expect("ordering preserved by bilinear")
}

/// Doubles the interval-map resolution (the between-stage upsampling step).
pub fn upsample_estimate(intervals: &IntervalMap, factor: usize) -> Result<IntervalMap> {
    if factor != 2 {
        return Err(Error::input("only factor-2 upsampling is supported"));
    }
    let (w, h) = intervals.size();
    Ok(upsample_intervals(intervals, (2 * w, 2 * h)))
}

/// Runs the full coarse-to-fine cascade with `views[0]` as the reference.
pub fn run_cascade(
    views: &[ViewImage],
    cameras: &[CameraModel],
    config: &CascadeConfig,
) -> Result<CascadeOutput> {
    config.validate()?;
    if views.len() != config.n_views || cameras.len() != config.n_views {
        return Err(Error::input(format!(
            "expected {} views/cameras, got {} views and {} cameras",
            config.n_views,
            views.len(),
            cameras.len()
        )));
    }
    for (i, (view, cam)) in views.iter().zip(cameras.iter()).enumerate() {
        if (view.width(), view.height()) != cam.image_size() {
            return Err(Error::input(format!(
                "view {i}: image {}x{} vs camera {}x{}",
                view.width(),
                view.height(),
                cam.image_size().0,
                cam.image_size().1
            )));
        }
        if cam.image_size() != cameras[0].image_size() {
            return Err(Error::input("all views must share one image size"));
        }
    }

    let pyramids: Vec<[FeatureMap; 3]> = views
        .iter()
        .enumerate()
        .map(|(i, view)| build_feature_pyramid(view, i, &config.features))
        .collect::<Result<_>>()?;

    let (full_w, full_h) = cameras[0].image_size();
    let mut stages: Vec<StageOutput> = Vec::new();
    let mut consumed: Vec<IntervalMap> = Vec::new();

    for stage_idx in 0..config.active_stages() {
        let stage_number = (stage_idx + 1) as u8;
        let factor = match stage_number {
            1 => 4,
            2 => 2,
            _ => 1,
        };
        let (sw, sh) = scale_size(full_w, full_h, stage_number);
        let scaled_cams: Vec<CameraModel> = cameras
            .iter()
            .map(|c| c.scaled_down(factor))
            .collect::<Result<_>>()?;
        let stage_features: Vec<&FeatureMap> =
            pyramids.iter().map(|p| &p[stage_idx]).collect();

        let (hyps, source_intervals) = if stage_idx == 0 {
            (
                uniform_hypotheses(config.d_min, config.d_max, config.planes[0], sw, sh)?,
                IntervalMap::constant(sw, sh, config.d_min, config.d_max)?,
            )
        } else {
            let prev = &stages[stage_idx - 1].intervals;
            let up = upsample_intervals(prev, (sw, sh));
            let hyps = atv_hypotheses(&up, config.planes[stage_idx], stage_number)?;
            (hyps, up)
        };

        let output = run_stage(stage_number, &stage_features, &scaled_cams, &hyps, config)?;
        consumed.push(source_intervals);
        stages.push(output);
    }

    Ok(CascadeOutput {
        stages,
        consumed_intervals: consumed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_views, SceneSpec, Shape, SurfacePrimitive, TextureParams};
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix3, Vector3};

    #[test]
    fn paper_stage_sizes_for_dtu_resolution() {
        assert_eq!(scale_size(1600, 1184, 1), (400, 296));
        assert_eq!(scale_size(1600, 1184, 2), (800, 592));
        assert_eq!(scale_size(1600, 1184, 3), (1600, 1184));
    }

    #[test]
    fn default_plane_budget_totals_104() {
        let config = CascadeConfig::with_range(425.0, 933.8);
        assert_eq!(config.planes, [64, 32, 8]);
        assert_eq!(config.total_planes(), 104);
        assert_eq!(config.active_stages(), 3);
        config.validate().unwrap();
    }

    #[test]
    fn trailing_zero_planes_disable_stages() {
        let mut config = CascadeConfig::with_range(1.0, 2.0);
        config.planes = [16, 0, 0];
        config.validate().unwrap();
        assert_eq!(config.active_stages(), 1);
        config.planes = [16, 0, 8];
        assert!(config.validate().is_err());
    }

    #[test]
    fn upsample_keeps_constant_maps_constant() {
        let iv = IntervalMap::constant(6, 4, 2.0, 5.0).unwrap();
        let up = upsample_estimate(&iv, 2).unwrap();
        assert_eq!(up.size(), (12, 8));
        for y in 0..8 {
            for x in 0..12 {
                assert_abs_diff_eq!(up.lower()[(y, x)], 2.0, epsilon = 1e-12);
                assert_abs_diff_eq!(up.upper()[(y, x)], 5.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn upsample_then_area_downsample_recovers_affine_maps() {
        let (w, h) = (10, 8);
        let lower = Array2::from_shape_fn((h, w), |(y, x)| 2.0 + 0.1 * x as f64 + 0.05 * y as f64);
        let upper = lower.mapv(|v| v + 1.0);
        let iv = IntervalMap::new(lower.clone(), upper, 1.5).unwrap();
        let up = upsample_estimate(&iv, 2).unwrap();
        let down = crate::features::area_downsample(&up.lower().to_owned(), 2);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                assert_abs_diff_eq!(down[(y, x)], lower[(y, x)], epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn upsample_orders_bounds_everywhere() {
        let (w, h) = (7, 5);
        let lower = Array2::from_shape_fn((h, w), |(y, x)| 1.0 + ((x * 31 + y * 17) % 7) as f64 * 0.3);
        let upper = Array2::from_shape_fn((h, w), |(y, x)| {
            lower[(y, x)] + 0.1 + ((x * 13 + y * 29) % 5) as f64 * 0.4
        });
        let iv = IntervalMap::new(lower, upper, 1.0).unwrap();
        let up = upsample_intervals(&iv, (2 * w, 2 * h));
        for y in 0..2 * h {
            for x in 0..2 * w {
                assert!(up.lower()[(y, x)] <= up.upper()[(y, x)]);
            }
        }
    }

    fn tiny_flat_scene(n_views: usize) -> SceneSpec {
        let size = (64, 48);
        let k = Matrix3::new(
            80.0,
            0.0,
            (size.0 - 1) as f64 / 2.0,
            0.0,
            80.0,
            (size.1 - 1) as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        let cameras = (0..n_views)
            .map(|i| {
                let x = (i as f64 - (n_views - 1) as f64 / 2.0) * 0.5;
                let target = Vector3::new(0.0, 0.0, 4.0);
                let pos = Vector3::new(x, 0.0, 0.0);
                let fwd = (target - pos).normalize();
                let right = Vector3::new(0.0, 1.0, 0.0).cross(&fwd).normalize();
                let down = fwd.cross(&right);
                let rotation =
                    Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
                CameraModel::new(k, rotation, -rotation * pos, size).unwrap()
            })
            .collect();
        SceneSpec {
            primitives: vec![SurfacePrimitive {
                shape: Shape::Plane {
                    point: [0.0, 0.0, 4.0],
                    normal: [0.0, 0.0, -1.0],
                    bounds: None,
                },
                texture_seed: 3,
                albedo: [0.85, 0.7, 0.6],
            }],
            cameras,
            d_min: 3.0,
            d_max: 5.5,
            texture: TextureParams::default(),
        }
    }

    #[test]
    fn single_stage_cascade_equals_plain_plane_sweep() {
        let scene = tiny_flat_scene(3);
        let (views, _, _) = render_views(&scene).unwrap();
        let mut config = CascadeConfig::with_range(scene.d_min, scene.d_max);
        config.n_views = 3;
        config.planes = [16, 0, 0];

        let cascade = run_cascade(&views, &scene.cameras, &config).unwrap();
        assert_eq!(cascade.stages.len(), 1);

        // Manual plane-sweep composition over the same inputs.
        let pyramids: Vec<_> = views
            .iter()
            .enumerate()
            .map(|(i, v)| build_feature_pyramid(v, i, &config.features).unwrap())
            .collect();
        let feats: Vec<&FeatureMap> = pyramids.iter().map(|p| &p[0]).collect();
        let cams: Vec<CameraModel> = scene
            .cameras
            .iter()
            .map(|c| c.scaled_down(4).unwrap())
            .collect();
        let (sw, sh) = scale_size(64, 48, 1);
        let hyps = uniform_hypotheses(config.d_min, config.d_max, 16, sw, sh).unwrap();
        let manual = run_stage(1, &feats, &cams, &hyps, &config).unwrap();

        let auto = &cascade.stages[0];
        for (a, b) in auto
            .estimate
            .depth
            .iter()
            .zip(manual.estimate.depth.iter())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in auto.estimate.sigma.iter().zip(manual.estimate.sigma.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn constant_views_degenerate_to_uniform_distributions() {
        // All-constant images have all-zero features; every plane costs the
        // same and the distribution stays uniform.
        let size = (32, 16);
        let k = Matrix3::new(40.0, 0.0, 15.5, 0.0, 40.0, 7.5, 0.0, 0.0, 1.0);
        let cam = CameraModel::new(k, Matrix3::identity(), Vector3::zeros(), size).unwrap();
        let cams = vec![cam.clone(), cam.clone(), cam];
        let img = ViewImage::new(ndarray::Array3::from_elem((size.1, size.0, 3), 0.5)).unwrap();
        let views = vec![img.clone(), img.clone(), img];

        let mut config = CascadeConfig::with_range(2.0, 6.0);
        config.n_views = 3;
        config.planes = [8, 0, 0];
        let out = run_cascade(&views, &cams, &config).unwrap();
        let stage = &out.stages[0];

        let d = stage.probability.planes();
        for &p in stage.probability.probs() {
            assert_abs_diff_eq!(p, 1.0 / d as f64, epsilon = 1e-12);
        }
        // Depth = mean of the hypotheses, variance = uniform variance.
        let hyps = &stage.hypotheses;
        let mean: f64 = (0..d).map(|j| hyps.depths()[(j, 0, 0)]).sum::<f64>() / d as f64;
        let var: f64 = (0..d)
            .map(|j| {
                let diff = hyps.depths()[(j, 0, 0)] - mean;
                diff * diff
            })
            .sum::<f64>()
            / d as f64;
        for &v in &stage.estimate.depth {
            assert_abs_diff_eq!(v, mean, epsilon = 1e-9);
        }
        for &s in &stage.estimate.sigma {
            assert_abs_diff_eq!(s * s, var, epsilon = 1e-9);
        }
    }

    #[test]
    fn three_stage_cascade_runs_and_shrinks_intervals() {
        let scene = tiny_flat_scene(3);
        let (views, _, _) = render_views(&scene).unwrap();
        let mut config = CascadeConfig::with_range(scene.d_min, scene.d_max);
        config.n_views = 3;
        config.planes = [16, 8, 4];

        let out = run_cascade(&views, &scene.cameras, &config).unwrap();
        assert_eq!(out.stages.len(), 3);
        assert_eq!(out.stages[0].width, 16);
        assert_eq!(out.stages[1].width, 32);
        assert_eq!(out.stages[2].width, 64);

        // Depth stays inside each stage's own hypothesis span.
        for stage in &out.stages {
            let (w, h) = (stage.width, stage.height);
            for y in 0..h {
                for x in 0..w {
                    let (lo, hi) = stage.hypotheses.span_at(x, y);
                    let d = stage.estimate.depth[(y, x)];
                    assert!(d >= lo && d <= hi);
                }
            }
        }

        // Mean consumed-interval width shrinks stage over stage.
        let mean_width = |iv: &IntervalMap| {
            let (w, h) = iv.size();
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    acc += iv.width_at(x, y);
                }
            }
            acc / (w * h) as f64
        };
        let w1 = mean_width(&out.consumed_intervals[0]);
        let w2 = mean_width(&out.consumed_intervals[1]);
        let w3 = mean_width(&out.consumed_intervals[2]);
        assert!(w1 > w2, "stage-2 volume must be thinner: {w1} vs {w2}");
        assert!(w2 > w3, "stage-3 volume must be thinner: {w2} vs {w3}");
    }

    #[test]
    fn cascade_is_deterministic() {
        let scene = tiny_flat_scene(3);
        let (views, _, _) = render_views(&scene).unwrap();
        let mut config = CascadeConfig::with_range(scene.d_min, scene.d_max);
        config.n_views = 3;
        config.planes = [8, 4, 0];
        let a = run_cascade(&views, &scene.cameras, &config).unwrap();
        let b = run_cascade(&views, &scene.cameras, &config).unwrap();
        for (sa, sb) in a.stages.iter().zip(b.stages.iter()) {
            for (da, db) in sa.estimate.depth.iter().zip(sb.estimate.depth.iter()) {
                assert_eq!(da.to_bits(), db.to_bits());
            }
        }
    }
}
