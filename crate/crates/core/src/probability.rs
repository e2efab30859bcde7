//! From matching costs to per-pixel depth distributions and expectations.
//!
//! The stage pipeline is: spatial box-filter regularization of the cost
//! volume, depth-wise softmax of the negated scaled costs, expectation
//! depth, and distribution variance. The box filter + softmax stand in for
//! a learned cost regularizer; the shape of the pipeline (regularized cost
//! -> per-pixel distribution -> weighted-sum depth) is preserved.

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;

use crate::costvol::{is_sentinel, CostVolume, HypothesisVolume, SENTINEL_COST};
use crate::{Error, Result};

/// Per-pixel depth distributions over the hypothesis planes, `D x H x W`.
///
/// Rows sum to one within 1e-6 and all entries are non-negative.
#[derive(Debug, Clone)]
pub struct ProbabilityVolume {
    probs: Array3<f64>,
}

impl ProbabilityVolume {
    pub fn new(probs: Array3<f64>) -> Result<Self> {
        let (d, h, w) = probs.dim();
        if d == 0 || h == 0 || w == 0 {
            return Err(Error::input("probability volume must be non-empty"));
        }
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                for j in 0..d {
                    let p = probs[(j, y, x)];
                    if !(p >= 0.0) {
                        return Err(Error::input(format!(
                            "probability at plane {j}, pixel ({x}, {y}) is negative or NaN: {p}"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() >= 1e-6 {
                    return Err(Error::input(format!(
                        "probabilities at pixel ({x}, {y}) sum to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(ProbabilityVolume { probs })
    }

    pub fn probs(&self) -> &Array3<f64> {
        &self.probs
    }

    pub fn planes(&self) -> usize {
        self.probs.dim().0
    }

    pub fn size(&self) -> (usize, usize) {
        let (_, h, w) = self.probs.dim();
        (w, h)
    }
}

/// Depth expectation and distribution spread for one stage.
#[derive(Debug, Clone)]
pub struct DepthEstimate {
    pub depth: Array2<f64>,
    pub sigma: Array2<f64>,
    pub stage_index: u8,
}

impl DepthEstimate {
    pub fn size(&self) -> (usize, usize) {
        let (h, w) = self.depth.dim();
        (w, h)
    }
}

/// Spatial box filter of half-width `radius` applied per depth slice.
///
/// Sentinel cells neither contribute to nor receive averages; view counts
/// pass through unchanged. `radius == 0` returns the input unchanged.
///
/// Separable two-pass implementation: window sums and finite-cell counts
/// are accumulated per row, then per column, so the per-cell cost is
/// independent of the radius.
pub fn regularize_cost(costs: &CostVolume, radius: usize) -> CostVolume {
    if radius == 0 {
        return costs.clone();
    }
    let (planes, h, w) = costs.costs().dim();
    let src = costs.costs().as_slice().expect("standard layout");

    let mut out = Array3::<f32>::zeros((planes, h, w));
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(plane, out_slice)| {
            let slice = &src[plane * h * w..(plane + 1) * h * w];
            // Horizontal pass: windowed sums/counts over finite cells.
            let mut row_sum = vec![0.0f64; h * w];
            let mut row_cnt = vec![0u32; h * w];
            for y in 0..h {
                let row = &slice[y * w..(y + 1) * w];
                let mut sum = 0.0f64;
                let mut cnt = 0u32;
                let push = |sum: &mut f64, cnt: &mut u32, v: f32| {
                    if !is_sentinel(v) {
                        *sum += v as f64;
                        *cnt += 1;
                    }
                };
                let pop = |sum: &mut f64, cnt: &mut u32, v: f32| {
                    if !is_sentinel(v) {
                        *sum -= v as f64;
                        *cnt -= 1;
                    }
                };
                for x in 0..radius.min(w) {
                    push(&mut sum, &mut cnt, row[x]);
                }
                for x in 0..w {
                    if x + radius < w {
                        push(&mut sum, &mut cnt, row[x + radius]);
                    }
                    row_sum[y * w + x] = sum;
                    row_cnt[y * w + x] = cnt;
                    if x >= radius {
                        pop(&mut sum, &mut cnt, row[x - radius]);
                    }
                }
            }
            // Vertical pass over the horizontal partials.
            for x in 0..w {
                let mut sum = 0.0f64;
                let mut cnt = 0u32;
                for y in 0..radius.min(h) {
                    sum += row_sum[y * w + x];
                    cnt += row_cnt[y * w + x];
                }
                for y in 0..h {
                    if y + radius < h {
                        sum += row_sum[(y + radius) * w + x];
                        cnt += row_cnt[(y + radius) * w + x];
                    }
                    let center = slice[y * w + x];
                    out_slice[y * w + x] = if is_sentinel(center) {
                        center
                    } else {
                        (sum / cnt as f64) as f32
                    };
                    if y >= radius {
                        sum -= row_sum[(y - radius) * w + x];
                        cnt -= row_cnt[(y - radius) * w + x];
                    }
                }
            }
        });
    CostVolume::new(out, costs.valid_views().clone()).expect("shapes preserved")
}

/// Depth-wise softmax of `-beta * cost` with max-subtraction for overflow
/// safety, accumulated in f64.
///
/// Sentinel cells receive vanishing probability; a pixel whose planes are
/// all sentinel degenerates to the uniform distribution (maximal
/// uncertainty), which downstream turns into a wide confidence interval.
pub fn softmax_probability(costs: &CostVolume, beta: f64) -> Result<ProbabilityVolume> {
    if !(beta > 0.0) {
        return Err(Error::input(format!("beta must be positive, got {beta}")));
    }
    let (planes, h, w) = costs.costs().dim();
    let mut probs = Array3::<f64>::zeros((planes, h, w));
    probs
        .axis_iter_mut(Axis(1))
        .into_par_iter()
        .zip(costs.costs().axis_iter(Axis(1)).into_par_iter())
        .for_each(|(mut prob_col, cost_col)| {
            // Views are (D, W) slabs for one image row.
            for x in 0..w {
                let mut max_score = f64::NEG_INFINITY;
                for j in 0..planes {
                    max_score = max_score.max(-beta * cost_col[(j, x)] as f64);
                }
                let mut sum = 0.0f64;
                for j in 0..planes {
                    let e = (-beta * cost_col[(j, x)] as f64 - max_score).exp();
                    prob_col[(j, x)] = e;
                    sum += e;
                }
                let inv = 1.0 / sum;
                for j in 0..planes {
                    prob_col[(j, x)] *= inv;
                }
            }
        });
    Ok(ProbabilityVolume { probs })
}

fn check_same_grid(probs: &ProbabilityVolume, hyps: &HypothesisVolume) -> Result<()> {
    if probs.probs().dim() != hyps.depths().dim() {
        return Err(Error::input(format!(
            "probability shape {:?} does not match hypothesis shape {:?}",
            probs.probs().dim(),
            hyps.depths().dim()
        )));
    }
    Ok(())
}

/// Per-pixel expectation of the hypotheses under the distribution,
/// clamped into the hypothesis span (it is a convex combination; the clamp
/// only absorbs final-ulp rounding).
pub fn expect_depth(probs: &ProbabilityVolume, hyps: &HypothesisVolume) -> Result<Array2<f64>> {
    check_same_grid(probs, hyps)?;
    let (planes, h, w) = probs.probs().dim();
    let mut depth = Array2::<f64>::zeros((h, w));
    depth
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(y, mut row)| {
            for x in 0..w {
                let mut acc = 0.0f64;
                for j in 0..planes {
                    acc += probs.probs()[(j, y, x)] * hyps.depths()[(j, y, x)];
                }
                let (lo, hi) = hyps.span_at(x, y);
                row[x] = acc.clamp(lo, hi);
            }
        });
    Ok(depth)
}

/// Distribution variance around `depth` (the expectation), clamped into
/// `[0, span^2 / 4]` — the Popoviciu bound for bounded support.
pub fn variance_depth(
    probs: &ProbabilityVolume,
    hyps: &HypothesisVolume,
    depth: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_same_grid(probs, hyps)?;
    let (planes, h, w) = probs.probs().dim();
    if depth.dim() != (h, w) {
        return Err(Error::input("depth map shape does not match the volume"));
    }
    let mut var = Array2::<f64>::zeros((h, w));
    var.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(y, mut row)| {
            for x in 0..w {
                let d_hat = depth[(y, x)];
                let mut acc = 0.0f64;
                for j in 0..planes {
                    let diff = hyps.depths()[(j, y, x)] - d_hat;
                    acc += probs.probs()[(j, y, x)] * diff * diff;
                }
                let (lo, hi) = hyps.span_at(x, y);
                let bound = (hi - lo) * (hi - lo) * 0.25;
                row[x] = acc.clamp(0.0, bound);
            }
        });
    Ok(var)
}

/// Convenience: expectation + standard deviation as a [`DepthEstimate`].
pub fn estimate_depth(
    probs: &ProbabilityVolume,
    hyps: &HypothesisVolume,
    stage_index: u8,
) -> Result<DepthEstimate> {
    let depth = expect_depth(probs, hyps)?;
    let variance = variance_depth(probs, hyps, &depth)?;
    Ok(DepthEstimate {
        depth,
        sigma: variance.mapv(f64::sqrt),
        stage_index,
    })
}

/// Re-exported sentinel for tests and tools inspecting regularized volumes.
pub const REGULARIZER_SENTINEL: f32 = SENTINEL_COST;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costvol::{uniform_hypotheses, HypothesisKind};
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    fn volume_from(costs: Array3<f32>) -> CostVolume {
        let views = Array3::from_elem(costs.dim(), 3u8);
        CostVolume::new(costs, views).unwrap()
    }

    #[test]
    fn regularize_radius_zero_is_identity() {
        let costs = volume_from(Array3::from_shape_fn((2, 4, 5), |(j, y, x)| {
            (j * 20 + y * 5 + x) as f32 * 0.1
        }));
        let out = regularize_cost(&costs, 0);
        assert_eq!(out.costs(), costs.costs());
    }

    #[test]
    fn regularize_keeps_constant_slices() {
        let costs = volume_from(Array3::from_elem((2, 6, 6), 1.25f32));
        for radius in [1usize, 2, 3] {
            let out = regularize_cost(&costs, radius);
            for &v in out.costs() {
                assert_abs_diff_eq!(v, 1.25, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn regularize_spreads_impulse_to_ninth() {
        let mut raw = Array3::<f32>::zeros((1, 7, 7));
        raw[(0, 3, 3)] = 9.0;
        let out = regularize_cost(&volume_from(raw), 1);
        for y in 2..=4 {
            for x in 2..=4 {
                assert_abs_diff_eq!(out.costs()[(0, y, x)], 1.0, epsilon = 1e-6);
            }
        }
        assert_abs_diff_eq!(out.costs()[(0, 1, 3)], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn regularize_excludes_and_preserves_sentinels() {
        let mut raw = Array3::<f32>::zeros((1, 3, 3));
        raw.fill(2.0);
        raw[(0, 1, 1)] = SENTINEL_COST;
        let out = regularize_cost(&volume_from(raw), 1);
        assert!(is_sentinel(out.costs()[(0, 1, 1)]));
        // Neighbours average only over the eight finite cells.
        assert_abs_diff_eq!(out.costs()[(0, 0, 0)], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(out.costs()[(0, 0, 1)], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn regularize_is_identity_on_affine_slices_interior() {
        // A box average of an affine function equals its center value, so
        // the interior mean is preserved exactly.
        let raw = Array3::from_shape_fn((1, 9, 11), |(_, y, x)| 0.3 + 0.05 * x as f32 - 0.02 * y as f32);
        let out = regularize_cost(&volume_from(raw.clone()), 2);
        let mut mean_in = 0.0f64;
        let mut mean_out = 0.0f64;
        let mut n = 0usize;
        for y in 2..7 {
            for x in 2..9 {
                assert_abs_diff_eq!(out.costs()[(0, y, x)], raw[(0, y, x)], epsilon = 1e-5);
                mean_in += raw[(0, y, x)] as f64;
                mean_out += out.costs()[(0, y, x)] as f64;
                n += 1;
            }
        }
        assert_abs_diff_eq!(mean_in / n as f64, mean_out / n as f64, epsilon = 1e-6);
    }

    #[test]
    fn softmax_of_equal_costs_is_uniform() {
        let costs = volume_from(Array3::from_elem((4, 3, 3), 0.7f32));
        let probs = softmax_probability(&costs, 10.0).unwrap();
        for &p in probs.probs() {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_closed_form_two_planes() {
        let beta = 10.0f64;
        let mut raw = Array3::<f32>::zeros((2, 1, 1));
        raw[(1, 0, 0)] = (3.0f64.ln() / beta) as f32;
        let probs = softmax_probability(&volume_from(raw), beta).unwrap();
        assert_abs_diff_eq!(probs.probs()[(0, 0, 0)], 0.75, epsilon = 1e-6);
        assert_abs_diff_eq!(probs.probs()[(1, 0, 0)], 0.25, epsilon = 1e-6);
    }

    #[test]
    fn softmax_large_beta_is_one_hot_at_argmin() {
        let mut raw = Array3::<f32>::zeros((3, 1, 1));
        raw[(0, 0, 0)] = 0.9;
        raw[(1, 0, 0)] = 0.2;
        raw[(2, 0, 0)] = 0.5;
        let probs = softmax_probability(&volume_from(raw), 1e6).unwrap();
        assert_abs_diff_eq!(probs.probs()[(1, 0, 0)], 1.0, epsilon = 1e-9);
        assert!(probs.probs()[(0, 0, 0)] < 1e-9);
        assert!(probs.probs()[(2, 0, 0)] < 1e-9);
    }

    #[test]
    fn softmax_sends_sentinels_to_zero_and_sums_to_one() {
        let mut raw = Array3::<f32>::zeros((3, 2, 2));
        raw.fill(0.4);
        raw[(2, 0, 0)] = SENTINEL_COST;
        let probs = softmax_probability(&volume_from(raw), 10.0).unwrap();
        assert!(probs.probs()[(2, 0, 0)] < 1e-300);
        let (d, h, w) = probs.probs().dim();
        for y in 0..h {
            for x in 0..w {
                let sum: f64 = (0..d).map(|j| probs.probs()[(j, y, x)]).sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn softmax_argmax_equals_cost_argmin() {
        let raw = Array3::from_shape_fn((5, 4, 4), |(j, y, x)| {
            ((j * 7 + y * 3 + x * 11) % 13) as f32 * 0.21 + 0.01
        });
        let vol = volume_from(raw);
        let probs = softmax_probability(&vol, 3.0).unwrap();
        let (d, h, w) = vol.costs().dim();
        for y in 0..h {
            for x in 0..w {
                let argmin = (0..d)
                    .min_by(|&a, &b| vol.costs()[(a, y, x)].total_cmp(&vol.costs()[(b, y, x)]))
                    .unwrap();
                let argmax = (0..d)
                    .max_by(|&a, &b| probs.probs()[(a, y, x)].total_cmp(&probs.probs()[(b, y, x)]))
                    .unwrap();
                assert_eq!(argmin, argmax);
            }
        }
    }

    fn delta_volume(d: usize, h: usize, w: usize, at: usize) -> ProbabilityVolume {
        let mut probs = Array3::<f64>::zeros((d, h, w));
        for y in 0..h {
            for x in 0..w {
                probs[(at, y, x)] = 1.0;
            }
        }
        ProbabilityVolume::new(probs).unwrap()
    }

    #[test]
    fn expectation_of_point_mass_recovers_hypothesis() {
        let hyps = uniform_hypotheses(2.0, 10.0, 4, 3, 3).unwrap();
        let probs = delta_volume(4, 3, 3, 2);
        let depth = expect_depth(&probs, &hyps).unwrap();
        for &v in &depth {
            assert_abs_diff_eq!(v, hyps.depths()[(2, 0, 0)], epsilon = 1e-15);
        }
    }

    #[test]
    fn expectation_of_uniform_two_planes_is_midpoint() {
        let mut depths = Array3::<f64>::zeros((2, 1, 1));
        depths[(0, 0, 0)] = 1.0;
        depths[(1, 0, 0)] = 3.0;
        let hyps =
            crate::costvol::HypothesisVolume::new(depths, HypothesisKind::Adaptive, 2).unwrap();
        let probs = ProbabilityVolume::new(Array3::from_elem((2, 1, 1), 0.5)).unwrap();
        let depth = expect_depth(&probs, &hyps).unwrap();
        assert_abs_diff_eq!(depth[(0, 0)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn expectation_and_variance_match_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let d = rng.random_range(2..=8);
            let mut depths = Array3::<f64>::zeros((d, 1, 1));
            let mut cur = rng.random_range(0.5..2.0);
            for j in 0..d {
                depths[(j, 0, 0)] = cur;
                cur += rng.random_range(0.05..1.5);
            }
            let hyps =
                crate::costvol::HypothesisVolume::new(depths.clone(), HypothesisKind::Adaptive, 2)
                    .unwrap();
            let mut raw = vec![0.0f64; d];
            let mut total = 0.0;
            for v in &mut raw {
                *v = rng.random_range(0.0..1.0);
                total += *v;
            }
            let mut probs = Array3::<f64>::zeros((d, 1, 1));
            for j in 0..d {
                probs[(j, 0, 0)] = raw[j] / total;
            }
            let probs = ProbabilityVolume::new(probs).unwrap();

            let depth = expect_depth(&probs, &hyps).unwrap();
            let var = variance_depth(&probs, &hyps, &depth).unwrap();

            // Brute-force reference sums.
            let mut exp_ref = 0.0f64;
            for j in 0..d {
                exp_ref += probs.probs()[(j, 0, 0)] * depths[(j, 0, 0)];
            }
            let mut var_ref = 0.0f64;
            for j in 0..d {
                let diff = depths[(j, 0, 0)] - exp_ref;
                var_ref += probs.probs()[(j, 0, 0)] * diff * diff;
            }
            assert!((depth[(0, 0)] - exp_ref).abs() < 1e-12);
            assert!((var[(0, 0)] - var_ref).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_of_point_mass_is_zero_and_symmetric_pair_is_a_squared() {
        let hyps = uniform_hypotheses(1.0, 9.0, 4, 1, 1).unwrap();
        let probs = delta_volume(4, 1, 1, 1);
        let depth = expect_depth(&probs, &hyps).unwrap();
        let var = variance_depth(&probs, &hyps, &depth).unwrap();
        assert_abs_diff_eq!(var[(0, 0)], 0.0, epsilon = 1e-15);

        // Half mass at d - a, half at d + a -> variance a^2.
        let mut depths = Array3::<f64>::zeros((2, 1, 1));
        depths[(0, 0, 0)] = 4.0 - 1.5;
        depths[(1, 0, 0)] = 4.0 + 1.5;
        let hyps2 =
            crate::costvol::HypothesisVolume::new(depths, HypothesisKind::Adaptive, 2).unwrap();
        let probs2 = ProbabilityVolume::new(Array3::from_elem((2, 1, 1), 0.5)).unwrap();
        let depth2 = expect_depth(&probs2, &hyps2).unwrap();
        let var2 = variance_depth(&probs2, &hyps2, &depth2).unwrap();
        assert_abs_diff_eq!(var2[(0, 0)], 2.25, epsilon = 1e-12);
    }

    #[test]
    fn probability_volume_rejects_bad_rows() {
        let mut probs = Array3::<f64>::zeros((2, 1, 1));
        probs[(0, 0, 0)] = 0.6;
        probs[(1, 0, 0)] = 0.6;
        assert!(ProbabilityVolume::new(probs).is_err());
        let mut probs = Array3::<f64>::zeros((2, 1, 1));
        probs[(0, 0, 0)] = 1.5;
        probs[(1, 0, 0)] = -0.5;
        assert!(ProbabilityVolume::new(probs).is_err());
    }
}
