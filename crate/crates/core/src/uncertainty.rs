//! Variance-based confidence intervals, adaptive-thin-volume sampling and
//! interval statistics (coverage, widths, unit distances, histograms).
//!
//! The interval at a pixel is `[L - lambda * sigma, L + lambda * sigma]`,
//! widened symmetrically to a configured floor when the distribution has
//! collapsed, then clamped into the scene depth range. The next stage
//! samples its hypotheses uniformly (cell-centered) from these intervals.

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costvol::{HypothesisKind, HypothesisVolume};
use crate::parallel;
use crate::probability::DepthEstimate;
use crate::{Error, Result};

/// Half-open histogram bins of 0.5 scene-unit width.
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.5;

/// Per-pixel confidence interval bounds.
#[derive(Debug, Clone)]
pub struct IntervalMap {
    lower: Array2<f64>,
    upper: Array2<f64>,
    lambda_used: f64,
}

impl IntervalMap {
    pub fn new(lower: Array2<f64>, upper: Array2<f64>, lambda_used: f64) -> Result<Self> {
        if lower.dim() != upper.dim() {
            return Err(Error::input("interval bound shapes differ"));
        }
        for (lo, hi) in lower.iter().zip(upper.iter()) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::input(format!("invalid interval [{lo}, {hi}]")));
            }
        }
        Ok(IntervalMap {
            lower,
            upper,
            lambda_used,
        })
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &Array2<f64> {
        &self.upper
    }

    pub fn lambda_used(&self) -> f64 {
        self.lambda_used
    }

    /// `(width, height)` of the grid.
    pub fn size(&self) -> (usize, usize) {
        let (h, w) = self.lower.dim();
        (w, h)
    }

    pub fn width_at(&self, x: usize, y: usize) -> f64 {
        self.upper[(y, x)] - self.lower[(y, x)]
    }

    /// Spatially constant interval map (the plane-sweep degenerate case).
    pub fn constant(width: usize, height: usize, lo: f64, hi: f64) -> Result<Self> {
        IntervalMap::new(
            Array2::from_elem((height, width), lo),
            Array2::from_elem((height, width), hi),
            0.0,
        )
    }
}

/// Builds `[L - lambda*sigma, L + lambda*sigma]` per pixel, widened
/// symmetrically to `min_width`, then clipped into `clamp`; when clipping
/// would shrink the interval below the floor it is shifted inside the
/// range instead.
pub fn confidence_interval(
    est: &DepthEstimate,
    lambda: f64,
    min_width: f64,
    clamp: (f64, f64),
) -> Result<IntervalMap> {
    if !(lambda > 0.0) {
        return Err(Error::input(format!("lambda must be positive, got {lambda}")));
    }
    if !(min_width > 0.0) {
        return Err(Error::input(format!(
            "minimum interval width must be positive, got {min_width}"
        )));
    }
    let (d_min, d_max) = clamp;
    if !(d_min < d_max) {
        return Err(Error::input(format!("bad clamp range [{d_min}, {d_max}]")));
    }
    // A floor wider than the whole range degenerates to the full range.
    let floor = min_width.min(d_max - d_min);
    let (h, w) = est.depth.dim();
    let mut lower = Array2::<f64>::zeros((h, w));
    let mut upper = Array2::<f64>::zeros((h, w));
    lower
        .as_slice_mut()
        .unwrap()
        .par_chunks_mut(w)
        .zip(upper.as_slice_mut().unwrap().par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (lo_row, hi_row))| {
            for x in 0..w {
                let center = est.depth[(y, x)];
                let half = lambda * est.sigma[(y, x)];
                let mut lo = center - half;
                let mut hi = center + half;
                if hi - lo < floor {
                    lo = center - floor * 0.5;
                    hi = center + floor * 0.5;
                }
                if hi - lo >= d_max - d_min {
                    lo = d_min;
                    hi = d_max;
                } else {
                    if lo < d_min {
                        hi += d_min - lo;
                        lo = d_min;
                    }
                    if hi > d_max {
                        lo -= hi - d_max;
                        hi = d_max;
                    }
                    lo = lo.max(d_min);
                }
                lo_row[x] = lo;
                hi_row[x] = hi;
            }
        });
    IntervalMap::new(lower, upper, lambda)
}

/// Cell-centered per-pixel sampling of `planes` hypotheses from the
/// intervals: `L_j = lower + (j + 0.5) * width / planes`.
pub fn atv_hypotheses(
    intervals: &IntervalMap,
    planes: usize,
    stage_index: u8,
) -> Result<HypothesisVolume> {
    if planes == 0 {
        return Err(Error::input("plane count must be positive"));
    }
    let (w, h) = intervals.size();
    let mut depths = Array3::<f64>::zeros((planes, h, w));
    depths
        .as_slice_mut()
        .unwrap()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(row_idx, row)| {
            let j = row_idx / h;
            let y = row_idx % h;
            let offset = j as f64 + 0.5;
            for (x, out) in row.iter_mut().enumerate() {
                let lo = intervals.lower[(y, x)];
                let step = (intervals.upper[(y, x)] - lo) / planes as f64;
                *out = lo + offset * step;
            }
        });
    HypothesisVolume::new(depths, HypothesisKind::Adaptive, stage_index)
}

/// One half-open histogram bin `[bin_lower, bin_upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lower: f64,
    pub bin_upper: f64,
    pub count: u64,
}

/// Interval quality summary against ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintyStats {
    /// Fraction of valid pixels whose interval contains the ground truth.
    pub coverage_ratio: f64,
    pub mean_width: f64,
    pub median_width: f64,
    /// `mean_width / planes_next`: the effective depth-sampling distance of
    /// the volume built from these intervals.
    pub unit_distance: f64,
    /// Plane count of the consuming stage.
    pub planes_next: usize,
    pub valid_pixels: u64,
    pub histogram: Vec<HistogramBin>,
}

impl UncertaintyStats {
    pub const CSV_HEADER: &'static str = "stage,coverage,mean_width,median_width,D,unit_distance";

    pub fn csv_row(&self, stage_label: &str) -> String {
        format!(
            "{},{},{},{},{},{}",
            stage_label,
            self.coverage_ratio,
            self.mean_width,
            self.median_width,
            self.planes_next,
            self.unit_distance
        )
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lower,bin_upper,count\n");
        for bin in &self.histogram {
            out.push_str(&format!("{},{},{}\n", bin.bin_lower, bin.bin_upper, bin.count));
        }
        out
    }
}

struct RowPartial {
    valid: u64,
    covered: u64,
    width_sum: f64,
    widths: Vec<f64>,
}

/// Coverage, width statistics and the width histogram over valid pixels.
///
/// `planes_next` is the plane count of the stage consuming these
/// intervals; `unit_distance = mean_width / planes_next`.
pub fn uncertainty_stats(
    intervals: &IntervalMap,
    gt_depth: &Array2<f64>,
    valid_mask: &Array2<bool>,
    planes_next: usize,
) -> Result<UncertaintyStats> {
    if gt_depth.dim() != intervals.lower.dim() || valid_mask.dim() != intervals.lower.dim() {
        return Err(Error::input("stats inputs must share the interval shape"));
    }
    if planes_next == 0 {
        return Err(Error::input("consuming plane count must be positive"));
    }
    let (h, w) = intervals.lower.dim();

    // Per-row partials folded in row order: bit-reproducible for any
    // worker count.
    let total = parallel::map_reduce_rows(
        h,
        |y| {
            let mut part = RowPartial {
                valid: 0,
                covered: 0,
                width_sum: 0.0,
                widths: Vec::new(),
            };
            for x in 0..w {
                if !valid_mask[(y, x)] {
                    continue;
                }
                let lo = intervals.lower[(y, x)];
                let hi = intervals.upper[(y, x)];
                let gt = gt_depth[(y, x)];
                part.valid += 1;
                if lo <= gt && gt <= hi {
                    part.covered += 1;
                }
                part.width_sum += hi - lo;
                part.widths.push(hi - lo);
            }
            part
        },
        RowPartial {
            valid: 0,
            covered: 0,
            width_sum: 0.0,
            widths: Vec::new(),
        },
        |mut acc, part| {
            acc.valid += part.valid;
            acc.covered += part.covered;
            acc.width_sum += part.width_sum;
            acc.widths.extend_from_slice(&part.widths);
            acc
        },
    );

    if total.valid == 0 {
        return Err(Error::statistics("no valid pixels for interval statistics"));
    }
    let mean_width = total.width_sum / total.valid as f64;
    let mut sorted = total.widths;
    sorted.sort_unstable_by(f64::total_cmp);
    let median_width = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };

    let max_bin = (sorted.last().unwrap() / HISTOGRAM_BIN_WIDTH).floor() as usize;
    let mut counts = vec![0u64; max_bin + 1];
    for width in &sorted {
        counts[(width / HISTOGRAM_BIN_WIDTH).floor() as usize] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            bin_lower: i as f64 * HISTOGRAM_BIN_WIDTH,
            bin_upper: (i + 1) as f64 * HISTOGRAM_BIN_WIDTH,
            count,
        })
        .collect();

    Ok(UncertaintyStats {
        coverage_ratio: total.covered as f64 / total.valid as f64,
        mean_width,
        median_width,
        unit_distance: mean_width / planes_next as f64,
        planes_next,
        valid_pixels: total.valid,
        histogram,
    })
}

/// Signed distances from ground truth to the interval bounds:
/// `(gt - lower, upper - gt)`. Both maps non-negative at a pixel exactly
/// when the interval covers the ground truth there.
pub fn bound_maps(
    intervals: &IntervalMap,
    gt_depth: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if gt_depth.dim() != intervals.lower.dim() {
        return Err(Error::input("ground truth shape does not match intervals"));
    }
    let lower_gap = gt_depth - &intervals.lower;
    let upper_gap = &intervals.upper - gt_depth;
    Ok((lower_gap, upper_gap))
}
