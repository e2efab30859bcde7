//! Deterministic multi-scale feature extraction.
//!
//! A handcrafted filter bank stands in for a learned extractor while
//! preserving the resolution/channel contract the cost volumes expect:
//! scale 1 is quarter resolution with 32 channels, scale 2 half resolution
//! with 16, scale 3 full resolution with 8 (configurable).
//!
//! Per scale, the grayscale image is area-downsampled and described by
//! intensity, x/y gradients of Gaussian-smoothed copies, and local
//! mean/standard deviation over box windows; the bank is extended with
//! doubled radii until the channel budget is filled. Every channel is then
//! standardized to zero mean / unit variance over the image, which makes
//! the downstream variance cost insensitive to global exposure shifts.

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::ViewImage;
use crate::{Error, Result};

/// Channel budget and filter radii of the bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Channels per scale, coarse to fine.
    pub channels: [usize; 3],
    /// Radii of the Gaussian smoothing applied before gradients (pixels).
    pub gaussian_radii: Vec<usize>,
    /// Half-widths of the local mean / standard deviation windows (pixels).
    pub window_radii: Vec<usize>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            channels: [32, 16, 8],
            gaussian_radii: vec![1, 2, 4],
            window_radii: vec![2, 4],
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::input("feature channel counts must be positive"));
        }
        if self.gaussian_radii.is_empty() && self.window_radii.is_empty() && self.channels.iter().any(|&c| c > 1)
        {
            return Err(Error::input(
                "feature bank needs at least one gaussian or window radius to fill more than one channel",
            ));
        }
        if self.gaussian_radii.iter().chain(&self.window_radii).any(|&r| r == 0) {
            return Err(Error::input("filter radii must be positive"));
        }
        Ok(())
    }
}

/// Per-view feature grid at one pyramid scale, `H_s x W_s x C`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    values: Array3<f32>,
    scale_index: u8,
    source_view: usize,
}

impl FeatureMap {
    /// Wraps an existing feature grid; values must be finite.
    pub fn from_values(values: Array3<f32>, scale_index: u8, source_view: usize) -> Result<Self> {
        if !(1..=3).contains(&scale_index) {
            return Err(Error::input("scale index must be 1, 2 or 3"));
        }
        if values.is_empty() {
            return Err(Error::input("feature map must be non-empty"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::input("feature values must be finite"));
        }
        Ok(FeatureMap {
            values,
            scale_index,
            source_view,
        })
    }

    pub fn values(&self) -> &Array3<f32> {
        &self.values
    }

    /// 1, 2 or 3, coarse to fine.
    pub fn scale_index(&self) -> u8 {
        self.scale_index
    }

    pub fn source_view(&self) -> usize {
        self.source_view
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }

    /// `(width, height)` of the grid.
    pub fn size(&self) -> (usize, usize) {
        let (h, w, _) = self.values.dim();
        (w, h)
    }

    /// Downsampling factor relative to the original image: 4, 2 or 1.
    pub fn downsample_factor(&self) -> usize {
        match self.scale_index {
            1 => 4,
            2 => 2,
            _ => 1,
        }
    }
}

/// Pyramid sizes for a `width x height` image: ceil divisions by 4, 2, 1.
pub fn scale_size(width: usize, height: usize, scale_index: u8) -> (usize, usize) {
    let s = match scale_index {
        1 => 4,
        2 => 2,
        _ => 1,
    };
    (width.div_ceil(s), height.div_ceil(s))
}

#[derive(Debug, Clone, Copy)]
enum ChannelKind {
    Intensity,
    GradX { radius: usize },
    GradY { radius: usize },
    LocalMean { radius: usize },
    LocalStd { radius: usize },
}

/// Largest filter radius the bank will grow to; beyond this the supports
/// stop being local on a quarter-resolution image.
const MAX_BANK_RADIUS: usize = 8;

/// Bank layout: intensity, then per-radius gradient and window channels,
/// extended with doubled radii up to [`MAX_BANK_RADIUS`] and repeated
/// cyclically until `count` channels exist.
fn channel_bank(count: usize, gaussian_radii: &[usize], window_radii: &[usize]) -> Vec<ChannelKind> {
    let mut out = Vec::with_capacity(count);
    out.push(ChannelKind::Intensity);
    let max_base = gaussian_radii
        .iter()
        .chain(window_radii)
        .copied()
        .max()
        .unwrap_or(0);
    let mut factor = 1usize;
    loop {
        for &r in gaussian_radii {
            out.push(ChannelKind::GradX { radius: r * factor });
            out.push(ChannelKind::GradY { radius: r * factor });
        }
        for &w in window_radii {
            out.push(ChannelKind::LocalMean { radius: w * factor });
            out.push(ChannelKind::LocalStd { radius: w * factor });
        }
        factor *= 2;
        if out.len() >= count || max_base * factor > MAX_BANK_RADIUS {
            break;
        }
    }
    let mut i = 0;
    while out.len() < count {
        out.push(out[i]);
        i += 1;
    }
    out.truncate(count);
    out
}

/// Builds the three-scale feature pyramid for one view.
///
/// Deterministic: identical input and config give bit-identical output.
pub fn build_feature_pyramid(
    image: &ViewImage,
    source_view: usize,
    config: &FeatureConfig,
) -> Result<[FeatureMap; 3]> {
    config.validate()?;
    if image.width() < 8 || image.height() < 8 {
        return Err(Error::input(format!(
            "image must be at least 8x8, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let gray = image.luminance().mapv(|v| v as f64);
    let mut maps = Vec::with_capacity(3);
    for scale_index in 1..=3u8 {
        let factor = match scale_index {
            1 => 4,
            2 => 2,
            _ => 1,
        };
        let scaled = if factor == 1 {
            gray.clone()
        } else {
            area_downsample(&gray, factor)
        };
        let count = config.channels[scale_index as usize - 1];
        let bank = channel_bank(count, &config.gaussian_radii, &config.window_radii);
        let channels: Vec<Array2<f64>> = bank
            .par_iter()
            .map(|kind| standardize(compute_channel(&scaled, *kind)))
            .collect();
        let (h, w) = scaled.dim();
        let mut values = Array3::<f32>::zeros((h, w, count));
        for (c, chan) in channels.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    values[(y, x, c)] = chan[(y, x)] as f32;
                }
            }
        }
        maps.push(FeatureMap {
            values,
            scale_index,
            source_view,
        });
    }
    let mut it = maps.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

fn compute_channel(img: &Array2<f64>, kind: ChannelKind) -> Array2<f64> {
    match kind {
        ChannelKind::Intensity => img.clone(),
        ChannelKind::GradX { radius } => gradient_x(&gaussian_smooth(img, radius)),
        ChannelKind::GradY { radius } => gradient_y(&gaussian_smooth(img, radius)),
        ChannelKind::LocalMean { radius } => box_mean(img, radius),
        ChannelKind::LocalStd { radius } => local_std(img, radius),
    }
}

/// Area averaging onto a ceil-divided grid; edge cells average partial
/// blocks when the size does not divide evenly.
pub fn area_downsample(img: &Array2<f64>, factor: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    Array2::from_shape_fn((oh, ow), |(oy, ox)| {
        let y0 = oy * factor;
        let x0 = ox * factor;
        let y1 = (y0 + factor).min(h);
        let x1 = (x0 + factor).min(w);
        let mut sum = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                sum += img[(y, x)];
            }
        }
        sum / ((y1 - y0) * (x1 - x0)) as f64
    })
}

/// Separable Gaussian with sigma = radius / 2, truncated at 3 sigma,
/// replicate borders.
fn gaussian_smooth(img: &Array2<f64>, radius: usize) -> Array2<f64> {
    let sigma = radius as f64 / 2.0;
    let half = ((3.0 * sigma).ceil() as usize).max(1);
    let mut kernel = Vec::with_capacity(2 * half + 1);
    for i in -(half as isize)..=(half as isize) {
        let t = i as f64 / sigma;
        kernel.push((-0.5 * t * t).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let (h, w) = img.dim();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let xi = clamp(x as isize + ki as isize - half as isize, w);
                acc += k * img[(y, xi)];
            }
            tmp[(y, x)] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let yi = clamp(y as isize + ki as isize - half as isize, h);
                acc += k * tmp[(yi, x)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}

fn gradient_x(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let xm = x.saturating_sub(1);
        let xp = (x + 1).min(w - 1);
        (img[(y, xp)] - img[(y, xm)]) * 0.5
    })
}

fn gradient_y(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        (img[(yp, x)] - img[(ym, x)]) * 0.5
    })
}

/// Box mean over a `(2r+1)^2` window with replicate borders (matching the
/// Gaussian border rule, which keeps all filters exactly shift-equivariant
/// up to border content). Separable.
fn box_mean(img: &Array2<f64>, radius: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let r = radius as isize;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let norm = 1.0 / (2 * radius + 1) as f64;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for k in -r..=r {
                acc += img[(y, clamp(x as isize + k, w))];
            }
            tmp[(y, x)] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for k in -r..=r {
                acc += tmp[(clamp(y as isize + k, h), x)];
            }
            out[(y, x)] = acc * norm * norm;
        }
    }
    out
}

fn local_std(img: &Array2<f64>, radius: usize) -> Array2<f64> {
    let sq = img.mapv(|v| v * v);
    let mean = box_mean(img, radius);
    let mean_sq = box_mean(&sq, radius);
    Array2::from_shape_fn(img.dim(), |idx| {
        (mean_sq[idx] - mean[idx] * mean[idx]).max(0.0).sqrt()
    })
}

/// Zero mean / unit variance over the whole image; channels with (near)
/// zero variance collapse to all zeros.
fn standardize(chan: Array2<f64>) -> Array2<f64> {
    let n = chan.len() as f64;
    let mean = chan.iter().sum::<f64>() / n;
    let var = chan.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var < 1e-24 {
        return Array2::zeros(chan.dim());
    }
    let inv_std = 1.0 / var.sqrt();
    chan.mapv(|v| (v - mean) * inv_std)
}
