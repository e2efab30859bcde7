//! JSON run configuration: one document covering the cascade, feature
//! bank, fusion and evaluation settings. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::CascadeConfig;
use crate::features::FeatureConfig;
use crate::fusion::FusionConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Distance cap for accuracy/completeness. `None` derives
    /// 20x the stage-3 unit sampling distance (from a reconstruction
    /// report when available, else from the configured interval floor).
    pub max_dist: Option<f64>,
    /// Reference spacing of the depth-error inlier fractions. `None`
    /// derives the stage-1 unit distance from the depth range.
    pub inlier_reference_spacing: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_dist: None,
            inlier_reference_spacing: None,
        }
    }
}

/// The complete run configuration; `Default` is the paper profile
/// (5 views, 64/32/8 planes, lambda 1.5) with the depth range left to the
/// dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n_views: usize,
    /// `[d_min, d_max]`; `None` adopts the dataset manifest's range.
    pub depth_range: Option<(f64, f64)>,
    pub planes: [usize; 3],
    pub lambda: f64,
    pub beta: f64,
    pub smoothing_radii: [usize; 3],
    pub min_interval_width: f64,
    pub features: FeatureConfig,
    pub fusion: FusionConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_views: 5,
            depth_range: None,
            planes: [64, 32, 8],
            lambda: 1.5,
            beta: 40.0,
            smoothing_radii: [2, 4, 8],
            min_interval_width: 0.1,
            features: FeatureConfig::default(),
            fusion: FusionConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.cascade(config.depth_range.unwrap_or((1.0, 2.0)))?;
        Ok(config)
    }

    /// Materializes the cascade configuration for a concrete depth range.
    pub fn cascade(&self, range: (f64, f64)) -> Result<CascadeConfig> {
        let config = CascadeConfig {
            n_views: self.n_views,
            d_min: range.0,
            d_max: range.1,
            planes: self.planes,
            lambda: self.lambda,
            beta: self.beta,
            smoothing_radii: self.smoothing_radii,
            min_interval_width: self.min_interval_width,
            features: self.features.clone(),
        };
        config.validate()?;
        Ok(config)
    }

    /// Depth range for a dataset: explicit config value, else the
    /// manifest's.
    pub fn resolve_range(&self, manifest_range: (f64, f64)) -> (f64, f64) {
        self.depth_range.unwrap_or(manifest_range)
    }

    /// Plane count of the last enabled stage.
    pub fn last_stage_planes(&self) -> usize {
        self.planes
            .iter()
            .take_while(|&&p| p > 0)
            .last()
            .copied()
            .unwrap_or(1)
    }
}
