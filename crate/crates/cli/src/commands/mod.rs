pub mod eval;
pub mod fuse;
pub mod reconstruct;
pub mod report;
pub mod synth;

use std::path::Path;

use atv_stereo::config::RunConfig;
use atv_stereo::evalkit::DepthErrorStats;
use atv_stereo::uncertainty::UncertaintyStats;
use atv_stereo::{Error, Result};
use serde::{Deserialize, Serialize};

/// Loads the run configuration, defaulting to the built-in paper profile.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

pub fn depth_file(view: usize) -> String {
    format!("depth_v{view:04}.pfm")
}

pub fn sigma_file(view: usize) -> String {
    format!("sigma_v{view:04}.pfm")
}

pub fn stage_report_file(view: usize, stage: usize) -> String {
    format!("report_v{view:04}_stage{stage}.json")
}

/// One stage of one reference view, as serialized into the report JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub view: usize,
    pub stage: usize,
    pub width: usize,
    pub height: usize,
    pub planes: usize,
    /// Statistics of the hypothesis volume this stage sampled (the
    /// plane-sweep range for stage 1, the upsampled ATV intervals after).
    pub volume: UncertaintyStats,
    /// Statistics of the confidence intervals this stage produced.
    pub intervals: UncertaintyStats,
    /// Depth error against ground truth at this stage's resolution.
    pub depth_error: DepthErrorStats,
}

/// Index written next to reconstruction outputs, consumed by fuse/eval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconManifest {
    pub dataset: String,
    pub config: RunConfig,
    pub references: Vec<usize>,
    pub stages: usize,
}

impl ReconManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("recon manifest: {e}")))?;
        std::fs::write(dir.join("recon.json"), text + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("recon.json");
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn load_stage_report(dir: &Path, view: usize, stage: usize) -> Result<StageReport> {
    let path = dir.join(stage_report_file(view, stage));
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
