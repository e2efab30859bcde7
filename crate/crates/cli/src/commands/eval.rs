use std::fs;
use std::path::Path;

use atv_stereo::evalkit::{accuracy_completeness, cloud_from_depth_maps, ReconstructionScore};
use atv_stereo::fusion::read_ply;
use atv_stereo::io::DatasetManifest;
use atv_stereo::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{load_stage_report, ReconManifest, StageReport};

#[derive(Serialize)]
struct EvalReport {
    scene: String,
    score: ReconstructionScore,
    config: atv_stereo::config::RunConfig,
    input_hashes: InputHashes,
    stage_errors: Vec<StageErrorRow>,
}

#[derive(Serialize)]
struct InputHashes {
    ply_sha256: String,
    manifest_sha256: String,
}

#[derive(Serialize)]
struct StageErrorRow {
    view: usize,
    stage: usize,
    mae: f64,
    rmse: f64,
    inlier_1: f64,
    inlier_2: f64,
    inlier_4: f64,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn run(
    ply_path: &Path,
    dataset_dir: &Path,
    config_path: Option<&Path>,
    recon_dir: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<()> {
    let config = super::load_config(config_path)?;
    let manifest = DatasetManifest::load(dataset_dir)?;
    let data = manifest.load_views(dataset_dir)?;
    let pred = read_ply(ply_path)?;

    // Stage reports, when available, provide the measured stage-3 unit
    // distance for the distance cap.
    let mut stage_reports: Vec<StageReport> = Vec::new();
    if let Some(dir) = recon_dir {
        let recon = ReconManifest::load(dir)?;
        for &view in &recon.references {
            for stage in 1..=recon.stages {
                stage_reports.push(load_stage_report(dir, view, stage)?);
            }
        }
    }

    let max_dist = resolve_max_dist(&config, &stage_reports);
    // Reference-cloud dedup at half the stage-3 unit distance (the cap is
    // 20 units): dense enough that lattice quantization stays well below
    // the distances being measured.
    let gt = cloud_from_depth_maps(&data.gt_depths, &data.cameras, max_dist / 40.0)?;
    let score = accuracy_completeness(&pred, &gt, max_dist)?;

    println!(
        "accuracy {:.6}  completeness {:.6}  overall {:.6}  (cap {max_dist:.6}{})",
        score.accuracy,
        score.completeness,
        score.overall,
        if score.penalized_empty {
            ", EMPTY PREDICTION PENALIZED"
        } else {
            ""
        }
    );

    let mut stage_errors = Vec::new();
    if !stage_reports.is_empty() {
        println!("view stage    mae      rmse     <=1x    <=2x    <=4x");
        for r in &stage_reports {
            println!(
                "{:>4} {:>5} {:>9.5} {:>9.5} {:>7.4} {:>7.4} {:>7.4}",
                r.view,
                r.stage,
                r.depth_error.mae,
                r.depth_error.rmse,
                r.depth_error.inlier_1,
                r.depth_error.inlier_2,
                r.depth_error.inlier_4
            );
            stage_errors.push(StageErrorRow {
                view: r.view,
                stage: r.stage,
                mae: r.depth_error.mae,
                rmse: r.depth_error.rmse,
                inlier_1: r.depth_error.inlier_1,
                inlier_2: r.depth_error.inlier_2,
                inlier_4: r.depth_error.inlier_4,
            });
        }
    }

    let report = EvalReport {
        scene: manifest.scene.clone(),
        score,
        config,
        input_hashes: InputHashes {
            ply_sha256: sha256_file(ply_path)?,
            manifest_sha256: sha256_file(&dataset_dir.join("manifest.json"))?,
        },
        stage_errors,
    };
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ply_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&out_dir)?;
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("eval report: {e}")))?;
    fs::write(out_dir.join("scores.json"), text + "\n")?;
    let csv = format!(
        "scene,accuracy,completeness,overall,max_dist\n{},{},{},{},{}\n",
        report.scene, report.score.accuracy, report.score.completeness, report.score.overall, max_dist
    );
    fs::write(out_dir.join("scores.csv"), csv)?;
    Ok(())
}

/// Distance cap: explicit config value, else 20x the measured stage-3
/// (last stage) unit distance, else 20x the floor-derived unit distance.
fn resolve_max_dist(config: &atv_stereo::config::RunConfig, reports: &[StageReport]) -> f64 {
    if let Some(d) = config.eval.max_dist {
        return d;
    }
    let last_stage = reports.iter().map(|r| r.stage).max();
    if let Some(last) = last_stage {
        let units: Vec<f64> = reports
            .iter()
            .filter(|r| r.stage == last)
            .map(|r| r.volume.unit_distance)
            .collect();
        if !units.is_empty() {
            return 20.0 * units.iter().sum::<f64>() / units.len() as f64;
        }
    }
    20.0 * config.min_interval_width / config.last_stage_planes() as f64
}
