use std::fs;
use std::path::Path;

use atv_stereo::cascade::{run_cascade, CascadeOutput};
use atv_stereo::evalkit::{depth_error, subsample};
use atv_stereo::io::{write_pfm_f64, DatasetManifest, LoadedDataset};
use atv_stereo::uncertainty::uncertainty_stats;
use atv_stereo::{Error, Result};
use ndarray::Array2;

use super::{depth_file, sigma_file, stage_report_file, ReconManifest, StageReport};

pub fn run(
    dataset_dir: &Path,
    config_path: Option<&Path>,
    out_dir: &Path,
    dump_stages: bool,
    reference: Option<usize>,
) -> Result<()> {
    let config = super::load_config(config_path)?;
    let manifest = DatasetManifest::load(dataset_dir)?;
    if manifest.views.len() != config.n_views {
        return Err(Error::Config(format!(
            "config expects {} views but the dataset has {}",
            config.n_views,
            manifest.views.len()
        )));
    }
    let range = config.resolve_range((manifest.d_min, manifest.d_max));
    let cascade_config = config.cascade(range)?;
    let data = manifest.load_views(dataset_dir)?;

    let references: Vec<usize> = match reference {
        Some(id) => {
            if id >= manifest.views.len() {
                return Err(Error::input(format!(
                    "reference view {id} out of range 0..{}",
                    manifest.views.len()
                )));
            }
            vec![id]
        }
        None => (0..manifest.views.len()).collect(),
    };

    fs::create_dir_all(out_dir)?;
    for &view in &references {
        let output = reconstruct_view(&data, view, &cascade_config)?;
        write_view_outputs(&data, view, &output, &config, out_dir, dump_stages)?;
        println!("view {view}: {} stages done", output.stages.len());
    }

    ReconManifest {
        dataset: dataset_dir.display().to_string(),
        config,
        references,
        stages: cascade_config.active_stages(),
    }
    .save(out_dir)?;
    Ok(())
}

/// Runs the cascade with `view` rotated into the reference slot; the other
/// views keep their original relative order.
fn reconstruct_view(
    data: &LoadedDataset,
    view: usize,
    config: &atv_stereo::cascade::CascadeConfig,
) -> Result<CascadeOutput> {
    let mut order = vec![view];
    order.extend((0..data.images.len()).filter(|&i| i != view));
    let views: Vec<_> = order.iter().map(|&i| data.images[i].clone()).collect();
    let cameras: Vec<_> = order.iter().map(|&i| data.cameras[i].clone()).collect();
    run_cascade(&views, &cameras, config)
}

fn write_view_outputs(
    data: &LoadedDataset,
    view: usize,
    output: &CascadeOutput,
    config: &atv_stereo::config::RunConfig,
    out_dir: &Path,
    dump_stages: bool,
) -> Result<()> {
    let n_stages = output.stages.len();
    let final_est = output.final_estimate();
    write_pfm_f64(out_dir.join(depth_file(view)), &final_est.depth.view())?;
    write_pfm_f64(out_dir.join(sigma_file(view)), &final_est.sigma.view())?;

    let gt_full = &data.gt_depths[view];
    let range = config.resolve_range((data.manifest.d_min, data.manifest.d_max));
    // One spacing for every stage's inlier fractions, so the per-stage
    // rows stay comparable: the stage-1 unit sampling distance.
    let spacing = config
        .eval
        .inlier_reference_spacing
        .unwrap_or((range.1 - range.0) / config.planes[0] as f64);

    for (idx, stage) in output.stages.iter().enumerate() {
        let stage_no = idx + 1;
        let factor = match stage_no {
            1 => 4,
            2 => 2,
            _ => 1,
        };
        let gt = subsample(gt_full, factor);
        let mask: Array2<bool> = gt.mapv(|d| d > 0.0);

        // The next stage's plane count prices the produced intervals; the
        // final stage reports its own.
        let next_planes = if stage_no < n_stages {
            config.planes[stage_no]
        } else {
            config.planes[n_stages - 1]
        };
        let volume = uncertainty_stats(
            &output.consumed_intervals[idx],
            &gt,
            &mask,
            config.planes[idx],
        )?;
        let intervals = uncertainty_stats(&stage.intervals, &gt, &mask, next_planes)?;
        let errors = depth_error(&stage.estimate.depth, &gt, &mask, spacing)?;

        let report = StageReport {
            view,
            stage: stage_no,
            width: stage.width,
            height: stage.height,
            planes: config.planes[idx],
            volume,
            intervals,
            depth_error: errors,
        };
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Config(format!("stage report: {e}")))?;
        fs::write(out_dir.join(stage_report_file(view, stage_no)), text + "\n")?;

        if dump_stages {
            write_pfm_f64(
                out_dir.join(format!("stage{stage_no}_depth_v{view:04}.pfm")),
                &stage.estimate.depth.view(),
            )?;
            write_pfm_f64(
                out_dir.join(format!("stage{stage_no}_sigma_v{view:04}.pfm")),
                &stage.estimate.sigma.view(),
            )?;
        }
    }
    Ok(())
}
