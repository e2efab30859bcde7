use std::fs;
use std::path::Path;

use atv_stereo::fusion::{fuse_depth_maps, write_ply};
use atv_stereo::io::{read_pfm_f64, DatasetManifest};
use atv_stereo::{Error, Result};
use serde::Serialize;

use super::{depth_file, ReconManifest};

#[derive(Serialize)]
struct PerViewStats {
    view: usize,
    points: usize,
    valid_pixels: usize,
    kept_fraction: f64,
}

#[derive(Serialize)]
struct FusionReport {
    point_count: usize,
    views: Vec<PerViewStats>,
}

pub fn run(recon_dir: &Path, config_path: Option<&Path>, out_ply: &Path) -> Result<()> {
    let recon = ReconManifest::load(recon_dir)?;
    let config = match config_path {
        Some(p) => super::load_config(Some(p))?,
        None => recon.config.clone(),
    };
    if recon.references.len() < 2 {
        return Err(Error::input(format!(
            "fusion needs reconstructions for at least 2 views, found {}",
            recon.references.len()
        )));
    }
    let manifest = DatasetManifest::load(Path::new(&recon.dataset))?;
    let data = manifest.load_views(Path::new(&recon.dataset))?;

    let mut depths = Vec::with_capacity(recon.references.len());
    let mut cameras = Vec::with_capacity(recon.references.len());
    let mut images = Vec::with_capacity(recon.references.len());
    for &view in &recon.references {
        depths.push(read_pfm_f64(recon_dir.join(depth_file(view)))?);
        cameras.push(data.cameras[view].clone());
        images.push(data.images[view].clone());
    }

    let cloud = fuse_depth_maps(&depths, &cameras, &images, &config.fusion)?;
    if let Some(parent) = out_ply.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_ply(&cloud, out_ply)?;

    // Per-view kept fractions: emitted points per view over its valid
    // depth pixels.
    let views = recon
        .references
        .iter()
        .enumerate()
        .map(|(slot, &view)| {
            let valid = depths[slot].iter().filter(|&&d| d > 0.0).count();
            let points = cloud
                .points
                .iter()
                .filter(|p| p.source_view == slot)
                .count();
            PerViewStats {
                view,
                points,
                valid_pixels: valid,
                kept_fraction: if valid == 0 {
                    0.0
                } else {
                    points as f64 / valid as f64
                },
            }
        })
        .collect();
    let report = FusionReport {
        point_count: cloud.len(),
        views,
    };
    let report_path = out_ply.with_extension("fusion.json");
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("fusion report: {e}")))?;
    fs::write(&report_path, text + "\n")?;
    println!(
        "fused {} points from {} views -> {}",
        cloud.len(),
        recon.references.len(),
        out_ply.display()
    );
    Ok(())
}
