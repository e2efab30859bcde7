use std::fs;
use std::path::Path;

use atv_stereo::io::{write_camera_file, write_pfm_f64, write_ppm, CameraFileRange, DatasetManifest, ViewEntry};
use atv_stereo::synth::{builtin_scene, render_views, SceneSpec};
use atv_stereo::{Error, Result};

/// Resolves a builtin scene name or a scene-spec JSON path.
fn resolve_scene(scene: &str) -> Result<(String, SceneSpec)> {
    if let Some(spec) = builtin_scene(scene) {
        return Ok((scene.to_string(), spec));
    }
    let path = Path::new(scene);
    if path.exists() {
        let text = fs::read_to_string(path)?;
        let spec: SceneSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".to_string());
        return Ok((name, spec));
    }
    Err(Error::input(format!(
        "unknown scene {scene:?}: not a builtin (flat, two-plane, sphere-on-plane) and no such file"
    )))
}

pub fn run(scene: &str, out_dir: &Path) -> Result<()> {
    let (name, spec) = resolve_scene(scene)?;
    spec.validate()?;
    fs::create_dir_all(out_dir)?;

    let (images, depths, _masks) = render_views(&spec)?;
    let (width, height) = spec.cameras[0].image_size();
    // The camera-file range line mirrors the stage-1 sweep.
    let range = CameraFileRange {
        d_min: spec.d_min,
        d_interval: (spec.d_max - spec.d_min) / 64.0,
        d_count: 64,
        d_max: spec.d_max,
    };

    let mut views = Vec::with_capacity(images.len());
    for (i, ((image, depth), camera)) in images
        .iter()
        .zip(depths.iter())
        .zip(spec.cameras.iter())
        .enumerate()
    {
        let entry = ViewEntry {
            id: i,
            image: format!("view_{i:04}.ppm"),
            depth: format!("depth_{i:04}.pfm"),
            camera: format!("cam_{i:04}.txt"),
        };
        write_ppm(out_dir.join(&entry.image), image)?;
        write_pfm_f64(out_dir.join(&entry.depth), &depth.view())?;
        write_camera_file(out_dir.join(&entry.camera), camera, &range)?;
        views.push(entry);
    }

    let manifest = DatasetManifest {
        scene: name,
        width,
        height,
        d_min: spec.d_min,
        d_max: spec.d_max,
        views,
    };
    manifest.save(out_dir)?;
    println!(
        "wrote {} views ({}x{}) to {}",
        manifest.views.len(),
        width,
        height,
        out_dir.display()
    );
    Ok(())
}
