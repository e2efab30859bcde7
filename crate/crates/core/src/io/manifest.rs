//! Dataset manifest: the JSON index written next to rendered views.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::geometry::CameraModel;
use crate::image::ViewImage;
use crate::io::{read_camera_file, read_pfm_f64, read_ppm};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub id: usize,
    pub image: String,
    pub depth: String,
    pub camera: String,
}

/// Index of a rendered dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub scene: String,
    pub width: usize,
    pub height: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub views: Vec<ViewEntry>,
}

/// A manifest resolved into memory: images, exact ground-truth depth (0
/// encodes "no surface") and cameras, in view order.
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<ViewImage>,
    pub gt_depths: Vec<Array2<f64>>,
    pub cameras: Vec<CameraModel>,
}

impl DatasetManifest {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        fs::write(dir.as_ref().join("manifest.json"), text + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let path = dir.as_ref().join("manifest.json");
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Loads every view referenced by the manifest.
    pub fn load_views(&self, dir: impl AsRef<Path>) -> Result<LoadedDataset> {
        let dir = dir.as_ref();
        let resolve = |rel: &str| -> PathBuf { dir.join(rel) };
        let mut images = Vec::with_capacity(self.views.len());
        let mut gt_depths = Vec::with_capacity(self.views.len());
        let mut cameras = Vec::with_capacity(self.views.len());
        for view in &self.views {
            let image = read_ppm(resolve(&view.image))?;
            if image.width() != self.width || image.height() != self.height {
                return Err(Error::input(format!(
                    "view {}: image size {}x{} does not match manifest {}x{}",
                    view.id,
                    image.width(),
                    image.height(),
                    self.width,
                    self.height
                )));
            }
            let depth = read_pfm_f64(resolve(&view.depth))?;
            let (camera, _) = read_camera_file(resolve(&view.camera), (self.width, self.height))?;
            images.push(image);
            gt_depths.push(depth);
            cameras.push(camera);
        }
        Ok(LoadedDataset {
            manifest: self.clone(),
            images,
            gt_depths,
            cameras,
        })
    }
}

/// A validity mask recovered from a ground-truth depth map (0 = no hit).
pub fn mask_from_depth(depth: &Array2<f64>) -> Array2<bool> {
    depth.mapv(|d| d > 0.0)
}
