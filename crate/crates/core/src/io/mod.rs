//! File formats: PFM float maps, PPM images, MVS camera text files and the
//! dataset manifest. All formats are byte-exact on round trip.

mod camera;
mod manifest;
mod pfm;
mod ppm;

pub use camera::{read_camera_file, write_camera_file, CameraFileRange};
pub use manifest::{mask_from_depth, DatasetManifest, LoadedDataset, ViewEntry};
pub use pfm::{read_pfm, read_pfm_f64, write_pfm, write_pfm_f64};
pub use ppm::{read_ppm, write_ppm};
