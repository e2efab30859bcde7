//! Multi-view stereo depth reconstruction with uncertainty-aware cascaded
//! cost volumes.
//!
//! The pipeline estimates a per-view depth map in three coarse-to-fine
//! stages. Stage 1 sweeps a standard plane-sweep volume over the full depth
//! range at quarter resolution; stages 2 and 3 build *adaptive thin volumes*
//! whose per-pixel depth hypotheses span a variance-based confidence
//! interval around the previous stage's prediction, at half and full
//! resolution. Per-view depth maps are fused into a single point cloud by
//! cross-view geometric-consistency filtering.
//!
//! The learned components of the original design (2D feature CNN, 3D cost
//! regularizer) are replaced by deterministic stages — a handcrafted filter
//! bank and a box-filter + depth-wise softmax — so every number the pipeline
//! produces is reproducible bit-for-bit.
//!
//! Module map:
//! - [`geometry`] — pinhole camera algebra, warping, bilinear sampling
//! - [`features`] — deterministic multi-scale feature pyramids
//! - [`costvol`] — depth hypotheses and cross-view variance cost volumes
//! - [`probability`] — cost regularization, softmax, expectation depth
//! - [`uncertainty`] — confidence intervals, ATV sampling, coverage stats
//! - [`cascade`] — the three-stage coarse-to-fine orchestrator
//! - [`fusion`] — multi-view consistency fusion and PLY IO
//! - [`synth`] — procedural scene renderer with exact ground-truth depth
//! - [`evalkit`] — accuracy/completeness and depth-error metrics
//! - [`io`] — PFM / PPM / camera-file / dataset-manifest IO
//! - [`config`] — JSON run configuration shared with the CLI

pub mod cascade;
pub mod config;
pub mod costvol;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod io;
pub mod parallel;
pub mod probability;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
