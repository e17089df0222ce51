//! Self-attention RoI feature extraction for 3D point-cloud detectors.
//!
//! The pipeline clips and voxelizes a LiDAR scene, samples grid points
//! inside each proposal box, pools multi-radius local features with set
//! abstraction, and enhances them with stacked offset-attention blocks.
//! Every layer runs on a small reverse-mode tape so gradients can be
//! checked against finite differences.

pub mod analysis;
pub mod attention;
pub mod cloudgeom;
pub mod error;
pub mod ingest;
pub mod model;
pub mod numcore;
pub mod roipool;

pub use error::{Error, Result};
