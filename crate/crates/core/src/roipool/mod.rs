//! RoI grid pooling: grid points inside oriented proposals and
//! multi-radius set abstraction around them.

mod boxes;
mod config;
mod grid;
mod set_abstraction;

pub use boxes::{normalize_angle, Box3D};
pub use config::{SarfeConfig, SourceConfig, SourceKind};
pub use grid::{generate_grid_points, GridPointSet};
pub use set_abstraction::{gather_neighborhoods, multi_radius_pool, set_abstraction, SaMlp};
