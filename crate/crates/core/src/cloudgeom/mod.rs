//! Point-cloud geometry: range clipping, voxelization, farthest point
//! sampling and radius neighborhoods.

mod cloud;
mod fps;
mod neighbors;
mod voxel;

pub use cloud::{clip_range, dist2, Point3, PointCloud, RangeSpec};
pub use fps::{farthest_point_sampling, SampleSet};
pub use neighbors::{
    radius_neighbors, radius_neighbors_brute, NeighborIndex, DEFAULT_MAX_NEIGHBORS,
};
pub use voxel::{
    grid_extent, voxel_centers, voxelize, SparseVoxelGrid, VoxelCell, VoxelIndex,
    KITTI_VOXEL_SIZE, WAYMO_VOXEL_SIZE,
};
