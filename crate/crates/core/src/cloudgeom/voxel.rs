use std::collections::BTreeMap;

use super::{Point3, PointCloud, RangeSpec};
use crate::error::{Error, Result};

/// KITTI input voxel size in meters.
pub const KITTI_VOXEL_SIZE: Point3 = [0.05, 0.05, 0.10];
/// Waymo input voxel size in meters.
pub const WAYMO_VOXEL_SIZE: Point3 = [0.1, 0.1, 0.15];

pub type VoxelIndex = [i64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelCell {
    /// Mean feature of the points quantized into this cell.
    pub feature: Vec<f64>,
    pub count: usize,
}

/// Active cells of a regular grid over a [`RangeSpec`], keyed by integer
/// index and iterated in lexicographic index order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelGrid {
    voxel_size: Point3,
    origin: Point3,
    extent: [usize; 3],
    channels: usize,
    cells: BTreeMap<VoxelIndex, VoxelCell>,
}

/// Number of cells along each axis. Ratios within 1e-6 of an integer are
/// rounded so that e.g. 70.4 / 0.05 gives exactly 1408.
pub fn grid_extent(range: &RangeSpec, voxel_size: Point3) -> Result<[usize; 3]> {
    validate_voxel_size(voxel_size)?;
    let mut ext = [0usize; 3];
    for k in 0..3 {
        let ratio = (range.max[k] - range.min[k]) / voxel_size[k];
        let rounded = ratio.round();
        ext[k] = if (ratio - rounded).abs() < 1e-6 {
            rounded as usize
        } else {
            ratio.ceil() as usize
        };
    }
    Ok(ext)
}

fn validate_voxel_size(voxel_size: Point3) -> Result<()> {
    for (k, axis) in ["x", "y", "z"].iter().enumerate() {
        if !(voxel_size[k] > 0.0) || !voxel_size[k].is_finite() {
            return Err(Error::config(
                format!("voxel_size.{axis}"),
                format!("must be positive, got {}", voxel_size[k]),
            ));
        }
    }
    Ok(())
}

impl SparseVoxelGrid {
    pub fn voxel_size(&self) -> Point3 {
        self.voxel_size
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn extent(&self) -> [usize; 3] {
        self.extent
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&VoxelIndex, &VoxelCell)> {
        self.cells.iter()
    }

    pub fn cell(&self, idx: VoxelIndex) -> Option<&VoxelCell> {
        self.cells.get(&idx)
    }

    pub fn total_points(&self) -> usize {
        self.cells.values().map(|c| c.count).sum()
    }

    pub fn index_of(&self, p: Point3) -> VoxelIndex {
        let mut idx = [0i64; 3];
        for k in 0..3 {
            let i = ((p[k] - self.origin[k]) / self.voxel_size[k]).floor() as i64;
            // Points just below max can round up to the extent.
            idx[k] = i.clamp(0, self.extent[k] as i64 - 1);
        }
        idx
    }

    pub fn center_of(&self, idx: VoxelIndex) -> Point3 {
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = self.origin[k] + (idx[k] as f64 + 0.5) * self.voxel_size[k];
        }
        c
    }
}

/// Quantizes a clipped cloud into `voxel_size` cells anchored at
/// `range.min`; each active cell holds the mean feature of its points.
pub fn voxelize(cloud: &PointCloud, range: &RangeSpec, voxel_size: Point3) -> Result<SparseVoxelGrid> {
    range.validate()?;
    let extent = grid_extent(range, voxel_size)?;
    let mut grid = SparseVoxelGrid {
        voxel_size,
        origin: range.min,
        extent,
        channels: cloud.channels(),
        cells: BTreeMap::new(),
    };
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        if !range.contains(p) {
            return Err(Error::Domain(format!(
                "point {i} at {p:?} lies outside the voxelization range"
            )));
        }
        let idx = grid.index_of(p);
        let cell = grid.cells.entry(idx).or_insert_with(|| VoxelCell {
            feature: vec![0.0; cloud.channels()],
            count: 0,
        });
        for (s, f) in cell.feature.iter_mut().zip(cloud.feature(i)) {
            *s += f;
        }
        cell.count += 1;
    }
    for cell in grid.cells.values_mut() {
        let n = cell.count as f64;
        cell.feature.iter_mut().for_each(|s| *s /= n);
    }
    Ok(grid)
}

/// One point per active cell at its geometric center, carrying the cell
/// feature, in index order.
pub fn voxel_centers(grid: &SparseVoxelGrid) -> PointCloud {
    let mut out = PointCloud::empty(grid.channels);
    for (idx, cell) in &grid.cells {
        out.push(grid.center_of(*idx), &cell.feature);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kitti_extent() {
        let ext = grid_extent(&RangeSpec::kitti(), KITTI_VOXEL_SIZE).unwrap();
        assert_eq!(ext, [1408, 1600, 40]);
        let ext = grid_extent(&RangeSpec::waymo(), WAYMO_VOXEL_SIZE).unwrap();
        assert_eq!(ext, [1504, 1504, 40]);
    }

    #[test]
    fn rejects_non_positive_voxel_size() {
        let c = PointCloud::empty(1);
        let err = voxelize(&c, &RangeSpec::kitti(), [0.05, 0.0, 0.1]).unwrap_err();
        assert!(err.to_string().contains("voxel_size.y"), "{err}");
        assert!(voxelize(&c, &RangeSpec::kitti(), [-1.0, 0.1, 0.1]).is_err());
    }

    #[test]
    fn single_point_and_mean() {
        let c = PointCloud::new(vec![[1.0, 2.0, 0.0]], 1, vec![0.7]).unwrap();
        let g = voxelize(&c, &RangeSpec::kitti(), KITTI_VOXEL_SIZE).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.cells().next().unwrap().1.feature, vec![0.7]);

        let c = PointCloud::new(vec![[1.01, 2.01, 0.01], [1.02, 2.02, 0.02]], 1, vec![2.0, 4.0])
            .unwrap();
        let g = voxelize(&c, &RangeSpec::kitti(), KITTI_VOXEL_SIZE).unwrap();
        assert_eq!(g.len(), 1);
        let cell = g.cells().next().unwrap().1;
        assert_eq!(cell.feature, vec![3.0]);
        assert_eq!(cell.count, 2);
    }

    #[test]
    fn centers() {
        let c = PointCloud::new(vec![[0.0, -40.0, -3.0]], 1, vec![1.0]).unwrap();
        let g = voxelize(&c, &RangeSpec::kitti(), KITTI_VOXEL_SIZE).unwrap();
        assert_eq!(g.cells().next().unwrap().0, &[0, 0, 0]);
        let centers = voxel_centers(&g);
        let p = centers.point(0);
        for (a, b) in p.iter().zip([0.025, -39.975, -2.95]) {
            assert!((a - b).abs() < 1e-12, "{p:?}");
        }
        let empty = voxelize(&PointCloud::empty(1), &RangeSpec::kitti(), KITTI_VOXEL_SIZE).unwrap();
        assert!(voxel_centers(&empty).is_empty());
    }

    #[test]
    fn out_of_range_point_is_an_error() {
        let c = PointCloud::new(vec![[70.4, 0.0, 0.0]], 1, vec![1.0]).unwrap();
        assert!(voxelize(&c, &RangeSpec::kitti(), KITTI_VOXEL_SIZE).is_err());
    }
}
