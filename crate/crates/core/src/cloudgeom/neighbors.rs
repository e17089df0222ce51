use std::collections::HashMap;

use super::{dist2, Point3, PointCloud};

/// Default cap on neighbors gathered per query.
pub const DEFAULT_MAX_NEIGHBORS: usize = 32;

/// Uniform spatial hash over the points of a cloud.
///
/// Buckets hold point indices in ascending order, so a query only needs a
/// merge of the buckets it touches.
#[derive(Debug, Clone)]
pub struct NeighborIndex<'a> {
    cloud: &'a PointCloud,
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> NeighborIndex<'a> {
    /// Panics if `cell` is not positive.
    pub fn build(cloud: &'a PointCloud, cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "hash cell size must be positive");
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, &p) in cloud.points().iter().enumerate() {
            buckets.entry(key(p, cell)).or_default().push(i);
        }
        Self {
            cloud,
            cell,
            buckets,
        }
    }

    pub fn cloud(&self) -> &'a PointCloud {
        self.cloud
    }

    /// All points with distance strictly below `radius`, ascending index.
    pub fn within(&self, query: Point3, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let lo = key(sub(query, radius), self.cell);
        let hi = key(add(query, radius), self.cell);
        let mut out = Vec::new();
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if let Some(b) = self.buckets.get(&[x, y, z]) {
                        out.extend(
                            b.iter()
                                .copied()
                                .filter(|&i| dist2(self.cloud.point(i), query) < r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// [`within`](Self::within) truncated to the `max_neighbors` nearest,
    /// ties by lowest index, returned in ascending index order.
    pub fn radius_neighbors(&self, query: Point3, radius: f64, max_neighbors: usize) -> Vec<usize> {
        let all = self.within(query, radius);
        truncate_nearest(self.cloud, query, all, max_neighbors)
    }
}

fn truncate_nearest(
    cloud: &PointCloud,
    query: Point3,
    mut idx: Vec<usize>,
    max_neighbors: usize,
) -> Vec<usize> {
    if idx.len() <= max_neighbors {
        return idx;
    }
    idx.sort_by(|&a, &b| {
        dist2(cloud.point(a), query)
            .total_cmp(&dist2(cloud.point(b), query))
            .then(a.cmp(&b))
    });
    idx.truncate(max_neighbors);
    idx.sort_unstable();
    idx
}

fn key(p: Point3, cell: f64) -> [i64; 3] {
    [
        (p[0] / cell).floor() as i64,
        (p[1] / cell).floor() as i64,
        (p[2] / cell).floor() as i64,
    ]
}

fn add(p: Point3, r: f64) -> Point3 {
    [p[0] + r, p[1] + r, p[2] + r]
}

fn sub(p: Point3, r: f64) -> Point3 {
    [p[0] - r, p[1] - r, p[2] - r]
}

/// Neighbors of `query` in `source` with distance strictly below `radius`,
/// capped at `max_neighbors` nearest. Builds a one-off hash; reuse a
/// [`NeighborIndex`] for repeated queries.
pub fn radius_neighbors(
    query: Point3,
    source: &PointCloud,
    radius: f64,
    max_neighbors: usize,
) -> Vec<usize> {
    NeighborIndex::build(source, radius).radius_neighbors(query, radius, max_neighbors)
}

/// Linear-scan reference for [`radius_neighbors`].
pub fn radius_neighbors_brute(
    query: Point3,
    source: &PointCloud,
    radius: f64,
    max_neighbors: usize,
) -> Vec<usize> {
    let r2 = radius * radius;
    let all: Vec<usize> = (0..source.len())
        .filter(|&i| dist2(source.point(i), query) < r2)
        .collect();
    truncate_nearest(source, query, all, max_neighbors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[Point3]) -> PointCloud {
        PointCloud::new(pts.to_vec(), 0, vec![]).unwrap()
    }

    #[test]
    fn strict_radius_boundary() {
        let c = cloud(&[[1.0, 0.0, 0.0], [0.5, 0.0, 0.0]]);
        assert_eq!(radius_neighbors([0.0; 3], &c, 1.0, 32), vec![1]);
    }

    #[test]
    fn coincident_point_included() {
        let c = cloud(&[[3.0, 3.0, 3.0], [0.2, 0.1, 0.0]]);
        assert_eq!(radius_neighbors([0.2, 0.1, 0.0], &c, 0.05, 32), vec![1]);
    }

    #[test]
    fn truncation_keeps_nearest_in_index_order() {
        let c = cloud(&[
            [0.9, 0.0, 0.0],
            [0.1, 0.0, 0.0],
            [0.5, 0.0, 0.0],
            [-0.1, 0.0, 0.0],
        ]);
        assert_eq!(radius_neighbors([0.0; 3], &c, 1.0, 2), vec![1, 3]);
        assert_eq!(radius_neighbors_brute([0.0; 3], &c, 1.0, 2), vec![1, 3]);
    }

    #[test]
    fn larger_radius_than_cell_still_finds_everything() {
        let c = cloud(&[[0.0; 3], [2.5, 0.0, 0.0], [-2.9, 0.1, 0.0]]);
        let idx = NeighborIndex::build(&c, 0.5);
        assert_eq!(idx.within([0.0; 3], 3.0), vec![0, 1, 2]);
    }
}
