use super::Box3D;
use crate::cloudgeom::Point3;
use crate::error::{Error, Result};

/// `g³` query points inside a proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPointSet {
    pub roi: Box3D,
    pub resolution: usize,
    pub points: Vec<Point3>,
}

impl GridPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Cell-center lattice of `g` points per axis in the box frame, mapped to
/// world coordinates. Order is x-major, then y, then z.
pub fn generate_grid_points(roi: &Box3D, g: usize) -> Result<GridPointSet> {
    if g == 0 {
        return Err(Error::config("grid_resolution", "must be >= 1"));
    }
    let gf = g as f64;
    let frac = |i: usize| (i as f64 + 0.5) / gf - 0.5;
    let mut points = Vec::with_capacity(g * g * g);
    for ix in 0..g {
        for iy in 0..g {
            for iz in 0..g {
                let local = [
                    frac(ix) * roi.size[0],
                    frac(iy) * roi.size[1],
                    frac(iz) * roi.size[2],
                ];
                points.push(roi.to_world(local));
            }
        }
    }
    Ok(GridPointSet {
        roi: *roi,
        resolution: g,
        points,
    })
}
