use std::f64::consts::PI;

use crate::cloudgeom::Point3;
use crate::error::{Error, Result};

/// Maps any angle into `(−π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid can return exactly 2π for tiny negative inputs.
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Oriented 3D box: center, (length, width, height) along the local
/// (x, y, z) axes, and yaw about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: Point3,
    pub size: [f64; 3],
    pub yaw: f64,
}

impl Box3D {
    /// Validates sizes and normalizes `yaw` into `(−π, π]`.
    pub fn new(center: Point3, size: [f64; 3], yaw: f64) -> Result<Self> {
        if size.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Domain(format!("box sizes must be positive, got {size:?}")));
        }
        if center.iter().any(|v| !v.is_finite()) || !yaw.is_finite() {
            return Err(Error::Domain("box center and yaw must be finite".into()));
        }
        Ok(Self {
            center,
            size,
            yaw: normalize_angle(yaw),
        })
    }

    /// Box-frame coordinates to world coordinates.
    pub fn to_world(&self, local: Point3) -> Point3 {
        let (s, c) = self.yaw.sin_cos();
        [
            c * local[0] - s * local[1] + self.center[0],
            s * local[0] + c * local[1] + self.center[1],
            local[2] + self.center[2],
        ]
    }

    pub fn to_local(&self, p: Point3) -> Point3 {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.center[2]]
    }

    /// Oriented containment with `slack` meters of tolerance per axis.
    pub fn contains(&self, p: Point3, slack: f64) -> bool {
        let l = self.to_local(p);
        (0..3).all(|k| l[k].abs() <= self.size[k] / 2.0 + slack)
    }

    /// Distance from a point to the nearest face plane, for points inside
    /// or on the box; negative outside along some axis.
    pub fn surface_distance(&self, p: Point3) -> f64 {
        let l = self.to_local(p);
        (0..3)
            .map(|k| self.size[k] / 2.0 - l[k].abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn translated(&self, t: Point3) -> Box3D {
        Box3D {
            center: [
                self.center[0] + t[0],
                self.center[1] + t[1],
                self.center[2] + t[2],
            ],
            ..*self
        }
    }

    pub fn surface_area(&self) -> f64 {
        let [l, w, h] = self.size;
        2.0 * (l * w + l * h + w * h)
    }
}
