use crate::error::{Error, Result};
use crate::numcore::TokenMatrix;

pub type Point3 = [f64; 3];

/// Points with a fixed-width feature vector each.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    channels: usize,
    features: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, channels: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != points.len() * channels {
            return Err(Error::Domain(format!(
                "{} points with {channels} channels need {} feature values, got {}",
                points.len(),
                points.len() * channels,
                features.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Domain(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            channels,
            features,
        })
    }

    pub fn empty(channels: usize) -> Self {
        Self {
            points: Vec::new(),
            channels,
            features: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_matrix(&self) -> TokenMatrix {
        TokenMatrix::new(self.len(), self.channels, self.features.clone()).expect("invariant")
    }

    /// Sub-cloud in the given index order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut points = Vec::with_capacity(indices.len());
        let mut features = Vec::with_capacity(indices.len() * self.channels);
        for &i in indices {
            points.push(self.points[i]);
            features.extend_from_slice(self.feature(i));
        }
        PointCloud {
            points,
            channels: self.channels,
            features,
        }
    }

    pub fn translated(&self, t: Point3) -> PointCloud {
        let mut out = self.clone();
        for p in &mut out.points {
            for k in 0..3 {
                p[k] += t[k];
            }
        }
        out
    }

    pub fn push(&mut self, p: Point3, feature: &[f64]) {
        assert_eq!(feature.len(), self.channels);
        self.points.push(p);
        self.features.extend_from_slice(feature);
    }

    pub fn extend(&mut self, other: &PointCloud) {
        assert_eq!(other.channels, self.channels);
        self.points.extend_from_slice(&other.points);
        self.features.extend_from_slice(&other.features);
    }

    /// Permutation that sorts points lexicographically by coordinates, then
    /// by features. Stable, so exact duplicates keep their relative order.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            let pa = self.points[a];
            let pb = self.points[b];
            pa.iter()
                .zip(&pb)
                .chain(self.feature(a).iter().zip(self.feature(b)))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        idx
    }
}

#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Axis-aligned clipping range in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSpec {
    pub min: Point3,
    pub max: Point3,
}

impl RangeSpec {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        let r = Self { min, max };
        r.validate()?;
        Ok(r)
    }

    /// X∈[0,70.4], Y∈[−40,40], Z∈[−3,1].
    pub fn kitti() -> Self {
        Self {
            min: [0.0, -40.0, -3.0],
            max: [70.4, 40.0, 1.0],
        }
    }

    /// X,Y∈[−75.2,75.2], Z∈[−2,4].
    pub fn waymo() -> Self {
        Self {
            min: [-75.2, -75.2, -2.0],
            max: [75.2, 75.2, 4.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, axis) in ["x", "y", "z"].iter().enumerate() {
            if !(self.min[k] < self.max[k]) || !self.min[k].is_finite() || !self.max[k].is_finite()
            {
                return Err(Error::config(
                    format!("range.{axis}"),
                    format!("min {} must be < max {}", self.min[k], self.max[k]),
                ));
            }
        }
        Ok(())
    }

    /// Half-open containment: `min <= p < max` on every axis.
    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] < self.max[k])
    }
}

/// Keeps points inside `range`, preserving order.
pub fn clip_range(cloud: &PointCloud, range: &RangeSpec) -> PointCloud {
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| range.contains(cloud.point(i)))
        .collect();
    cloud.select(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_features() {
        assert!(PointCloud::new(vec![[0.0; 3]], 2, vec![1.0]).is_err());
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]], 0, vec![]).is_err());
    }

    #[test]
    fn clip_keeps_inside_and_excludes_max_boundary() {
        let c = PointCloud::new(
            vec![[1.0, 0.0, 0.0], [70.4, 0.0, 0.0], [0.0, -40.0, -3.0], [5.0, 0.0, 1.0]],
            1,
            vec![0.1, 0.2, 0.3, 0.4],
        )
        .unwrap();
        let out = clip_range(&c, &RangeSpec::kitti());
        assert_eq!(out.points(), &[[1.0, 0.0, 0.0], [0.0, -40.0, -3.0]]);
        assert_eq!(out.features(), &[0.1, 0.3]);

        let inside = c.select(&[0, 2]);
        assert_eq!(clip_range(&inside, &RangeSpec::kitti()), inside);
    }

    #[test]
    fn range_validation() {
        assert!(RangeSpec::new([0.0; 3], [1.0, 1.0, 0.0]).is_err());
        assert!(RangeSpec::kitti().validate().is_ok());
        assert!(RangeSpec::waymo().validate().is_ok());
    }
}
