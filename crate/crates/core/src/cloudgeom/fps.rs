use super::{dist2, PointCloud};
use crate::error::{Error, Result};

/// Indices chosen by farthest point sampling, in selection order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    pub indices: Vec<usize>,
    pub count: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Greedy max-min sampling seeded at index 0.
///
/// Each step picks the unselected point whose distance to the nearest
/// selected point is largest, lowest index on ties. Returns
/// `min(count, cloud.len())` unique indices.
pub fn farthest_point_sampling(cloud: &PointCloud, count: usize) -> Result<SampleSet> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("farthest_point_sampling"));
    }
    if count == 0 {
        return Err(Error::Domain("farthest_point_sampling needs count >= 1".into()));
    }
    let n = cloud.len();
    let k = count.min(n);
    let pts = cloud.points();
    let mut selected = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut indices = Vec::with_capacity(k);
    let mut current = 0usize;
    loop {
        indices.push(current);
        selected[current] = true;
        if indices.len() == k {
            break;
        }
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let d = dist2(pts[i], c);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best_d {
                best_d = nearest[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(SampleSet { indices, count })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> PointCloud {
        PointCloud::new(xs.iter().map(|&x| [x, 0.0, 0.0]).collect(), 0, vec![]).unwrap()
    }

    #[test]
    fn collinear_pick() {
        let s = farthest_point_sampling(&line(&[0.0, 1.0, 10.0]), 2).unwrap();
        assert_eq!(s.indices, vec![0, 2]);
    }

    #[test]
    fn count_beyond_size_returns_all() {
        let s = farthest_point_sampling(&line(&[0.0, 1.0, 10.0]), 10).unwrap();
        let mut idx = s.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn duplicates_still_yield_unique_indices() {
        let s = farthest_point_sampling(&line(&[0.0, 0.0, 0.0, 1.0]), 4).unwrap();
        let mut idx = s.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert_eq!(s.indices[..2], [0, 3]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            farthest_point_sampling(&PointCloud::empty(0), 3),
            Err(Error::EmptyInput(_))
        ));
        assert!(farthest_point_sampling(&line(&[0.0]), 0).is_err());
    }
}
