use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sarfe_core::cloudgeom::{
    clip_range, farthest_point_sampling, voxelize, NeighborIndex, PointCloud, RangeSpec,
    KITTI_VOXEL_SIZE,
};
use sarfe_core::roipool::{generate_grid_points, normalize_angle, Box3D};

fn d2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Quadratic greedy max-min selection straight from the definition.
fn fps_oracle(pts: &[[f64; 3]], k: usize) -> Vec<usize> {
    let mut chosen = vec![0usize];
    while chosen.len() < k.min(pts.len()) {
        let mut best = None;
        let mut best_d = -1.0;
        for i in 0..pts.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&j| d2(pts[i], pts[j]))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        chosen.push(best.unwrap());
    }
    chosen
}

#[test]
fn fps_matches_greedy_oracle_on_200_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let n = rng.gen_range(1..=64);
        // Half the clouds are snapped to a coarse lattice to force ties.
        let snap = case % 2 == 0;
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [0, 1, 2].map(|_| {
                    let v: f64 = rng.gen_range(-5.0..5.0);
                    if snap {
                        v.round()
                    } else {
                        v
                    }
                })
            })
            .collect();
        let cloud = PointCloud::new(pts.clone(), 0, vec![]).unwrap();
        let k = rng.gen_range(1..=n + 3);
        let s = farthest_point_sampling(&cloud, k).unwrap();
        assert_eq!(s.indices, fps_oracle(&pts, k), "case {case}");
    }
}

#[test]
fn hashed_radius_search_matches_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts: Vec<[f64; 3]> = (0..3000)
        .map(|_| [rng.gen_range(0.0..20.0), rng.gen_range(-5.0..5.0), rng.gen_range(-2.0..1.0)])
        .collect();
    let cloud = PointCloud::new(pts.clone(), 0, vec![]).unwrap();
    for cell in [0.4, 0.8, 1.6] {
        let index = NeighborIndex::build(&cloud, cell);
        for _ in 0..1000 / 3 + 1 {
            let q = [rng.gen_range(-1.0..21.0), rng.gen_range(-6.0..6.0), rng.gen_range(-3.0..2.0)];
            let r = [0.4, 0.8, 1.6][rng.gen_range(0..3)];
            let scan: Vec<usize> = (0..pts.len()).filter(|&i| d2(pts[i], q) < r * r).collect();
            assert_eq!(index.within(q, r), scan);

            // Truncation keeps the 32 nearest, ties by index.
            let mut by_dist = scan.clone();
            by_dist.sort_by(|&a, &b| d2(pts[a], q).total_cmp(&d2(pts[b], q)).then(a.cmp(&b)));
            by_dist.truncate(32);
            by_dist.sort_unstable();
            assert_eq!(index.radius_neighbors(q, r, 32), by_dist);
        }
    }
}

#[test]
fn neighbor_sets_grow_with_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pts: Vec<[f64; 3]> = (0..500)
        .map(|_| [0, 1, 2].map(|_| rng.gen_range(-3.0..3.0)))
        .collect();
    let cloud = PointCloud::new(pts, 0, vec![]).unwrap();
    let index = NeighborIndex::build(&cloud, 0.5);
    for _ in 0..50 {
        let q = [0, 1, 2].map(|_| rng.gen_range(-3.0..3.0));
        let small = index.within(q, 0.4);
        let big = index.within(q, 0.8);
        assert!(small.iter().all(|i| big.contains(i)));
    }
}

#[test]
fn kitti_grid_extent() {
    let grid = voxelize(&PointCloud::empty(1), &RangeSpec::kitti(), KITTI_VOXEL_SIZE).unwrap();
    assert_eq!(grid.extent(), [1408, 1600, 40]);
    assert_eq!(KITTI_VOXEL_SIZE, [0.05, 0.05, 0.1]);
}

#[test]
fn yaw_normalization_sweep() {
    let tau = std::f64::consts::TAU;
    let mut a = -10.0;
    while a <= 10.0 {
        let n = normalize_angle(a);
        assert!(n > -std::f64::consts::PI && n <= std::f64::consts::PI, "{a} -> {n}");
        // Same angle modulo 2π.
        let k = ((a - n) / tau).round();
        assert!((a - n - k * tau).abs() < 1e-12, "{a} -> {n}");
        a += 0.001;
    }
    assert_eq!(normalize_angle(-std::f64::consts::PI), std::f64::consts::PI);
}

fn arb_cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(([-5.0..75.0f64, -45.0..45.0f64, -4.0..2.0f64], 0.0..1.0f64), 0..max)
        .prop_map(|v| {
            let (pts, feats): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            PointCloud::new(pts, 1, feats).unwrap()
        })
}

proptest! {
    #[test]
    fn clip_is_idempotent_and_inside(cloud in arb_cloud(200)) {
        let range = RangeSpec::kitti();
        let once = clip_range(&cloud, &range);
        prop_assert!(once.points().iter().all(|&p| range.contains(p)));
        prop_assert_eq!(clip_range(&once, &range), once);
    }

    #[test]
    fn voxel_counts_sum_to_point_count(cloud in arb_cloud(300)) {
        let range = RangeSpec::kitti();
        let clipped = clip_range(&cloud, &range);
        let grid = voxelize(&clipped, &range, [0.4, 0.4, 0.2]).unwrap();
        prop_assert_eq!(grid.total_points(), clipped.len());
        for (idx, cell) in grid.cells() {
            prop_assert!(cell.count >= 1);
            for k in 0..3 {
                prop_assert!(idx[k] >= 0 && (idx[k] as usize) < grid.extent()[k]);
            }
        }
    }

    #[test]
    fn fps_indices_unique_and_bounded(cloud in arb_cloud(80), k in 1usize..100) {
        prop_assume!(!cloud.is_empty());
        let s = farthest_point_sampling(&cloud, k).unwrap();
        prop_assert_eq!(s.len(), k.min(cloud.len()));
        let mut sorted = s.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), s.len());
        prop_assert_eq!(s.indices[0], 0);
    }

    #[test]
    fn grid_follows_rigid_motion(
        size in [0.2..4.0f64, 0.2..4.0f64, 0.2..4.0f64],
        center in [-20.0..20.0f64, -20.0..20.0f64, -3.0..1.0f64],
        yaw in -10.0..10.0f64,
        g in 1usize..7,
    ) {
        let aligned = generate_grid_points(&Box3D::new([0.0; 3], size, 0.0).unwrap(), g).unwrap();
        let moved = Box3D::new(center, size, yaw).unwrap();
        let grid = generate_grid_points(&moved, g).unwrap();
        prop_assert_eq!(grid.len(), g * g * g);
        let (s, c) = yaw.sin_cos();
        for (p, q) in aligned.points.iter().zip(&grid.points) {
            let expect = [c * p[0] - s * p[1] + center[0], s * p[0] + c * p[1] + center[1], p[2] + center[2]];
            for k in 0..3 {
                prop_assert!((expect[k] - q[k]).abs() < 1e-12);
            }
            prop_assert!(moved.contains(*q, 1e-9));
        }
    }
}
