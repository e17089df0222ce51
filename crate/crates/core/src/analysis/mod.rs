//! Structure metrics that compare how well two feature sources cover the
//! grid points of a proposal.
//!
//! Two grid points with the same neighbor set receive the same pooled
//! feature. The duplicate fraction counts such pairs; the mean pairwise
//! cosine measures how alike the rows of a single-radius extractor head
//! (set abstraction followed by the augmentator) end up.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::attention::{augmentator, AugmentatorParams};
use crate::cloudgeom::{
    clip_range, farthest_point_sampling, voxel_centers, voxelize, NeighborIndex, PointCloud,
};
use crate::error::{Error, Result};
use crate::numcore::{ParamSet, Tape, TokenMatrix};
use crate::roipool::{generate_grid_points, set_abstraction, Box3D, GridPointSet, SaMlp, SarfeConfig};

pub const CSV_HEADER: &str =
    "box_id,source,radius,duplicate_pair_fraction,distinct_signatures,mean_pairwise_cosine";

/// Sorted, unique neighbor indices of one grid point.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NeighborhoodSignature(pub Vec<usize>);

/// One signature per grid point, from the untruncated strict-`<` ball.
pub fn neighborhood_signatures(
    grid: &GridPointSet,
    index: &NeighborIndex<'_>,
    radius: f64,
) -> Result<Vec<NeighborhoodSignature>> {
    if !(radius > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {radius}")));
    }
    Ok(grid
        .points
        .iter()
        .map(|&g| NeighborhoodSignature(index.within(g, radius)))
        .collect())
}

/// Fraction of unordered pairs with identical signatures.
pub fn duplicate_fraction(signatures: &[NeighborhoodSignature]) -> Result<f64> {
    let n = signatures.len();
    if n < 2 {
        return Err(Error::Domain(format!("duplicate fraction needs 2 signatures, got {n}")));
    }
    let mut groups: HashMap<&NeighborhoodSignature, usize> = HashMap::new();
    for s in signatures {
        *groups.entry(s).or_default() += 1;
    }
    let same: usize = groups.values().map(|&c| c * (c - 1) / 2).sum();
    Ok(same as f64 / (n * (n - 1) / 2) as f64)
}

pub fn distinct_signatures(signatures: &[NeighborhoodSignature]) -> usize {
    let mut v: Vec<&NeighborhoodSignature> = signatures.iter().collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// Mean cosine similarity over unordered row pairs. Two zero rows count
/// as 1, a zero row against a nonzero row as 0.
pub fn feature_diversity(m: &TokenMatrix) -> Result<f64> {
    let n = m.rows();
    if n < 2 {
        return Err(Error::Domain(format!("feature diversity needs 2 rows, got {n}")));
    }
    let norms: Vec<f64> = (0..n)
        .map(|r| m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += match (norms[i] == 0.0, norms[j] == 0.0) {
                (true, true) => 1.0,
                (true, false) | (false, true) => 0.0,
                _ => {
                    let dot: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| a * b).sum();
                    (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                }
            };
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub box_id: usize,
    pub source: String,
    pub radius: f64,
    pub duplicate_pair_fraction: f64,
    pub distinct_signatures: usize,
    pub mean_pairwise_cosine: f64,
}

impl StructureReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.box_id,
            self.source,
            self.radius,
            self.duplicate_pair_fraction,
            self.distinct_signatures,
            self.mean_pairwise_cosine
        )
    }
}

pub const FPS_SOURCE: &str = "fps";
pub const VOXEL_SOURCE: &str = "voxel";

/// The two sources compared by [`bottleneck_experiment`]: the first
/// `fps_count` farthest points and the centers of the input-resolution
/// voxels, both built from the clipped scene in canonical point order.
pub fn comparison_sources(scene: &PointCloud, config: &SarfeConfig) -> Result<(PointCloud, PointCloud)> {
    config.validate()?;
    let range = config.range();
    let clipped = clip_range(scene, &range);
    let clipped = clipped.select(&clipped.canonical_order());
    let fps = if clipped.is_empty() {
        clipped.clone()
    } else {
        clipped.select(&farthest_point_sampling(&clipped, config.fps_count)?.indices)
    };
    let voxel = voxel_centers(&voxelize(&clipped, &range, config.voxel_size)?);
    Ok((fps, voxel))
}

/// For every box and every distinct configured radius, a report for the
/// FPS source followed by one for the voxel source. Each radius gets one
/// seeded probe head (set abstraction MLP + augmentator) shared by both
/// sources.
pub fn bottleneck_experiment(
    scene: &PointCloud,
    boxes: &[Box3D],
    config: &SarfeConfig,
) -> Result<Vec<StructureReport>> {
    let (fps, voxel) = comparison_sources(scene, config)?;

    let mut radii: Vec<(f64, usize)> = Vec::new();
    for s in &config.sources {
        for (&r, w) in s.radii.iter().zip(s.radius_widths()) {
            if !radii.iter().any(|&(q, _)| q == r) {
                radii.push((r, w));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamSet::new();
    let heads: Vec<(SaMlp, AugmentatorParams)> = radii
        .iter()
        .enumerate()
        .map(|(k, &(_, w))| {
            let mlp = SaMlp::init(&mut params, &mut rng, &format!("probe{k}.sa"), scene.channels(), w);
            let aug = AugmentatorParams::init(
                &mut params,
                &mut rng,
                &format!("probe{k}.aug"),
                w,
                config.attention_depth,
                config.norm_eps,
            );
            (mlp, aug)
        })
        .collect();

    let sources = [(FPS_SOURCE, &fps), (VOXEL_SOURCE, &voxel)];
    // One hash per (radius, source), cell size = radius.
    let indices: Vec<Vec<NeighborIndex<'_>>> = radii
        .iter()
        .map(|&(r, _)| sources.iter().map(|(_, c)| NeighborIndex::build(c, r)).collect())
        .collect();

    let per_box = boxes
        .par_iter()
        .enumerate()
        .map(|(box_id, roi)| {
            let grid = generate_grid_points(roi, config.grid_resolution)?;
            let mut out = Vec::with_capacity(radii.len() * 2);
            for (k, &(radius, _)) in radii.iter().enumerate() {
                for (s, (label, _)) in sources.iter().enumerate() {
                    let index = &indices[k][s];
                    let sigs = neighborhood_signatures(&grid, index, radius)?;
                    let mut tape = Tape::new();
                    let pooled = set_abstraction(
                        &mut tape,
                        &params,
                        &grid,
                        index,
                        radius,
                        &heads[k].0,
                        config.max_neighbors,
                    )?;
                    let features = augmentator(&mut tape, &params, pooled, &heads[k].1)?;
                    out.push(StructureReport {
                        box_id,
                        source: (*label).to_owned(),
                        radius,
                        duplicate_pair_fraction: duplicate_fraction(&sigs)?,
                        distinct_signatures: distinct_signatures(&sigs),
                        mean_pairwise_cosine: feature_diversity(tape.value(features))?,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_box.into_iter().flatten().collect())
}

pub fn write_reports_csv<W: Write>(mut w: W, reports: &[StructureReport]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn save_reports_csv(path: &Path, reports: &[StructureReport]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_reports_csv(&mut w, reports)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
