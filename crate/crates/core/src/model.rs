//! End-to-end extractor: source preparation, RoI grid pooling per source,
//! and the per-source attention heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{sarfe_forward, AugmentatorParams};
use crate::cloudgeom::{
    clip_range, farthest_point_sampling, voxel_centers, voxelize, NeighborIndex, PointCloud,
};
use crate::error::{Error, Result};
use crate::numcore::{ParamSet, Tape, TokenMatrix, Var};
use crate::roipool::{generate_grid_points, multi_radius_pool, Box3D, SaMlp, SarfeConfig, SourceKind};

#[derive(Debug, Clone, PartialEq)]
pub struct SourceHead {
    pub name: String,
    pub radii: Vec<f64>,
    pub mlps: Vec<SaMlp>,
    pub augmentator: AugmentatorParams,
}

/// Seeded parameters for every source of a [`SarfeConfig`].
#[derive(Debug, Clone)]
pub struct SarfeModel {
    pub config: SarfeConfig,
    pub params: ParamSet,
    pub heads: Vec<SourceHead>,
    pub in_channels: usize,
}

impl SarfeModel {
    /// `in_channels` is the per-point feature width of every source cloud.
    pub fn new(config: &SarfeConfig, in_channels: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let mut heads = Vec::with_capacity(config.sources.len());
        for src in &config.sources {
            let mlps = src
                .radii
                .iter()
                .zip(src.radius_widths())
                .enumerate()
                .map(|(k, (_, w))| {
                    SaMlp::init(&mut params, &mut rng, &format!("{}.sa{k}", src.name), in_channels, w)
                })
                .collect();
            let augmentator = AugmentatorParams::init(
                &mut params,
                &mut rng,
                &format!("{}.aug", src.name),
                src.width,
                config.attention_depth,
                config.norm_eps,
            );
            heads.push(SourceHead {
                name: src.name.clone(),
                radii: src.radii.clone(),
                mlps,
                augmentator,
            });
        }
        Ok(Self {
            config: config.clone(),
            params,
            heads,
            in_channels,
        })
    }

    /// Hash indices over prepared source clouds, one per head.
    pub fn index_sources<'a>(&self, sources: &'a [PointCloud]) -> Result<Vec<NeighborIndex<'a>>> {
        if sources.len() != self.heads.len() {
            return Err(Error::Domain(format!(
                "{} source clouds for {} heads",
                sources.len(),
                self.heads.len()
            )));
        }
        Ok(sources
            .iter()
            .zip(&self.heads)
            .map(|(c, h)| NeighborIndex::build(c, h.radii[0]))
            .collect())
    }

    /// Pools every source around the grid of `roi` and runs the heads.
    /// Output is `g³ × Σ d`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        roi: &Box3D,
        sources: &[NeighborIndex<'_>],
    ) -> Result<Var> {
        let grid = generate_grid_points(roi, self.config.grid_resolution)?;
        let pooled = self
            .heads
            .iter()
            .zip(sources)
            .map(|(h, idx)| {
                multi_radius_pool(
                    tape,
                    params,
                    &grid,
                    idx,
                    &h.radii,
                    &h.mlps,
                    self.config.max_neighbors,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let heads: Vec<AugmentatorParams> =
            self.heads.iter().map(|h| h.augmentator.clone()).collect();
        sarfe_forward(tape, params, &pooled, &heads)
    }

    pub fn extract(&self, roi: &Box3D, sources: &[NeighborIndex<'_>]) -> Result<TokenMatrix> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &self.params, roi, sources)?;
        Ok(tape.value(out).clone())
    }
}

/// Builds one point cloud per configured source from a raw scene: the
/// scene is clipped, then either voxelized at `stride ×` the input voxel
/// size (voxel centers carry mean features) or farthest-point sampled.
pub fn prepare_sources(scene: &PointCloud, config: &SarfeConfig) -> Result<Vec<PointCloud>> {
    config.validate()?;
    let range = config.range();
    let clipped = clip_range(scene, &range);
    config
        .sources
        .iter()
        .map(|src| match src.kind {
            SourceKind::Voxel => {
                let s = src.stride as f64;
                let size = config.voxel_size.map(|v| v * s);
                Ok(voxel_centers(&voxelize(&clipped, &range, size)?))
            }
            SourceKind::Points => {
                if clipped.is_empty() {
                    return Ok(PointCloud::empty(clipped.channels()));
                }
                let sample = farthest_point_sampling(&clipped, config.fps_count)?;
                Ok(clipped.select(&sample.indices))
            }
        })
        .collect()
}
