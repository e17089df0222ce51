use serde::{Deserialize, Serialize};

use crate::cloudgeom::{RangeSpec, DEFAULT_MAX_NEIGHBORS, KITTI_VOXEL_SIZE};
use crate::error::{Error, Result};

/// Where a source's pooled points come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// Centers of active voxels at `stride` × the input voxel size.
    #[default]
    Voxel,
    /// Farthest-point samples of the raw scene.
    Points,
}

/// One feature source with its own pooling radii and attention head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    #[serde(default)]
    pub kind: SourceKind,
    #[serde(default = "default_stride")]
    pub stride: u32,
    pub radii: Vec<f64>,
    /// Channel width `d` of the pooled tokens and of the attention head.
    #[serde(default = "default_width")]
    pub width: usize,
    /// Set-abstraction output width per radius; must sum to `width`.
    /// Empty means an even split.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mlp_widths: Vec<usize>,
}

fn default_stride() -> u32 {
    1
}

fn default_width() -> usize {
    32
}

impl SourceConfig {
    pub fn new(name: &str, kind: SourceKind, stride: u32, radii: Vec<f64>, width: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            stride,
            radii,
            width,
            mlp_widths: Vec::new(),
        }
    }

    /// Output width of the set-abstraction MLP for each radius.
    pub fn radius_widths(&self) -> Vec<usize> {
        if self.mlp_widths.is_empty() {
            let k = self.radii.len().max(1);
            vec![self.width / k; self.radii.len()]
        } else {
            self.mlp_widths.clone()
        }
    }

    fn validate(&self, i: usize) -> Result<()> {
        let field = |f: &str| format!("sources[{i}].{f}");
        if self.radii.is_empty() {
            return Err(Error::config(field("radii"), "at least one radius required"));
        }
        if let Some(r) = self.radii.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::config(field("radii"), format!("radius {r} must be positive")));
        }
        if self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(
                field("radii"),
                format!("must be strictly increasing, got {:?}", self.radii),
            ));
        }
        if self.width == 0 {
            return Err(Error::config(field("width"), "must be >= 1"));
        }
        if self.stride == 0 {
            return Err(Error::config(field("stride"), "must be >= 1"));
        }
        if self.mlp_widths.is_empty() {
            if self.width % self.radii.len() != 0 {
                return Err(Error::config(
                    field("mlp_widths"),
                    format!(
                        "width {} does not split evenly over {} radii; give mlp_widths",
                        self.width,
                        self.radii.len()
                    ),
                ));
            }
        } else if self.mlp_widths.len() != self.radii.len()
            || self.mlp_widths.iter().sum::<usize>() != self.width
            || self.mlp_widths.contains(&0)
        {
            return Err(Error::config(
                field("mlp_widths"),
                format!(
                    "need one positive width per radius summing to {}, got {:?}",
                    self.width, self.mlp_widths
                ),
            ));
        }
        Ok(())
    }
}

/// All extractor hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SarfeConfig {
    /// Grid points per axis inside each proposal.
    pub grid_resolution: usize,
    /// Offset-attention blocks per augmentator.
    pub attention_depth: usize,
    pub max_neighbors: usize,
    pub seed: u64,
    pub norm_eps: f64,
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub voxel_size: [f64; 3],
    pub fps_count: usize,
    pub sources: Vec<SourceConfig>,
}

impl Default for SarfeConfig {
    fn default() -> Self {
        let kitti = RangeSpec::kitti();
        Self {
            grid_resolution: 6,
            attention_depth: 4,
            max_neighbors: DEFAULT_MAX_NEIGHBORS,
            seed: 42,
            norm_eps: 1e-5,
            range_min: kitti.min,
            range_max: kitti.max,
            voxel_size: KITTI_VOXEL_SIZE,
            fps_count: 2048,
            sources: vec![
                SourceConfig::new("conv2", SourceKind::Voxel, 2, vec![0.4], 32),
                SourceConfig::new("conv3", SourceKind::Voxel, 4, vec![0.8], 32),
                SourceConfig::new("conv4", SourceKind::Voxel, 8, vec![1.6], 32),
            ],
        }
    }
}

impl SarfeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_resolution < 1 {
            return Err(Error::config("grid_resolution", "must be >= 1"));
        }
        if self.attention_depth < 1 {
            return Err(Error::config("attention_depth", "must be >= 1"));
        }
        if self.max_neighbors < 1 {
            return Err(Error::config("max_neighbors", "must be >= 1"));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::config("norm_eps", "must be positive"));
        }
        if self.fps_count < 1 {
            return Err(Error::config("fps_count", "must be >= 1"));
        }
        self.range().validate()?;
        crate::cloudgeom::grid_extent(&self.range(), self.voxel_size)?;
        if self.sources.is_empty() {
            return Err(Error::config("sources", "at least one source required"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            s.validate(i)?;
            if self.sources[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::config(
                    format!("sources[{i}].name"),
                    format!("duplicate source name `{}`", s.name),
                ));
            }
        }
        Ok(())
    }

    pub fn range(&self) -> RangeSpec {
        RangeSpec {
            min: self.range_min,
            max: self.range_max,
        }
    }

    pub fn token_count(&self) -> usize {
        self.grid_resolution.pow(3)
    }

    /// Channel width of the concatenated RoI feature.
    pub fn output_width(&self) -> usize {
        self.sources.iter().map(|s| s.width).sum()
    }

    /// Every radius across all sources, in source order.
    pub fn all_radii(&self) -> Vec<f64> {
        self.sources.iter().flat_map(|s| s.radii.iter().copied()).collect()
    }
}
