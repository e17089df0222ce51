use rand::Rng;

use super::GridPointSet;
use crate::cloudgeom::NeighborIndex;
use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamSet, Tape, TokenMatrix, Var};

/// Shared two-layer point MLP (linear → ReLU → linear → ReLU) applied to
/// `[feature, offset]` rows before the maxpool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaMlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    /// Source feature channels plus the 3 offset channels.
    pub in_channels: usize,
    pub width: usize,
}

impl SaMlp {
    pub fn init<R: Rng>(
        params: &mut ParamSet,
        rng: &mut R,
        prefix: &str,
        feature_channels: usize,
        width: usize,
    ) -> Self {
        let in_channels = feature_channels + 3;
        Self {
            w1: params.init_weight(rng, format!("{prefix}.w1"), in_channels, width),
            b1: params.init_bias(rng, format!("{prefix}.b1"), in_channels, width),
            w2: params.init_weight(rng, format!("{prefix}.w2"), width, width),
            b2: params.init_bias(rng, format!("{prefix}.b2"), width, width),
            in_channels,
            width,
        }
    }
}

/// Builds the stacked `[f_nj, n_j − g_i]` rows of every grid point's
/// neighborhood and the row range belonging to each grid point.
pub fn gather_neighborhoods(
    grid: &GridPointSet,
    index: &NeighborIndex<'_>,
    radius: f64,
    max_neighbors: usize,
) -> (TokenMatrix, Vec<std::ops::Range<usize>>) {
    let source = index.cloud();
    let width = source.channels() + 3;
    let mut data = Vec::new();
    let mut segments = Vec::with_capacity(grid.len());
    let mut rows = 0;
    for &g in &grid.points {
        let start = rows;
        for j in index.radius_neighbors(g, radius, max_neighbors) {
            let n = source.point(j);
            data.extend_from_slice(source.feature(j));
            data.extend_from_slice(&[n[0] - g[0], n[1] - g[1], n[2] - g[2]]);
            rows += 1;
        }
        segments.push(start..rows);
    }
    let m = TokenMatrix::new(rows, width, data).expect("row width is constant");
    (m, segments)
}

/// Set abstraction at one radius: one `width`-vector per grid point, zero
/// where the neighborhood is empty.
pub fn set_abstraction(
    tape: &mut Tape,
    params: &ParamSet,
    grid: &GridPointSet,
    index: &NeighborIndex<'_>,
    radius: f64,
    mlp: &SaMlp,
    max_neighbors: usize,
) -> Result<Var> {
    if !(radius > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {radius}")));
    }
    let channels = index.cloud().channels();
    if channels + 3 != mlp.in_channels {
        return Err(Error::Shape {
            op: "set_abstraction",
            left: (index.cloud().len(), channels + 3),
            right: (mlp.in_channels, mlp.width),
        });
    }
    let (rows, segments) = gather_neighborhoods(grid, index, radius, max_neighbors);
    if rows.rows() == 0 {
        return Ok(tape.constant(TokenMatrix::zeros(grid.len(), mlp.width)));
    }
    let x = tape.constant(rows);
    let h = tape.linear(x, params, mlp.w1, mlp.b1)?;
    let h = tape.relu(h);
    let h = tape.linear(h, params, mlp.w2, mlp.b2)?;
    let h = tape.relu(h);
    tape.segment_maxpool(h, &segments)
}

/// Concatenates [`set_abstraction`] over several radii along channels.
#[allow(clippy::too_many_arguments)]
pub fn multi_radius_pool(
    tape: &mut Tape,
    params: &ParamSet,
    grid: &GridPointSet,
    index: &NeighborIndex<'_>,
    radii: &[f64],
    mlps: &[SaMlp],
    max_neighbors: usize,
) -> Result<Var> {
    if radii.len() != mlps.len() || radii.is_empty() {
        return Err(Error::Domain(format!(
            "{} radii but {} MLPs",
            radii.len(),
            mlps.len()
        )));
    }
    let blocks = radii
        .iter()
        .zip(mlps)
        .map(|(&r, mlp)| set_abstraction(tape, params, grid, index, r, mlp, max_neighbors))
        .collect::<Result<Vec<_>>>()?;
    if blocks.len() == 1 {
        return Ok(blocks[0]);
    }
    tape.concat_cols(&blocks)
}
