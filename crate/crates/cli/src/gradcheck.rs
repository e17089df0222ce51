//! Finite-difference checks over every differentiable layer and one small
//! end-to-end pipeline, on fresh random inputs per trial.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sarfe_core::attention::{
    augmentator, offset_attention, sarfe_forward, self_attention, AugmentatorParams, OaBlockParams,
};
use sarfe_core::cloudgeom::{NeighborIndex, PointCloud};
use sarfe_core::numcore::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use sarfe_core::numcore::{ParamId, ParamSet, Parameter, Tape, TokenMatrix, Var};
use sarfe_core::roipool::{
    generate_grid_points, multi_radius_pool, set_abstraction, Box3D, GridPointSet, SaMlp,
};
use sarfe_core::Result;

pub const OPS: &[&str] = &[
    "matmul",
    "linear",
    "relu",
    "softmax_rows",
    "feature_norm",
    "maxpool_set",
    "segment_maxpool",
    "concat_cols",
    "self_attention",
    "offset_attention",
    "augmentator",
    "set_abstraction",
    "end_to_end",
];

/// Sizes of the small problems every trial draws.
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub tokens: usize,
    pub width: usize,
    pub depth: usize,
    pub norm_eps: f64,
    /// Coordinates sampled per parameter tensor in the end-to-end check;
    /// the per-layer checks always cover every coordinate.
    pub end_to_end_coords: Option<usize>,
    pub check: GradCheckConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            tokens: 8,
            width: 4,
            depth: 2,
            norm_eps: 1e-5,
            end_to_end_coords: Some(6),
            check: GradCheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OpResult {
    pub op: &'static str,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub ops: Vec<OpResult>,
}

impl TrialResult {
    pub fn worst(&self) -> &OpResult {
        self.ops
            .iter()
            .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
            .expect("at least one op")
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.ops.iter().all(|o| o.report.passes(tol))
    }
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> TokenMatrix {
    TokenMatrix::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn matrix_param(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, r: usize, c: usize) -> ParamId {
    let vals = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ps.push(Parameter::new(name, vec![r, c], vals).unwrap())
}

/// Moves affine norm parameters off their identity init so their
/// gradients are exercised.
fn jitter_norms(ps: &mut ParamSet, rng: &mut ChaCha8Rng, blocks: &[OaBlockParams]) {
    for b in blocks {
        for v in ps.get_mut(b.gamma).values.iter_mut() {
            *v = rng.gen_range(0.5..1.5);
        }
        for v in ps.get_mut(b.beta).values.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, channels: usize, half: f64) -> PointCloud {
    let pts = (0..n)
        .map(|_| [rng.gen_range(-half..half), rng.gen_range(-half..half), rng.gen_range(-half..half)])
        .collect();
    let feats = (0..n * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    PointCloud::new(pts, channels, feats).unwrap()
}

fn populated_cloud(rng: &mut ChaCha8Rng, anchors: &[[f64; 3]], extra: usize) -> PointCloud {
    let mut cloud = random_cloud(rng, extra, 2, 1.0);
    for a in anchors {
        let p = [0, 1, 2].map(|k| a[k] + rng.gen_range(-0.2..0.2));
        cloud.push(p, &[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
    }
    cloud
}

fn check<F>(op: &'static str, mut ps: ParamSet, cfg: &GradCheckConfig, f: F) -> Result<OpResult>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    Ok(OpResult {
        op,
        report: check_gradients(&mut ps, f, cfg)?,
    })
}

const E2E_RADII: [f64; 2] = [0.5, 1.0];

type Head = (Vec<SaMlp>, AugmentatorParams);

struct EndToEnd {
    params: ParamSet,
    heads: Vec<Head>,
    clouds: [PointCloud; 2],
    grid: GridPointSet,
    weights: TokenMatrix,
}

fn pool_sources(
    t: &mut Tape,
    p: &ParamSet,
    grid: &GridPointSet,
    clouds: &[PointCloud],
    heads: &[Head],
) -> Result<Vec<Var>> {
    clouds
        .iter()
        .zip(heads)
        .map(|(cloud, (mlps, _))| {
            let index = NeighborIndex::build(cloud, E2E_RADII[0]);
            multi_radius_pool(t, p, grid, &index, &E2E_RADII, mlps, 32)
        })
        .collect()
}

/// Two sources, two radii each, each with its own augmentator. Every grid
/// point gets a neighbor, and draws where some source still pools to
/// identical tokens (all ReLUs dead) are redrawn: the augmentator norm
/// then runs at eps, per-token gradients grow by 1/sqrt(eps) per block
/// and the exact zero parameter gradient is lost to cancellation. That
/// regime has its own test.
fn end_to_end_setup(rng: &mut ChaCha8Rng, sc: &SuiteConfig) -> Result<EndToEnd> {
    let half = sc.width / 2;
    loop {
        let mut params = ParamSet::new();
        let mut heads = Vec::new();
        for s in 0..2 {
            let mlps: Vec<SaMlp> = (0..E2E_RADII.len())
                .map(|k| SaMlp::init(&mut params, rng, &format!("s{s}.sa{k}"), 2, half))
                .collect();
            let aug = AugmentatorParams::init(
                &mut params,
                rng,
                &format!("s{s}.aug"),
                2 * half,
                sc.depth,
                sc.norm_eps,
            );
            jitter_norms(&mut params, rng, &aug.blocks);
            heads.push((mlps, aug));
        }
        let roi = Box3D::new([0.1, -0.1, 0.0], [1.6, 1.2, 1.0], rng.gen_range(-3.0..3.0))?;
        let grid = generate_grid_points(&roi, 2)?;
        let clouds = [
            populated_cloud(rng, &grid.points, 30),
            populated_cloud(rng, &grid.points, 20),
        ];
        let weights = random(rng, grid.len(), 4 * half);

        let mut t = Tape::new();
        let pooled = pool_sources(&mut t, &params, &grid, &clouds, &heads)?;
        let degenerate = pooled.iter().any(|&v| {
            let m = t.value(v);
            (1..m.rows()).all(|r| m.row(r) == m.row(0))
        });
        if !degenerate {
            return Ok(EndToEnd {
                params,
                heads,
                clouds,
                grid,
                weights,
            });
        }
    }
}

/// Runs every op once with inputs drawn from `seed`.
pub fn run_trial(trial: usize, seed: u64, sc: &SuiteConfig) -> Result<TrialResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (sc.tokens, sc.width);
    let cfg = GradCheckConfig {
        seed,
        ..sc.check.clone()
    };
    let mut ops = Vec::with_capacity(OPS.len());

    {
        let mut ps = ParamSet::new();
        let a = matrix_param(&mut ps, &mut rng, "a", n, d);
        let b = random(&mut rng, d, 3);
        let w = random(&mut rng, n, 3);
        ops.push(check("matmul", ps, &cfg, move |t, p| {
            let a = t.param(p, a);
            let b = t.constant(b.clone());
            let y = t.matmul(a, b)?;
            t.dot_const(y, &w)
        })?);
    }
    {
        let mut ps = ParamSet::new();
        let wid = ps.init_weight(&mut rng, "w", d, 3);
        let bid = ps.init_bias(&mut rng, "b", d, 3);
        let x = random(&mut rng, n, d);
        let w = random(&mut rng, n, 3);
        ops.push(check("linear", ps, &cfg, move |t, p| {
            let x = t.constant(x.clone());
            let y = t.linear(x, p, wid, bid)?;
            t.dot_const(y, &w)
        })?);
    }
    {
        let mut ps = ParamSet::new();
        let x = matrix_param(&mut ps, &mut rng, "x", n, d);
        let w = random(&mut rng, n, d);
        ops.push(check("relu", ps, &cfg, move |t, p| {
            let x = t.param(p, x);
            let y = t.relu(x);
            t.dot_const(y, &w)
        })?);
    }
    {
        let mut ps = ParamSet::new();
        let x = matrix_param(&mut ps, &mut rng, "x", n, n);
        let w = random(&mut rng, n, n);
        ops.push(check("softmax_rows", ps, &cfg, move |t, p| {
            let x = t.param(p, x);
            let y = t.softmax_rows(x)?;
            t.dot_const(y, &w)
        })?);
    }
    {
        let mut ps = ParamSet::new();
        let x = matrix_param(&mut ps, &mut rng, "x", n, d);
        let gamma = matrix_param(&mut ps, &mut rng, "gamma", 1, d);
        let beta = matrix_param(&mut ps, &mut rng, "beta", 1, d);
        let w = random(&mut rng, n, d);
        let eps = sc.norm_eps;
        ops.push(check("feature_norm", ps, &cfg, move |t, p| {
            let x = t.param(p, x);
            let y = t.feature_norm(x, p, gamma, beta, eps)?;
            t.dot_const(y, &w)
        })?);
    }
    {
        let mut ps = ParamSet::new();
        let x = matrix_param(&mut ps, &mut rng, "x", n, d);
        let w = random(&mut rng, 1, d);
        ops.push(check("maxpool_set", ps, &cfg, move |t, p| {
            let x = t.param(p, x);
            let y = t.maxpool_set(x)?;
            t.dot_const(y, &w)
        })?);
    }
    {
        let mut ps = ParamSet::new();
        let x = matrix_param(&mut ps, &mut rng, "x", n, d);
        let cut = rng.gen_range(1..n);
        let segments = vec![0..cut, cut..cut, cut..n];
        let w = random(&mut rng, 3, d);
        ops.push(check("segment_maxpool", ps, &cfg, move |t, p| {
            let x = t.param(p, x);
            let y = t.segment_maxpool(x, &segments)?;
            t.dot_const(y, &w)
        })?);
    }
    {
        let mut ps = ParamSet::new();
        let a = matrix_param(&mut ps, &mut rng, "a", n, 2);
        let b = matrix_param(&mut ps, &mut rng, "b", n, 3);
        let w = random(&mut rng, n, 5);
        ops.push(check("concat_cols", ps, &cfg, move |t, p| {
            let a = t.param(p, a);
            let b = t.param(p, b);
            let y = t.concat_cols(&[a, b])?;
            let y = t.relu(y);
            t.dot_const(y, &w)
        })?);
    }
    {
        let mut ps = ParamSet::new();
        let blk = OaBlockParams::init(&mut ps, &mut rng, "oa", d, sc.norm_eps);
        let x = random(&mut rng, n, d);
        let w = random(&mut rng, n, d);
        ops.push(check("self_attention", ps, &cfg, move |t, p| {
            let x = t.constant(x.clone());
            let y = self_attention(t, p, x, &blk)?;
            t.dot_const(y, &w)
        })?);
    }
    {
        let mut ps = ParamSet::new();
        let blk = OaBlockParams::init(&mut ps, &mut rng, "oa", d, sc.norm_eps);
        jitter_norms(&mut ps, &mut rng, &[blk]);
        let x = random(&mut rng, n, d);
        let w = random(&mut rng, n, d);
        ops.push(check("offset_attention", ps, &cfg, move |t, p| {
            let x = t.constant(x.clone());
            let y = offset_attention(t, p, x, &blk)?;
            t.dot_const(y, &w)
        })?);
    }
    {
        let mut ps = ParamSet::new();
        let aug = AugmentatorParams::init(&mut ps, &mut rng, "aug", d, sc.depth, sc.norm_eps);
        jitter_norms(&mut ps, &mut rng, &aug.blocks);
        let x = random(&mut rng, n, d);
        let w = random(&mut rng, n, d);
        ops.push(check("augmentator", ps, &cfg, move |t, p| {
            let x = t.constant(x.clone());
            let y = augmentator(t, p, x, &aug)?;
            t.dot_const(y, &w)
        })?);
    }
    {
        let mut ps = ParamSet::new();
        let mlp = SaMlp::init(&mut ps, &mut rng, "sa", 2, d);
        let cloud = random_cloud(&mut rng, 30, 2, 1.0);
        let roi = Box3D::new([0.0; 3], [1.5, 1.0, 1.2], rng.gen_range(-3.0..3.0))?;
        let grid = generate_grid_points(&roi, 2)?;
        let w = random(&mut rng, grid.len(), d);
        ops.push(check("set_abstraction", ps, &cfg, move |t, p| {
            let index = NeighborIndex::build(&cloud, 0.8);
            let y = set_abstraction(t, p, &grid, &index, 0.8, &mlp, 32)?;
            t.dot_const(y, &w)
        })?);
    }
    {
        let setup = end_to_end_setup(&mut rng, sc)?;
        let cfg = GradCheckConfig {
            max_coords_per_param: sc.end_to_end_coords,
            ..cfg.clone()
        };
        let EndToEnd {
            params,
            heads,
            clouds,
            grid,
            weights,
        } = setup;
        ops.push(check("end_to_end", params, &cfg, move |t, p| {
            let pooled = pool_sources(t, p, &grid, &clouds, &heads)?;
            let augs: Vec<AugmentatorParams> = heads.iter().map(|(_, a)| a.clone()).collect();
            let y = sarfe_forward(t, p, &pooled, &augs)?;
            t.dot_const(y, &weights)
        })?);
    }
    Ok(TrialResult { trial, ops })
}
