//! The `sarfe` command line: feature extraction, gradient checks and the
//! FPS-vs-voxel structure study. [`run`] is the whole program minus
//! process exit, so tests drive it directly.

pub mod gradcheck;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use sarfe_core::analysis::{bottleneck_experiment, save_reports_csv};
use sarfe_core::cloudgeom::PointCloud;
use sarfe_core::ingest::{
    generate_scene, load_config, read_labels, read_point_bin, to_lidar_box, CameraToLidar,
    SceneSpec,
};
use sarfe_core::model::{prepare_sources, SarfeModel};
use sarfe_core::numcore::checkpoint::{write_entries, TensorEntry};
use sarfe_core::numcore::TokenMatrix;
use sarfe_core::roipool::{Box3D, SarfeConfig};
use sarfe_core::Error;

use gradcheck::{run_trial, SuiteConfig};

/// Result of one command: exit code 0 on success, 1 for bad input or
/// config, 2 for a failed internal invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutcome {
    pub code: i32,
    pub message: String,
    pub outputs: Vec<PathBuf>,
}

impl CommandOutcome {
    fn ok(message: String, outputs: Vec<PathBuf>) -> Self {
        Self {
            code: 0,
            message,
            outputs,
        }
    }

    fn input_error(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
            outputs: Vec::new(),
        }
    }

    fn from_error(e: Error) -> Self {
        let code = match e {
            Error::Shape { .. } | Error::State(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: format!("error: {e}"),
            outputs: Vec::new(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sarfe", version, about = "RoI feature extraction with self-attention over grid points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract per-RoI 216×(Σd) features and write them as CSV.
    Extract(ExtractArgs),
    /// Compare analytic and finite-difference gradients of every layer.
    Gradcheck(GradcheckArgs),
    /// Measure neighborhood duplication and feature similarity for FPS
    /// and voxel sources.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct SceneArgs {
    /// KITTI velodyne .bin scan (x, y, z, intensity as f32).
    #[arg(long, conflicts_with = "synth")]
    cloud: Option<PathBuf>,
    /// Synthetic scene: `cyclist` or a scene spec TOML file.
    #[arg(long)]
    synth: Option<String>,
    /// KITTI label file with the boxes to pool. Defaults to the synthetic
    /// scene's ground truth.
    #[arg(long)]
    boxes: Option<PathBuf>,
    /// Camera-to-LiDAR transform: 12 numbers, row-major 3×4. Defaults to
    /// a pure axis swap.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Config TOML; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write all RoI features into one checkpoint container
    /// (`features.srfe`) instead of CSV files.
    #[arg(long)]
    bin: bool,
    /// Worker threads for RoI evaluation (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, hide = true)]
    corrupt_grad: bool,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Number of farthest points kept for the point source.
    #[arg(long, default_value_t = 2048)]
    fps_count: usize,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> CommandOutcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            return CommandOutcome {
                code,
                message: e.render().to_string(),
                outputs: Vec::new(),
            };
        }
    };
    let result = match cli.command {
        Command::Extract(a) => cmd_extract(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Analyze(a) => cmd_analyze(&a),
    };
    result.unwrap_or_else(CommandOutcome::from_error)
}

fn config_from(path: Option<&Path>, seed: Option<u64>) -> sarfe_core::Result<SarfeConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => SarfeConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_scene(a: &SceneArgs) -> sarfe_core::Result<(PointCloud, Vec<Box3D>)> {
    let (cloud, truth) = match (&a.cloud, &a.synth) {
        (Some(p), _) => (read_point_bin(p)?, None),
        (None, Some(s)) => {
            let spec = if s == "cyclist" {
                SceneSpec::cyclist()
            } else {
                SceneSpec::load(Path::new(s))?
            };
            let (c, b) = generate_scene(&spec)?;
            (c, Some(b))
        }
        (None, None) => {
            return Err(Error::Domain("one of --cloud or --synth is required".into()));
        }
    };
    let boxes = match (&a.boxes, truth) {
        (Some(p), _) => {
            let calib = match &a.calib {
                Some(c) => CameraToLidar::load(c)?,
                None => CameraToLidar::axis_swap(),
            };
            read_labels(p)?
                .iter()
                .filter(|r| !r.is_dont_care())
                .map(|r| to_lidar_box(r, &calib))
                .collect::<sarfe_core::Result<Vec<_>>>()?
        }
        (None, Some(b)) => b,
        (None, None) => {
            return Err(Error::Domain("--boxes is required with --cloud".into()));
        }
    };
    Ok((cloud, boxes))
}

fn matrix_csv(m: &TokenMatrix, header: &str) -> String {
    let mut s = String::with_capacity(m.rows() * m.cols() * 20);
    s.push_str(header);
    s.push('\n');
    for r in 0..m.rows() {
        for (c, v) in m.row(r).iter().enumerate() {
            if c > 0 {
                s.push(',');
            }
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> sarfe_core::Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_extract(a: &ExtractArgs) -> sarfe_core::Result<CommandOutcome> {
    let start = Instant::now();
    let cfg = config_from(a.scene.config.as_deref(), a.scene.seed)?;
    let (scene, boxes) = load_scene(&a.scene)?;
    let model = SarfeModel::new(&cfg, scene.channels())?;
    let sources = prepare_sources(&scene, &cfg)?;
    let index = model.index_sources(&sources)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads)
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    let features: Vec<TokenMatrix> = pool.install(|| {
        boxes
            .par_iter()
            .map(|roi| model.extract(roi, &index))
            .collect::<sarfe_core::Result<Vec<_>>>()
    })?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let mut outputs = Vec::new();
    if a.bin {
        let entries: Vec<TensorEntry> = features
            .iter()
            .enumerate()
            .map(|(i, m)| TensorEntry {
                name: format!("roi_{i:03}"),
                dims: vec![m.rows(), m.cols()],
                values: m.data().to_vec(),
            })
            .collect();
        let path = a.out.join("features.srfe");
        let mut buf = Vec::new();
        write_entries(&mut buf, &entries).expect("write to memory");
        write_file(&path, &buf)?;
        outputs.push(path);
    } else {
        let header = cfg
            .sources
            .iter()
            .flat_map(|s| (0..s.width).map(move |c| format!("{}_{c}", s.name)))
            .collect::<Vec<_>>()
            .join(",");
        for (i, m) in features.iter().enumerate() {
            let path = a.out.join(format!("roi_{i:03}.csv"));
            write_file(&path, matrix_csv(m, &header).as_bytes())?;
            outputs.push(path);
        }
    }

    let mut summary = String::new();
    writeln!(summary, "points {}", scene.len()).unwrap();
    for (s, c) in cfg.sources.iter().zip(&sources) {
        writeln!(summary, "source {} {} points", s.name, c.len()).unwrap();
    }
    writeln!(summary, "rois {}", boxes.len()).unwrap();
    writeln!(summary, "feature_shape {}x{}", cfg.token_count(), cfg.output_width()).unwrap();
    writeln!(summary, "seed {}", cfg.seed).unwrap();
    let path = a.out.join("summary.txt");
    write_file(&path, summary.as_bytes())?;
    outputs.push(path);

    Ok(CommandOutcome::ok(
        format!(
            "extracted {} RoI feature matrices ({}x{}) into {} in {:.2?}",
            boxes.len(),
            cfg.token_count(),
            cfg.output_width(),
            a.out.display(),
            start.elapsed()
        ),
        outputs,
    ))
}

fn cmd_gradcheck(a: &GradcheckArgs) -> sarfe_core::Result<CommandOutcome> {
    if !(a.tol > 0.0) {
        return Ok(CommandOutcome::input_error(format!(
            "error: --tol must be positive, got {}",
            a.tol
        )));
    }
    if a.trials == 0 {
        return Ok(CommandOutcome::input_error("error: --trials must be at least 1"));
    }
    let cfg = config_from(a.config.as_deref(), a.seed)?;
    let mut sc = SuiteConfig {
        depth: cfg.attention_depth,
        norm_eps: cfg.norm_eps,
        ..SuiteConfig::default()
    };
    sc.check.corrupt_analytic = a.corrupt_grad;

    let start = Instant::now();
    let trials = (0..a.trials)
        .into_par_iter()
        .map(|t| run_trial(t, cfg.seed.wrapping_add(t as u64), &sc))
        .collect::<sarfe_core::Result<Vec<_>>>()?;
    let passed = trials.iter().filter(|t| t.passes(a.tol)).count();
    let worst = trials
        .iter()
        .map(|t| (t.trial, t.worst()))
        .max_by(|x, y| x.1.report.max_rel_error.total_cmp(&y.1.report.max_rel_error))
        .expect("trials > 0");
    let checked: usize = trials.iter().flat_map(|t| &t.ops).map(|o| o.report.checked).sum();
    let skipped: usize = trials.iter().flat_map(|t| &t.ops).map(|o| o.report.skipped).sum();

    let mut msg = String::new();
    writeln!(
        msg,
        "{passed}/{} trials within tolerance {:e} ({checked} coordinates checked, {skipped} skipped at kinks, {:.2?})",
        a.trials,
        a.tol,
        start.elapsed()
    )
    .unwrap();
    let (param, idx) = worst.1.report.worst.clone().unwrap_or_default();
    write!(
        msg,
        "worst op {} (trial {}, {}[{}]): relative error {:e}",
        worst.1.op, worst.0, param, idx, worst.1.report.max_rel_error
    )
    .unwrap();
    let code = if passed == a.trials { 0 } else { 2 };
    Ok(CommandOutcome {
        code,
        message: msg,
        outputs: Vec::new(),
    })
}

fn cmd_analyze(a: &AnalyzeArgs) -> sarfe_core::Result<CommandOutcome> {
    if a.fps_count == 0 {
        return Ok(CommandOutcome::input_error("error: --fps-count must be at least 1"));
    }
    let mut cfg = config_from(a.scene.config.as_deref(), a.scene.seed)?;
    cfg.fps_count = a.fps_count;
    let (scene, boxes) = load_scene(&a.scene)?;
    let start = Instant::now();
    let reports = bottleneck_experiment(&scene, &boxes, &cfg)?;
    save_reports_csv(&a.out, &reports)?;
    let mut msg = format!(
        "{} reports for {} boxes written to {} in {:.2?}",
        reports.len(),
        boxes.len(),
        a.out.display(),
        start.elapsed()
    );
    for pair in reports.chunks(2) {
        if let [f, v] = pair {
            write!(
                msg,
                "\nbox {} r={}: duplicate {:.4} vs {:.4}, cosine {:.4} vs {:.4} (fps vs voxel)",
                f.box_id,
                f.radius,
                f.duplicate_pair_fraction,
                v.duplicate_pair_fraction,
                f.mean_pairwise_cosine,
                v.mean_pairwise_cosine
            )
            .unwrap();
        }
    }
    Ok(CommandOutcome::ok(msg, vec![a.out.clone()]))
}

/// Prints the outcome to stdout (success) or stderr and returns the code.
pub fn report(outcome: &CommandOutcome) -> i32 {
    if outcome.code == 0 {
        println!("{}", outcome.message);
    } else {
        let _ = writeln!(std::io::stderr(), "{}", outcome.message);
    }
    outcome.code
}
