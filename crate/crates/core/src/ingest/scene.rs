use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloudgeom::{PointCloud, RangeSpec};
use crate::error::{Error, Result};
use crate::roipool::Box3D;

/// Cyclist-scale object dimensions (length, width, height) in meters.
pub const CYCLIST_SIZE: [f64; 3] = [1.8, 0.6, 1.7];

/// An oriented box whose surface is sampled at `density` points per m².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectTemplate {
    pub center: [f64; 3],
    pub size: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    pub density: f64,
}

impl ObjectTemplate {
    pub fn to_box(&self) -> Result<Box3D> {
        Box3D::new(self.center, self.size, self.yaw)
    }

    pub fn point_count(&self) -> usize {
        let [l, w, h] = self.size;
        (2.0 * (l * w + l * h + w * h) * self.density).round() as usize
    }
}

/// Recipe for a synthetic single-channel (intensity) LiDAR scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    /// Uniform background points inside the range.
    pub clutter: usize,
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    #[serde(default)]
    pub objects: Vec<ObjectTemplate>,
}

impl SceneSpec {
    /// One dense cyclist-scale box in a KITTI-range scene with uniform
    /// clutter.
    pub fn cyclist() -> Self {
        let r = RangeSpec::kitti();
        Self {
            seed: 7,
            clutter: 20_000,
            range_min: r.min,
            range_max: r.max,
            objects: vec![ObjectTemplate {
                center: [15.0, 3.0, -0.75],
                size: CYCLIST_SIZE,
                yaw: 0.3,
                density: 600.0,
            }],
        }
    }

    pub fn range(&self) -> RangeSpec {
        RangeSpec {
            min: self.range_min,
            max: self.range_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = self.range();
        range.validate()?;
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.density >= 0.0) || !o.density.is_finite() {
                return Err(Error::config(
                    format!("objects[{i}].density"),
                    format!("must be >= 0, got {}", o.density),
                ));
            }
            let b = o.to_box().map_err(|e| Error::config(format!("objects[{i}]"), e.to_string()))?;
            for corner in corners(&b) {
                if (0..3).any(|k| corner[k] < range.min[k] || corner[k] > range.max[k]) {
                    return Err(Error::config(
                        format!("objects[{i}]"),
                        "box extends outside the scene range",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SceneSpec = super::config_io::parse_toml(&text, path)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn corners(b: &Box3D) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(8);
    for sx in [-0.5, 0.5] {
        for sy in [-0.5, 0.5] {
            for sz in [-0.5, 0.5] {
                out.push(b.to_world([sx * b.size[0], sy * b.size[1], sz * b.size[2]]));
            }
        }
    }
    out
}

/// Uniform sample on the surface of `b`.
fn surface_point<R: Rng>(rng: &mut R, b: &Box3D) -> [f64; 3] {
    let [l, w, h] = b.size;
    let areas = [w * h, l * h, l * w];
    let total = areas.iter().sum::<f64>();
    let pick = rng.gen_range(0.0..total);
    let axis = if pick < areas[0] {
        0
    } else if pick < areas[0] + areas[1] {
        1
    } else {
        2
    };
    let sign = if rng.gen::<bool>() { 0.5 } else { -0.5 };
    let mut local = [0.0; 3];
    for k in 0..3 {
        local[k] = if k == axis {
            sign * b.size[k]
        } else {
            rng.gen_range(-0.5..0.5) * b.size[k]
        };
    }
    b.to_world(local)
}

/// Object surface points first (in template order), then clutter. Every
/// point gets a uniform intensity in `[0, 1)`.
pub fn generate_scene(spec: &SceneSpec) -> Result<(PointCloud, Vec<Box3D>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cloud = PointCloud::empty(1);
    let mut boxes = Vec::with_capacity(spec.objects.len());
    for o in &spec.objects {
        let b = o.to_box()?;
        for _ in 0..o.point_count() {
            let p = surface_point(&mut rng, &b);
            let intensity = rng.gen_range(0.0..1.0);
            cloud.push(p, &[intensity]);
        }
        boxes.push(b);
    }
    let range = spec.range();
    for _ in 0..spec.clutter {
        let p = [
            rng.gen_range(range.min[0]..range.max[0]),
            rng.gen_range(range.min[1]..range.max[1]),
            rng.gen_range(range.min[2]..range.max[2]),
        ];
        let intensity = rng.gen_range(0.0..1.0);
        cloud.push(p, &[intensity]);
    }
    Ok((cloud, boxes))
}
