use std::path::Path;

use crate::error::{Error, Result};
use crate::roipool::{normalize_angle, Box3D};

pub const KNOWN_CLASSES: &[&str] = &[
    "Car",
    "Van",
    "Truck",
    "Pedestrian",
    "Person_sitting",
    "Cyclist",
    "Tram",
    "Misc",
    "DontCare",
];

/// One line of a KITTI object label file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub class: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    pub bbox: [f64; 4],
    /// Height, width, length in meters.
    pub dimensions: [f64; 3],
    /// Bottom-center in camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRecord {
    pub fn is_dont_care(&self) -> bool {
        self.class == "DontCare"
    }
}

/// Rigid 3×4 transform from camera to LiDAR coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraToLidar(pub [[f64; 4]; 3]);

impl CameraToLidar {
    pub fn identity() -> Self {
        Self([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    }

    /// Pure axis change: camera (right, down, forward) to LiDAR
    /// (forward, left, up), no translation.
    pub fn axis_swap() -> Self {
        Self([[0.0, 0.0, 1.0, 0.0], [-1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 0.0]])
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        let row = |r: usize| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3];
        [row(0), row(1), row(2)]
    }

    /// Twelve whitespace-separated numbers, row-major.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let vals: Vec<f64> = text
            .split_whitespace()
            .enumerate()
            .map(|(i, t)| {
                t.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    reason: format!("value {i} `{t}` is not a number"),
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != 12 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("expected 12 calibration values, found {}", vals.len()),
            });
        }
        let mut m = [[0.0; 4]; 3];
        for (i, v) in vals.into_iter().enumerate() {
            m[i / 4][i % 4] = v;
        }
        Ok(Self(m))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 15 && fields.len() != 16 {
            return Err(err(format!("expected 15 or 16 fields, found {}", fields.len())));
        }
        let class = fields[0].to_owned();
        if !KNOWN_CLASSES.contains(&class.as_str()) {
            return Err(err(format!("unknown class `{class}`")));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| err(format!("field {} `{}` is not a number", i + 1, fields[i])))
        };
        let occluded = fields[2]
            .parse::<i32>()
            .map_err(|_| err(format!("field 3 `{}` is not an integer", fields[2])))?;
        out.push(LabelRecord {
            class,
            truncated: num(1)?,
            occluded,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            dimensions: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        });
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, path)
}

/// Camera-frame label to a LiDAR-frame box: the bottom center is
/// transformed and lifted by half the height; yaw is `−ry − π/2`.
pub fn to_lidar_box(record: &LabelRecord, calib: &CameraToLidar) -> Result<Box3D> {
    let [h, w, l] = record.dimensions;
    let mut center = calib.apply(record.location);
    center[2] += h / 2.0;
    Box3D::new(
        center,
        [l, w, h],
        normalize_angle(-record.rotation_y - std::f64::consts::FRAC_PI_2),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
Cyclist 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.70 0.60 1.80 0.00 0.00 10.00 -1.57
DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10
";

    #[test]
    fn parses_and_keeps_dont_care() {
        let recs = parse_labels(SAMPLE, Path::new("l.txt")).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].class, "Cyclist");
        assert_eq!(recs[0].dimensions, [1.7, 0.6, 1.8]);
        assert!(recs[1].is_dont_care());
        assert!(to_lidar_box(&recs[1], &CameraToLidar::identity()).is_err());
    }

    #[test]
    fn field_count_error_names_line() {
        let text = "Car 0 0 0 1 2 3 4 1 1 1 0 0 0 0\nCar 0 0\n";
        let err = parse_labels(text, Path::new("lab.txt")).unwrap_err().to_string();
        assert!(err.starts_with("lab.txt:2:"), "{err}");
    }

    #[test]
    fn identity_calib_lifts_center() {
        let mut recs = parse_labels(SAMPLE, Path::new("l.txt")).unwrap();
        recs[0].dimensions = [2.0, 0.6, 1.8];
        let b = to_lidar_box(&recs[0], &CameraToLidar::identity()).unwrap();
        assert_eq!(b.center, [0.0, 0.0, 11.0]);
        assert_eq!(b.size, [1.8, 0.6, 2.0]);
    }

    #[test]
    fn calib_parse() {
        let c = CameraToLidar::parse("0 0 1 0\n-1 0 0 0\n0 -1 0 0.5", Path::new("c")).unwrap();
        assert_eq!(c.apply([1.0, 2.0, 3.0]), [3.0, -1.0, -1.5]);
        assert!(CameraToLidar::parse("1 2 3", Path::new("c")).is_err());
    }
}
