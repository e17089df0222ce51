use std::path::Path;

use crate::cloudgeom::PointCloud;
use crate::error::{Error, Result};

/// Reads a KITTI velodyne scan: little-endian f32 quadruples
/// `(x, y, z, intensity)`. Intensity becomes a single feature channel.
pub fn read_point_bin(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_point_bin(&bytes).ok_or_else(|| Error::PointFormat {
        path: path.to_path_buf(),
        bytes: bytes.len() as u64,
    })?
}

fn parse_point_bin(bytes: &[u8]) -> Option<Result<PointCloud>> {
    if bytes.len() % 16 != 0 {
        return None;
    }
    let n = bytes.len() / 16;
    let mut points = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(16) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        points.push([f(0), f(1), f(2)]);
        features.push(f(3));
    }
    Some(PointCloud::new(points, 1, features))
}

/// Writes a single-channel cloud in the velodyne layout. Values are
/// narrowed to f32.
pub fn write_point_bin(path: &Path, cloud: &PointCloud) -> Result<()> {
    if cloud.channels() != 1 {
        return Err(Error::Domain(format!(
            "velodyne files carry exactly one feature channel, cloud has {}",
            cloud.channels()
        )));
    }
    let mut buf = Vec::with_capacity(cloud.len() * 16);
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        for v in [p[0], p[1], p[2], cloud.feature(i)[0]] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_single_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.bin");
        std::fs::write(&p, []).unwrap();
        assert!(read_point_bin(&p).unwrap().is_empty());

        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let p = dir.path().join("one.bin");
        std::fs::write(&p, &bytes).unwrap();
        let c = read_point_bin(&p).unwrap();
        assert_eq!(c.points(), &[[1.0, 2.0, 3.0]]);
        assert_eq!(c.features(), &[0.5]);
    }

    #[test]
    fn malformed_length_reports_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        std::fs::write(&p, [0u8; 17]).unwrap();
        let err = read_point_bin(&p).unwrap_err();
        assert!(matches!(err, Error::PointFormat { bytes: 17, .. }));
        assert!(err.to_string().contains("17 bytes"));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_point_bin(Path::new("/nonexistent/scan.bin")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
