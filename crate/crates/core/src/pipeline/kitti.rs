use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

/// Bytes per point record: x, y, z, reflectance as little-endian `f32`.
pub const RECORD_BYTES: usize = 16;

/// Read a KITTI velodyne scan. Reflectance becomes the single feature channel.
pub fn read_kitti_bin(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path)?;
    parse_kitti(&bytes, path)
}

fn parse_kitti(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let partial = bytes.len() % RECORD_BYTES;
    if partial != 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: (bytes.len() - partial) as u64,
            reason: format!("trailing {partial} bytes do not form a {RECORD_BYTES}-byte record"),
        });
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut points = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let v: [f32; 4] = std::array::from_fn(|k| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()));
        let p = Point3::new(v[0] as f64, v[1] as f64, v[2] as f64).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            offset: (i * RECORD_BYTES) as u64,
            reason: format!("non-finite coordinate {:?}", &v[..3]),
        })?;
        points.push(p);
        features.push(v[3] as f64);
    }
    PointCloud::new(points, 1, features)
}

/// Write a cloud in KITTI layout; the first feature channel (or 0) is the reflectance.
pub fn write_kitti_bin(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        let refl = cloud.feature(i).first().copied().unwrap_or(0.0);
        for v in [p.x(), p.y(), p.z(), refl] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
