use crate::error::Result;
use crate::geom::{LocalVoxelTensor, OrientedBox, Point3, PointCloud};
use crate::voxelization::VoxelizationConfig;

/// Every point within `radius` of `center` (inclusive), by exhaustive scan.
pub fn brute_neighbors(cloud: &PointCloud, center: &Point3, radius: f64) -> Vec<usize> {
    let c = center.to_array();
    let mut out = Vec::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let q = p.to_array();
        let (dx, dy, dz) = (q[0] - c[0], q[1] - c[1], q[2] - c[2]);
        if dx * dx + dy * dy + dz * dz <= radius * radius {
            out.push(i);
        }
    }
    out
}

/// Local voxel tensor built voxel by voxel, scanning the whole cloud for each.
pub fn brute_voxelize(cloud: &PointCloud, center: &Point3, cfg: &VoxelizationConfig) -> Result<LocalVoxelTensor> {
    let k = cfg.k;
    let c_in = cloud.channels();
    let c_out = c_in + if cfg.append_offsets { 3 } else { 0 };
    let size = 2.0 * cfg.radius / k as f64;
    let cap = cfg.max_points_per_voxel.unwrap_or(usize::MAX);
    let neighbors = brute_neighbors(cloud, center, cfg.radius);
    let c = center.to_array();
    let index = |v: f64| ((v + cfg.radius) / size).floor().max(0.0).min((k - 1) as f64) as usize;
    let mut data = Vec::with_capacity(k * k * k * c_out);
    for ix in 0..k {
        for iy in 0..k {
            for iz in 0..k {
                let mut sum = vec![0.0; c_out];
                let mut n = 0usize;
                for &i in &neighbors {
                    let q = cloud.point(i).to_array();
                    let d = [q[0] - c[0], q[1] - c[1], q[2] - c[2]];
                    if [index(d[0]), index(d[1]), index(d[2])] != [ix, iy, iz] || n == cap {
                        continue;
                    }
                    n += 1;
                    for (s, f) in sum.iter_mut().zip(cloud.feature(i)) {
                        *s += f;
                    }
                    if cfg.append_offsets {
                        for a in 0..3 {
                            sum[c_in + a] += d[a];
                        }
                    }
                }
                data.extend(sum.into_iter().map(|s| if n > 0 { s / n as f64 } else { 0.0 }));
            }
        }
    }
    LocalVoxelTensor::from_data(k, c_out, data, *center, cfg.radius)
}

/// Location-aware pooling evaluated cell by cell from the weighting formula.
///
/// Returns `k^3 x channels` values, cell-major with the box-frame x slowest.
pub fn brute_la_pool(cloud: &PointCloud, b: &OrientedBox, k: usize, n_max: usize) -> Vec<f64> {
    let [x, y, z, w, l, h, r] = b.params();
    let dims = [w, l, h];
    let scale = dims.iter().cloned().fold(0.0, f64::max) / k as f64;
    let (s, co) = r.sin_cos();
    let local: Vec<Option<[f64; 3]>> = cloud
        .points()
        .iter()
        .map(|p| {
            let q = p.to_array();
            let (dx, dy) = (q[0] - x, q[1] - y);
            let v = [co * dx + s * dy, co * dy - s * dx, q[2] - z];
            (0..3).all(|a| v[a].abs() <= dims[a] / 2.0).then_some(v)
        })
        .collect();
    let ch = cloud.channels();
    let mut out = vec![0.0; k * k * k * ch];
    for cx in 0..k {
        for cy in 0..k {
            for cz in 0..k {
                let cell = [cx, cy, cz];
                let lo: [f64; 3] = std::array::from_fn(|a| -dims[a] / 2.0 + cell[a] as f64 * dims[a] / k as f64);
                let center: [f64; 3] = std::array::from_fn(|a| lo[a] + 0.5 * dims[a] / k as f64);
                let mut members = Vec::new();
                for (i, v) in local.iter().enumerate() {
                    let Some(v) = v else { continue };
                    let owns = (0..3).all(|a| {
                        let t = ((v[a] + dims[a] / 2.0) / (dims[a] / k as f64)).floor();
                        t.max(0.0).min((k - 1) as f64) as usize == cell[a]
                    });
                    if owns {
                        members.push((i, *v));
                    }
                }
                members.truncate(n_max);
                if members.is_empty() {
                    continue;
                }
                let base = ((cx * k + cy) * k + cz) * ch;
                for (i, v) in &members {
                    let d =
                        ((v[0] - center[0]).powi(2) + (v[1] - center[1]).powi(2) + (v[2] - center[2]).powi(2)).sqrt();
                    let wgt = (1.0 - d / scale).exp();
                    for (c, f) in cloud.feature(*i).iter().enumerate() {
                        out[base + c] += wgt * f;
                    }
                }
                for c in 0..ch {
                    out[base + c] /= members.len() as f64;
                }
            }
        }
    }
    out
}
