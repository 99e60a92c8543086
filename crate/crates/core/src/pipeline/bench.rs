use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::sampling::{downsample_grid_buffer, downsample_sort_unique, gather, Extents, SamplingConfig, Strategy};
use crate::voxelization::{voxelize, AccelGrid, GridLayout, VoxelizationConfig};

/// Points per meter of strip length in benchmark clouds.
pub const BENCH_DENSITY: f64 = 1000.0;
const STRIP_WIDTH: f64 = 10.0;
const STRIP_HEIGHT: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub resolution: f64,
    /// Voxelization radius and kernel for the `voxelize` stage.
    pub radius: f64,
    pub k: usize,
    /// Every `stride`-th downsampled point becomes a voxelization center.
    pub stride: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            radius: 0.3,
            k: 3,
            stride: 16,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub n: usize,
    /// Median seconds per stage.
    pub median_secs: BTreeMap<String, f64>,
    pub buffer_bytes: u64,
    pub buffer_slots: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingTable {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of log(time) against log(n) per stage.
    pub slopes: BTreeMap<String, f64>,
}

/// Constant-density cloud on a strip whose length grows with `n`, emitted in
/// order along the strip so memory access stays local.
pub fn bench_cloud(n: usize, seed: u64) -> (PointCloud, Extents) {
    let len = (n as f64 / BENCH_DENSITY).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..len)).collect();
    xs.sort_by(f64::total_cmp);
    let pts = xs
        .into_iter()
        .map(|x| {
            Point3::new(
                x,
                rng.random_range(0.0..STRIP_WIDTH),
                rng.random_range(0.0..STRIP_HEIGHT),
            )
            .expect("finite")
        })
        .collect();
    let ext = Extents::from_bounds([0.0; 3], [len, STRIP_WIDTH, STRIP_HEIGHT]).expect("positive strip");
    (PointCloud::from_points(pts), ext)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Time downsampling (both strategies) and voxelization over `sizes`.
pub fn bench(cfg: &BenchConfig, sizes: &[usize], repeats: usize) -> Result<ScalingTable> {
    if sizes.len() < 2 || sizes.windows(2).any(|w| w[1] <= w[0]) || sizes[0] == 0 {
        return Err(Error::Config(
            "bench sizes must be positive, ascending and at least two".into(),
        ));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut rows = Vec::with_capacity(sizes.len());
        for &n in sizes {
            rows.push(bench_size(cfg, n, repeats)?);
        }
        let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let slopes = rows[0]
            .median_secs
            .keys()
            .map(|k| {
                let ys: Vec<f64> = rows.iter().map(|r| r.median_secs[k].max(1e-12).ln()).collect();
                (k.clone(), fit_slope(&xs, &ys))
            })
            .collect();
        Ok(ScalingTable { rows, slopes })
    })
}

fn bench_size(cfg: &BenchConfig, n: usize, repeats: usize) -> Result<BenchRow> {
    let (cloud, ext) = bench_cloud(n, cfg.seed ^ n as u64);
    let buffer = SamplingConfig::new(cfg.resolution, Strategy::GridBuffer)
        .with_extents(ext)
        .with_seed(cfg.seed);
    let sort = SamplingConfig {
        strategy: Strategy::SortUnique,
        ..buffer.clone()
    };
    let vcfg = VoxelizationConfig::new(cfg.radius, cfg.k)?.with_layout(GridLayout::Sorted);
    let plan = buffer.buffer_plan()?;

    let mut times: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for _ in 0..repeats {
        let t = Instant::now();
        let a = downsample_grid_buffer(&cloud, &buffer)?;
        let t_buf = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let b = downsample_sort_unique(&cloud, &sort)?;
        let t_sort = t.elapsed().as_secs_f64();
        debug_assert_eq!(a.len(), b.len());

        let keys = gather(&cloud, &a)?;
        let t = Instant::now();
        let grid = AccelGrid::build(&cloud, vcfg.voxel_size(), vcfg.layout)?;
        let mut occupied = 0.0;
        for c in keys.points().iter().step_by(cfg.stride.max(1)) {
            occupied += voxelize(&cloud, c, &vcfg, &grid)?.data().len() as f64;
        }
        std::hint::black_box(occupied);
        let t_vox = t.elapsed().as_secs_f64();

        for (k, v) in [
            ("downsample_buffer", t_buf),
            ("downsample_sort", t_sort),
            ("voxelize", t_vox),
            ("total", t_buf + t_sort + t_vox),
        ] {
            times.entry(k.to_string()).or_default().push(v);
        }
    }
    Ok(BenchRow {
        n,
        median_secs: times.into_iter().map(|(k, v)| (k, median(v))).collect(),
        buffer_bytes: plan.bytes,
        buffer_slots: plan.slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs: Vec<f64> = [1.0f64, 10.0, 100.0].iter().map(|x| x.ln()).collect();
        let ys: Vec<f64> = [1.0f64, 10.0, 100.0].iter().map(|x| (3.0 * x.powf(1.2)).ln()).collect();
        assert!((fit_slope(&xs, &ys) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn bench_cloud_is_inside_extents_and_seeded() {
        let (c, e) = bench_cloud(5000, 3);
        assert!(c.points().iter().all(|p| e.contains(p)));
        assert_eq!(bench_cloud(5000, 3).0, c);
        assert!((e.size[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn small_sweep_reports_buffer_bytes() {
        let t = bench(&BenchConfig::default(), &[2000, 4000], 1).unwrap();
        assert_eq!(t.rows.len(), 2);
        for r in &t.rows {
            assert_eq!(r.buffer_bytes, r.buffer_slots * 4);
        }
        assert!(t.slopes.contains_key("downsample_buffer"));
        assert!(bench(&BenchConfig::default(), &[4000, 2000], 1).is_err());
    }
}
