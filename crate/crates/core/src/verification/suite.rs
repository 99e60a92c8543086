use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    brute_la_pool, brute_neighbors, brute_voxelize, clip_polygons, finite_diff, mc_iou3d, polygon_area, OracleConfig,
};
use crate::geom::{box_corners_bev, OrientedBox, Point3, PointCloud};
use crate::iou::{bev_intersection_polygon, iou3d, iou3d_grad, iou_loss_params, shoelace_area};
use crate::roipool::{la_pool, RoiPoolConfig};
use crate::sampling::{downsample, Extents, SamplingConfig, Strategy};
use crate::voxelization::{radius_neighbors, voxelize, AccelGrid, GridLayout, VoxelizationConfig};

/// Random box pair: dims in `[0.5, 5]`, yaw in `[-pi, pi]`, the second box's
/// center offset from the first by up to 3 per axis.
pub fn random_box_pair<R: Rng>(rng: &mut R) -> (OrientedBox, OrientedBox) {
    let mut one = |c: [f64; 3]| {
        OrientedBox::new(
            c[0],
            c[1],
            c[2],
            rng.random_range(0.5..=5.0),
            rng.random_range(0.5..=5.0),
            rng.random_range(0.5..=5.0),
            rng.random_range(-PI..=PI),
        )
        .expect("finite positive parameters")
    };
    let p = one([0.0; 3]);
    let g = one([0.0; 3]);
    let off: [f64; 3] = std::array::from_fn(|_| rng.random_range(-3.0..=3.0));
    let g = OrientedBox::from_params({
        let mut q = g.params();
        q[0] += off[0];
        q[1] += off[1];
        q[2] += off[2];
        q
    })
    .expect("finite offset");
    (p, g)
}

/// Random overlapping box pair (positive IoU).
pub fn random_overlapping_pair<R: Rng>(rng: &mut R) -> (OrientedBox, OrientedBox) {
    loop {
        let (p, g) = random_box_pair(rng);
        if iou3d(&p, &g).iou3d > 0.0 {
            return (p, g);
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteConfig {
    pub iou_pairs: usize,
    pub polygon_pairs: usize,
    pub mc_samples: usize,
    pub neighbor_instances: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            iou_pairs: 50,
            polygon_pairs: 2000,
            mc_samples: 1_000_000,
            neighbor_instances: 20,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, side: f64, channels: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(-side..side),
                rng.random_range(-side..side),
                rng.random_range(-side..side),
            )
            .expect("finite")
        })
        .collect();
    let feats = (0..n * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    PointCloud::new(pts, channels, feats).expect("consistent shape")
}

/// Compare every accelerated kernel against its oracle on seeded inputs.
pub fn run_suite(cfg: &SuiteConfig) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..cfg.iou_pairs {
        let (p, g) = random_overlapping_pair(&mut rng);
        let mc = mc_iou3d(
            &p,
            &g,
            &OracleConfig {
                samples: cfg.mc_samples,
                seed: rng.random(),
                ..Default::default()
            },
        );
        worst = worst.max((iou3d(&p, &g).iou3d - mc.iou).abs());
    }
    out.push(check(
        "iou_vs_monte_carlo",
        worst < 2e-3,
        format!("max |diff| {worst:.2e} over {} pairs", cfg.iou_pairs),
    ));

    let (mut worst, mut count_mismatch) = (0.0f64, 0usize);
    for _ in 0..cfg.polygon_pairs {
        let (p, g) = random_box_pair(&mut rng);
        let poly = bev_intersection_polygon(&p, &g);
        let clipped = clip_polygons(&box_corners_bev(&p), &box_corners_bev(&g));
        // Our polygon is in g's frame; area is frame independent.
        worst = worst.max((shoelace_area(&poly) - polygon_area(&clipped)).abs());
        count_mismatch += (poly.len() != clipped.len()) as usize;
    }
    out.push(check(
        "polygon_vs_clipping",
        worst < 1e-7 && count_mismatch == 0,
        format!("max area diff {worst:.2e}, vertex-count mismatches {count_mismatch}"),
    ));

    let (mut good, mut flagged, total) = (0usize, 0usize, cfg.iou_pairs.max(1) * 4);
    for _ in 0..total {
        let (p, g) = random_overlapping_pair(&mut rng);
        let ad = iou3d_grad(&p, &g);
        if !ad.smooth {
            flagged += 1;
            continue;
        }
        let mut x = [0.0; 14];
        x[..7].copy_from_slice(&p.params());
        x[7..].copy_from_slice(&g.params());
        let fd = finite_diff(iou_loss_params, &x, 1e-5);
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
        let err = ad.grad.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        good += (err < 1e-3) as usize;
    }
    let smooth = total - flagged;
    out.push(check(
        "gradient_vs_finite_differences",
        good as f64 >= 0.99 * smooth as f64 && (flagged as f64) < 0.02 * total as f64,
        format!("{good}/{smooth} within 1e-3, {flagged}/{total} flagged non-smooth"),
    ));

    let (mut mismatched, mut worst) = (0usize, 0.0f64);
    for _ in 0..cfg.neighbor_instances {
        let n = rng.random_range(1..=2000);
        let cloud = random_cloud(&mut rng, n, 2.0, 2);
        let radius = rng.random_range(0.1..1.5);
        let vcfg = VoxelizationConfig::new(radius, 3)
            .expect("valid")
            .with_layout(GridLayout::Sorted);
        let grid = AccelGrid::build(&cloud, vcfg.voxel_size(), vcfg.layout).expect("grid");
        let center = cloud.point(rng.random_range(0..n));
        if radius_neighbors(&grid, &cloud, &center, radius) != brute_neighbors(&cloud, &center, radius) {
            mismatched += 1;
        }
        let a = voxelize(&cloud, &center, &vcfg, &grid).expect("voxelize");
        let b = brute_voxelize(&cloud, &center, &vcfg).expect("brute");
        worst = worst.max(
            a.data()
                .iter()
                .zip(b.data())
                .fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        );
    }
    out.push(check(
        "voxelization_vs_brute_force",
        mismatched == 0 && worst < 1e-6,
        format!("{mismatched} neighbor-set mismatches, max feature diff {worst:.2e}"),
    ));

    let mut worst = 0.0f64;
    for _ in 0..cfg.neighbor_instances {
        let cloud = random_cloud(&mut rng, 1500, 2.0, 3);
        let (b, _) = random_box_pair(&mut rng);
        let pooled = la_pool(&cloud, &b, &RoiPoolConfig::default()).expect("pool");
        let direct = brute_la_pool(&cloud, &b, 5, 5);
        worst = worst.max(
            pooled
                .grid
                .data
                .iter()
                .zip(&direct)
                .fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        );
    }
    out.push(check(
        "roi_pool_vs_direct",
        worst < 1e-6,
        format!("max diff {worst:.2e}"),
    ));

    let mut differ = 0usize;
    for _ in 0..cfg.neighbor_instances {
        let cloud = random_cloud(&mut rng, 5000, 10.0, 0);
        let ext = Extents::from_bounds([-10.0; 3], [10.0; 3]).expect("extents");
        let base = SamplingConfig::new(0.5, Strategy::GridBuffer).with_extents(ext);
        let a = downsample(&cloud, &base).expect("buffer");
        let b = downsample(
            &cloud,
            &SamplingConfig {
                strategy: Strategy::SortUnique,
                ..base
            },
        )
        .expect("sort");
        let (mut ca, mut cb) = (a.occupied_cells.clone(), b.occupied_cells.clone());
        ca.sort();
        cb.sort();
        differ += (ca != cb) as usize;
    }
    out.push(check(
        "sampling_strategies_agree",
        differ == 0,
        format!("{differ} clouds with differing cell sets"),
    ));
    out
}
