//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

use std::f64::consts::{E, FRAC_1_SQRT_2, FRAC_PI_4, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use dynvox::iou::{bev_intersection_polygon, iou3d, iou3d_grad, iou_loss_params, shoelace_area};
use dynvox::losses::{rot_loss, smooth_l1, stage1_loss, stage2_loss, LossWeights};
use dynvox::pipeline::{bench, run_forward, synth_scene, BenchConfig, ModelWeights, PipelineConfig};
use dynvox::pointconv::{ConvKernel, DenseGrid};
use dynvox::roipool::{la_pool, refine_head, PoolGeometry, PooledRoi, RefineHeadWeights, RoiPoolConfig};
use dynvox::sampling::{downsample_grid_buffer, downsample_sort_unique, Extents, SamplingConfig, Strategy};
use dynvox::verification::{
    brute_la_pool, brute_neighbors, brute_voxelize, clip_polygons, finite_diff, mc_iou3d, polygon_area,
    random_box_pair, random_overlapping_pair, OracleConfig,
};
use dynvox::voxelization::{radius_neighbors, voxelize, AccelGrid, GridLayout, VoxelizationConfig};
use dynvox::{box_corners_bev, OrientedBox, Point3, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bx(x: f64, y: f64, z: f64, w: f64, l: f64, h: f64, r: f64) -> OrientedBox {
    OrientedBox::new(x, y, z, w, l, h, r).unwrap()
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, lo: [f64; 3], hi: [f64; 3], channels: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(lo[0]..hi[0]),
                rng.random_range(lo[1]..hi[1]),
                rng.random_range(lo[2]..hi[2]),
            )
            .unwrap()
        })
        .collect();
    let feats = (0..n * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    PointCloud::new(pts, channels, feats).unwrap()
}

fn iou_oracle_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<_> = (0..1000).map(|_| random_overlapping_pair(&mut rng)).collect();
    let t = Instant::now();
    let (worst, failures) = single_thread(|| {
        let mut worst = 0.0f64;
        let mut failures = 0;
        for (n, (p, g)) in pairs.iter().enumerate() {
            let cfg = OracleConfig {
                samples: 1_000_000,
                seed: n as u64,
                ..Default::default()
            };
            let d = (iou3d(p, g).iou3d - mc_iou3d(p, g, &cfg).iou).abs();
            worst = worst.max(d);
            failures += (d >= 2e-3) as usize;
        }
        (worst, failures)
    });
    let secs = t.elapsed().as_secs_f64();
    ensure(
        failures == 0 && secs < 300.0,
        format!("1000 pairs, max |iou - mc| = {worst:.2e} (< 2e-3), {failures} failures, {secs:.1}s single-threaded"),
    )
}

fn polygon_cross_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut count_mismatch, mut overlapping) = (0.0f64, 0usize, 0usize);
    for _ in 0..10_000 {
        let (p, g) = random_box_pair(&mut rng);
        let poly = bev_intersection_polygon(&p, &g);
        let clipped = clip_polygons(&box_corners_bev(&p), &box_corners_bev(&g));
        worst = worst.max((shoelace_area(&poly) - polygon_area(&clipped)).abs());
        count_mismatch += (poly.len() != clipped.len()) as usize;
        overlapping += !poly.is_empty() as usize;
    }
    ensure(
        worst < 1e-7 && count_mismatch == 0,
        format!("10000 pairs ({overlapping} overlapping), max area diff {worst:.2e}, vertex-count mismatches {count_mismatch}"),
    )
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut good, mut flagged) = (0usize, 0usize);
    for _ in 0..1000 {
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
    let smooth = 1000 - flagged;
    ensure(
        good as f64 >= 0.99 * smooth as f64 && flagged < 20,
        format!(
            "{good}/{smooth} smooth pairs within rel. 1e-3 of finite differences, {flagged}/1000 flagged non-smooth"
        ),
    )
}

fn analytic_spot_values() -> Outcome {
    let a = bx(1.3, -0.7, 0.2, 1.7, 4.1, 1.45, 0.83);
    let same = iou3d(&a, &a).iou3d;
    let third = iou3d(
        &bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0),
        &bx(1.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0),
    )
    .iou3d;
    let unit = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
    let rotated = iou3d(&unit, &unit.with_yaw(FRAC_PI_4).unwrap()).iou3d;
    let mc = mc_iou3d(&unit, &unit.with_yaw(FRAC_PI_4).unwrap(), &OracleConfig::default()).iou;
    ensure(
        same == 1.0
            && (third - 1.0 / 3.0).abs() < 1e-9
            && (rotated - FRAC_1_SQRT_2).abs() < 1e-3
            && (rotated - mc).abs() < 1e-3,
        format!("identical {same}, offset {third:.12}, pi/4 {rotated:.6} (monte carlo {mc:.6})"),
    )
}

fn sampling_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad = Vec::new();
    for c in 0..100 {
        let n = 10f64.powf(rng.random_range(3.0..=5.0)).round() as usize;
        let side = rng.random_range(5.0..40.0);
        let r = rng.random_range(0.1..1.0);
        let cloud = random_cloud(&mut rng, n, [-side; 3], [side; 3], 0);
        let ext = Extents::from_bounds([-side; 3], [side; 3]).unwrap();
        let buf_cfg = SamplingConfig::new(r, Strategy::GridBuffer)
            .with_extents(ext)
            .with_seed(c);
        let sort_cfg = SamplingConfig {
            strategy: Strategy::SortUnique,
            ..buf_cfg.clone()
        };
        let a = downsample_grid_buffer(&cloud, &buf_cfg).unwrap();
        let b = downsample_sort_unique(&cloud, &sort_cfg).unwrap();
        let mut ca = a.occupied_cells.clone();
        let mut cb = b.occupied_cells.clone();
        ca.sort();
        cb.sort();
        let unique = ca.windows(2).all(|w| w[0] != w[1]) && cb.windows(2).all(|w| w[0] != w[1]);
        let members = a.indices.iter().chain(&b.indices).all(|&i| i < n);
        let lattice = dynvox::Lattice::new(ext.min, r).unwrap();
        let cells_match = a
            .indices
            .iter()
            .zip(&a.occupied_cells)
            .chain(b.indices.iter().zip(&b.occupied_cells))
            .all(|(&i, c)| lattice.cell_of(&cloud.point(i)) == *c);
        if ca != cb || !unique || !members || !cells_match {
            bad.push(c);
        }
    }
    ensure(
        bad.is_empty(),
        format!("100 clouds of 1e3-1e5 points, failing clouds {bad:?}"),
    )
}

fn memory_arithmetic() -> Outcome {
    let ext = Extents::from_bounds([0.0, 0.0, 0.0], [150.0, 150.0, 6.0]).unwrap();
    let cfg = SamplingConfig::new(0.1, Strategy::GridBuffer).with_extents(ext);
    let cloud = PointCloud::from_points(vec![
        Point3::new(1.0, 2.0, 3.0).unwrap(),
        Point3::new(75.0, 75.0, 3.0).unwrap(),
    ]);
    let r = downsample_grid_buffer(&cloud, &cfg).unwrap();
    let rel = (r.buffer_bytes as f64 - 500e6).abs() / 500e6;
    ensure(
        r.buffer_bytes == 540_000_000 && rel <= 0.10,
        format!(
            "150x150x6 m at 0.1 m -> {} bytes, {:.1}% from 500 MB",
            r.buffer_bytes,
            rel * 100.0
        ),
    )
}

fn complexity_scaling() -> Outcome {
    let t = Instant::now();
    let table = bench(
        &BenchConfig::default(),
        &[10_000, 31_623, 100_000, 316_228, 1_000_000],
        5,
    )
    .map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let buf = table.slopes["downsample_buffer"];
    let sort = table.slopes["downsample_sort"];
    ensure(
        (0.8..=1.3).contains(&buf) && (0.9..=1.5).contains(&sort) && secs < 600.0,
        format!("slopes over 1e4..1e6: buffer {buf:.3} in [0.8, 1.3], sort {sort:.3} in [0.9, 1.5], {secs:.1}s"),
    )
}

fn voxelization_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut mismatched, mut worst) = (0usize, 0.0f64);
    for inst in 0..200 {
        let n = rng.random_range(0..=2000);
        let side = rng.random_range(0.5..3.0);
        let channels = rng.random_range(1..4);
        let cloud = random_cloud(&mut rng, n, [-side; 3], [side; 3], channels);
        let k = [1, 3, 5][inst % 3];
        let mut cfg = VoxelizationConfig::new(rng.random_range(0.05..1.5), k).unwrap();
        cfg.layout = if inst % 2 == 0 {
            GridLayout::Sorted
        } else {
            GridLayout::Dense
        };
        cfg.append_offsets = inst % 5 == 0;
        cfg.max_points_per_voxel = (inst % 7 == 0).then_some(3);
        let grid = AccelGrid::build(&cloud, cfg.voxel_size(), cfg.layout).unwrap();
        let center = if n > 0 && inst % 4 != 0 {
            cloud.point(rng.random_range(0..n))
        } else {
            Point3::new(rng.random_range(-side..side), rng.random_range(-side..side), 0.0).unwrap()
        };
        if radius_neighbors(&grid, &cloud, &center, cfg.radius) != brute_neighbors(&cloud, &center, cfg.radius) {
            mismatched += 1;
        }
        let a = voxelize(&cloud, &center, &cfg, &grid).unwrap();
        let b = brute_voxelize(&cloud, &center, &cfg).unwrap();
        worst = worst.max(
            a.data()
                .iter()
                .zip(b.data())
                .fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        );
    }
    ensure(
        mismatched == 0 && worst < 1e-6,
        format!("200 instances, {mismatched} neighbor-set mismatches, max feature diff {worst:.2e}"),
    )
}

fn pooling_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = RoiPoolConfig::default();
    let (mut worst, mut truncated) = (0.0f64, 0usize);
    for _ in 0..100 {
        let b = bx(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(0.5..4.0),
            rng.random_range(0.5..4.0),
            rng.random_range(0.5..3.0),
            rng.random_range(-PI..PI),
        );
        let n = rng.random_range(100..4000);
        let mut cloud = random_cloud(&mut rng, n, [-3.0; 3], [3.0; 3], 2);
        // Put one point at the center of a cell: weight e.
        let geo = PoolGeometry::new(&b, cfg.k);
        let c = geo.cell_center([2, 1, 3]);
        let (s, co) = b.yaw().sin_cos();
        let ctr = b.center();
        let (mut pts, ch, mut feats) = cloud.into_parts();
        pts.insert(
            0,
            Point3::new(
                ctr.x() + co * c[0] - s * c[1],
                ctr.y() + s * c[0] + co * c[1],
                ctr.z() + c[2],
            )
            .unwrap(),
        );
        feats.splice(0..0, [1.0, -1.0]);
        cloud = PointCloud::new(pts, ch, feats).unwrap();

        let pooled = la_pool(&cloud, &b, &cfg).unwrap();
        let direct = brute_la_pool(&cloud, &b, cfg.k, cfg.n_max);
        worst = worst.max(
            pooled
                .grid
                .data
                .iter()
                .zip(&direct)
                .fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        );
        let dense = brute_la_pool(&cloud, &b, cfg.k, usize::MAX);
        truncated += (dense != direct) as usize;
    }
    // d = 0 and d = r boundary weights.
    let geo = PoolGeometry::new(&bx(0.0, 0.0, 0.0, 2.0, 5.0, 1.0, 0.3), 5);
    let c = geo.cell_center([0, 4, 2]);
    let at_center = geo.weight(&c, [0, 4, 2]);
    let at_r = geo.weight(&[c[0] + geo.scale, c[1], c[2]], [0, 4, 2]);
    ensure(
        worst < 1e-6 && truncated > 0 && (at_center - E).abs() < 1e-15 && (at_r - 1.0).abs() < 1e-15,
        format!("100 RoIs, max diff {worst:.2e}, {truncated} exercising n_max truncation, w(d=0) = {at_center}, w(d=r) = {at_r}"),
    )
}

fn head_shape_trace() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let source = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
    let mut traces = Vec::new();
    for c in [1usize, 3, 16, 64] {
        let w = RefineHeadWeights::init(c, [8, 4], &[6], &mut rng);
        let grid = DenseGrid::new(5, c, (0..125 * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let out = refine_head(&PooledRoi { grid, source }, &w).map_err(|e| e.to_string())?;
        traces.push(out.spatial_trace);
    }
    let all_ok = traces.iter().all(|t| t == &vec![5, 3, 1]);

    let w = RefineHeadWeights::init(4, [8, 4], &[6], &mut rng);
    let wrong_side = PooledRoi {
        grid: DenseGrid::new(4, 4, vec![0.0; 64 * 4]).unwrap(),
        source,
    };
    let wrong_channels = PooledRoi {
        grid: DenseGrid::new(5, 3, vec![0.0; 125 * 3]).unwrap(),
        source,
    };
    let mut bad_kernel = w.clone();
    bad_kernel.convs[0] = ConvKernel::zeros(5, 4, 8);
    let ok_input = PooledRoi {
        grid: DenseGrid::new(5, 4, vec![0.0; 125 * 4]).unwrap(),
        source,
    };
    let rejected = refine_head(&wrong_side, &w).is_err()
        && refine_head(&wrong_channels, &w).is_err()
        && refine_head(&ok_input, &bad_kernel).is_err();
    ensure(
        all_ok && rejected,
        format!("traces {traces:?}, mismatched shapes rejected: {rejected}"),
    )
}

fn loss_identities() -> Outcome {
    let w = LossWeights::default();
    let (a, b, c, d) = (0.37, 1.21, 0.64, 0.93);
    let s1 = stage1_loss(&[a], &[b], &[c], w).unwrap();
    let s2 = stage2_loss(&[a], &[b], &[c], &[d], w).unwrap();
    let checks = [
        rot_loss(0.8, 0.8) == 0.0,
        rot_loss(0.8 + PI, 0.8) < 1e-30,
        smooth_l1(1.0) == 0.5,
        (smooth_l1(1.0 - 1e-12) - 0.5).abs() < 1e-11 && (smooth_l1(1.0 + 1e-12) - 0.5).abs() < 1e-11,
        (s1 - (a + 2.0 * b + 0.5 * c)).abs() < 1e-15,
        (s2 - (a + 2.0 * b + 0.5 * c + 0.5 * d)).abs() < 1e-15,
    ];
    ensure(
        checks.iter().all(|&x| x),
        format!("identities {checks:?}, stage1 {s1}, stage2 {s2}"),
    )
}

fn forward_determinism() -> Outcome {
    let (cloud, _) = synth_scene(100_000, 20, 42);
    let base = PipelineConfig {
        seed: 42,
        deterministic: true,
        ..Default::default()
    };
    let weights = ModelWeights::init(&base, 7);
    let mut runs = Vec::new();
    for threads in [1, 4, 8, 8] {
        let cfg = PipelineConfig {
            threads,
            ..base.clone()
        };
        runs.push(run_forward(&cloud, &cfg, &weights).map_err(|e| e.to_string())?);
    }
    let bits = |o: &dynvox::pipeline::ForwardOutput| -> Vec<u64> {
        o.proposals
            .iter()
            .flat_map(|p| p.bbox.params().into_iter().chain([p.fg_logit, p.flip_logit]))
            .chain(
                o.refined
                    .iter()
                    .flat_map(|r| r.bbox.params().into_iter().chain([r.confidence, r.flip_logit])),
            )
            .map(f64::to_bits)
            .collect()
    };
    let first = bits(&runs[0]);
    let identical = runs.iter().all(|r| bits(r) == first);
    let counts = runs[0].report.key_point_counts.clone();
    let monotone = counts.windows(2).all(|w| w[1] <= w[0]);
    ensure(
        identical && monotone && !runs[0].proposals.is_empty(),
        format!(
            "100k-point scene, {} proposals, bitwise identical across threads 1/4/8 and reruns: {identical}, key-points per block {counts:?}",
            runs[0].proposals.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("iou oracle agreement", iou_oracle_agreement),
        ("polygon cross-check", polygon_cross_check),
        ("gradient correctness", gradient_correctness),
        ("analytic iou values", analytic_spot_values),
        ("sampling equivalence", sampling_equivalence),
        ("grid buffer memory", memory_arithmetic),
        ("complexity scaling", complexity_scaling),
        ("voxelization oracle", voxelization_oracle),
        ("pooling formula exactness", pooling_exactness),
        ("refine head shape trace", head_shape_trace),
        ("loss identities", loss_identities),
        ("forward determinism", forward_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|s| name.contains(s.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  {:>2}. {name}: {d} [{secs:.1}s]", n + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL  {:>2}. {name}: {d} [{secs:.1}s]", n + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
