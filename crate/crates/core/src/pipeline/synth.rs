use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{OrientedBox, Point3, PointCloud};

/// Ground height of synthetic scenes.
pub const GROUND_Z: f64 = -1.7;

/// Surface samples are pulled this far toward the box center so they lie
/// strictly inside.
const SHRINK: f64 = 0.98;

/// Seeded synthetic lidar-like scene: a noisy ground plane over the default
/// crop region plus samples on the surfaces of car-sized boxes.
///
/// Half of the points go to the boxes when there are any. Each point carries
/// one reflectance feature in `[0, 1)`.
pub fn synth_scene(n_points: usize, n_boxes: usize, seed: u64) -> (PointCloud, Vec<OrientedBox>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes: Vec<OrientedBox> = (0..n_boxes)
        .map(|_| {
            let (w, l, h) = (
                rng.random_range(1.5..2.0),
                rng.random_range(3.5..4.5),
                rng.random_range(1.4..1.7),
            );
            OrientedBox::new(
                rng.random_range(5.0..65.0),
                rng.random_range(-35.0..35.0),
                GROUND_Z + h / 2.0,
                w,
                l,
                h,
                rng.random_range(-PI..PI),
            )
            .expect("finite positive box")
        })
        .collect();

    let on_boxes = if n_boxes == 0 { 0 } else { n_points / 2 };
    let mut points = Vec::with_capacity(n_points);
    let mut features = Vec::with_capacity(n_points);
    for _ in 0..n_points - on_boxes {
        let p = Point3::new(
            rng.random_range(0.0..70.0),
            rng.random_range(-40.0..40.0),
            GROUND_Z + rng.random_range(-0.03..0.03),
        )
        .expect("finite");
        points.push(p);
        features.push(rng.random::<f64>());
    }
    for i in 0..on_boxes {
        // Round-robin so every box gets its share.
        let b = &boxes[i % n_boxes];
        points.push(surface_sample(b, &mut rng));
        features.push(rng.random::<f64>());
    }
    let cloud = PointCloud::new(points, 1, features).expect("consistent shape");
    (cloud, boxes)
}

/// Uniform sample on the top and side faces of `b`, shrunk toward the center.
fn surface_sample(b: &OrientedBox, rng: &mut ChaCha8Rng) -> Point3 {
    let [w, l, h] = b.dims();
    let faces = [w * l, w * h, w * h, l * h, l * h];
    let total: f64 = faces.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut face = 0;
    while face + 1 < faces.len() && pick >= faces[face] {
        pick -= faces[face];
        face += 1;
    }
    let u = rng.random_range(-0.5..0.5);
    let v = rng.random_range(-0.5..0.5);
    let local = match face {
        0 => [u * w, v * l, 0.5 * h],
        1 => [u * w, 0.5 * l, v * h],
        2 => [u * w, -0.5 * l, v * h],
        3 => [0.5 * w, u * l, v * h],
        _ => [-0.5 * w, u * l, v * h],
    }
    .map(|c| c * SHRINK);
    let (s, c) = b.yaw().sin_cos();
    let ctr = b.center();
    Point3::new(
        ctr.x() + c * local[0] - s * local[1],
        ctr.y() + s * local[0] + c * local[1],
        ctr.z() + local[2],
    )
    .expect("finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roipool::points_in_box;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_scene(2000, 3, 11);
        let b = synth_scene(2000, 3, 11);
        assert_eq!(a, b);
        assert_ne!(a.0, synth_scene(2000, 3, 12).0);
    }

    #[test]
    fn no_boxes_means_ground_only() {
        let (cloud, boxes) = synth_scene(500, 0, 1);
        assert!(boxes.is_empty());
        assert_eq!(cloud.len(), 500);
        assert!(cloud.points().iter().all(|p| (p.z() - GROUND_Z).abs() <= 0.03));
    }

    #[test]
    fn every_box_contains_a_sample() {
        for seed in 0..5 {
            let (cloud, boxes) = synth_scene(100 * 7, 7, seed);
            for b in &boxes {
                assert!(!points_in_box(&cloud, b).is_empty(), "seed {seed}: {b:?}");
            }
        }
    }
}
