//! Seeded inputs shared by the benchmarks.

use dynvox::verification::random_overlapping_pair;
use dynvox::{OrientedBox, Point3, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` uniform points in a cube of half-side `side`, with `channels` features.
pub fn uniform_cloud(n: usize, side: f64, channels: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
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

pub fn box_pairs(n: usize, seed: u64) -> Vec<(OrientedBox, OrientedBox)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_overlapping_pair(&mut rng)).collect()
}
