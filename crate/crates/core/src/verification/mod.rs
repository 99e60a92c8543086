//! Independent oracles for the accelerated kernels.
//!
//! Each oracle takes the slow, obvious route: Monte Carlo volume sampling for
//! IoU, Sutherland-Hodgman clipping for BEV polygons, exhaustive scans for
//! neighbor search, voxelization and RoI pooling, and central differences
//! for gradients. They share no code with the paths they check beyond the
//! basic geometry types.

mod brute;
mod clip;
mod montecarlo;
mod suite;

pub use brute::{brute_la_pool, brute_neighbors, brute_voxelize};
pub use clip::{clip_polygons, polygon_area};
pub use montecarlo::{mc_iou3d, McEstimate, McMode, OracleConfig};
pub use suite::{random_box_pair, random_overlapping_pair, run_suite, CheckResult, SuiteConfig};

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff<const N: usize>(f: impl Fn(&[f64; N]) -> f64, x: &[f64; N], h: f64) -> [f64; N] {
    std::array::from_fn(|i| {
        let (mut up, mut dn) = (*x, *x);
        up[i] += h;
        dn[i] -= h;
        (f(&up) - f(&dn)) / (2.0 * h)
    })
}
