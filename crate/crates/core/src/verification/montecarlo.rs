use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::geom::{box_corners_bev, OrientedBox};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum McMode {
    /// One jittered sample per cell of a regular grid over the bounding volume.
    Stratified,
    /// Independent uniform samples over the bounding volume.
    Plain,
}

#[derive(Clone, Copy, Debug)]
pub struct OracleConfig {
    pub samples: usize,
    pub seed: u64,
    /// Finite-difference step.
    pub h: f64,
    pub mode: McMode,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0x5eed,
            h: 1e-5,
            mode: McMode::Stratified,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct McEstimate {
    pub iou: f64,
    pub std_err: f64,
    pub samples: usize,
}

const REPLICATES: usize = 8;
const CHUNK: usize = 1 << 16;

struct Inside {
    c: [f64; 3],
    cos: f64,
    sin: f64,
    half: [f64; 3],
}

impl Inside {
    fn new(b: &OrientedBox) -> Self {
        let p = b.params();
        Self {
            c: [p[0], p[1], p[2]],
            cos: p[6].cos(),
            sin: p[6].sin(),
            half: [p[3] / 2.0, p[4] / 2.0, p[5] / 2.0],
        }
    }

    fn contains(&self, q: [f64; 3]) -> bool {
        let dx = q[0] - self.c[0];
        let dy = q[1] - self.c[1];
        let u = self.cos * dx + self.sin * dy;
        let v = self.cos * dy - self.sin * dx;
        u.abs() <= self.half[0] && v.abs() <= self.half[1] && (q[2] - self.c[2]).abs() <= self.half[2]
    }
}

fn bounds(a: &OrientedBox, b: &OrientedBox) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for bx in [a, b] {
        for c in box_corners_bev(bx) {
            for k in 0..2 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        let p = bx.params();
        lo[2] = lo[2].min(p[2] - p[5] / 2.0);
        hi[2] = hi[2].max(p[2] + p[5] / 2.0);
    }
    (lo, hi)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Monte Carlo estimate of the 3D IoU of two boxes.
///
/// Sampling runs in parallel on counter-addressed RNG streams, so the result
/// depends only on the inputs and `cfg`, not on the thread count.
pub fn mc_iou3d(a: &OrientedBox, b: &OrientedBox, cfg: &OracleConfig) -> McEstimate {
    let (lo, hi) = bounds(a, b);
    let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let (ia, ib) = (Inside::new(a), Inside::new(b));
    let classify = |q: [f64; 3]| -> (u64, u64) {
        let (x, y) = (ia.contains(q), ib.contains(q));
        ((x && y) as u64, (x || y) as u64)
    };
    match cfg.mode {
        McMode::Plain => {
            let chunks = cfg.samples.div_ceil(CHUNK);
            let (both, either) = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = rng_for(cfg.seed, c as u64);
                    let n = CHUNK.min(cfg.samples - c * CHUNK);
                    let mut acc = (0u64, 0u64);
                    for _ in 0..n {
                        let q: [f64; 3] = std::array::from_fn(|k| lo[k] + ext[k] * rng.random::<f64>());
                        let (i, u) = classify(q);
                        acc.0 += i;
                        acc.1 += u;
                    }
                    acc
                })
                .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
            let iou = if either == 0 { 0.0 } else { both as f64 / either as f64 };
            let std_err = if either == 0 {
                0.0
            } else {
                (iou * (1.0 - iou) / either as f64).sqrt()
            };
            McEstimate {
                iou,
                std_err,
                samples: cfg.samples,
            }
        }
        McMode::Stratified => {
            let per = (cfg.samples / REPLICATES).max(1) as f64;
            let cell = (ext[0] * ext[1] * ext[2] / per).cbrt();
            let n: [usize; 3] = std::array::from_fn(|k| ((ext[k] / cell).round() as usize).max(1));
            let step: [f64; 3] = std::array::from_fn(|k| ext[k] / n[k] as f64);
            // One work item per (replicate, x-slab).
            let counts: Vec<(u64, u64)> = (0..REPLICATES * n[0])
                .into_par_iter()
                .map(|item| {
                    let ix = item % n[0];
                    let mut rng = rng_for(cfg.seed, item as u64);
                    let mut acc = (0u64, 0u64);
                    for iy in 0..n[1] {
                        for iz in 0..n[2] {
                            let idx = [ix, iy, iz];
                            let q: [f64; 3] =
                                std::array::from_fn(|k| lo[k] + step[k] * (idx[k] as f64 + rng.random::<f64>()));
                            let (i, u) = classify(q);
                            acc.0 += i;
                            acc.1 += u;
                        }
                    }
                    acc
                })
                .collect();
            let mut reps = [(0u64, 0u64); REPLICATES];
            for (item, c) in counts.iter().enumerate() {
                let r = item / n[0];
                reps[r].0 += c.0;
                reps[r].1 += c.1;
            }
            let (both, either) = reps.iter().fold((0, 0), |s, r| (s.0 + r.0, s.1 + r.1));
            let iou = if either == 0 { 0.0 } else { both as f64 / either as f64 };
            let ratios: Vec<f64> = reps
                .iter()
                .map(|r| if r.1 == 0 { 0.0 } else { r.0 as f64 / r.1 as f64 })
                .collect();
            let m = ratios.iter().sum::<f64>() / REPLICATES as f64;
            let var = ratios.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (REPLICATES - 1) as f64;
            McEstimate {
                iou,
                std_err: (var / REPLICATES as f64).sqrt(),
                samples: REPLICATES * n[0] * n[1] * n[2],
            }
        }
    }
}
