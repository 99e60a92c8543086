//! Grid-based point downsampling: keep one point per occupied lattice cell.
//!
//! Two interchangeable strategies produce the same set of occupied cells:
//!
//! * [`Strategy::GridBuffer`] pre-allocates a dense buffer over the configured
//!   extents and lets the first writer claim each slot. Linear in the point
//!   count, but the buffer costs 4 bytes per lattice cell.
//! * [`Strategy::SortUnique`] sorts `(cell, index)` keys and keeps one entry
//!   per run. No dense buffer, `O(n log n)`.
//!
//! In deterministic mode the buffer keeps the lowest input index per cell and
//! the sort variant picks a seeded-uniform member of each cell, so results are
//! independent of the thread count.

use std::sync::atomic::{AtomicU32, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CellIndex, Lattice, Point3, PointCloud};
use crate::util::mix64;

/// Default cap on the number of grid buffer slots.
pub const DEFAULT_MAX_SLOTS: u64 = 1 << 31;

/// Bytes per grid buffer slot (a `u32` point index).
pub const SLOT_BYTES: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    GridBuffer,
    SortUnique,
}

/// Axis-aligned admissible region: minimum corner plus `(W, L, H)` size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extents {
    pub min: Point3,
    pub size: [f64; 3],
}

impl Extents {
    pub fn new(min: Point3, size: [f64; 3]) -> Result<Self> {
        for (name, v) in ["W", "L", "H"].into_iter().zip(size) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NonPositive { name, value: v });
            }
        }
        Ok(Self { min, size })
    }

    pub fn from_bounds(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        Self::new(
            Point3::from_array(min)?,
            [max[0] - min[0], max[1] - min[1], max[2] - min[2]],
        )
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let q = *p - self.min;
        (0..3).all(|a| q[a] >= 0.0 && q[a] <= self.size[a])
    }

    /// Cells per axis, `floor(size / r)`.
    pub fn cells_per_axis(&self, r: f64) -> [u64; 3] {
        // Guard against 6.0 / 0.1 style quotients landing just below an integer.
        self.size.map(|s| (s / r * (1.0 + 1e-12)).floor() as u64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingConfig {
    pub resolution: f64,
    pub extents: Option<Extents>,
    pub strategy: Strategy,
    pub seed: u64,
    pub deterministic: bool,
    pub max_slots: u64,
}

impl SamplingConfig {
    pub fn new(resolution: f64, strategy: Strategy) -> Self {
        Self {
            resolution,
            extents: None,
            strategy,
            seed: 0,
            deterministic: true,
            max_slots: DEFAULT_MAX_SLOTS,
        }
    }

    pub fn with_extents(mut self, extents: Extents) -> Self {
        self.extents = Some(extents);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_resolution(mut self, resolution: f64) -> Self {
        self.resolution = resolution;
        self
    }

    fn lattice(&self) -> Result<Lattice> {
        let origin = self.extents.map_or(Point3::ORIGIN, |e| e.min);
        Lattice::new(origin, self.resolution)
    }

    /// Dense buffer geometry for these extents; fails if over the slot cap.
    pub fn buffer_plan(&self) -> Result<BufferPlan> {
        let ext = self.extents.ok_or(Error::MissingExtents("GridBuffer"))?;
        let lattice = self.lattice()?;
        let dims = ext.cells_per_axis(self.resolution);
        let slots = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .unwrap_or(u64::MAX);
        if slots > self.max_slots {
            return Err(Error::Capacity {
                requested: slots,
                cap: self.max_slots,
            });
        }
        Ok(BufferPlan {
            lattice,
            dims,
            slots,
            bytes: slots * SLOT_BYTES,
        })
    }
}

/// Shape and memory cost of the dense grid buffer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BufferPlan {
    pub lattice: Lattice,
    pub dims: [u64; 3],
    pub slots: u64,
    pub bytes: u64,
}

impl BufferPlan {
    #[inline]
    fn slot_of(&self, p: &Point3) -> Option<usize> {
        let c = self.lattice.cell_of(p);
        let [nx, ny, nz] = self.dims.map(|d| d as i64);
        if c.i < 0 || c.j < 0 || c.k < 0 || c.i >= nx || c.j >= ny || c.k >= nz {
            return None;
        }
        Some(((c.i * ny + c.j) * nz + c.k) as usize)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleResult {
    /// Selected input indices, one per occupied cell.
    pub indices: Vec<usize>,
    /// Cell of each selected point, parallel to `indices`.
    pub occupied_cells: Vec<CellIndex>,
    /// Points rejected for falling outside the configured extents.
    pub dropped: usize,
    /// Size of the dense buffer that was allocated, zero for the sort variant.
    pub buffer_bytes: u64,
}

impl SampleResult {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Every point selected, each in its own cell.
    pub fn identity(cloud: &PointCloud, r: f64) -> Result<Self> {
        let lattice = Lattice::new(Point3::ORIGIN, r)?;
        Ok(Self {
            indices: (0..cloud.len()).collect(),
            occupied_cells: cloud.points().iter().map(|p| lattice.cell_of(p)).collect(),
            dropped: 0,
            buffer_bytes: 0,
        })
    }
}

/// Dispatch on `cfg.strategy`.
pub fn downsample(cloud: &PointCloud, cfg: &SamplingConfig) -> Result<SampleResult> {
    match cfg.strategy {
        Strategy::GridBuffer => downsample_grid_buffer(cloud, cfg),
        Strategy::SortUnique => downsample_sort_unique(cloud, cfg),
    }
}

const EMPTY: u32 = 0;
const NOT_ADMITTED: usize = usize::MAX;

/// Slots hold `u32::MAX - index` so a zeroed allocation means "empty" and
/// `fetch_max` keeps the lowest index.
#[inline]
fn encode(i: usize) -> u32 {
    u32::MAX - i as u32
}

#[inline]
fn decode(v: u32) -> usize {
    (u32::MAX - v) as usize
}

fn zeroed_slots(n: usize) -> Box<[AtomicU32]> {
    let raw = Box::<[AtomicU32]>::new_zeroed_slice(n);
    // SAFETY: AtomicU32 has the same representation as u32, for which the
    // all-zero bit pattern is a valid value.
    unsafe { raw.assume_init() }
}

/// Write-once dense buffer downsampling.
pub fn downsample_grid_buffer(cloud: &PointCloud, cfg: &SamplingConfig) -> Result<SampleResult> {
    let plan = cfg.buffer_plan()?;
    if cloud.len() >= u32::MAX as usize {
        return Err(Error::Capacity {
            requested: cloud.len() as u64,
            cap: u32::MAX as u64 - 1,
        });
    }
    let buffer = zeroed_slots(plan.slots as usize);
    let points = cloud.points();

    let slots: Vec<usize> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let Some(s) = plan.slot_of(p) else {
                return NOT_ADMITTED;
            };
            let claim = encode(i);
            if cfg.deterministic {
                buffer[s].fetch_max(claim, Ordering::Relaxed);
            } else {
                let _ = buffer[s].compare_exchange(EMPTY, claim, Ordering::Relaxed, Ordering::Relaxed);
            }
            s
        })
        .collect();

    let dropped = slots.iter().filter(|&&s| s == NOT_ADMITTED).count();
    let indices: Vec<usize> = slots
        .par_iter()
        .enumerate()
        .filter(|&(i, &s)| s != NOT_ADMITTED && decode(buffer[s].load(Ordering::Relaxed)) == i)
        .map(|(i, _)| i)
        .collect();
    let occupied_cells = indices.iter().map(|&i| plan.lattice.cell_of(&points[i])).collect();

    Ok(SampleResult {
        indices,
        occupied_cells,
        dropped,
        buffer_bytes: plan.bytes,
    })
}

/// Sort-by-cell downsampling with no dense buffer.
pub fn downsample_sort_unique(cloud: &PointCloud, cfg: &SamplingConfig) -> Result<SampleResult> {
    let lattice = cfg.lattice()?;
    // With extents, admit exactly the cells the dense buffer would cover.
    let bounds = cfg.extents.map(|e| e.cells_per_axis(cfg.resolution).map(|d| d as i64));
    let admitted = |c: &CellIndex| match bounds {
        None => true,
        Some([nx, ny, nz]) => c.i >= 0 && c.j >= 0 && c.k >= 0 && c.i < nx && c.j < ny && c.k < nz,
    };

    let mut keys: Vec<(CellIndex, u32)> = cloud
        .points()
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let c = lattice.cell_of(p);
            admitted(&c).then_some((c, i as u32))
        })
        .collect();
    let dropped = cloud.len() - keys.len();
    keys.par_sort_unstable();

    let seed = if cfg.deterministic { cfg.seed } else { rand::random() };

    let mut indices = Vec::new();
    let mut occupied_cells = Vec::new();
    let mut start = 0;
    while start < keys.len() {
        let cell = keys[start].0;
        let mut end = start + 1;
        while end < keys.len() && keys[end].0 == cell {
            end += 1;
        }
        let run = (end - start) as u64;
        let pick = if run == 1 {
            0
        } else {
            (mix64(seed ^ cell_hash(&cell)) % run) as usize
        };
        indices.push(keys[start + pick].1 as usize);
        occupied_cells.push(cell);
        start = end;
    }

    Ok(SampleResult {
        indices,
        occupied_cells,
        dropped,
        buffer_bytes: 0,
    })
}

fn cell_hash(c: &CellIndex) -> u64 {
    mix64(mix64(mix64(c.i as u64) ^ c.j as u64) ^ c.k as u64)
}

/// Copy the selected points and their features, in result order.
pub fn gather(cloud: &PointCloud, result: &SampleResult) -> Result<PointCloud> {
    let c = cloud.channels();
    let mut points = Vec::with_capacity(result.indices.len());
    let mut features = Vec::with_capacity(result.indices.len() * c);
    for &i in &result.indices {
        if i >= cloud.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: cloud.len(),
            });
        }
        points.push(cloud.point(i));
        features.extend_from_slice(cloud.feature(i));
    }
    PointCloud::new(points, c, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z).unwrap()
    }

    fn cube(n: usize, side: f64, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::from_points(
            (0..n)
                .map(|_| {
                    p(
                        rng.random_range(0.0..side),
                        rng.random_range(0.0..side),
                        rng.random_range(0.0..side),
                    )
                })
                .collect(),
        )
    }

    fn cfg(r: f64, strategy: Strategy, side: f64) -> SamplingConfig {
        SamplingConfig::new(r, strategy).with_extents(Extents::new(Point3::ORIGIN, [side; 3]).unwrap())
    }

    #[test]
    fn single_cell_keeps_lowest_index() {
        let cloud = PointCloud::from_points((0..5).map(|i| p(0.01 * i as f64 + 0.01, 0.02, 0.03)).collect());
        let res = downsample_grid_buffer(&cloud, &cfg(0.1, Strategy::GridBuffer, 1.0)).unwrap();
        assert_eq!(res.indices, vec![0]);
        assert_eq!(res.occupied_cells, vec![CellIndex::new(0, 0, 0)]);
    }

    #[test]
    fn distinct_cells_are_both_kept() {
        let cloud = PointCloud::from_points(vec![p(0.05, 0.05, 0.05), p(0.15, 0.05, 0.05)]);
        let res = downsample_grid_buffer(&cloud, &cfg(0.1, Strategy::GridBuffer, 1.0)).unwrap();
        assert_eq!(res.indices, vec![0, 1]);
        assert_eq!(
            res.occupied_cells,
            vec![CellIndex::new(0, 0, 0), CellIndex::new(1, 0, 0)]
        );
    }

    #[test]
    fn buffer_memory_arithmetic() {
        let c = SamplingConfig::new(0.1, Strategy::GridBuffer)
            .with_extents(Extents::new(Point3::ORIGIN, [150.0, 150.0, 6.0]).unwrap());
        let plan = c.buffer_plan().unwrap();
        assert_eq!(plan.dims, [1500, 1500, 60]);
        assert_eq!(plan.slots, 135_000_000);
        assert_eq!(plan.bytes, 540_000_000);
    }

    #[test]
    fn capacity_is_enforced() {
        let mut c = cfg(0.1, Strategy::GridBuffer, 10.0);
        c.max_slots = 999_999;
        let cloud = PointCloud::from_points(vec![p(1.0, 1.0, 1.0)]);
        match downsample_grid_buffer(&cloud, &c) {
            Err(Error::Capacity { requested, cap }) => {
                assert_eq!(requested, 1_000_000);
                assert_eq!(cap, 999_999);
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn buffer_requires_extents() {
        let c = SamplingConfig::new(0.1, Strategy::GridBuffer);
        assert!(matches!(
            downsample_grid_buffer(&PointCloud::default(), &c),
            Err(Error::MissingExtents(_))
        ));
    }

    #[test]
    fn out_of_extents_points_are_dropped_and_counted() {
        let cloud = PointCloud::from_points(vec![p(0.5, 0.5, 0.5), p(-0.5, 0.5, 0.5), p(1.5, 0.5, 0.5)]);
        for s in [Strategy::GridBuffer, Strategy::SortUnique] {
            let res = downsample(&cloud, &cfg(0.1, s, 1.0)).unwrap();
            assert_eq!(res.indices, vec![0]);
            assert_eq!(res.dropped, 2);
        }
    }

    #[test]
    fn sort_unique_examples() {
        let cloud = PointCloud::from_points(vec![p(0.01, 0.0, 0.0), p(0.02, 0.0, 0.0), p(0.15, 0.0, 0.0)]);
        let res = downsample_sort_unique(&cloud, &SamplingConfig::new(0.1, Strategy::SortUnique)).unwrap();
        assert_eq!(res.len(), 2);
        assert_eq!(res.buffer_bytes, 0);

        let empty =
            downsample_sort_unique(&PointCloud::default(), &SamplingConfig::new(0.1, Strategy::SortUnique)).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn sort_unique_matches_brute_force_occupancy() {
        let cloud = cube(10_000, 10.0, 7);
        let r = 0.5;
        let res = downsample_sort_unique(&cloud, &SamplingConfig::new(r, Strategy::SortUnique)).unwrap();
        let brute: HashSet<CellIndex> = cloud
            .points()
            .iter()
            .map(|q| crate::geom::cell_of(q, r).unwrap())
            .collect();
        let got: HashSet<CellIndex> = res.occupied_cells.iter().copied().collect();
        assert_eq!(got.len(), res.len());
        assert_eq!(got, brute);
    }

    #[test]
    fn sort_unique_choice_is_seeded_and_spread() {
        // 40 points in one cell: different seeds should pick different members.
        let cloud = PointCloud::from_points((0..40).map(|i| p(0.001 * i as f64, 0.0, 0.0)).collect());
        let picks: HashSet<usize> = (0..64)
            .map(|seed| {
                let c = SamplingConfig::new(1.0, Strategy::SortUnique).with_seed(seed);
                downsample_sort_unique(&cloud, &c).unwrap().indices[0]
            })
            .collect();
        assert!(picks.len() > 10, "only {} distinct winners", picks.len());
        let c = SamplingConfig::new(1.0, Strategy::SortUnique).with_seed(3);
        assert_eq!(
            downsample_sort_unique(&cloud, &c).unwrap(),
            downsample_sort_unique(&cloud, &c).unwrap()
        );
    }

    #[test]
    fn strategies_agree_on_cells() {
        let cloud = cube(5_000, 8.0, 11);
        let a = downsample(&cloud, &cfg(0.4, Strategy::GridBuffer, 8.0)).unwrap();
        let b = downsample(&cloud, &cfg(0.4, Strategy::SortUnique, 8.0)).unwrap();
        let sa: HashSet<_> = a.occupied_cells.iter().collect();
        let sb: HashSet<_> = b.occupied_cells.iter().collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn non_deterministic_mode_still_one_per_cell() {
        let cloud = cube(5_000, 4.0, 5);
        let mut c = cfg(0.5, Strategy::GridBuffer, 4.0);
        c.deterministic = false;
        let res = downsample(&cloud, &c).unwrap();
        let mut seen = HashMap::new();
        for (&i, cell) in res.indices.iter().zip(&res.occupied_cells) {
            assert!(seen.insert(*cell, i).is_none());
        }
        assert_eq!(seen.len(), 512);
    }

    #[test]
    fn gather_examples() {
        let cloud = PointCloud::from_rows(
            vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(2.0, 0.0, 0.0)],
            &[vec![1.0], vec![2.0], vec![3.0]],
        )
        .unwrap();
        let id = SampleResult::identity(&cloud, 0.5).unwrap();
        assert_eq!(gather(&cloud, &id).unwrap(), cloud);

        let empty = gather(&cloud, &SampleResult::default()).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.channels(), 1);

        let picked = SampleResult {
            indices: vec![2, 0],
            ..Default::default()
        };
        let g = gather(&cloud, &picked).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.feature(0), &[3.0]);

        let bad = SampleResult {
            indices: vec![3],
            ..Default::default()
        };
        assert!(matches!(
            gather(&cloud, &bad),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn downsampling_is_idempotent() {
        let cloud = cube(3_000, 5.0, 2);
        for s in [Strategy::GridBuffer, Strategy::SortUnique] {
            let c = cfg(0.5, s, 5.0);
            let once = gather(&cloud, &downsample(&cloud, &c).unwrap()).unwrap();
            let twice = gather(&once, &downsample(&once, &c).unwrap()).unwrap();
            let key = |q: &Point3| q.to_array().map(f64::to_bits);
            let a: HashSet<_> = once.points().iter().map(key).collect();
            let b: HashSet<_> = twice.points().iter().map(key).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn result_is_independent_of_thread_count() {
        let cloud = cube(20_000, 6.0, 9);
        let c = cfg(0.3, Strategy::GridBuffer, 6.0);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| downsample(&cloud, &c).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(8));
    }
}
