//! Dynamic local voxelization.
//!
//! For every key-point, neighbors within radius `R` are found through an
//! [`AccelGrid`] and scattered into a `k x k x k` tensor whose voxels hold the
//! mean feature of the points that fall in them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CellIndex, Lattice, LocalVoxelTensor, Point3, PointCloud};

/// Storage layout of the acceleration grid.
///
/// Both layouts list the points of a cell in ascending index order, so
/// every query result (and every voxel tensor) is bit-identical across them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridLayout {
    /// Sorted occupied cells with binary-searched row ranges. Memory is
    /// proportional to the number of points.
    #[default]
    Sorted,
    /// Dense cell table over the cloud's bounding lattice. Constant-time
    /// lookups, memory proportional to the bounding volume. Falls back to
    /// `Sorted` when the table would exceed [`DENSE_CELL_CAP`].
    Dense,
}

/// Largest dense cell table (entries) before falling back to the sorted layout.
pub const DENSE_CELL_CAP: usize = 1 << 26;

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelizationConfig {
    pub radius: f64,
    pub k: usize,
    /// Points beyond this count in one voxel are ignored (lowest index first).
    pub max_points_per_voxel: Option<usize>,
    /// Append the mean offset `p - center` as three extra channels.
    pub append_offsets: bool,
    pub layout: GridLayout,
}

impl VoxelizationConfig {
    pub fn new(radius: f64, k: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::NonPositive {
                name: "radius",
                value: radius,
            });
        }
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::KernelResolution(k));
        }
        Ok(Self {
            radius,
            k,
            max_points_per_voxel: None,
            append_offsets: false,
            layout: GridLayout::Sorted,
        })
    }

    pub fn with_layout(mut self, layout: GridLayout) -> Self {
        self.layout = layout;
        self
    }

    /// Voxel edge length `2R / k`; also the acceleration grid cell size.
    pub fn voxel_size(&self) -> f64 {
        2.0 * self.radius / self.k as f64
    }

    pub fn output_channels(&self, input_channels: usize) -> usize {
        input_channels + if self.append_offsets { 3 } else { 0 }
    }
}

#[derive(Clone, Debug)]
enum Storage {
    Sorted {
        cells: Vec<CellIndex>,
        starts: Vec<u32>,
    },
    Dense {
        min: CellIndex,
        dims: [usize; 3],
        starts: Vec<u32>,
    },
}

/// Partition of point indices by world-anchored lattice cell.
#[derive(Clone, Debug)]
pub struct AccelGrid {
    lattice: Lattice,
    storage: Storage,
    items: Vec<u32>,
}

/// Build a grid with the sorted layout.
pub fn build_accel_grid(cloud: &PointCloud, cell: f64) -> Result<AccelGrid> {
    AccelGrid::build(cloud, cell, GridLayout::Sorted)
}

impl AccelGrid {
    pub fn build(cloud: &PointCloud, cell: f64, layout: GridLayout) -> Result<Self> {
        let lattice = Lattice::new(Point3::ORIGIN, cell)?;
        if cloud.len() >= u32::MAX as usize {
            return Err(Error::Capacity {
                requested: cloud.len() as u64,
                cap: u32::MAX as u64 - 1,
            });
        }
        let cells: Vec<CellIndex> = cloud.points().par_iter().map(|p| lattice.cell_of(p)).collect();
        match layout {
            GridLayout::Dense => match Self::build_dense(lattice, &cells) {
                Some(g) => Ok(g),
                None => Ok(Self::build_sorted(lattice, &cells)),
            },
            GridLayout::Sorted => Ok(Self::build_sorted(lattice, &cells)),
        }
    }

    fn build_sorted(lattice: Lattice, cells: &[CellIndex]) -> Self {
        let mut keys: Vec<(CellIndex, u32)> = cells.iter().enumerate().map(|(i, c)| (*c, i as u32)).collect();
        keys.par_sort_unstable();
        let mut occupied = Vec::new();
        let mut starts = Vec::new();
        for (n, (c, _)) in keys.iter().enumerate() {
            if occupied.last() != Some(c) {
                occupied.push(*c);
                starts.push(n as u32);
            }
        }
        starts.push(keys.len() as u32);
        Self {
            lattice,
            storage: Storage::Sorted {
                cells: occupied,
                starts,
            },
            items: keys.into_iter().map(|(_, i)| i).collect(),
        }
    }

    fn build_dense(lattice: Lattice, cells: &[CellIndex]) -> Option<Self> {
        let first = *cells.first()?;
        let (mut lo, mut hi) = (first, first);
        for c in cells {
            lo = CellIndex::new(lo.i.min(c.i), lo.j.min(c.j), lo.k.min(c.k));
            hi = CellIndex::new(hi.i.max(c.i), hi.j.max(c.j), hi.k.max(c.k));
        }
        let dims = [hi.i - lo.i + 1, hi.j - lo.j + 1, hi.k - lo.k + 1].map(|d| d as usize);
        let slots = dims[0].checked_mul(dims[1])?.checked_mul(dims[2])?;
        if slots > DENSE_CELL_CAP {
            return None;
        }
        let slot = |c: &CellIndex| {
            (((c.i - lo.i) as usize * dims[1]) + (c.j - lo.j) as usize) * dims[2] + (c.k - lo.k) as usize
        };
        // Counting sort keeps indices ascending within each cell.
        let mut starts = vec![0u32; slots + 1];
        for c in cells {
            starts[slot(c) + 1] += 1;
        }
        for s in 1..=slots {
            starts[s] += starts[s - 1];
        }
        let mut cursor = starts.clone();
        let mut items = vec![0u32; cells.len()];
        for (i, c) in cells.iter().enumerate() {
            let s = slot(c);
            items[cursor[s] as usize] = i as u32;
            cursor[s] += 1;
        }
        Some(Self {
            lattice,
            storage: Storage::Dense { min: lo, dims, starts },
            items,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.lattice.resolution()
    }

    pub fn layout(&self) -> GridLayout {
        match self.storage {
            Storage::Sorted { .. } => GridLayout::Sorted,
            Storage::Dense { .. } => GridLayout::Dense,
        }
    }

    /// Number of indexed points.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Occupied cells with their point indices (ascending).
    pub fn cells(&self) -> Vec<(CellIndex, &[u32])> {
        match &self.storage {
            Storage::Sorted { cells, starts } => cells
                .iter()
                .enumerate()
                .map(|(n, c)| (*c, &self.items[starts[n] as usize..starts[n + 1] as usize]))
                .collect(),
            Storage::Dense { min, dims, starts } => {
                let mut out = Vec::new();
                for s in 0..dims[0] * dims[1] * dims[2] {
                    let (a, b) = (starts[s] as usize, starts[s + 1] as usize);
                    if a < b {
                        let c = CellIndex::new(
                            min.i + (s / (dims[1] * dims[2])) as i64,
                            min.j + ((s / dims[2]) % dims[1]) as i64,
                            min.k + (s % dims[2]) as i64,
                        );
                        out.push((c, &self.items[a..b]));
                    }
                }
                out
            }
        }
    }

    /// Visit the point lists of every cell in the inclusive box `[lo, hi]`.
    fn for_each_in_range(&self, lo: CellIndex, hi: CellIndex, mut f: impl FnMut(&[u32])) {
        match &self.storage {
            Storage::Sorted { cells, starts } => {
                for i in lo.i..=hi.i {
                    for j in lo.j..=hi.j {
                        let a = cells.partition_point(|c| *c < CellIndex::new(i, j, lo.k));
                        let b = a + cells[a..].partition_point(|c| *c <= CellIndex::new(i, j, hi.k));
                        if a < b {
                            f(&self.items[starts[a] as usize..starts[b] as usize]);
                        }
                    }
                }
            }
            Storage::Dense { min, dims, starts } => {
                let clip = |v: i64, m: i64, d: usize| (v - m).clamp(0, d as i64);
                let (i0, i1) = (clip(lo.i, min.i, dims[0]), clip(hi.i + 1, min.i, dims[0]));
                let (j0, j1) = (clip(lo.j, min.j, dims[1]), clip(hi.j + 1, min.j, dims[1]));
                let (k0, k1) = (clip(lo.k, min.k, dims[2]), clip(hi.k + 1, min.k, dims[2]));
                for i in i0..i1 {
                    for j in j0..j1 {
                        let row = (i as usize * dims[1] + j as usize) * dims[2];
                        let a = starts[row + k0 as usize] as usize;
                        let b = starts[row + k1 as usize] as usize;
                        if a < b {
                            f(&self.items[a..b]);
                        }
                    }
                }
            }
        }
    }
}

/// Indices of all points with `|p - center| <= radius`, ascending.
///
/// Only cells overlapping the ball's bounding cube are visited.
pub fn radius_neighbors(grid: &AccelGrid, cloud: &PointCloud, center: &Point3, radius: f64) -> Vec<usize> {
    let s = grid.cell_size();
    // Pad the cell range by a hair so rounding in `c - R` never hides a cell.
    let lo_cell = |v: f64| ((v - radius) / s - 1e-7).floor() as i64;
    let hi_cell = |v: f64| ((v + radius) / s + 1e-7).floor() as i64;
    let lo = CellIndex::new(lo_cell(center.x()), lo_cell(center.y()), lo_cell(center.z()));
    let hi = CellIndex::new(hi_cell(center.x()), hi_cell(center.y()), hi_cell(center.z()));
    let r2 = radius * radius;
    let points = cloud.points();
    let mut out = Vec::new();
    grid.for_each_in_range(lo, hi, |items| {
        out.extend(
            items
                .iter()
                .map(|&i| i as usize)
                .filter(|&i| points[i].distance_squared(center) <= r2),
        );
    });
    out.sort_unstable();
    out
}

/// Voxel coordinate of `p` in the tensor anchored at `center`, clamped to `[0, k-1]`.
#[inline]
pub fn voxel_coords(p: &Point3, center: &Point3, radius: f64, k: usize) -> [usize; 3] {
    let vs = 2.0 * radius / k as f64;
    let d = *p - *center;
    d.map(|v| ((v + radius) / vs).floor().clamp(0.0, (k - 1) as f64) as usize)
}

/// `(point index, flat voxel index)` for every neighbor of `center`, in
/// ascending point order. Flat index is `(ix * k + iy) * k + iz`.
pub fn voxel_assignments(
    cloud: &PointCloud,
    center: &Point3,
    cfg: &VoxelizationConfig,
    grid: &AccelGrid,
) -> Vec<(usize, usize)> {
    let k = cfg.k;
    radius_neighbors(grid, cloud, center, cfg.radius)
        .into_iter()
        .map(|i| {
            let [a, b, c] = voxel_coords(&cloud.point(i), center, cfg.radius, k);
            (i, (a * k + b) * k + c)
        })
        .collect()
}

/// Average-pool the neighbors of `center` into a local voxel tensor.
pub fn voxelize(
    cloud: &PointCloud,
    center: &Point3,
    cfg: &VoxelizationConfig,
    grid: &AccelGrid,
) -> Result<LocalVoxelTensor> {
    let c_in = cloud.channels();
    let c_out = cfg.output_channels(c_in);
    let k3 = cfg.k * cfg.k * cfg.k;
    let mut t = LocalVoxelTensor::zeros(cfg.k, c_out, *center, cfg.radius)?;
    let mut counts = vec![0usize; k3];
    let cap = cfg.max_points_per_voxel.unwrap_or(usize::MAX);
    let data = t.data_mut();
    for (i, v) in voxel_assignments(cloud, center, cfg, grid) {
        if counts[v] >= cap {
            continue;
        }
        counts[v] += 1;
        let dst = &mut data[v * c_out..(v + 1) * c_out];
        for (d, f) in dst.iter_mut().zip(cloud.feature(i)) {
            *d += f;
        }
        if cfg.append_offsets {
            let off = cloud.point(i) - *center;
            for a in 0..3 {
                dst[c_in + a] += off[a];
            }
        }
    }
    for (v, &n) in counts.iter().enumerate() {
        if n > 1 {
            let inv = 1.0 / n as f64;
            data[v * c_out..(v + 1) * c_out].iter_mut().for_each(|x| *x *= inv);
        }
    }
    Ok(t)
}

/// Voxelize around each center, building the acceleration grid once.
///
/// Output order matches `centers`.
pub fn voxelize_batch(
    cloud: &PointCloud,
    centers: &[Point3],
    cfg: &VoxelizationConfig,
) -> Result<Vec<LocalVoxelTensor>> {
    if centers.is_empty() {
        return Ok(Vec::new());
    }
    let grid = AccelGrid::build(cloud, cfg.voxel_size(), cfg.layout)?;
    centers.par_iter().map(|c| voxelize(cloud, c, cfg, &grid)).collect()
}
