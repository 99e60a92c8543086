//! Location-aware RoI pooling and the second-stage refinement head.
//!
//! Interior points of an oriented RoI are binned into a `k x k x k` grid in
//! the box frame. Each cell averages at most `n_max` features, each weighted by
//! `exp(1 - d / r)` where `d` is the point's distance to the cell center and
//! `r = max(W, L, H) / k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{OrientedBox, Point3, PointCloud};
use crate::pointconv::{dense_conv3d_valid, Activation, ConvKernel, DenseGrid};
use crate::voxelization::{radius_neighbors, AccelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiPoolConfig {
    /// Pooling grid resolution per axis.
    pub k: usize,
    /// Maximum points contributing to one cell.
    pub n_max: usize,
}

impl Default for RoiPoolConfig {
    fn default() -> Self {
        Self { k: 5, n_max: 5 }
    }
}

impl RoiPoolConfig {
    pub fn new(k: usize, n_max: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("pooling grid resolution must be positive".into()));
        }
        if n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        Ok(Self { k, n_max })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PooledRoi {
    pub grid: DenseGrid,
    pub source: OrientedBox,
}

#[inline]
fn inside_local(l: &[f64; 3], b: &OrientedBox) -> bool {
    l[0].abs() <= 0.5 * b.w && l[1].abs() <= 0.5 * b.l && l[2].abs() <= 0.5 * b.h
}

/// Indices of points inside `b` (boundary inclusive), ascending.
pub fn points_in_box(cloud: &PointCloud, b: &OrientedBox) -> Vec<usize> {
    cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| inside_local(&b.to_local(p), b))
        .map(|(i, _)| i)
        .collect()
}

/// Same as [`points_in_box`] but only scans grid cells near the box.
pub fn points_in_box_indexed(cloud: &PointCloud, grid: &AccelGrid, b: &OrientedBox) -> Vec<usize> {
    let half_diag = 0.5 * (b.w * b.w + b.l * b.l + b.h * b.h).sqrt();
    radius_neighbors(grid, cloud, &b.center(), half_diag * (1.0 + 1e-9))
        .into_iter()
        .filter(|&i| inside_local(&b.to_local(&cloud.point(i)), b))
        .collect()
}

/// Shared per-RoI geometry: cell sizes and the distance scale `r`.
#[derive(Clone, Copy, Debug)]
pub struct PoolGeometry {
    k: usize,
    cell: [f64; 3],
    half: [f64; 3],
    pub scale: f64,
}

impl PoolGeometry {
    pub fn new(b: &OrientedBox, k: usize) -> Self {
        let dims = b.dims();
        let cell = dims.map(|d| d / k as f64);
        Self {
            k,
            cell,
            half: dims.map(|d| 0.5 * d),
            scale: cell[0].max(cell[1]).max(cell[2]),
        }
    }

    /// Cell coordinates of a box-frame point, clamped so faces stay inside.
    pub fn cell_of(&self, l: &[f64; 3]) -> [usize; 3] {
        std::array::from_fn(|a| {
            ((l[a] + self.half[a]) / self.cell[a])
                .floor()
                .clamp(0.0, (self.k - 1) as f64) as usize
        })
    }

    /// Box-frame center of a cell.
    pub fn cell_center(&self, c: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| -self.half[a] + (c[a] as f64 + 0.5) * self.cell[a])
    }

    pub fn weight(&self, l: &[f64; 3], c: [usize; 3]) -> f64 {
        let g = self.cell_center(c);
        let d = ((l[0] - g[0]).powi(2) + (l[1] - g[1]).powi(2) + (l[2] - g[2]).powi(2)).sqrt();
        (1.0 - d / self.scale).exp()
    }
}

/// Location-aware pooling of the interior points of `b`.
pub fn la_pool(cloud: &PointCloud, b: &OrientedBox, cfg: &RoiPoolConfig) -> Result<PooledRoi> {
    pool_indices(cloud, &points_in_box(cloud, b), b, cfg)
}

/// [`la_pool`] using a prebuilt grid to find interior points.
pub fn la_pool_indexed(
    cloud: &PointCloud,
    grid: &AccelGrid,
    b: &OrientedBox,
    cfg: &RoiPoolConfig,
) -> Result<PooledRoi> {
    pool_indices(cloud, &points_in_box_indexed(cloud, grid, b), b, cfg)
}

fn pool_indices(cloud: &PointCloud, interior: &[usize], b: &OrientedBox, cfg: &RoiPoolConfig) -> Result<PooledRoi> {
    let RoiPoolConfig { k, n_max } = *cfg;
    if k == 0 || n_max == 0 {
        return Err(Error::Config(format!("invalid pooling config {cfg:?}")));
    }
    let c = cloud.channels();
    let geo = PoolGeometry::new(b, k);
    let mut data = vec![0.0; k * k * k * c];
    let mut counts = vec![0usize; k * k * k];
    // `interior` is ascending, so surplus points beyond n_max are the highest indices.
    for &i in interior {
        let l = b.to_local(&cloud.point(i));
        let cell = geo.cell_of(&l);
        let flat = (cell[0] * k + cell[1]) * k + cell[2];
        if counts[flat] == n_max {
            continue;
        }
        counts[flat] += 1;
        let w = geo.weight(&l, cell);
        for (d, f) in data[flat * c..(flat + 1) * c].iter_mut().zip(cloud.feature(i)) {
            *d += w * f;
        }
    }
    for (flat, &n) in counts.iter().enumerate() {
        if n > 1 {
            let inv = 1.0 / n as f64;
            data[flat * c..(flat + 1) * c].iter_mut().for_each(|v| *v *= inv);
        }
    }
    Ok(PooledRoi {
        grid: DenseGrid::new(k, c, data)?,
        source: *b,
    })
}

/// Outputs of the refinement head for one RoI.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefineOutput {
    pub conf_logit: f64,
    pub residuals: [f64; 7],
    pub flip_logit: f64,
    /// Grid side after each convolution, starting with the input.
    pub spatial_trace: Vec<usize>,
}

impl RefineOutput {
    pub fn confidence(&self) -> f64 {
        1.0 / (1.0 + (-self.conf_logit).exp())
    }
}

/// Two `3^3` valid convolutions (`5 -> 3 -> 1`) followed by an MLP to 9 outputs:
/// confidence logit, 7 box residuals, flip logit.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineHeadWeights {
    pub convs: [ConvKernel; 2],
    /// Fully connected layers as `k = 1` kernels; the last one has 9 outputs.
    pub mlp: Vec<ConvKernel>,
}

pub const REFINE_OUTPUTS: usize = 9;

impl RefineHeadWeights {
    pub fn init<R: rand::Rng>(in_channels: usize, conv: [usize; 2], hidden: &[usize], rng: &mut R) -> Self {
        let convs = [
            ConvKernel::init_uniform(3, in_channels, conv[0], rng),
            ConvKernel::init_uniform(3, conv[0], conv[1], rng),
        ];
        let mut widths = vec![conv[1]];
        widths.extend_from_slice(hidden);
        widths.push(REFINE_OUTPUTS);
        let mlp = widths
            .windows(2)
            .map(|w| ConvKernel::init_uniform(1, w[0], w[1], rng))
            .collect();
        Self { convs, mlp }
    }

    pub fn kernels(&self) -> impl Iterator<Item = &ConvKernel> {
        self.convs.iter().chain(&self.mlp)
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_channels()
    }
}

/// Apply fully connected layers (`k = 1` kernels): activation between layers,
/// identity on the last.
pub fn mlp_forward(layers: &[ConvKernel], input: &[f64], act: Activation) -> Result<Vec<f64>> {
    let mut x = DenseGrid::new(1, input.len(), input.to_vec())?;
    for (n, w) in layers.iter().enumerate() {
        if w.resolution() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "MLP layer {n} has k = {}",
                w.resolution()
            )));
        }
        let a = if n + 1 == layers.len() {
            Activation::Identity
        } else {
            act
        };
        x = dense_conv3d_valid(&x, w, a)?;
    }
    Ok(x.data)
}

pub fn refine_head(p: &PooledRoi, w: &RefineHeadWeights) -> Result<RefineOutput> {
    let g = &p.grid;
    if g.side != 5 {
        return Err(Error::ShapeMismatch(format!(
            "refine head expects a 5^3 grid, got {}^3",
            g.side
        )));
    }
    if w.convs.iter().any(|k| k.resolution() != 3) {
        return Err(Error::ShapeMismatch("refine convolutions must be 3^3".into()));
    }
    let mut trace = vec![g.side];
    let h = dense_conv3d_valid(g, &w.convs[0], Activation::Relu)?;
    trace.push(h.side);
    let h = dense_conv3d_valid(&h, &w.convs[1], Activation::Relu)?;
    trace.push(h.side);
    let out = mlp_forward(&w.mlp, &h.data, Activation::Relu)?;
    if out.len() != REFINE_OUTPUTS {
        return Err(Error::ShapeMismatch(format!(
            "refine MLP produces {} outputs, expected {REFINE_OUTPUTS}",
            out.len()
        )));
    }
    Ok(RefineOutput {
        conf_logit: out[0],
        residuals: std::array::from_fn(|i| out[1 + i]),
        flip_logit: out[8],
        spatial_trace: trace,
    })
}

/// Preactivation of the two-conv stack (no ReLU), used to check linearity.
pub fn refine_conv_preactivation(p: &PooledRoi, w: &RefineHeadWeights) -> Result<DenseGrid> {
    let h = dense_conv3d_valid(&p.grid, &w.convs[0], Activation::Identity)?;
    dense_conv3d_valid(&h, &w.convs[1], Activation::Identity)
}

/// World-space point at a box-frame location.
pub fn box_to_world(b: &OrientedBox, l: [f64; 3]) -> Result<Point3> {
    let (s, c) = b.r.sin_cos();
    Point3::new(b.x + c * l[0] - s * l[1], b.y + s * l[0] + c * l[1], b.z + l[2])
}
