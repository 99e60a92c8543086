//! Point-wise 3D convolution.
//!
//! A kernel with the same `k x k x k` footprint as a [`LocalVoxelTensor`]
//! contracts the whole tensor into one output feature vector, so the result
//! lives exactly at the tensor's key-point.

mod backbone;
mod blob;

pub(crate) use backbone::validate_blocks;
pub use backbone::{run_backbone, BackboneOptions, BackboneOutput, BackboneWeights, BlockOutput, BlockSpec};
pub use blob::{read_kernels, write_kernels, KERNEL_MAGIC, MODEL_MAGIC};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{LocalVoxelTensor, PointCloud};
use crate::voxelization::{voxelize, AccelGrid, VoxelizationConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: &mut [f64]) {
        if self == Activation::Relu {
            v.iter_mut().for_each(|x| *x = x.max(0.0));
        }
    }
}

/// Dense kernel of shape `k x k x k x c_in x c_out` plus bias.
///
/// Weights are laid out `[ix][iy][iz][c_in][c_out]`, matching the voxel
/// tensor layout with the output channel fastest. A `k = 1` kernel is a
/// plain fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    k: usize,
    c_in: usize,
    c_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(k: usize, c_in: usize, c_out: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::KernelResolution(k));
        }
        let want = k * k * k * c_in * c_out;
        if weights.len() != want || bias.len() != c_out {
            return Err(Error::ShapeMismatch(format!(
                "kernel {k}^3 x {c_in} x {c_out} needs {want} weights and {c_out} biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            k,
            c_in,
            c_out,
            weights,
            bias,
        })
    }

    pub fn zeros(k: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            k,
            c_in,
            c_out,
            weights: vec![0.0; k * k * k * c_in * c_out],
            bias: vec![0.0; c_out],
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init_uniform<R: Rng>(k: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let k3 = k * k * k;
        let limit = (6.0 / ((k3 * c_in + k3 * c_out).max(1) as f64)).sqrt();
        let weights = (0..k3 * c_in * c_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            k,
            c_in,
            c_out,
            weights,
            bias: vec![0.0; c_out],
        }
    }

    pub fn resolution(&self) -> usize {
        self.k
    }

    pub fn in_channels(&self) -> usize {
        self.c_in
    }

    pub fn out_channels(&self) -> usize {
        self.c_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `bias + sum(input * weights)` over one `k^3 x c_in` window given as a
    /// gather of `k^3` voxel slices.
    #[inline]
    fn contract<'a>(&self, voxels: impl Iterator<Item = &'a [f64]>, out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        let co = self.c_out;
        for (v, vals) in voxels.enumerate() {
            for (ci, &x) in vals.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &self.weights[(v * self.c_in + ci) * co..][..co];
                for (o, w) in out.iter_mut().zip(row) {
                    *o += x * w;
                }
            }
        }
    }

    /// Full contraction of a voxel tensor, before the nonlinearity.
    pub fn preactivation(&self, v: &LocalVoxelTensor) -> Result<Vec<f64>> {
        if v.resolution() != self.k || v.channels() != self.c_in {
            return Err(Error::ShapeMismatch(format!(
                "tensor {}^3 x {} vs kernel {}^3 x {}",
                v.resolution(),
                v.channels(),
                self.k,
                self.c_in
            )));
        }
        let mut out = vec![0.0; self.c_out];
        self.contract(v.data().chunks_exact(self.c_in.max(1)).take(self.k.pow(3)), &mut out);
        Ok(out)
    }
}

/// Contract a local voxel tensor with a same-sized kernel and apply `act`.
pub fn pointwise_conv(v: &LocalVoxelTensor, w: &ConvKernel, act: Activation) -> Result<Vec<f64>> {
    let mut out = w.preactivation(v)?;
    act.apply(&mut out);
    Ok(out)
}

/// Dense cubic grid `side^3 x channels`, layout `[x][y][z][c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrid {
    pub side: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl DenseGrid {
    pub fn new(side: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != side.pow(3) * channels {
            return Err(Error::ShapeMismatch(format!(
                "grid {side}^3 x {channels} needs {} values, got {}",
                side.pow(3) * channels,
                data.len()
            )));
        }
        Ok(Self { side, channels, data })
    }

    #[inline]
    fn cell(&self, x: usize, y: usize, z: usize) -> &[f64] {
        let o = ((x * self.side + y) * self.side + z) * self.channels;
        &self.data[o..o + self.channels]
    }
}

/// Dense 3D convolution with valid padding, stride 1: `side -> side - k + 1`.
pub fn dense_conv3d_valid(input: &DenseGrid, w: &ConvKernel, act: Activation) -> Result<DenseGrid> {
    if input.channels != w.c_in {
        return Err(Error::ShapeMismatch(format!(
            "grid has {} channels, kernel expects {}",
            input.channels, w.c_in
        )));
    }
    if input.side < w.k {
        return Err(Error::ShapeMismatch(format!(
            "grid side {} smaller than kernel {}",
            input.side, w.k
        )));
    }
    let s = input.side - w.k + 1;
    let k = w.k;
    let mut data = vec![0.0; s * s * s * w.c_out];
    for (n, out) in data.chunks_exact_mut(w.c_out.max(1)).enumerate().take(s * s * s) {
        let (x, y, z) = (n / (s * s), (n / s) % s, n % s);
        let window = (0..k * k * k).map(|t| input.cell(x + t / (k * k), y + (t / k) % k, z + t % k));
        w.contract(window, out);
        act.apply(out);
    }
    DenseGrid::new(s, w.c_out, data)
}

/// One point-wise convolution layer: voxelize `cloud` around every key-point
/// and contract each tensor with `w`.
///
/// The output cloud has the key-points' positions and `w.out_channels()` features.
pub fn conv_layer(
    cloud: &PointCloud,
    key_points: &PointCloud,
    cfg: &VoxelizationConfig,
    w: &ConvKernel,
    act: Activation,
) -> Result<PointCloud> {
    let grid = AccelGrid::build(cloud, cfg.voxel_size(), cfg.layout)?;
    conv_layer_with_grid(cloud, &grid, key_points, cfg, w, act)
}

pub(crate) fn conv_layer_with_grid(
    cloud: &PointCloud,
    grid: &AccelGrid,
    key_points: &PointCloud,
    cfg: &VoxelizationConfig,
    w: &ConvKernel,
    act: Activation,
) -> Result<PointCloud> {
    if cfg.k != w.k || cfg.output_channels(cloud.channels()) != w.c_in {
        return Err(Error::ShapeMismatch(format!(
            "layer input {}^3 x {} vs kernel {}^3 x {}",
            cfg.k,
            cfg.output_channels(cloud.channels()),
            w.k,
            w.c_in
        )));
    }
    let rows: Vec<Vec<f64>> = key_points
        .points()
        .par_iter()
        .map(|c| {
            let t = voxelize(cloud, c, cfg, grid)?;
            pointwise_conv(&t, w, act)
        })
        .collect::<Result<_>>()?;
    let features = rows.into_iter().flatten().collect();
    key_points.with_features(w.c_out, features)
}
