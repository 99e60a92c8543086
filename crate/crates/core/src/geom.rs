//! Geometric and tensor domain types shared by every kernel.
//!
//! All types validate their invariants at construction and are immutable
//! afterwards, so they can be shared freely across worker threads.

use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite point in 3D space, in meters.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize)]
pub struct Point3 {
    x: f64,
    y: f64,
    z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        if x.is_finite() && y.is_finite() && z.is_finite() {
            Ok(Self { x, y, z })
        } else {
            Err(Error::NonFinitePoint(x, y, z))
        }
    }

    pub fn from_array(c: [f64; 3]) -> Result<Self> {
        Self::new(c[0], c[1], c[2])
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    #[inline]
    pub fn z(&self) -> f64 {
        self.z
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    /// Translate by a finite offset. Fails only if the sum overflows.
    pub fn translated(&self, d: [f64; 3]) -> Result<Point3> {
        Point3::new(self.x + d[0], self.y + d[1], self.z + d[2])
    }

    /// Rotate about the z axis through the origin.
    pub fn rotated_z(&self, angle: f64) -> Point3 {
        let (s, c) = angle.sin_cos();
        Point3 {
            x: c * self.x - s * self.y,
            y: s * self.x + c * self.y,
            z: self.z,
        }
    }
}

impl Sub for Point3 {
    type Output = [f64; 3];

    fn sub(self, rhs: Point3) -> [f64; 3] {
        [self.x - rhs.x, self.y - rhs.y, self.z - rhs.z]
    }
}

impl<'de> Deserialize<'de> for Point3 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x: f64,
            y: f64,
            z: f64,
        }
        let raw = Raw::deserialize(d)?;
        Point3::new(raw.x, raw.y, raw.z).map_err(serde::de::Error::custom)
    }
}

/// Points with per-point feature vectors of a common channel count.
///
/// Features are stored flat, row-major: point `i` owns
/// `features[i * channels..(i + 1) * channels]`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    channels: usize,
    features: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, channels: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != points.len() * channels {
            return Err(Error::CloudShape(format!(
                "{} points with {} channels need {} feature values, got {}",
                points.len(),
                channels,
                points.len() * channels,
                features.len()
            )));
        }
        Ok(Self {
            points,
            channels,
            features,
        })
    }

    /// A cloud with zero feature channels.
    pub fn from_points(points: Vec<Point3>) -> Self {
        Self {
            points,
            channels: 0,
            features: Vec::new(),
        }
    }

    /// Build from per-point feature rows; every row must have the same length.
    pub fn from_rows(points: Vec<Point3>, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != points.len() {
            return Err(Error::CloudShape(format!(
                "{} points but {} feature rows",
                points.len(),
                rows.len()
            )));
        }
        let channels = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != channels) {
            return Err(Error::CloudShape(format!(
                "feature row {bad} has {} channels, expected {channels}",
                rows[bad].len()
            )));
        }
        let features = rows.iter().flatten().copied().collect();
        Self::new(points, channels, features)
    }

    /// Same positions, features replaced.
    pub fn with_features(&self, channels: usize, features: Vec<f64>) -> Result<Self> {
        Self::new(self.points.clone(), channels, features)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    #[inline]
    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn into_parts(self) -> (Vec<Point3>, usize, Vec<f64>) {
        (self.points, self.channels, self.features)
    }
}

/// Integer lattice coordinates of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct CellIndex {
    pub i: i64,
    pub j: i64,
    pub k: i64,
}

impl CellIndex {
    pub const fn new(i: i64, j: i64, k: i64) -> Self {
        Self { i, j, k }
    }
}

impl Add for CellIndex {
    type Output = CellIndex;

    fn add(self, o: CellIndex) -> CellIndex {
        CellIndex::new(self.i + o.i, self.j + o.j, self.k + o.k)
    }
}

/// A regular cubic lattice anchored at `origin`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    origin: Point3,
    resolution: f64,
}

impl Lattice {
    pub fn new(origin: Point3, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::NonPositive {
                name: "resolution",
                value: resolution,
            });
        }
        Ok(Self { origin, resolution })
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Componentwise `floor((p - origin) / resolution)`.
    #[inline]
    pub fn cell_of(&self, p: &Point3) -> CellIndex {
        let r = self.resolution;
        CellIndex {
            i: ((p.x - self.origin.x) / r).floor() as i64,
            j: ((p.y - self.origin.y) / r).floor() as i64,
            k: ((p.z - self.origin.z) / r).floor() as i64,
        }
    }
}

/// Lattice cell of `p` for a world-anchored grid of edge `r`.
///
/// Uses floor, not truncation: points on a boundary belong to the
/// higher-index cell and negative coordinates map below zero.
pub fn cell_of(p: &Point3, r: f64) -> Result<CellIndex> {
    Ok(Lattice::new(Point3::ORIGIN, r)?.cell_of(p))
}

/// 3D box with yaw rotation about +z.
///
/// `w` spans the local x axis, `l` the local y axis, `h` the vertical.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrientedBox {
    pub(crate) x: f64,
    pub(crate) y: f64,
    pub(crate) z: f64,
    pub(crate) w: f64,
    pub(crate) l: f64,
    pub(crate) h: f64,
    pub(crate) r: f64,
}

impl OrientedBox {
    pub fn new(x: f64, y: f64, z: f64, w: f64, l: f64, h: f64, r: f64) -> Result<Self> {
        let all = [x, y, z, w, l, h, r];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite parameter in {all:?}")));
        }
        if !(w > 0.0 && l > 0.0 && h > 0.0) {
            return Err(Error::InvalidBox(format!(
                "extents must be positive, got w={w} l={l} h={h}"
            )));
        }
        Ok(Self { x, y, z, w, l, h, r })
    }

    /// From `[x, y, z, w, l, h, r]`.
    pub fn from_params(p: [f64; 7]) -> Result<Self> {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6])
    }

    pub fn params(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.w, self.l, self.h, self.r]
    }

    pub fn center(&self) -> Point3 {
        Point3 {
            x: self.x,
            y: self.y,
            z: self.z,
        }
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.w, self.l, self.h]
    }

    pub fn yaw(&self) -> f64 {
        self.r
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }

    /// Copy with a different yaw.
    pub fn with_yaw(&self, r: f64) -> Result<Self> {
        Self::new(self.x, self.y, self.z, self.w, self.l, self.h, r)
    }

    /// Rigidly move the box: rotate about the world z axis by `angle`, then translate.
    pub fn transformed(&self, angle: f64, t: [f64; 3]) -> Result<Self> {
        let c = self.center().rotated_z(angle);
        Self::new(
            c.x + t[0],
            c.y + t[1],
            c.z + t[2],
            self.w,
            self.l,
            self.h,
            self.r + angle,
        )
    }

    /// Express a world point in the box frame (centered, yaw removed).
    #[inline]
    pub fn to_local(&self, p: &Point3) -> [f64; 3] {
        let (s, c) = self.r.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        [c * dx + s * dy, -s * dx + c * dy, p.z - self.z]
    }
}

/// Bird's-eye-view corners in world coordinates.
///
/// Counterclockwise, starting from the local corner `(-w/2, +l/2)`, so
/// consecutive entries share an edge.
pub fn box_corners_bev(b: &OrientedBox) -> [[f64; 2]; 4] {
    let (hw, hl) = (0.5 * b.w, 0.5 * b.l);
    let local = [[-hw, hl], [-hw, -hl], [hw, -hl], [hw, hl]];
    let (s, c) = b.r.sin_cos();
    local.map(|[u, v]| [b.x + c * u - s * v, b.y + s * u + c * v])
}

/// Dense `k x k x k x c` tensor of voxel features around one key-point.
///
/// Layout is `[ix][iy][iz][channel]` with `ix` slowest; unoccupied voxels are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalVoxelTensor {
    k: usize,
    channels: usize,
    data: Vec<f64>,
    anchor: Point3,
    radius: f64,
}

impl LocalVoxelTensor {
    pub fn zeros(k: usize, channels: usize, anchor: Point3, radius: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::KernelResolution(k));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::NonPositive {
                name: "radius",
                value: radius,
            });
        }
        Ok(Self {
            k,
            channels,
            data: vec![0.0; k * k * k * channels],
            anchor,
            radius,
        })
    }

    pub fn from_data(k: usize, channels: usize, data: Vec<f64>, anchor: Point3, radius: f64) -> Result<Self> {
        let mut t = Self::zeros(k, channels, anchor, radius)?;
        if data.len() != t.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "voxel tensor {k}^3 x {channels} needs {} values, got {}",
                t.data.len(),
                data.len()
            )));
        }
        t.data = data;
        Ok(t)
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn anchor(&self) -> Point3 {
        self.anchor
    }

    #[inline]
    pub fn radius(&self) -> f64 {
        self.radius
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn voxel_offset(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ((ix * self.k + iy) * self.k + iz) * self.channels
    }

    pub fn voxel(&self, ix: usize, iy: usize, iz: usize) -> &[f64] {
        let o = self.voxel_offset(ix, iy, iz);
        &self.data[o..o + self.channels]
    }

    /// Multiply every entry by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        let mut t = self.clone();
        t.data.iter_mut().for_each(|v| *v *= a);
        t
    }
}
