//! Camera, grid geometry and the voxel/pixel containers shared by every module.
//!
//! Voxel payloads are stored row-major in `[u][v][d]` order with `d` varying
//! fastest; softmax grids append the class axis after `d`. Axis `u` follows the
//! camera-frame `x` coordinate (image rows), `v` follows `y` (image columns)
//! and `d` follows depth `z`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Label of the empty class.
pub const EMPTY_CLASS: u16 = 1;

/// Maximum deviation of a softmax vector's sum from 1.
pub const SOFTMAX_TOLERANCE: f64 = 1e-5;

/// Pinhole intrinsics. `c_h`/`f_u` act on image rows, `c_w`/`f_v` on columns.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraIntrinsics {
    pub f_u: f64,
    pub f_v: f64,
    pub c_h: f64,
    pub c_w: f64,
    pub height: usize,
    pub width: usize,
}

impl CameraIntrinsics {
    pub fn new(f_u: f64, f_v: f64, c_h: f64, c_w: f64, height: usize, width: usize) -> Result<Self> {
        let intr = Self { f_u, f_v, c_h, c_w, height, width };
        intr.validate()?;
        Ok(intr)
    }

    /// 64x64 image with a 90 degree field of view centred on the principal ray.
    pub fn desk_default() -> Self {
        Self { f_u: 32.0, f_v: 32.0, c_h: 32.0, c_w: 32.0, height: 64, width: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_u > 0.0 && self.f_v > 0.0 && self.f_u.is_finite() && self.f_v.is_finite()) {
            bail!(Validation, "focal lengths must be positive and finite (f_u={}, f_v={})", self.f_u, self.f_v);
        }
        if self.height == 0 || self.width == 0 {
            bail!(Validation, "image must be at least 1x1 (got {}x{})", self.height, self.width);
        }
        if !(self.c_h >= 0.0 && self.c_h < self.height as f64) {
            bail!(Validation, "c_h={} outside [0, {})", self.c_h, self.height);
        }
        if !(self.c_w >= 0.0 && self.c_w < self.width as f64) {
            bail!(Validation, "c_w={} outside [0, {})", self.c_w, self.width);
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }
}

/// Voxel lattice placement in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridGeometry {
    /// Voxel counts `[U, V, D]`.
    pub dims: [usize; 3],
    /// Edge length of a cubic voxel in meters.
    pub voxel_edge: f64,
    /// Minimum corner `(x, y, z)` of the grid in meters.
    pub origin: [f64; 3],
}

impl GridGeometry {
    pub fn new(dims: [usize; 3], voxel_edge: f64, origin: [f64; 3]) -> Result<Self> {
        let geom = Self { dims, voxel_edge, origin };
        geom.validate()?;
        Ok(geom)
    }

    /// 16 x 64 x 64 voxels of 0.2 m: 3.2 m tall, 12.8 m wide and 12.8 m deep,
    /// with the camera 1.4 m above the bottom layer.
    pub fn desk_default() -> Self {
        Self { dims: [16, 64, 64], voxel_edge: 0.2, origin: [-1.6, -6.4, 0.0] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            bail!(Validation, "grid dims must be >= 1 on every axis (got {:?})", self.dims);
        }
        if !(self.voxel_edge > 0.0 && self.voxel_edge.is_finite()) {
            bail!(Validation, "voxel_edge must be positive and finite (got {})", self.voxel_edge);
        }
        for axis in 0..3 {
            let far = self.upper(axis);
            if !self.origin[axis].is_finite() || !far.is_finite() {
                bail!(Validation, "grid extent along axis {axis} is not finite");
            }
        }
        if self.dims.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).is_none() {
            bail!(Validation, "voxel count overflows");
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Lower bound of the grid along `axis`.
    pub fn lower(&self, axis: usize) -> f64 {
        self.origin[axis]
    }

    /// Upper bound of the grid along `axis`.
    pub fn upper(&self, axis: usize) -> f64 {
        self.boundary(axis, self.dims[axis])
    }

    /// Position of the `n`-th cell boundary along `axis`.
    #[inline]
    pub fn boundary(&self, axis: usize, n: usize) -> f64 {
        self.origin[axis] + n as f64 * self.voxel_edge
    }

    #[inline]
    pub fn linear_index(&self, voxel: [usize; 3]) -> usize {
        (voxel[0] * self.dims[1] + voxel[1]) * self.dims[2] + voxel[2]
    }

    #[inline]
    pub fn voxel_of_index(&self, index: usize) -> [usize; 3] {
        let d = index % self.dims[2];
        let rest = index / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], d]
    }

    /// Voxel containing `point` under half-open `[lo, hi)` cells, if any.
    pub fn voxel_of_point(&self, point: [f64; 3]) -> Option<[usize; 3]> {
        let mut voxel = [0usize; 3];
        for axis in 0..3 {
            let t = (point[axis] - self.origin[axis]) / self.voxel_edge;
            if !(t >= 0.0) {
                return None;
            }
            let mut cell = libm::floor(t) as usize;
            // floor of the scaled coordinate can land one cell off the
            // boundary test; the boundaries themselves are authoritative.
            if cell > 0 && point[axis] < self.boundary(axis, cell) {
                cell -= 1;
            } else if point[axis] >= self.boundary(axis, cell + 1) {
                cell += 1;
            }
            if cell >= self.dims[axis] {
                return None;
            }
            voxel[axis] = cell;
        }
        Some(voxel)
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        bail!(Validation, "{what}: payload has {got} elements, dims require {want}");
    }
    Ok(())
}

/// Probabilistic occupancy map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbOccupancyGrid {
    pub geometry: GridGeometry,
    pub values: Vec<f32>,
}

impl ProbOccupancyGrid {
    pub fn zeros(geometry: GridGeometry) -> Self {
        Self { geometry, values: vec![0.0; geometry.voxel_count()] }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        check_len("probability grid", self.values.len(), self.geometry.voxel_count())?;
        if let Some(i) = self.values.iter().position(|p| !(0.0..=1.0).contains(p)) {
            bail!(Validation, "probability {} at voxel {i} outside [0, 1]", self.values[i]);
        }
        Ok(())
    }

    pub fn get(&self, voxel: [usize; 3]) -> f32 {
        self.values[self.geometry.linear_index(voxel)]
    }
}

/// Binary occupancy map; each value is 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryOccupancyGrid {
    pub geometry: GridGeometry,
    pub values: Vec<u8>,
}

impl BinaryOccupancyGrid {
    pub fn zeros(geometry: GridGeometry) -> Self {
        Self { geometry, values: vec![0; geometry.voxel_count()] }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        check_len("binary grid", self.values.len(), self.geometry.voxel_count())?;
        if let Some(i) = self.values.iter().position(|&b| b > 1) {
            bail!(Validation, "binary value {} at voxel {i} is not 0 or 1", self.values[i]);
        }
        Ok(())
    }

    pub fn get(&self, voxel: [usize; 3]) -> bool {
        self.values[self.geometry.linear_index(voxel)] == 1
    }

    pub fn occupied_count(&self) -> usize {
        self.values.iter().filter(|&&b| b == 1).count()
    }
}

/// Per-voxel class-probability vectors over `class_count` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxGrid {
    pub geometry: GridGeometry,
    pub class_count: usize,
    pub probs: Vec<f32>,
}

impl SoftmaxGrid {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.class_count < 2 {
            bail!(Validation, "softmax grid needs at least 2 classes (got {})", self.class_count);
        }
        check_len("softmax grid", self.probs.len(), self.geometry.voxel_count() * self.class_count)?;
        for (i, row) in self.probs.chunks_exact(self.class_count).enumerate() {
            check_softmax(row)
                .map_err(|e| crate::Error::Validation(alloc::format!("voxel {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.geometry.voxel_count()
    }

    /// Probability vector of the voxel at linear index `i`.
    pub fn vector(&self, i: usize) -> &[f32] {
        &self.probs[i * self.class_count..(i + 1) * self.class_count]
    }

    /// Most probable label per voxel (ties resolve to the lower label).
    pub fn argmax_labels(&self) -> LabelGrid {
        let labels = self
            .probs
            .chunks_exact(self.class_count)
            .map(|row| {
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best as u16 + 1
            })
            .collect();
        LabelGrid { geometry: self.geometry, class_count: self.class_count, labels }
    }
}

/// Check that `row` is a probability vector within [`SOFTMAX_TOLERANCE`].
pub fn check_softmax<T: Copy + Into<f64>>(row: &[T]) -> Result<()> {
    let mut sum = 0.0f64;
    for &p in row {
        let p: f64 = p.into();
        if !(p >= 0.0 && p.is_finite()) {
            bail!(Validation, "softmax entry {p} is negative or not finite");
        }
        sum += p;
    }
    if libm::fabs(sum - 1.0) > SOFTMAX_TOLERANCE {
        bail!(Validation, "softmax vector sums to {sum}");
    }
    Ok(())
}

/// Ground-truth labels in `1..=class_count`; `1` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub geometry: GridGeometry,
    pub class_count: usize,
    pub labels: Vec<u16>,
}

impl LabelGrid {
    pub fn filled(geometry: GridGeometry, class_count: usize, label: u16) -> Self {
        Self { geometry, class_count, labels: vec![label; geometry.voxel_count()] }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.class_count < 2 || self.class_count > u16::MAX as usize {
            bail!(Validation, "class_count {} out of range", self.class_count);
        }
        check_len("label grid", self.labels.len(), self.geometry.voxel_count())?;
        if let Some(i) = self.labels.iter().position(|&l| l == 0 || l as usize > self.class_count) {
            bail!(Validation, "label {} at voxel {i} outside 1..={}", self.labels[i], self.class_count);
        }
        Ok(())
    }

    pub fn get(&self, voxel: [usize; 3]) -> u16 {
        self.labels[self.geometry.linear_index(voxel)]
    }

    pub fn set(&mut self, voxel: [usize; 3], label: u16) {
        let i = self.geometry.linear_index(voxel);
        self.labels[i] = label;
    }

    /// Occupancy layer: 1 wherever the label is not empty.
    pub fn occupancy(&self) -> BinaryOccupancyGrid {
        BinaryOccupancyGrid {
            geometry: self.geometry,
            values: self.labels.iter().map(|&l| u8::from(l != EMPTY_CLASS)).collect(),
        }
    }

    /// Voxel count per label, indexed by `label - 1`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count];
        for &l in &self.labels {
            counts[l as usize - 1] += 1;
        }
        counts
    }
}

/// Estimated depth per pixel. `sigma` is absent for depth maps that carry
/// only a point estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthEstimate {
    pub height: usize,
    pub width: usize,
    pub mean: Vec<f32>,
    pub sigma: Option<Vec<f32>>,
    pub valid: Vec<bool>,
}

impl DepthEstimate {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            bail!(Validation, "depth map must be at least 1x1");
        }
        let n = self.height * self.width;
        check_len("depth mean", self.mean.len(), n)?;
        check_len("valid mask", self.valid.len(), n)?;
        if let Some(sigma) = &self.sigma {
            check_len("depth sigma", sigma.len(), n)?;
        }
        for i in (0..n).filter(|&i| self.valid[i]) {
            if !(self.mean[i] > 0.0 && self.mean[i].is_finite()) {
                bail!(Validation, "pixel {i}: mean depth {} must be positive", self.mean[i]);
            }
            if let Some(sigma) = &self.sigma {
                if !(sigma[i] > 0.0 && sigma[i].is_finite()) {
                    bail!(Validation, "pixel {i}: sigma {} must be positive", sigma[i]);
                }
            }
        }
        Ok(())
    }

    pub fn check_matches(&self, intr: &CameraIntrinsics) -> Result<()> {
        if self.height != intr.height || self.width != intr.width {
            bail!(
                Validation,
                "depth map is {}x{} but intrinsics describe {}x{}",
                self.height, self.width, intr.height, intr.width
            );
        }
        Ok(())
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// True depth per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthDepth {
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f32>,
    pub valid: Vec<bool>,
}

impl GroundTruthDepth {
    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        check_len("true depth", self.depth.len(), n)?;
        check_len("valid mask", self.valid.len(), n)?;
        for i in (0..n).filter(|&i| self.valid[i]) {
            if !(self.depth[i] > 0.0 && self.depth[i].is_finite()) {
                bail!(Validation, "pixel {i}: depth {} must be positive", self.depth[i]);
            }
        }
        Ok(())
    }
}
