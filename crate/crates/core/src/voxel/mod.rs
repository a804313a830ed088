//! Voxel grids, point-to-voxel aggregation and sparse COO voxel tensors.
//!
//! A [`SparseVoxelTensor`] stores active voxels as linearized keys
//! `(x·Y + y)·Z + z`, strictly increasing, with one feature row of width `C`
//! per key. The same key order is the row-major order of [`DenseGrid`], so
//! the dense form doubles as a test oracle.

mod aggregate;
mod dense;
mod features;

pub use aggregate::{v2p_gather, voxelize, VoxelPointIndex};
pub use dense::{to_dense, DenseGrid};
pub use features::{point_features, FeatureMatrix, FeatureMode};

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Scalar type of voxel feature rows.
pub trait Feature:
    Copy
    + Default
    + Debug
    + PartialEq
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
}

impl Feature for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn abs(self) -> Self {
        f64::abs(self)
    }
}

impl Feature for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn abs(self) -> Self {
        f32::abs(self)
    }
}

/// Integer voxel coordinate `(x, y, z)`.
pub type VoxelCoord = [u32; 3];

/// Bytes of one stored coordinate (three `i32`s).
pub const COORD_BYTES: u64 = 12;

/// Geometry and feature width of a voxel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGridSpec {
    origin: Vec3,
    resolution: Vec3,
    dims: [u32; 3],
    feature_width: usize,
}

impl VoxelGridSpec {
    pub fn new(origin: Vec3, resolution: Vec3, dims: [u32; 3], feature_width: usize) -> Result<Self> {
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::config("grid origin must be finite"));
        }
        if !resolution.iter().all(|r| r.is_finite() && *r > 0.0) {
            return Err(Error::config("voxel resolution must be positive and finite"));
        }
        if dims.iter().any(|&d| d == 0 || d > i32::MAX as u32) {
            return Err(Error::config(format!("grid dims {dims:?} out of range")));
        }
        if feature_width == 0 {
            return Err(Error::config("feature width must be at least 1"));
        }
        let cells = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .and_then(|v| v.checked_mul(feature_width as u64));
        if cells.is_none() {
            return Err(Error::Overflow(format!(
                "dense cell count of {dims:?} x {feature_width} overflows 64 bits"
            )));
        }
        Ok(Self {
            origin,
            resolution,
            dims,
            feature_width,
        })
    }

    /// Grid centered on the sensor origin along all three axes.
    pub fn centered(resolution: Vec3, dims: [u32; 3], feature_width: usize) -> Result<Self> {
        let origin = Vec3::new(
            -(dims[0] as f64) * resolution.x / 2.0,
            -(dims[1] as f64) * resolution.y / 2.0,
            -(dims[2] as f64) * resolution.z / 2.0,
        );
        Self::new(origin, resolution, dims, feature_width)
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn resolution(&self) -> Vec3 {
        self.resolution
    }

    pub fn dims(&self) -> [u32; 3] {
        self.dims
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    /// Same geometry with a different feature width.
    pub fn with_feature_width(&self, feature_width: usize) -> Result<Self> {
        Self::new(self.origin, self.resolution, self.dims, feature_width)
    }

    /// Number of voxels `X·Y·Z`.
    pub fn voxel_count(&self) -> u64 {
        self.dims.iter().map(|&d| d as u64).product()
    }

    /// Number of scalar cells `X·Y·Z·C`.
    pub fn cell_count(&self) -> u64 {
        self.voxel_count() * self.feature_width as u64
    }

    pub fn key(&self, c: VoxelCoord) -> u64 {
        let [_, ny, nz] = self.dims;
        (c[0] as u64 * ny as u64 + c[1] as u64) * nz as u64 + c[2] as u64
    }

    pub fn coord(&self, key: u64) -> VoxelCoord {
        let [_, ny, nz] = self.dims;
        let z = key % nz as u64;
        let rest = key / nz as u64;
        [(rest / ny as u64) as u32, (rest % ny as u64) as u32, z as u32]
    }

    pub fn contains(&self, c: VoxelCoord) -> bool {
        c.iter().zip(&self.dims).all(|(v, d)| v < d)
    }

    /// Voxel containing `p`, using half-open cells `[lo, lo + res)`; points
    /// outside the grid (including its upper faces) yield `None`.
    pub fn voxel_of(&self, p: &Vec3) -> Option<VoxelCoord> {
        let mut out = [0u32; 3];
        for axis in 0..3 {
            let f = ((p[axis] - self.origin[axis]) / self.resolution[axis]).floor();
            if !(f >= 0.0 && f < self.dims[axis] as f64) {
                return None;
            }
            out[axis] = f as u32;
        }
        Some(out)
    }

    pub fn voxel_center(&self, c: VoxelCoord) -> Vec3 {
        Vec3::new(
            self.origin.x + (c[0] as f64 + 0.5) * self.resolution.x,
            self.origin.y + (c[1] as f64 + 0.5) * self.resolution.y,
            self.origin.z + (c[2] as f64 + 0.5) * self.resolution.z,
        )
    }

    /// Errors unless both specs describe the same grid and width.
    pub fn ensure_matches(&self, other: &VoxelGridSpec) -> Result<()> {
        if self != other {
            return Err(Error::config(format!("voxel grid mismatch: {self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Sparse COO voxel tensor: strictly increasing keys plus a `V × C` row-major
/// feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelTensor<T: Feature = f64> {
    spec: VoxelGridSpec,
    keys: Vec<u64>,
    features: Vec<T>,
}

impl<T: Feature> SparseVoxelTensor<T> {
    pub fn empty(spec: VoxelGridSpec) -> Self {
        Self {
            spec,
            keys: Vec::new(),
            features: Vec::new(),
        }
    }

    /// Builds a tensor from already-sorted keys, validating every invariant.
    pub fn from_sorted_keys(spec: VoxelGridSpec, keys: Vec<u64>, features: Vec<T>) -> Result<Self> {
        let t = Self { spec, keys, features };
        t.validate()?;
        Ok(t)
    }

    /// Builds a tensor from coordinates in any order. Duplicates are rejected.
    pub fn from_coords(spec: VoxelGridSpec, coords: &[VoxelCoord], features: &[T]) -> Result<Self> {
        let c = spec.feature_width;
        if features.len() != coords.len() * c {
            return Err(Error::invalid(format!(
                "{} feature values for {} coordinates of width {c}",
                features.len(),
                coords.len()
            )));
        }
        if let Some(bad) = coords.iter().find(|v| !spec.contains(**v)) {
            return Err(Error::invalid(format!("coordinate {bad:?} outside grid")));
        }
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_unstable_by_key(|&i| spec.key(coords[i]));
        let keys: Vec<u64> = order.iter().map(|&i| spec.key(coords[i])).collect();
        if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate coordinate {:?}", spec.coord(w[0]))));
        }
        let mut rows = Vec::with_capacity(features.len());
        for &i in &order {
            rows.extend_from_slice(&features[i * c..(i + 1) * c]);
        }
        Ok(Self {
            spec,
            keys,
            features: rows,
        })
    }

    pub(crate) fn from_parts_unchecked(spec: VoxelGridSpec, keys: Vec<u64>, features: Vec<T>) -> Self {
        debug_assert_eq!(keys.len() * spec.feature_width, features.len());
        Self { spec, keys, features }
    }

    /// Checks sortedness, bounds and row count.
    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.keys.len() * self.spec.feature_width {
            return Err(Error::Corruption(format!(
                "{} feature values for {} voxels of width {}",
                self.features.len(),
                self.keys.len(),
                self.spec.feature_width
            )));
        }
        if let Some(i) = self.keys.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Corruption(format!(
                "keys not strictly increasing at row {}",
                i + 1
            )));
        }
        if let Some(&last) = self.keys.last() {
            if last >= self.spec.voxel_count() {
                return Err(Error::Corruption(format!("key {last} outside grid")));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn width(&self) -> usize {
        self.spec.feature_width
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.width();
        &self.features[i * c..(i + 1) * c]
    }

    pub fn coords(&self) -> impl ExactSizeIterator<Item = VoxelCoord> + '_ {
        self.keys.iter().map(|&k| self.spec.coord(k))
    }

    /// Row index of `coord`, if active.
    pub fn find(&self, coord: VoxelCoord) -> Option<usize> {
        if !self.spec.contains(coord) {
            return None;
        }
        self.keys.binary_search(&self.spec.key(coord)).ok()
    }

    pub fn cast<U: Feature>(&self) -> SparseVoxelTensor<U> {
        SparseVoxelTensor {
            spec: self.spec,
            keys: self.keys.clone(),
            features: self.features.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Analytic storage cost: `V · (12 + C · size_of::<T>())` bytes.
    pub fn byte_footprint(&self) -> u64 {
        sparse_bytes(self.len() as u64, self.width(), std::mem::size_of::<T>())
    }

    pub(crate) fn into_parts(self) -> (VoxelGridSpec, Vec<u64>, Vec<T>) {
        (self.spec, self.keys, self.features)
    }
}

/// Analytic sparse footprint for `active` voxels.
pub fn sparse_bytes(active: u64, width: usize, elem_size: usize) -> u64 {
    active * (COORD_BYTES + (width * elem_size) as u64)
}

/// Analytic dense footprint of the full grid.
pub fn dense_bytes(spec: &VoxelGridSpec, elem_size: usize) -> u64 {
    spec.cell_count() * elem_size as u64
}

/// Active-to-dense voxel count comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageReport {
    pub active: u64,
    pub dense: u64,
}

impl StorageReport {
    /// `active / dense` as a fraction.
    pub fn ratio(&self) -> f64 {
        self.active as f64 / self.dense as f64
    }

    pub fn percent(&self) -> f64 {
        self.ratio() * 100.0
    }
}

impl std::fmt::Display for StorageReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "active {} / dense {} = {:.2}%",
            self.active,
            self.dense,
            self.percent()
        )
    }
}

pub fn storage_report(spec: &VoxelGridSpec, active: u64) -> Result<StorageReport> {
    let dense = spec.voxel_count();
    if active > dense {
        return Err(Error::invalid(format!(
            "{active} active voxels exceed the {dense} voxels of the grid"
        )));
    }
    Ok(StorageReport { active, dense })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_spec(dims: [u32; 3], c: usize) -> VoxelGridSpec {
        VoxelGridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), dims, c).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(VoxelGridSpec::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0), [1, 1, 1], 1).is_err());
        assert!(VoxelGridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), [0, 1, 1], 1).is_err());
        assert!(VoxelGridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), [1, 1, 1], 0).is_err());
        let huge = VoxelGridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), [i32::MAX as u32; 3], 4);
        assert!(matches!(huge, Err(Error::Overflow(_))));
    }

    #[test]
    fn key_round_trip_and_order() {
        let spec = unit_spec([3, 4, 5], 1);
        let mut prev = None;
        for x in 0..3 {
            for y in 0..4 {
                for z in 0..5 {
                    let k = spec.key([x, y, z]);
                    assert_eq!(spec.coord(k), [x, y, z]);
                    if let Some(p) = prev {
                        assert_eq!(k, p + 1, "z must vary fastest");
                    }
                    prev = Some(k);
                }
            }
        }
    }

    #[test]
    fn half_open_cells() {
        let spec = unit_spec([2, 2, 2], 1);
        assert_eq!(spec.voxel_of(&Vec3::new(0.0, 0.0, 0.0)), Some([0, 0, 0]));
        assert_eq!(spec.voxel_of(&Vec3::new(1.999, 1.0, 0.5)), Some([1, 1, 0]));
        assert_eq!(spec.voxel_of(&Vec3::new(2.0, 0.0, 0.0)), None);
        assert_eq!(spec.voxel_of(&Vec3::new(-1e-12, 0.0, 0.0)), None);
    }

    #[test]
    fn from_coords_sorts_and_rejects_duplicates() {
        let spec = unit_spec([2, 2, 2], 1);
        let t = SparseVoxelTensor::from_coords(spec, &[[1, 0, 0], [0, 0, 1]], &[5.0, 3.0]).unwrap();
        assert_eq!(t.coords().collect::<Vec<_>>(), vec![[0, 0, 1], [1, 0, 0]]);
        assert_eq!(t.features(), &[3.0, 5.0]);
        assert!(SparseVoxelTensor::from_coords(spec, &[[1, 0, 0], [1, 0, 0]], &[1.0, 2.0]).is_err());
        assert!(SparseVoxelTensor::<f64>::from_sorted_keys(spec, vec![3, 1], vec![0.0, 0.0]).is_err());
        assert!(SparseVoxelTensor::<f64>::from_sorted_keys(spec, vec![8], vec![0.0]).is_err());
    }

    #[test]
    fn storage_anchors() {
        let spec = unit_spec([512, 512, 32], 1);
        let r = storage_report(&spec, 29475).unwrap();
        assert_eq!(r.dense, 8_388_608);
        assert_eq!(format!("{:.2}", r.percent()), "0.35");
        assert_eq!(
            format!("{:.2}", storage_report(&spec, 78666).unwrap().percent()),
            "0.94"
        );
        assert_eq!(storage_report(&spec, 0).unwrap().percent(), 0.0);
        assert_eq!(r.ratio(), 29475.0 / 8_388_608.0);
        assert!(storage_report(&spec, 8_388_609).is_err());
    }
}
