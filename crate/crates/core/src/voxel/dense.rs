use rayon::prelude::*;

use super::{Feature, SparseVoxelTensor, VoxelGridSpec};

/// Full `X × Y × Z × C` array in row-major order (z fastest, then channel).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid<T: Feature = f64> {
    spec: VoxelGridSpec,
    data: Vec<T>,
}

impl<T: Feature> DenseGrid<T> {
    pub fn zeros(spec: &VoxelGridSpec) -> Self {
        Self {
            spec: *spec,
            data: vec![T::ZERO; spec.cell_count() as usize],
        }
    }

    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, coord: [u32; 3], channel: usize) -> T {
        let c = self.spec.feature_width();
        self.data[self.spec.key(coord) as usize * c + channel]
    }

    /// Collects every voxel with at least one nonzero channel, in key order.
    pub fn sparsify(&self) -> SparseVoxelTensor<T> {
        let c = self.spec.feature_width();
        let mut keys = Vec::new();
        let mut features = Vec::new();
        for (k, row) in self.data.chunks(c).enumerate() {
            if row.iter().any(|v| *v != T::ZERO) {
                keys.push(k as u64);
                features.extend_from_slice(row);
            }
        }
        SparseVoxelTensor::from_parts_unchecked(self.spec, keys, features)
    }

    /// Largest absolute per-cell difference, as `f64`.
    pub fn max_abs_diff(&self, other: &DenseGrid<T>) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "grid size mismatch");
        self.data
            .par_iter()
            .zip(other.data.par_iter())
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .reduce(|| 0.0, f64::max)
    }

    /// Largest absolute difference against a sparse tensor without
    /// materializing it: rows absent from `sparse` compare against zero.
    pub fn max_abs_diff_sparse(&self, sparse: &SparseVoxelTensor<T>) -> f64 {
        assert_eq!(self.spec, *sparse.spec(), "grid spec mismatch");
        let c = self.spec.feature_width();
        let mut next = 0;
        let mut worst = 0.0_f64;
        for (k, row) in self.data.chunks(c).enumerate() {
            let other = match sparse.keys().get(next) {
                Some(&sk) if sk == k as u64 => {
                    next += 1;
                    Some(sparse.row(next - 1))
                }
                _ => None,
            };
            for (j, v) in row.iter().enumerate() {
                let o = other.map_or(0.0, |r| r[j].to_f64());
                worst = worst.max((v.to_f64() - o).abs());
            }
        }
        worst
    }
}

/// Scatters the active rows into a zero-filled dense grid.
pub fn to_dense<T: Feature>(tensor: &SparseVoxelTensor<T>) -> DenseGrid<T> {
    let mut grid = DenseGrid::zeros(tensor.spec());
    let c = tensor.width();
    for (i, &k) in tensor.keys().iter().enumerate() {
        let at = k as usize * c;
        grid.data[at..at + c].copy_from_slice(tensor.row(i));
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn spec() -> VoxelGridSpec {
        VoxelGridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), [2, 2, 2], 1).unwrap()
    }

    #[test]
    fn empty_is_all_zero() {
        let g = to_dense(&SparseVoxelTensor::<f64>::empty(spec()));
        assert_eq!(g.data(), &[0.0; 8]);
    }

    #[test]
    fn single_voxel() {
        let t = SparseVoxelTensor::from_coords(spec(), &[[1, 1, 1]], &[5.0]).unwrap();
        let g = to_dense(&t);
        assert_eq!(g.data().iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(g.get([1, 1, 1], 0), 5.0);
    }

    #[test]
    fn round_trip_through_dense() {
        let s = VoxelGridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), [3, 2, 4], 2).unwrap();
        let t =
            SparseVoxelTensor::from_coords(s, &[[2, 1, 3], [0, 0, 0], [1, 0, 2]], &[1.5, -2.0, 0.25, 0.0, 0.0, 3.0])
                .unwrap();
        let back = to_dense(&t).sparsify();
        assert_eq!(back, t);
        assert_eq!(to_dense(&t).max_abs_diff_sparse(&t), 0.0);
        let shifted = SparseVoxelTensor::from_coords(s, &[[2, 1, 3]], &[1.5, -1.0]).unwrap();
        assert_eq!(to_dense(&t).max_abs_diff_sparse(&shifted), 3.0);
    }
}
