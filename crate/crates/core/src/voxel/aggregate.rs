use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointCloudFrame;

use super::{Feature, FeatureMatrix, SparseVoxelTensor, VoxelGridSpec};

const DROPPED: u32 = u32::MAX;

/// Recorded point-to-voxel assignment, used to map voxel features back to
/// points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelPointIndex {
    ordinals: Vec<u32>,
}

impl VoxelPointIndex {
    pub fn from_ordinals(ordinals: Vec<Option<u32>>) -> Result<Self> {
        if ordinals.contains(&Some(DROPPED)) {
            return Err(Error::invalid("voxel ordinal u32::MAX is reserved"));
        }
        Ok(Self {
            ordinals: ordinals.into_iter().map(|o| o.unwrap_or(DROPPED)).collect(),
        })
    }

    /// Number of input points (retained or not).
    pub fn len(&self) -> usize {
        self.ordinals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordinals.is_empty()
    }

    /// Row of the voxel holding point `i`, or `None` if it fell outside the grid.
    pub fn ordinal(&self, i: usize) -> Option<usize> {
        match self.ordinals[i] {
            DROPPED => None,
            o => Some(o as usize),
        }
    }

    pub fn retained(&self, i: usize) -> bool {
        self.ordinals[i] != DROPPED
    }

    pub fn mask(&self) -> Vec<bool> {
        self.ordinals.iter().map(|&o| o != DROPPED).collect()
    }

    pub fn retained_count(&self) -> usize {
        self.ordinals.iter().filter(|&&o| o != DROPPED).count()
    }
}

/// Mean-aggregates per-point features into active voxels.
///
/// Member rows are summed in ascending point index, so the result does not
/// depend on the worker count. Points outside the grid are dropped and
/// flagged in the returned index.
pub fn voxelize(
    frame: &PointCloudFrame,
    feats: &FeatureMatrix,
    spec: &VoxelGridSpec,
) -> Result<(SparseVoxelTensor<f64>, VoxelPointIndex)> {
    let c = spec.feature_width();
    if feats.width() != c {
        return Err(Error::config(format!(
            "feature matrix width {} does not match grid width {c}",
            feats.width()
        )));
    }
    if feats.rows() != frame.len() {
        return Err(Error::invalid(format!(
            "{} feature rows for {} points",
            feats.rows(),
            frame.len()
        )));
    }
    if frame.len() >= DROPPED as usize {
        return Err(Error::invalid("too many points for a 32-bit voxel index"));
    }

    let mut pairs: Vec<(u64, u32)> = frame
        .points()
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| spec.voxel_of(p).map(|v| (spec.key(v), i as u32)))
        .collect();
    pairs.par_sort_unstable();

    // Segment boundaries over equal keys.
    let mut starts = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        if i == 0 || pairs[i - 1].0 != pair.0 {
            starts.push(i);
        }
    }
    let v = starts.len();
    let keys: Vec<u64> = starts.iter().map(|&s| pairs[s].0).collect();

    let mut features = vec![0.0f64; v * c];
    features.par_chunks_mut(c).enumerate().for_each(|(seg, row)| {
        let lo = starts[seg];
        let hi = starts.get(seg + 1).copied().unwrap_or(pairs.len());
        for &(_, idx) in &pairs[lo..hi] {
            for (acc, x) in row.iter_mut().zip(feats.row(idx as usize)) {
                *acc += x;
            }
        }
        let n = (hi - lo) as f64;
        for acc in row.iter_mut() {
            *acc /= n;
        }
    });

    let mut ordinals = vec![DROPPED; frame.len()];
    for (seg, &lo) in starts.iter().enumerate() {
        let hi = starts.get(seg + 1).copied().unwrap_or(pairs.len());
        for &(_, idx) in &pairs[lo..hi] {
            ordinals[idx as usize] = seg as u32;
        }
    }

    Ok((
        SparseVoxelTensor::from_parts_unchecked(*spec, keys, features),
        VoxelPointIndex { ordinals },
    ))
}

/// Gives every retained point the feature row of its voxel and every dropped
/// point a zero row.
pub fn v2p_gather<T: Feature>(tensor: &SparseVoxelTensor<T>, index: &VoxelPointIndex) -> Result<FeatureMatrix> {
    let c = tensor.width();
    let mut out = FeatureMatrix::zeros(index.len(), c);
    for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
        if let Some(o) = index.ordinal(i) {
            if o >= tensor.len() {
                return Err(Error::Corruption(format!(
                    "point {i} maps to voxel row {o} but the tensor has {} rows",
                    tensor.len()
                )));
            }
            for (dst, src) in row.iter_mut().zip(tensor.row(o)) {
                *dst = src.to_f64();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::voxel::{point_features, FeatureMode};

    fn frame(points: &[[f64; 3]]) -> PointCloudFrame {
        PointCloudFrame::new(points.iter().map(|p| Vec3::from(*p)).collect(), 0.0).unwrap()
    }

    fn spec(c: usize) -> VoxelGridSpec {
        VoxelGridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), [4, 4, 4], c).unwrap()
    }

    /// Bins into a full X×Y×Z array and divides by counts.
    fn dense_accumulate(f: &PointCloudFrame, feats: &FeatureMatrix, s: &VoxelGridSpec) -> Vec<f64> {
        let n = s.voxel_count() as usize;
        let c = s.feature_width();
        let mut sum = vec![0.0; n * c];
        let mut count = vec![0usize; n];
        for (i, p) in f.points().iter().enumerate() {
            if let Some(v) = s.voxel_of(p) {
                let k = s.key(v) as usize;
                count[k] += 1;
                for j in 0..c {
                    sum[k * c + j] += feats.row(i)[j];
                }
            }
        }
        for k in 0..n {
            if count[k] > 0 {
                for j in 0..c {
                    sum[k * c + j] /= count[k] as f64;
                }
            }
        }
        sum
    }

    #[test]
    fn mean_of_two() {
        let f = frame(&[[0.1, 0.1, 0.1], [0.9, 0.2, 0.3]]);
        let feats = FeatureMatrix::new(1, vec![2.0, 4.0]).unwrap();
        let (t, idx) = voxelize(&f, &feats, &spec(1)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.row(0), &[3.0]);
        assert_eq!(idx.retained_count(), 2);
    }

    #[test]
    fn all_outside_is_empty() {
        let f = frame(&[[-1.0, 0.0, 0.0], [4.0, 1.0, 1.0]]);
        let feats = FeatureMatrix::new(1, vec![1.0, 1.0]).unwrap();
        let (t, idx) = voxelize(&f, &feats, &spec(1)).unwrap();
        assert!(t.is_empty());
        assert_eq!(idx.mask(), vec![false, false]);
        let g = v2p_gather(&t, &idx).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    #[test]
    fn three_points_two_voxels_against_dense_oracle() {
        let f = frame(&[[0.2, 0.2, 0.2], [2.5, 1.5, 0.5], [0.7, 0.4, 0.9]]);
        let feats = FeatureMatrix::new(1, vec![1.0, 7.0, 5.0]).unwrap();
        let s = spec(1);
        let (t, idx) = voxelize(&f, &feats, &s).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.features(), &[3.0, 7.0]);

        let oracle = dense_accumulate(&f, &feats, &s);
        let dense = crate::voxel::to_dense(&t);
        assert_eq!(dense.data(), oracle.as_slice());

        let g = v2p_gather(&t, &idx).unwrap();
        assert_eq!(g.data(), &[3.0, 7.0, 3.0]);
    }

    #[test]
    fn gather_occupancy_is_one() {
        let f = frame(&[[0.2, 0.2, 0.2], [2.5, 1.5, 0.5], [0.7, 0.4, 0.9], [9.0, 0.0, 0.0]]);
        let s = spec(1);
        let feats = point_features(&f, &s, &FeatureMode::Occupancy).unwrap();
        let (t, idx) = voxelize(&f, &feats, &s).unwrap();
        let g = v2p_gather(&t, &idx).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn gather_rejects_corrupt_index() {
        let t = SparseVoxelTensor::<f64>::empty(spec(1));
        let idx = VoxelPointIndex::from_ordinals(vec![Some(0)]).unwrap();
        assert!(matches!(v2p_gather(&t, &idx), Err(Error::Corruption(_))));
    }
}
