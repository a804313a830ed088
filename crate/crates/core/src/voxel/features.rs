use crate::error::{Error, Result};
use crate::geometry::PointCloudFrame;

use super::VoxelGridSpec;

/// Row-major `N × width` matrix of per-point features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    width: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 {
            return Err(Error::config("feature width must be at least 1"));
        }
        if !data.len().is_multiple_of(width) {
            return Err(Error::invalid(format!(
                "{} values do not form rows of width {width}",
                data.len()
            )));
        }
        Ok(Self { width, data })
    }

    pub fn zeros(rows: usize, width: usize) -> Self {
        Self {
            width,
            data: vec![0.0; rows * width],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Hand-crafted per-point features standing in for a learned point encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMode {
    /// Width 1, constant `1.0`.
    Occupancy,
    /// Width 4: `1.0` followed by the offset from the voxel center divided by
    /// the resolution, per axis.
    Offset,
    /// Caller-supplied columns, one row per point.
    Passthrough(FeatureMatrix),
}

impl FeatureMode {
    /// Feature width this mode produces.
    pub fn width(&self) -> usize {
        match self {
            FeatureMode::Occupancy => 1,
            FeatureMode::Offset => 4,
            FeatureMode::Passthrough(m) => m.width(),
        }
    }
}

pub fn point_features(frame: &PointCloudFrame, spec: &VoxelGridSpec, mode: &FeatureMode) -> Result<FeatureMatrix> {
    if mode.width() != spec.feature_width() {
        return Err(Error::config(format!(
            "feature mode produces width {} but the grid expects {}",
            mode.width(),
            spec.feature_width()
        )));
    }
    match mode {
        FeatureMode::Occupancy => Ok(FeatureMatrix {
            width: 1,
            data: vec![1.0; frame.len()],
        }),
        FeatureMode::Offset => {
            let origin = spec.origin();
            let res = spec.resolution();
            let mut data = Vec::with_capacity(frame.len() * 4);
            for p in frame.points() {
                data.push(1.0);
                // Cell index is computed even for out-of-grid points; those
                // rows are dropped by voxelization anyway.
                for axis in 0..3 {
                    let cell = ((p[axis] - origin[axis]) / res[axis]).floor();
                    let center = origin[axis] + (cell + 0.5) * res[axis];
                    data.push((p[axis] - center) / res[axis]);
                }
            }
            Ok(FeatureMatrix { width: 4, data })
        }
        FeatureMode::Passthrough(m) => {
            if m.rows() != frame.len() {
                return Err(Error::invalid(format!(
                    "passthrough matrix has {} rows for {} points",
                    m.rows(),
                    frame.len()
                )));
            }
            Ok(m.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn frame(points: &[[f64; 3]]) -> PointCloudFrame {
        PointCloudFrame::new(points.iter().map(|p| Vec3::from(*p)).collect(), 0.0).unwrap()
    }

    fn spec(c: usize) -> VoxelGridSpec {
        VoxelGridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), [4, 4, 4], c).unwrap()
    }

    #[test]
    fn occupancy_is_constant() {
        let f = frame(&[[0.3, 1.2, 3.9], [100.0, -5.0, 0.0]]);
        let m = point_features(&f, &spec(1), &FeatureMode::Occupancy).unwrap();
        assert_eq!(m.data(), &[1.0, 1.0]);
    }

    #[test]
    fn offset_rows() {
        let f = frame(&[[0.5, 0.5, 0.5], [0.75, 0.5, 0.5]]);
        let m = point_features(&f, &spec(4), &FeatureMode::Offset).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.row(1), &[1.0, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let f = frame(&[[0.5, 0.5, 0.5]]);
        assert!(matches!(
            point_features(&f, &spec(4), &FeatureMode::Occupancy),
            Err(Error::Config(_))
        ));
        let pass = FeatureMatrix::new(2, vec![1.0, 2.0]).unwrap();
        assert!(point_features(&f, &spec(3), &FeatureMode::Passthrough(pass.clone())).is_err());
        assert_eq!(
            point_features(&f, &spec(2), &FeatureMode::Passthrough(pass.clone())).unwrap(),
            pass
        );
    }
}
