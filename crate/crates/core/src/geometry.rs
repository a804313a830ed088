//! Frames, rigid transforms and the ego/residual decomposition of scene flow.
//!
//! Flow vectors are displacements per frame interval (meters per `dt`), and
//! every flow field attaches to the points of the *earlier* frame of a pair.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on `RᵀR = I` and `det R = 1` for in-memory transforms.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// A proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        Self::with_tolerance(rotation, translation, ORTHONORMAL_TOL)
    }

    /// Like [`RigidTransform::new`] with a caller-chosen orthonormality
    /// tolerance. Poses read from text manifests use `1e-6`.
    pub fn with_tolerance(rotation: Matrix3<f64>, translation: Vec3, tol: f64) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("transform has non-finite entries"));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if gram_err > tol {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {gram_err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `yaw` radians about +z followed by `translation`.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        let (s, c) = yaw.sin_cos();
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            c, -s, 0.0,
            s,  c, 0.0,
            0.0, 0.0, 1.0,
        );
        Self { rotation, translation }
    }

    /// Parses a 4×4 row-major homogeneous matrix. The last row must be
    /// `[0, 0, 0, 1]` exactly.
    pub fn from_row_major(m: &[f64; 16], tol: f64) -> Result<Self> {
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::invalid("pose bottom row must be [0, 0, 0, 1]"));
        }
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            m[0], m[1], m[2],
            m[4], m[5], m[6],
            m[8], m[9], m[10],
        );
        Self::with_tolerance(rotation, Vec3::new(m[3], m[7], m[11]), tol)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Rotates a free vector; translation does not apply.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Relative motion mapping sensor coordinates of the `from` pose into the
    /// sensor coordinates of the `to` pose, given sensor-to-world poses:
    /// `to⁻¹ · from`.
    pub fn relative(from: &RigidTransform, to: &RigidTransform) -> Self {
        to.inverse().compose(from)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Object meta-category. Codes are fixed by the frame file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Category {
    Car = 0,
    Other = 1,
    Ped = 2,
    Vru = 3,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Car, Category::Other, Category::Ped, Category::Vru];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Category::Car),
            1 => Some(Category::Other),
            2 => Some(Category::Ped),
            3 => Some(Category::Vru),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Car => "CAR",
            Category::Other => "OTHER",
            Category::Ped => "PED",
            Category::Vru => "VRU",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "CAR" => Some(Category::Car),
            "OTHER" => Some(Category::Other),
            "PED" => Some(Category::Ped),
            "VRU" => Some(Category::Vru),
            _ => None,
        }
    }
}

/// Instance membership of a foreground point. Background points carry no
/// label at all, so "category present ⟺ instance present" holds by
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PointLabel {
    pub instance: u32,
    pub category: Category,
}

/// Reserved on disk to mean "background".
pub const BACKGROUND_INSTANCE: u32 = u32::MAX;

/// One LiDAR sweep in sensor coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudFrame {
    points: Vec<Vec3>,
    frame_time: f64,
    labels: Option<Vec<Option<PointLabel>>>,
    gt_flow: Option<Vec<Vec3>>,
}

impl PointCloudFrame {
    pub fn new(points: Vec<Vec3>, frame_time: f64) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !all_finite(p)) {
            return Err(Error::invalid(format!("point {i} has non-finite coordinates")));
        }
        if !frame_time.is_finite() {
            return Err(Error::invalid("frame time must be finite"));
        }
        Ok(Self {
            points,
            frame_time,
            labels: None,
            gt_flow: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<Option<PointLabel>>) -> Result<Self> {
        if labels.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "label column has {} entries for {} points",
                labels.len(),
                self.points.len()
            )));
        }
        if let Some(i) = labels
            .iter()
            .position(|l| matches!(l, Some(l) if l.instance == BACKGROUND_INSTANCE))
        {
            return Err(Error::invalid(format!(
                "point {i} uses the reserved background instance id"
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_gt_flow(mut self, flow: Vec<Vec3>) -> Result<Self> {
        if flow.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "ground-truth flow has {} entries for {} points",
                flow.len(),
                self.points.len()
            )));
        }
        if let Some(i) = flow.iter().position(|v| !all_finite(v)) {
            return Err(Error::invalid(format!("ground-truth flow {i} is non-finite")));
        }
        self.gt_flow = Some(flow);
        Ok(self)
    }

    pub fn without_gt_flow(mut self) -> Self {
        self.gt_flow = None;
        self
    }

    pub fn with_time(mut self, frame_time: f64) -> Self {
        self.frame_time = frame_time;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn frame_time(&self) -> f64 {
        self.frame_time
    }

    pub fn labels(&self) -> Option<&[Option<PointLabel>]> {
        self.labels.as_deref()
    }

    /// Label of point `i`; `None` for background or unlabeled frames.
    pub fn label(&self, i: usize) -> Option<PointLabel> {
        self.labels.as_ref().and_then(|l| l[i])
    }

    pub fn gt_flow(&self) -> Option<&[Vec3]> {
        self.gt_flow.as_deref()
    }

    /// Ground-truth residual flow as a [`FlowField`], or an error if absent.
    pub fn gt_flow_field(&self) -> Result<FlowField> {
        self.gt_flow
            .as_ref()
            .map(|f| FlowField(f.clone()))
            .ok_or_else(|| Error::invalid("frame carries no ground-truth flow"))
    }
}

/// Per-point 3-vectors associated with one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowField(Vec<Vec3>);

impl FlowField {
    pub fn new(vectors: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = vectors.iter().position(|v| !all_finite(v)) {
            return Err(Error::invalid(format!("flow vector {i} is non-finite")));
        }
        Ok(Self(vectors))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![Vec3::zeros(); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Vec3] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Vec3> {
        self.0
    }

    pub(crate) fn from_vec_unchecked(v: Vec<Vec3>) -> Self {
        Self(v)
    }

    /// Errors unless `self` has exactly `n` vectors.
    pub fn check_len(&self, n: usize, what: &str) -> Result<()> {
        if self.len() != n {
            return Err(Error::invalid(format!(
                "{what} has {} vectors, expected {n}",
                self.len()
            )));
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for FlowField {
    type Output = Vec3;

    fn index(&self, i: usize) -> &Vec3 {
        &self.0[i]
    }
}

pub(crate) fn all_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Apparent motion of each point caused purely by the sensor moving by
/// `pose` (the relative transform from this frame to the next).
pub fn ego_flow(frame: &PointCloudFrame, pose: &RigidTransform) -> Result<FlowField> {
    let vectors = frame.points.iter().map(|p| pose.transform_point(p) - p).collect();
    Ok(FlowField(vectors))
}

/// Full flow = ego flow + residual flow.
pub fn compose_flow(ego: &FlowField, residual: &FlowField) -> Result<FlowField> {
    residual.check_len(ego.len(), "residual flow")?;
    Ok(FlowField(ego.0.iter().zip(&residual.0).map(|(e, r)| e + r).collect()))
}

/// Moves a frame into another sensor frame. Label columns are carried
/// through; ground-truth flow vectors are rotated (not translated).
pub fn apply_ego_compensation(frame: &PointCloudFrame, pose: &RigidTransform) -> Result<PointCloudFrame> {
    let points = frame.points.iter().map(|p| pose.transform_point(p)).collect();
    let gt_flow = frame
        .gt_flow
        .as_ref()
        .map(|f| f.iter().map(|v| pose.rotate(v)).collect());
    Ok(PointCloudFrame {
        points,
        frame_time: frame.frame_time,
        labels: frame.labels.clone(),
        gt_flow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn frame(points: &[[f64; 3]]) -> PointCloudFrame {
        PointCloudFrame::new(points.iter().map(|p| Vec3::from(*p)).collect(), 0.0).unwrap()
    }

    /// Brute-force transform written out component by component.
    fn transform_oracle(m: &[f64; 16], p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = m[4 * r] * p[0] + m[4 * r + 1] * p[1] + m[4 * r + 2] * p[2] + m[4 * r + 3];
        }
        out
    }

    #[test]
    fn identity_gives_zero_flow() {
        let f = frame(&[[1.0, 2.0, 3.0], [-4.0, 0.5, 9.0]]);
        let flow = ego_flow(&f, &RigidTransform::identity()).unwrap();
        assert!(flow.as_slice().iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn translation_gives_constant_flow() {
        let f = frame(&[[1.0, 2.0, 3.0], [-4.0, 0.5, 9.0], [0.0, 0.0, 0.0]]);
        let pose = RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let flow = ego_flow(&f, &pose).unwrap();
        for v in flow.as_slice() {
            assert_eq!(*v, Vec3::new(1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn yaw_quarter_turn() {
        let pose = RigidTransform::from_yaw(FRAC_PI_2, Vec3::zeros());
        let f = frame(&[[1.0, 0.0, 0.0]]);
        let flow = ego_flow(&f, &pose).unwrap();
        let expected = transform_oracle(&pose.to_row_major(), [1.0, 0.0, 0.0]);
        let oracle = Vec3::new(expected[0] - 1.0, expected[1], expected[2]);
        assert!((flow[0] - Vec3::new(-1.0, 1.0, 0.0)).amax() < 1e-12);
        assert!((flow[0] - oracle).amax() < 1e-15);
    }

    #[test]
    fn compose_flow_sums_and_checks_length() {
        let ego = FlowField::new(vec![Vec3::new(1.0, 0.0, 0.0); 3]).unwrap();
        let res = FlowField::new(vec![Vec3::new(0.0, 2.0, 0.0); 3]).unwrap();
        let out = compose_flow(&ego, &res).unwrap();
        assert!(out.as_slice().iter().all(|v| *v == Vec3::new(1.0, 2.0, 0.0)));
        assert_eq!(compose_flow(&ego, &FlowField::zeros(3)).unwrap(), ego);
        assert_eq!(compose_flow(&FlowField::zeros(3), &res).unwrap(), res);
        assert!(matches!(
            compose_flow(&ego, &FlowField::zeros(2)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn compensation_moves_points_and_rotates_flow() {
        let f = frame(&[[2.0, 0.0, 0.0]])
            .with_labels(vec![Some(PointLabel {
                instance: 7,
                category: Category::Ped,
            })])
            .unwrap()
            .with_gt_flow(vec![Vec3::new(1.0, 0.0, 0.0)])
            .unwrap();
        let out = apply_ego_compensation(&f, &RigidTransform::from_yaw(PI, Vec3::zeros())).unwrap();
        assert!((out.points()[0] - Vec3::new(-2.0, 0.0, 0.0)).amax() < 1e-12);
        assert!((out.gt_flow().unwrap()[0] - Vec3::new(-1.0, 0.0, 0.0)).amax() < 1e-12);
        assert_eq!(out.labels(), f.labels());

        let up = apply_ego_compensation(&f, &RigidTransform::from_translation(Vec3::new(0.0, 0.0, 5.0))).unwrap();
        assert_eq!(up.points()[0], Vec3::new(2.0, 0.0, 5.0));
        assert_eq!(up.gt_flow(), f.gt_flow());

        let same = apply_ego_compensation(&f, &RigidTransform::identity()).unwrap();
        assert_eq!(same, f);
    }

    #[test]
    fn inverse_round_trips() {
        let pose = RigidTransform::from_yaw(0.7, Vec3::new(3.0, -1.0, 2.0));
        let f = frame(&[[1.0, 2.0, 3.0], [-5.0, 4.0, 0.25]]);
        let there = apply_ego_compensation(&f, &pose).unwrap();
        let back = apply_ego_compensation(&there, &pose.inverse()).unwrap();
        for (a, b) in back.points().iter().zip(f.points()) {
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_rotations_and_points() {
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(skew, Vec3::zeros()).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(reflect, Vec3::zeros()).is_err());
        assert!(PointCloudFrame::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)], 0.0).is_err());
        assert!(frame(&[[0.0; 3]]).with_gt_flow(vec![]).is_err());
    }

    #[test]
    fn row_major_round_trip() {
        let pose = RigidTransform::from_yaw(-1.3, Vec3::new(0.5, 7.0, -2.0));
        let back = RigidTransform::from_row_major(&pose.to_row_major(), 1e-9).unwrap();
        assert_eq!(back, pose);
    }
}
