//! Three-way end-point error and dynamic bucket-normalized EPE.
//!
//! All flows here are residual flows in meters per frame interval. EPE values
//! are reported in centimeters; bucket-normalized ratios are dimensionless
//! because numerator and denominator are both per-frame displacements.

use crate::error::{Error, Result};
use crate::geometry::{Category, FlowField, PointCloudFrame};

/// Points faster than this (m/s, strict) count as dynamic.
pub const DYNAMIC_SPEED: f64 = 0.5;

const CM_PER_M: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    ForegroundDynamic,
    ForegroundStatic,
    BackgroundStatic,
}

impl Region {
    fn index(self) -> usize {
        match self {
            Region::ForegroundDynamic => 0,
            Region::ForegroundStatic => 1,
            Region::BackgroundStatic => 2,
        }
    }
}

fn is_dynamic(gt: &crate::geometry::Vec3, dt: f64) -> bool {
    gt.norm() / dt > DYNAMIC_SPEED
}

/// Labels each point FD, FS or BS. Foreground means "carries an instance id".
/// A moving point without an instance is labeled FD.
pub fn classify_points(frame: &PointCloudFrame, dt: f64) -> Result<Vec<Region>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("frame interval {dt} must be positive")));
    }
    let gt = frame
        .gt_flow()
        .ok_or_else(|| Error::invalid("classification needs ground-truth flow"))?;
    Ok(gt
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let foreground = frame.label(i).is_some();
            match (foreground, is_dynamic(g, dt)) {
                (_, true) => Region::ForegroundDynamic,
                (true, false) => Region::ForegroundStatic,
                (false, false) => Region::BackgroundStatic,
            }
        })
        .collect())
}

/// Per-region mean EPE in centimeters and their unweighted mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeWayEpe {
    pub mean: f64,
    pub fd: f64,
    pub fs: f64,
    pub bs: f64,
    /// Point counts for FD, FS, BS. An empty region reports EPE 0.
    pub counts: [usize; 3],
}

/// Per-category dynamic EPE normalized by mean ground-truth speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketNormalized {
    /// Ratio per category (CAR, OTHER, PED, VRU); `None` when the category
    /// has no dynamic points.
    pub ratios: [Option<f64>; 4],
    /// Mean over present categories, `None` if none are present.
    pub mean: Option<f64>,
    pub counts: [usize; 4],
}

/// Combined evaluation of one or more frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub threeway: ThreeWayEpe,
    pub bucket: BucketNormalized,
}

/// Running sums over any number of frames; region and category means pool
/// all points.
#[derive(Debug, Clone, Default)]
pub struct Evaluator {
    region_sum: [f64; 3],
    region_count: [usize; 3],
    cat_err: [f64; 4],
    cat_speed: [f64; 4],
    cat_count: [usize; 4],
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one frame. `frame` must carry ground-truth flow.
    pub fn add_frame(&mut self, pred: &FlowField, frame: &PointCloudFrame, dt: f64) -> Result<()> {
        let labels = classify_points(frame, dt)?;
        let gt = frame.gt_flow_field()?;
        self.add_regions(pred, &gt, &labels)?;
        self.add_buckets(pred, &gt, frame, dt)
    }

    fn add_regions(&mut self, pred: &FlowField, gt: &FlowField, labels: &[Region]) -> Result<()> {
        pred.check_len(gt.len(), "prediction")?;
        if labels.len() != gt.len() {
            return Err(Error::invalid(format!(
                "{} region labels for {} points",
                labels.len(),
                gt.len()
            )));
        }
        for ((p, g), r) in pred.as_slice().iter().zip(gt.as_slice()).zip(labels) {
            self.region_sum[r.index()] += (p - g).norm();
            self.region_count[r.index()] += 1;
        }
        Ok(())
    }

    fn add_buckets(&mut self, pred: &FlowField, gt: &FlowField, frame: &PointCloudFrame, dt: f64) -> Result<()> {
        pred.check_len(gt.len(), "prediction")?;
        gt.check_len(frame.len(), "ground-truth flow")?;
        for (i, (p, g)) in pred.as_slice().iter().zip(gt.as_slice()).enumerate() {
            let Some(label) = frame.label(i) else { continue };
            if !is_dynamic(g, dt) {
                continue;
            }
            let c = label.category.index();
            self.cat_err[c] += (p - g).norm();
            self.cat_speed[c] += g.norm();
            self.cat_count[c] += 1;
        }
        Ok(())
    }

    pub fn threeway(&self) -> ThreeWayEpe {
        let mean_cm = |r: usize| {
            if self.region_count[r] == 0 {
                0.0
            } else {
                self.region_sum[r] / self.region_count[r] as f64 * CM_PER_M
            }
        };
        let (fd, fs, bs) = (mean_cm(0), mean_cm(1), mean_cm(2));
        ThreeWayEpe {
            mean: (fd + fs + bs) / 3.0,
            fd,
            fs,
            bs,
            counts: self.region_count,
        }
    }

    pub fn bucket(&self) -> BucketNormalized {
        let mut ratios = [None; 4];
        for (c, ratio) in ratios.iter_mut().enumerate() {
            let n = self.cat_count[c];
            if n > 0 {
                let mean_err = self.cat_err[c] / n as f64;
                let mean_speed = self.cat_speed[c] / n as f64;
                *ratio = Some(mean_err / mean_speed);
            }
        }
        let present: Vec<f64> = ratios.iter().flatten().copied().collect();
        let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        BucketNormalized {
            ratios,
            mean,
            counts: self.cat_count,
        }
    }

    pub fn finish(&self) -> EvalReport {
        EvalReport {
            threeway: self.threeway(),
            bucket: self.bucket(),
        }
    }
}

pub fn threeway_epe(pred: &FlowField, gt: &FlowField, labels: &[Region]) -> Result<ThreeWayEpe> {
    let mut ev = Evaluator::new();
    ev.add_regions(pred, gt, labels)?;
    Ok(ev.threeway())
}

pub fn bucket_normalized(
    pred: &FlowField,
    gt: &FlowField,
    frame: &PointCloudFrame,
    dt: f64,
) -> Result<BucketNormalized> {
    let mut ev = Evaluator::new();
    ev.add_buckets(pred, gt, frame, dt)?;
    Ok(ev.bucket())
}

/// Both metric families for a single frame.
pub fn evaluate(pred: &FlowField, frame: &PointCloudFrame, dt: f64) -> Result<EvalReport> {
    let mut ev = Evaluator::new();
    ev.add_frame(pred, frame, dt)?;
    Ok(ev.finish())
}

impl BucketNormalized {
    pub fn ratio(&self, c: Category) -> Option<f64> {
        self.ratios[c.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PointLabel, Vec3};

    fn frame(gt: &[[f64; 3]], labels: Vec<Option<PointLabel>>) -> PointCloudFrame {
        PointCloudFrame::new(vec![Vec3::zeros(); gt.len()], 0.0)
            .unwrap()
            .with_labels(labels)
            .unwrap()
            .with_gt_flow(gt.iter().map(|v| Vec3::from(*v)).collect())
            .unwrap()
    }

    fn car(id: u32) -> Option<PointLabel> {
        Some(PointLabel {
            instance: id,
            category: Category::Car,
        })
    }

    #[test]
    fn classification_truth_table() {
        // dt = 0.5 keeps the 0.5 m/s boundary exact: 0.25 m / 0.5 s.
        let f = frame(
            &[
                [0.0; 3],
                [0.1, 0.0, 0.0],
                [0.25, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
            ],
            vec![None, car(1), car(1), car(2), None],
        );
        let r = classify_points(&f, 0.5).unwrap();
        assert_eq!(
            r,
            vec![
                Region::BackgroundStatic,
                Region::ForegroundStatic,
                Region::ForegroundStatic,
                Region::ForegroundDynamic,
                Region::ForegroundDynamic,
            ]
        );
    }

    #[test]
    fn missing_gt_is_error() {
        let f = PointCloudFrame::new(vec![Vec3::zeros()], 0.0).unwrap();
        assert!(classify_points(&f, 0.1).is_err());
    }

    #[test]
    fn fd_345_in_centimeters() {
        let gt = FlowField::new(vec![Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let pred = FlowField::new(vec![Vec3::new(1.03, 0.04, 0.0)]).unwrap();
        let e = threeway_epe(&pred, &gt, &[Region::ForegroundDynamic]).unwrap();
        assert!((e.fd - 5.0).abs() < 1e-12);
        assert_eq!((e.fs, e.bs), (0.0, 0.0));
        assert!((e.mean - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(e.counts, [1, 0, 0]);
    }

    #[test]
    fn perfect_and_zero_predictors() {
        let f = frame(
            &[[0.0; 3], [0.2, 0.0, 0.0], [0.0, 0.3, 0.0]],
            vec![None, car(1), car(1)],
        );
        let gt = f.gt_flow_field().unwrap();
        let perfect = evaluate(&gt, &f, 0.1).unwrap();
        assert_eq!(perfect.threeway.mean, 0.0);
        assert_eq!(perfect.bucket.ratio(Category::Car), Some(0.0));

        let zero = evaluate(&FlowField::zeros(3), &f, 0.1).unwrap();
        assert_eq!(zero.bucket.ratio(Category::Car), Some(1.0));
        assert_eq!(zero.bucket.ratio(Category::Ped), None);
        assert_eq!(zero.bucket.mean, Some(1.0));
        assert_eq!(zero.threeway.bs, 0.0);
    }

    #[test]
    fn bucket_ratio_worked() {
        let f = frame(&[[0.1, 0.0, 0.0]], vec![car(0)]);
        let pred = FlowField::new(vec![Vec3::new(0.12, 0.0, 0.0)]).unwrap();
        let b = bucket_normalized(&pred, &f.gt_flow_field().unwrap(), &f, 0.1).unwrap();
        assert!((b.ratio(Category::Car).unwrap() - 0.2).abs() < 1e-12);
    }
}
