//! Scene-flow supervision losses with analytic gradients.
//!
//! Three terms are summed into the total:
//!
//! * motion-awareness: per speed bin, the mean residual norm;
//! * category-balanced: per (category, speed bin) cell, the mean residual
//!   norm weighted by `w_c · γ_b`;
//! * instance consistency: for each moving instance, `ω_c · ê · exp(ê)` where
//!   `ê` is the instance's mean residual norm, averaged over moving instances.
//!
//! Gradients are with respect to the predicted residual flow. The subgradient
//! of `‖r‖` at `r = 0` is taken to be zero.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{Category, FlowField, PointCloudFrame, Vec3};

/// Largest per-instance mean error accepted before `exp` is considered
/// numerically unsafe.
pub const MAX_INSTANCE_ERROR: f64 = 50.0;

/// Loss weight tables and speed thresholds. Missing TOML keys take the
/// default value.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// `w_c` for CAR, OTHER, PED, VRU.
    pub category_weights: [f64; 4],
    /// `γ_b` for the static, slow and dynamic bins.
    pub speed_weights: [f64; 3],
    /// `ω_c` used by the instance term.
    pub instance_weights: [f64; 4],
    /// Bin edges in m/s; bins are `[0, e0)`, `[e0, e1)`, `[e1, ∞)`.
    pub speed_bin_edges: [f64; 2],
    /// Instances whose speed exceeds this (m/s) enter the instance term.
    pub instance_gate: f64,
    /// Frame interval in seconds.
    pub frame_dt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            category_weights: [1.0, 1.5, 2.0, 2.5],
            speed_weights: [0.1, 0.4, 0.5],
            instance_weights: [1.0, 1.5, 2.0, 2.5],
            speed_bin_edges: [0.4, 1.0],
            instance_gate: 0.4,
            frame_dt: 0.1,
        }
    }
}

impl LossWeights {
    pub fn from_toml(text: &str) -> Result<Self> {
        let w: LossWeights = toml::from_str(text).map_err(|e| Error::config(format!("loss weights: {e}")))?;
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .category_weights
            .iter()
            .chain(&self.speed_weights)
            .chain(&self.instance_weights);
        if all.clone().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        let [lo, hi] = self.speed_bin_edges;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config("speed bin edges must be finite and strictly increasing"));
        }
        if !(self.instance_gate.is_finite() && self.instance_gate >= 0.0) {
            return Err(Error::config("instance gate must be finite and non-negative"));
        }
        if !(self.frame_dt.is_finite() && self.frame_dt > 0.0) {
            return Err(Error::config("frame_dt must be positive"));
        }
        Ok(())
    }

    /// Speed in m/s of a per-frame displacement.
    pub fn speed(&self, displacement: &Vec3) -> f64 {
        displacement.norm() / self.frame_dt
    }

    /// Speed bin (0, 1 or 2) of a ground-truth displacement; lower edges are
    /// inclusive.
    pub fn speed_bin(&self, gt: &Vec3) -> usize {
        let v = self.speed(gt);
        if v < self.speed_bin_edges[0] {
            0
        } else if v < self.speed_bin_edges[1] {
            1
        } else {
            2
        }
    }
}

/// One loss term and its gradient field.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub gradient: Vec<Vec3>,
}

/// All loss terms for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_deflow: f64,
    pub l_category: f64,
    pub l_instance: f64,
    pub l_total: f64,
    /// `∂L_total / ∂pred` per point.
    pub gradient: Vec<Vec3>,
}

fn unit_or_zero(r: &Vec3) -> (f64, Vec3) {
    let n = r.norm();
    if n == 0.0 {
        (0.0, Vec3::zeros())
    } else {
        (n, r / n)
    }
}

fn residuals(pred: &FlowField, gt: &FlowField) -> Result<Vec<Vec3>> {
    pred.check_len(gt.len(), "prediction")?;
    Ok(pred.as_slice().iter().zip(gt.as_slice()).map(|(p, g)| p - g).collect())
}

fn check_frame(frame: &PointCloudFrame, gt: &FlowField) -> Result<()> {
    gt.check_len(frame.len(), "ground-truth flow")
}

pub fn deflow_loss(pred: &FlowField, gt: &FlowField, weights: &LossWeights) -> Result<LossTerm> {
    weights.validate()?;
    let r = residuals(pred, gt)?;
    let bins: Vec<usize> = gt.as_slice().iter().map(|g| weights.speed_bin(g)).collect();

    let mut count = [0usize; 3];
    let mut sum = [0.0f64; 3];
    for (ri, &b) in r.iter().zip(&bins) {
        count[b] += 1;
        sum[b] += ri.norm();
    }
    let value = (0..3).filter(|&b| count[b] > 0).map(|b| sum[b] / count[b] as f64).sum();

    let gradient = r
        .iter()
        .zip(&bins)
        .map(|(ri, &b)| unit_or_zero(ri).1 / count[b] as f64)
        .collect();
    Ok(LossTerm { value, gradient })
}

pub fn category_loss(
    pred: &FlowField,
    gt: &FlowField,
    frame: &PointCloudFrame,
    weights: &LossWeights,
) -> Result<LossTerm> {
    weights.validate()?;
    check_frame(frame, gt)?;
    let r = residuals(pred, gt)?;

    let cell = |i: usize| -> Option<(usize, usize)> {
        frame.label(i).map(|l| (l.category.index(), weights.speed_bin(&gt[i])))
    };

    let mut count = [[0usize; 3]; 4];
    let mut sum = [[0.0f64; 3]; 4];
    for (i, ri) in r.iter().enumerate() {
        if let Some((c, b)) = cell(i) {
            count[c][b] += 1;
            sum[c][b] += ri.norm();
        }
    }

    let mut value = 0.0;
    for c in 0..4 {
        let mut inner = 0.0;
        for b in 0..3 {
            if count[c][b] > 0 {
                inner += weights.speed_weights[b] * (sum[c][b] / count[c][b] as f64);
            }
        }
        value += weights.category_weights[c] * inner;
    }

    let gradient = r
        .iter()
        .enumerate()
        .map(|(i, ri)| match cell(i) {
            Some((c, b)) => {
                let coef = weights.category_weights[c] * weights.speed_weights[b] / count[c][b] as f64;
                unit_or_zero(ri).1 * coef
            }
            None => Vec3::zeros(),
        })
        .collect();
    Ok(LossTerm { value, gradient })
}

struct InstanceStats {
    category: Category,
    members: Vec<usize>,
    gt_sum: Vec3,
}

/// Groups labeled points by instance id in ascending id order. The category
/// of an instance is the category of its lowest-index point.
fn instances(frame: &PointCloudFrame, gt: &FlowField) -> BTreeMap<u32, InstanceStats> {
    let mut out: BTreeMap<u32, InstanceStats> = BTreeMap::new();
    for i in 0..frame.len() {
        if let Some(label) = frame.label(i) {
            let entry = out.entry(label.instance).or_insert_with(|| InstanceStats {
                category: label.category,
                members: Vec::new(),
                gt_sum: Vec3::zeros(),
            });
            entry.members.push(i);
            entry.gt_sum += gt[i];
        }
    }
    out
}

pub fn instance_loss(
    pred: &FlowField,
    gt: &FlowField,
    frame: &PointCloudFrame,
    weights: &LossWeights,
) -> Result<LossTerm> {
    weights.validate()?;
    check_frame(frame, gt)?;
    let r = residuals(pred, gt)?;

    // (omega, mean error, members) for every instance above the speed gate.
    let mut moving = Vec::new();
    for (id, inst) in instances(frame, gt) {
        let n = inst.members.len() as f64;
        let speed = weights.speed(&(inst.gt_sum / n));
        if speed <= weights.instance_gate {
            continue;
        }
        let mean_err = inst.members.iter().map(|&i| r[i].norm()).sum::<f64>() / n;
        if mean_err > MAX_INSTANCE_ERROR {
            return Err(Error::Overflow(format!(
                "instance {id} has mean error {mean_err}, above the limit {MAX_INSTANCE_ERROR}"
            )));
        }
        moving.push((weights.instance_weights[inst.category.index()], mean_err, inst.members));
    }

    let mut gradient = vec![Vec3::zeros(); frame.len()];
    if moving.is_empty() {
        return Ok(LossTerm { value: 0.0, gradient });
    }
    let k = moving.len() as f64;
    let mut value = 0.0;
    for (omega, e, members) in &moving {
        value += omega * e * e.exp();
        let coef = omega / k * (1.0 + e) * e.exp() / members.len() as f64;
        for &i in members {
            gradient[i] = unit_or_zero(&r[i]).1 * coef;
        }
    }
    Ok(LossTerm {
        value: value / k,
        gradient,
    })
}

pub fn total_loss(
    pred: &FlowField,
    gt: &FlowField,
    frame: &PointCloudFrame,
    weights: &LossWeights,
) -> Result<LossReport> {
    let d = deflow_loss(pred, gt, weights)?;
    let c = category_loss(pred, gt, frame, weights)?;
    let i = instance_loss(pred, gt, frame, weights)?;
    let gradient = d
        .gradient
        .iter()
        .zip(&c.gradient)
        .zip(&i.gradient)
        .map(|((a, b), c)| a + b + c)
        .collect();
    Ok(LossReport {
        l_deflow: d.value,
        l_category: c.value,
        l_instance: i.value,
        l_total: d.value + c.value + i.value,
        gradient,
    })
}

/// Central finite differences of `l_total`, one coordinate at a time.
///
/// Refuses to run when any residual norm is within `10·step` of zero, where
/// the loss is not differentiable.
pub fn finite_diff_gradient(
    pred: &FlowField,
    gt: &FlowField,
    frame: &PointCloudFrame,
    weights: &LossWeights,
    step: f64,
) -> Result<Vec<Vec3>> {
    let all: Vec<usize> = (0..pred.len()).collect();
    finite_diff_gradient_at(pred, gt, frame, weights, step, &all)
}

/// Finite differences for the listed points only; entry `j` of the result
/// belongs to point `points[j]`. Only those points need to be away from the
/// kink, since perturbing one point leaves every other residual unchanged.
pub fn finite_diff_gradient_at(
    pred: &FlowField,
    gt: &FlowField,
    frame: &PointCloudFrame,
    weights: &LossWeights,
    step: f64,
    points: &[usize],
) -> Result<Vec<Vec3>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::TestSetup(format!("step {step} must be positive")));
    }
    let r = residuals(pred, gt)?;
    for &i in points {
        let n = r
            .get(i)
            .ok_or_else(|| Error::invalid(format!("point {i} out of range")))?
            .norm();
        if n <= 10.0 * step {
            return Err(Error::TestSetup(format!(
                "residual of point {i} has norm {n} within 10·step of the kink at zero"
            )));
        }
    }
    let eval = |p: &FlowField| total_loss(p, gt, frame, weights).map(|rep| rep.l_total);

    let mut work = pred.clone().into_inner();
    let mut out = Vec::with_capacity(points.len());
    for &i in points {
        let mut g = Vec3::zeros();
        for axis in 0..3 {
            let orig = work[i][axis];
            work[i][axis] = orig + step;
            let plus = eval(&FlowField::from_vec_unchecked(work.clone()))?;
            work[i][axis] = orig - step;
            let minus = eval(&FlowField::from_vec_unchecked(work.clone()))?;
            work[i][axis] = orig;
            g[axis] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest per-point relative disagreement `‖a − b‖ / max(‖a‖, ‖b‖)` between
/// two gradient fields (0 where both vanish).
pub fn gradient_relative_error(analytic: &[Vec3], numeric: &[Vec3]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| {
            let scale = a.norm().max(b.norm());
            if scale == 0.0 {
                0.0
            } else {
                (a - b).norm() / scale
            }
        })
        .fold(0.0, f64::max)
}
