//! Deterministic synthetic LiDAR sequences with exact residual flow.
//!
//! Every object (ground patch, building, mover) is a fixed set of surface
//! samples drawn once from the scene seed, so point `i` of frame `k` and
//! point `i` of frame `k + 1` are the same physical point. Poses are
//! sensor-to-world; frames are stored in sensor coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Category, FlowField, PointCloudFrame, PointLabel, RigidTransform, Vec3};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    /// Samples on the `z = 0` ground plane across the scene footprint.
    #[serde(default)]
    pub ground_points: usize,
    /// Number of random box buildings standing on the ground.
    #[serde(default)]
    pub buildings: usize,
    /// Samples per building.
    #[serde(default)]
    pub building_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoverSpec {
    pub category: Category,
    /// Box extents (length, width, height) in meters.
    pub size: [f64; 3],
    pub points: usize,
    /// World-frame velocity in m/s.
    pub velocity: [f64; 3],
    /// World-frame box center at frame 0.
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

/// Ego trajectory. `Constant` expands to explicit per-frame poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum EgoSpec {
    Explicit {
        /// One row-major 4×4 sensor-to-world matrix per frame.
        poses: Vec<Vec<f64>>,
    },
    Constant {
        #[serde(default)]
        velocity: [f64; 3],
        #[serde(default)]
        yaw_rate: f64,
        #[serde(default = "default_height")]
        height: f64,
    },
}

fn default_height() -> f64 {
    1.8
}

impl Default for EgoSpec {
    fn default() -> Self {
        EgoSpec::Constant {
            velocity: [0.0; 3],
            yaw_rate: 0.0,
            height: default_height(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_frames: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Scene footprint (x, y) and building height cap (z), meters.
    pub extent: [f64; 3],
    #[serde(default)]
    pub background: BackgroundSpec,
    #[serde(default)]
    pub movers: Vec<MoverSpec>,
    #[serde(default)]
    pub ego: EgoSpec,
}

fn default_dt() -> f64 {
    0.1
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::config(format!("scene spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::config("a scene needs at least 2 frames"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt {} must be positive", self.dt)));
        }
        if !self.extent.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err(Error::config("extent components must be positive"));
        }
        let bg = &self.background;
        if bg.buildings > 0 && bg.building_points == 0 {
            return Err(Error::config("buildings need building_points > 0"));
        }
        let bg_points = bg.ground_points + bg.buildings * bg.building_points;
        let mover_points: usize = self.movers.iter().map(|m| m.points).sum();
        if bg_points + mover_points == 0 {
            return Err(Error::config("scene has neither background nor mover points"));
        }
        for (i, m) in self.movers.iter().enumerate() {
            let finite = m
                .size
                .iter()
                .chain(&m.velocity)
                .chain(&m.position)
                .all(|v| v.is_finite())
                && m.yaw.is_finite();
            if !finite || m.size.iter().any(|s| *s <= 0.0) {
                return Err(Error::config(format!("mover {i} has invalid geometry")));
            }
        }
        if let EgoSpec::Explicit { poses } = &self.ego {
            if poses.len() != self.n_frames {
                return Err(Error::config(format!(
                    "{} ego poses for {} frames",
                    poses.len(),
                    self.n_frames
                )));
            }
        }
        self.ego_poses().map(|_| ())
    }

    /// Sensor-to-world pose of every frame.
    pub fn ego_poses(&self) -> Result<Vec<RigidTransform>> {
        match &self.ego {
            EgoSpec::Explicit { poses } => poses
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let m: [f64; 16] = m
                        .as_slice()
                        .try_into()
                        .map_err(|_| Error::config(format!("ego pose {k} must have 16 entries")))?;
                    RigidTransform::from_row_major(&m, 1e-6).map_err(|e| Error::config(format!("ego pose {k}: {e}")))
                })
                .collect(),
            EgoSpec::Constant {
                velocity,
                yaw_rate,
                height,
            } => {
                let v = Vec3::from(*velocity);
                if !(v.iter().all(|c| c.is_finite()) && yaw_rate.is_finite() && height.is_finite()) {
                    return Err(Error::config("ego motion must be finite"));
                }
                Ok((0..self.n_frames)
                    .map(|k| {
                        let t = k as f64 * self.dt;
                        RigidTransform::from_yaw(yaw_rate * t, v * t + Vec3::new(0.0, 0.0, *height))
                    })
                    .collect())
            }
        }
    }
}

/// Generated frames, their sensor-to-world poses and the frame interval.
/// Frame `k < n − 1` carries the residual flow to frame `k + 1`; the last
/// frame carries none.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub frames: Vec<PointCloudFrame>,
    pub poses: Vec<RigidTransform>,
    pub dt: f64,
}

impl SceneSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Relative transform taking frame `k` sensor coordinates to frame `k + 1`.
    pub fn relative_pose(&self, k: usize) -> RigidTransform {
        RigidTransform::relative(&self.poses[k], &self.poses[k + 1])
    }

    /// Ground-truth residual flow of every frame pair.
    pub fn gt_flows(&self) -> Result<Vec<FlowField>> {
        self.frames[..self.frames.len() - 1]
            .iter()
            .map(|f| f.gt_flow_field())
            .collect()
    }
}

/// Uniform sample on the surface of an origin-centered box.
fn sample_box_surface(rng: &mut ChaCha8Rng, size: &[f64; 3]) -> Vec3 {
    let [a, b, c] = *size;
    let areas = [b * c, b * c, a * c, a * c, a * b, a * b];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut face = 5;
    for (i, area) in areas.iter().enumerate() {
        if pick < *area {
            face = i;
            break;
        }
        pick -= area;
    }
    let u = rng.random::<f64>() - 0.5;
    let w = rng.random::<f64>() - 0.5;
    let sign = if face % 2 == 0 { 0.5 } else { -0.5 };
    match face / 2 {
        0 => Vec3::new(sign * a, u * b, w * c),
        1 => Vec3::new(u * a, sign * b, w * c),
        _ => Vec3::new(u * a, w * b, sign * c),
    }
}

struct WorldObject {
    samples: Vec<Vec3>,
    label: Option<PointLabel>,
    velocity: Vec3,
}

fn build_world(spec: &SceneSpec) -> Vec<WorldObject> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [ex, ey, ez] = spec.extent;
    let mut objects = Vec::new();

    let ground = (0..spec.background.ground_points)
        .map(|_| {
            let x = (rng.random::<f64>() - 0.5) * ex;
            let y = (rng.random::<f64>() - 0.5) * ey;
            Vec3::new(x, y, 0.0)
        })
        .collect();
    objects.push(WorldObject {
        samples: ground,
        label: None,
        velocity: Vec3::zeros(),
    });

    for _ in 0..spec.background.buildings {
        let size = [
            rng.random_range(2.0..10.0_f64).min(ex),
            rng.random_range(2.0..10.0_f64).min(ey),
            rng.random_range(0.25..1.0) * ez,
        ];
        let center = Vec3::new(
            (rng.random::<f64>() - 0.5) * ex,
            (rng.random::<f64>() - 0.5) * ey,
            size[2] / 2.0,
        );
        let pose = RigidTransform::from_yaw(rng.random_range(0.0..std::f64::consts::PI), center);
        let samples = (0..spec.background.building_points)
            .map(|_| pose.transform_point(&sample_box_surface(&mut rng, &size)))
            .collect();
        objects.push(WorldObject {
            samples,
            label: None,
            velocity: Vec3::zeros(),
        });
    }

    for (id, m) in spec.movers.iter().enumerate() {
        let pose = RigidTransform::from_yaw(m.yaw, Vec3::from(m.position));
        let samples = (0..m.points)
            .map(|_| pose.transform_point(&sample_box_surface(&mut rng, &m.size)))
            .collect();
        objects.push(WorldObject {
            samples,
            label: Some(PointLabel {
                instance: id as u32,
                category: m.category,
            }),
            velocity: Vec3::from(m.velocity),
        });
    }
    objects
}

pub fn generate(spec: &SceneSpec) -> Result<SceneSequence> {
    spec.validate()?;
    let poses = spec.ego_poses()?;
    let objects = build_world(spec);
    let n_points: usize = objects.iter().map(|o| o.samples.len()).sum();

    let mut frames = Vec::with_capacity(spec.n_frames);
    for (k, pose) in poses.iter().enumerate() {
        let to_sensor = pose.inverse();
        let shift = k as f64 * spec.dt;
        let mut points = Vec::with_capacity(n_points);
        let mut labels = Vec::with_capacity(n_points);
        let mut gt = Vec::with_capacity(n_points);
        // Residual flow is the object displacement seen in the next sensor frame.
        let next_rot = poses.get(k + 1).map(|p| p.inverse());
        for obj in &objects {
            let offset = obj.velocity * shift;
            let residual = next_rot
                .as_ref()
                .map(|r| r.rotate(&(obj.velocity * spec.dt)))
                .unwrap_or_else(Vec3::zeros);
            for s in &obj.samples {
                points.push(to_sensor.transform_point(&(s + offset)));
                labels.push(obj.label);
                gt.push(residual);
            }
        }
        let mut frame = PointCloudFrame::new(points, shift)?.with_labels(labels)?;
        if k + 1 < spec.n_frames {
            frame = frame.with_gt_flow(gt)?;
        }
        frames.push(frame);
    }
    Ok(SceneSequence {
        frames,
        poses,
        dt: spec.dt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Predictor {
    /// Ego motion only: zero residual.
    ZeroResidual,
    Oracle,
    /// Ground truth plus isotropic Gaussian noise with per-axis deviation
    /// `sigma`, seeded per frame pair.
    NoisyOracle {
        sigma: f64,
        seed: u64,
    },
}

impl Predictor {
    /// Parses `zero`, `oracle` or `noisy:<sigma>[:<seed>]`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let p = match (parts.next(), parts.next(), parts.next()) {
            (Some("zero"), None, None) => Predictor::ZeroResidual,
            (Some("oracle"), None, None) => Predictor::Oracle,
            (Some("noisy"), Some(sigma), seed) => {
                let sigma: f64 = sigma
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad noise level '{sigma}'")))?;
                let seed = match seed {
                    Some(v) => v.parse().map_err(|_| Error::invalid(format!("bad seed '{v}'")))?,
                    None => 0,
                };
                Predictor::NoisyOracle { sigma, seed }
            }
            _ => return Err(Error::invalid(format!("unknown predictor '{s}'"))),
        };
        if parts.next().is_some() {
            return Err(Error::invalid(format!("unknown predictor '{s}'")));
        }
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if let Predictor::NoisyOracle { sigma, .. } = self {
            if !(*sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::invalid(format!("noise level {sigma} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }

    /// Prediction for one frame given its ground truth.
    pub fn predict_frame(&self, gt: &FlowField, pair: usize) -> Result<FlowField> {
        self.validate()?;
        match *self {
            Predictor::ZeroResidual => Ok(FlowField::zeros(gt.len())),
            Predictor::Oracle => Ok(gt.clone()),
            Predictor::NoisyOracle { sigma: 0.0, .. } => Ok(gt.clone()),
            Predictor::NoisyOracle { sigma, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(pair as u64);
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
                let v = gt
                    .as_slice()
                    .iter()
                    .map(|g| {
                        let n = Vec3::new(
                            normal.sample(&mut rng),
                            normal.sample(&mut rng),
                            normal.sample(&mut rng),
                        );
                        g + n
                    })
                    .collect();
                FlowField::new(v)
            }
        }
    }
}

/// One predicted residual flow per frame pair.
pub fn reference_predictor(seq: &SceneSequence, kind: Predictor) -> Result<Vec<FlowField>> {
    seq.gt_flows()?
        .iter()
        .enumerate()
        .map(|(k, gt)| kind.predict_frame(gt, k))
        .collect()
}
