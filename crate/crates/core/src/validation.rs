//! Seeded cross-module property runner.
//!
//! Each property draws a case from a ChaCha stream keyed by `(seed, size)`.
//! A failure is retried at smaller sizes within the shrink budget, and the
//! smallest failing `(seed, size)` is reported; [`replay`] reproduces it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::delta::{delta_scheme, dense_delta_oracle, sparse_delta, DeltaConfig, SparseOp};
use crate::geometry::{
    apply_ego_compensation, ego_flow, Category, FlowField, PointCloudFrame, PointLabel, RigidTransform, Vec3,
};
use crate::io::{decode_flow, decode_frame, decode_tensor, encode_flow, encode_frame, encode_tensor};
use crate::losses::{finite_diff_gradient, gradient_relative_error, total_loss, LossWeights};
use crate::metrics::evaluate;
use crate::synth::{generate, reference_predictor, BackgroundSpec, EgoSpec, MoverSpec, Predictor, SceneSpec};
use crate::voxel::{sparse_bytes, to_dense, v2p_gather, voxelize, FeatureMatrix, SparseVoxelTensor, VoxelGridSpec};
use crate::Result;

/// Signature of the sparse union kernel under test.
pub type DeltaKernel = fn(&SparseVoxelTensor<f64>, &SparseVoxelTensor<f64>, SparseOp) -> Result<SparseVoxelTensor<f64>>;

/// Kernels the properties call through, replaceable for mutation testing.
#[derive(Clone, Copy)]
pub struct Kernels {
    pub sparse_delta: DeltaKernel,
}

impl Default for Kernels {
    fn default() -> Self {
        Self {
            sparse_delta: sparse_delta::<f64>,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    /// Cases drawn per property.
    pub cases: usize,
    /// Largest case size; sizes cycle through `1..=max_size`.
    pub max_size: usize,
    /// Smaller sizes tried after a failure.
    pub shrink_budget: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            cases: 40,
            max_size: 12,
            shrink_budget: 12,
        }
    }
}

/// A replayable counterexample.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyFailure {
    pub property: &'static str,
    pub seed: u64,
    pub size: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub passed: usize,
    pub failed: usize,
    pub failures: Vec<PropertyFailure>,
}

impl Summary {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

type Outcome = std::result::Result<(), String>;
type Property = fn(&mut ChaCha8Rng, usize, &Kernels) -> Outcome;

const PROPERTIES: &[(&str, Property)] = &[
    ("delta.union_law", union_law),
    ("delta.add_identity", add_identity),
    ("delta.dense_equivalence", dense_equivalence),
    ("delta.constant_width", constant_width),
    ("voxel.mean_and_gather", mean_and_gather),
    ("geometry.ego_decomposition", ego_decomposition),
    ("losses.gradient", loss_gradient),
    ("losses.oracle_zero", loss_oracle_zero),
    ("synth.transport", synth_transport),
    ("synth.rigidity", synth_rigidity),
    ("metrics.baselines", metric_baselines),
    ("io.round_trip", format_round_trip),
];

pub fn property_names() -> Vec<&'static str> {
    PROPERTIES.iter().map(|(n, _)| *n).collect()
}

fn case_rng(seed: u64, size: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(size as u64);
    rng
}

fn run_one(prop: Property, seed: u64, size: usize, kernels: &Kernels) -> Outcome {
    prop(&mut case_rng(seed, size), size, kernels)
}

fn lookup(name: &str) -> Option<Property> {
    PROPERTIES.iter().find(|(n, _)| *n == name).map(|(_, p)| *p)
}

/// Re-runs one property on one `(seed, size)`.
pub fn replay(name: &str, seed: u64, size: usize, kernels: &Kernels) -> Option<Outcome> {
    lookup(name).map(|p| run_one(p, seed, size, kernels))
}

pub fn run_all(seed: u64) -> Summary {
    run_with(seed, &SuiteConfig::default(), &Kernels::default())
}

pub fn run_with(seed: u64, cfg: &SuiteConfig, kernels: &Kernels) -> Summary {
    let mut summary = Summary::default();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    for (name, prop) in PROPERTIES {
        let mut failure = None;
        for i in 0..cfg.cases {
            let case_seed: u64 = master.random();
            let size = 1 + i % cfg.max_size.max(1);
            if let Err(message) = run_one(*prop, case_seed, size, kernels) {
                failure = Some(shrink(name, *prop, case_seed, size, message, cfg, kernels));
                break;
            }
        }
        match failure {
            Some(f) => {
                summary.failed += 1;
                summary.failures.push(f);
            }
            None => summary.passed += 1,
        }
    }
    summary
}

fn shrink(
    name: &'static str,
    prop: Property,
    seed: u64,
    size: usize,
    message: String,
    cfg: &SuiteConfig,
    kernels: &Kernels,
) -> PropertyFailure {
    let mut best = PropertyFailure {
        property: name,
        seed,
        size,
        message,
    };
    for smaller in (1..size).rev().take(cfg.shrink_budget) {
        if let Err(m) = run_one(prop, seed, smaller, kernels) {
            best.size = smaller;
            best.message = m;
        }
    }
    best
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lift<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn random_spec(rng: &mut ChaCha8Rng, size: usize) -> VoxelGridSpec {
    let d = |rng: &mut ChaCha8Rng| rng.random_range(1..=(2 + size as u32));
    let dims = [d(rng), d(rng), d(rng)];
    let width = rng.random_range(1..=4);
    VoxelGridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), dims, width).expect("small grid is valid")
}

fn random_tensor(rng: &mut ChaCha8Rng, spec: &VoxelGridSpec, occupancy: f64) -> SparseVoxelTensor<f64> {
    let c = spec.feature_width();
    let mut keys = Vec::new();
    let mut features = Vec::new();
    for k in 0..spec.voxel_count() {
        if rng.random::<f64>() < occupancy {
            keys.push(k);
            features.extend((0..c).map(|_| rng.random_range(-4i32..=4) as f64 * 0.25));
        }
    }
    SparseVoxelTensor::from_sorted_keys(*spec, keys, features).expect("generated keys are sorted")
}

fn union_law(rng: &mut ChaCha8Rng, size: usize, k: &Kernels) -> Outcome {
    let spec = random_spec(rng, size);
    let a = random_tensor(rng, &spec, 0.3);
    let b = random_tensor(rng, &spec, 0.3);
    let d = lift((k.sparse_delta)(&a, &b, SparseOp::Sub))?;
    let mut expected: Vec<u64> = a.keys().iter().chain(b.keys()).copied().collect();
    expected.sort_unstable();
    expected.dedup();
    check(d.keys() == expected.as_slice(), || {
        format!("keys {:?} are not the union {:?}", d.keys(), expected)
    })?;
    for (i, &key) in d.keys().iter().enumerate() {
        let coord = spec.coord(key);
        let av = a.find(coord).map(|r| a.row(r).to_vec());
        let bv = b.find(coord).map(|r| b.row(r).to_vec());
        for j in 0..spec.feature_width() {
            let want = av.as_ref().map_or(0.0, |r| r[j]) - bv.as_ref().map_or(0.0, |r| r[j]);
            check(d.row(i)[j] == want, || {
                format!("value at {coord:?}[{j}] is {} not {want}", d.row(i)[j])
            })?;
        }
    }
    Ok(())
}

fn add_identity(rng: &mut ChaCha8Rng, size: usize, k: &Kernels) -> Outcome {
    let spec = random_spec(rng, size);
    let b = random_tensor(rng, &spec, 0.4);
    let sum = lift((k.sparse_delta)(&SparseVoxelTensor::empty(spec), &b, SparseOp::Add))?;
    check(sum == b, || "empty ⊕ b differs from b".into())
}

fn dense_equivalence(rng: &mut ChaCha8Rng, size: usize, _: &Kernels) -> Outcome {
    let spec = random_spec(rng, size);
    let n = rng.random_range(1..=5);
    let decay = [0.2, 0.5, 1.0][rng.random_range(0..3)];
    let cur = random_tensor(rng, &spec, 0.2);
    let past: Vec<_> = (0..n).map(|_| random_tensor(rng, &spec, 0.2)).collect();
    let cfg = lift(DeltaConfig::new(n, decay))?;
    let sparse = lift(delta_scheme(&cur, &past, &cfg))?;
    let dense = lift(dense_delta_oracle(&cur, &past, &cfg))?;
    let diff = to_dense(&sparse).max_abs_diff(&dense);
    check(diff <= 1e-9, || {
        format!("sparse and dense differ by {diff:e} (N={n}, λ={decay})")
    })
}

fn constant_width(rng: &mut ChaCha8Rng, size: usize, _: &Kernels) -> Outcome {
    let spec = random_spec(rng, size);
    let n = rng.random_range(1..=15);
    let cur = random_tensor(rng, &spec, 0.2);
    let past: Vec<_> = (0..n).map(|_| random_tensor(rng, &spec, 0.2)).collect();
    let out = lift(delta_scheme(&cur, &past, &lift(DeltaConfig::new(n, 0.5))?))?;
    let mut union: Vec<u64> = past.iter().flat_map(|p| p.keys()).chain(cur.keys()).copied().collect();
    union.sort_unstable();
    union.dedup();
    check(out.width() == spec.feature_width(), || {
        format!("width {} for C={}", out.width(), spec.feature_width())
    })?;
    check(out.keys() == union.as_slice(), || {
        "Δ rows are not the coordinate union".into()
    })?;
    check(
        out.byte_footprint() == sparse_bytes(union.len() as u64, spec.feature_width(), 8),
        || "byte count depends on more than the union".into(),
    )
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                rng.random_range(-half..half),
            )
        })
        .collect()
}

fn mean_and_gather(rng: &mut ChaCha8Rng, size: usize, _: &Kernels) -> Outcome {
    let spec =
        VoxelGridSpec::new(Vec3::new(-2.0, -2.0, -2.0), Vec3::new(0.5, 0.5, 0.5), [8, 8, 8], 2).expect("valid grid");
    let n = 1 + size * 8;
    let frame = lift(PointCloudFrame::new(random_points(rng, n, 2.5), 0.0))?;
    let data: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let feats = lift(FeatureMatrix::new(2, data))?;
    let (t, idx) = lift(voxelize(&frame, &feats, &spec))?;
    // Oracle: dense sums and counts in point order.
    let mut sum = vec![0.0; spec.voxel_count() as usize * 2];
    let mut count = vec![0usize; spec.voxel_count() as usize];
    for (i, p) in frame.points().iter().enumerate() {
        if let Some(v) = spec.voxel_of(p) {
            let k = spec.key(v) as usize;
            count[k] += 1;
            sum[2 * k] += feats.row(i)[0];
            sum[2 * k + 1] += feats.row(i)[1];
        }
    }
    let active = count.iter().filter(|c| **c > 0).count();
    check(t.len() == active, || {
        format!("{} rows for {active} occupied voxels", t.len())
    })?;
    for (r, &k) in t.keys().iter().enumerate() {
        let k = k as usize;
        for j in 0..2 {
            let want = sum[2 * k + j] / count[k] as f64;
            check((t.row(r)[j] - want).abs() <= 1e-12, || {
                format!("voxel {k} channel {j} mean mismatch")
            })?;
        }
    }
    let gathered = lift(v2p_gather(&t, &idx))?;
    for (i, p) in frame.points().iter().enumerate() {
        let want = spec.voxel_of(p).and_then(|v| t.find(v)).map(|r| t.row(r).to_vec());
        let got = gathered.row(i);
        match want {
            Some(row) => check(got == row.as_slice(), || format!("point {i} gathered the wrong row"))?,
            None => check(got.iter().all(|v| *v == 0.0), || {
                format!("dropped point {i} got a nonzero row")
            })?,
        }
    }
    Ok(())
}

fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
    RigidTransform::from_yaw(
        rng.random_range(-3.0..3.0),
        Vec3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-1.0..1.0),
        ),
    )
}

fn ego_decomposition(rng: &mut ChaCha8Rng, size: usize, _: &Kernels) -> Outcome {
    let frame = lift(PointCloudFrame::new(random_points(rng, size * 5, 30.0), 0.0))?;
    let (p0, p1) = (random_pose(rng), random_pose(rng));
    let rel = RigidTransform::relative(&p0, &p1);
    let ego = lift(ego_flow(&frame, &rel))?;
    let moved = lift(apply_ego_compensation(&frame, &rel))?;
    for i in 0..frame.len() {
        let world0 = p0.transform_point(&frame.points()[i]);
        let world1 = p1.transform_point(&(frame.points()[i] + ego[i]));
        check((world0 - world1).norm() < 1e-9, || {
            format!("point {i} does not stay put in the world")
        })?;
        check((moved.points()[i] - frame.points()[i] - ego[i]).norm() < 1e-12, || {
            format!("compensated point {i} disagrees with ego flow")
        })?;
    }
    Ok(())
}

/// Frame with every category present and residuals bounded away from zero.
fn loss_case(rng: &mut ChaCha8Rng, size: usize) -> (PointCloudFrame, FlowField, FlowField) {
    let n = 20 + size * 15;
    let mut labels = Vec::with_capacity(n);
    let mut gt = Vec::with_capacity(n);
    let mut pred = Vec::with_capacity(n);
    for i in 0..n {
        let label = match i % 5 {
            4 => None,
            c => Some(PointLabel {
                instance: (i % 7) as u32 + 10 * c as u32,
                category: Category::ALL[c],
            }),
        };
        labels.push(label);
        let speed = [0.0, 0.02, 0.07, 0.3][rng.random_range(0..4)];
        let g = Vec3::new(speed, rng.random_range(-0.01..0.01), 0.0);
        let dir = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let r = dir.normalize() * rng.random_range(0.01..0.2);
        gt.push(g);
        pred.push(g + r);
    }
    let frame = PointCloudFrame::new(vec![Vec3::zeros(); n], 0.0)
        .and_then(|f| f.with_labels(labels))
        .and_then(|f| f.with_gt_flow(gt.clone()))
        .expect("valid frame");
    (
        frame,
        FlowField::new(pred).expect("finite"),
        FlowField::new(gt).expect("finite"),
    )
}

fn loss_gradient(rng: &mut ChaCha8Rng, size: usize, _: &Kernels) -> Outcome {
    let (frame, pred, gt) = loss_case(rng, size);
    let w = LossWeights::default();
    let analytic = lift(total_loss(&pred, &gt, &frame, &w))?.gradient;
    let numeric = lift(finite_diff_gradient(&pred, &gt, &frame, &w, 1e-6))?;
    let err = gradient_relative_error(&analytic, &numeric);
    check(err <= 1e-6, || format!("relative gradient error {err:e}"))
}

fn loss_oracle_zero(rng: &mut ChaCha8Rng, size: usize, _: &Kernels) -> Outcome {
    let (frame, _, gt) = loss_case(rng, size);
    let rep = lift(total_loss(&gt, &gt, &frame, &LossWeights::default()))?;
    check(
        rep.l_total == 0.0 && rep.gradient.iter().all(|g| *g == Vec3::zeros()),
        || format!("oracle loss is {}", rep.l_total),
    )
}

fn random_scene(rng: &mut ChaCha8Rng, size: usize) -> SceneSpec {
    let movers = Category::ALL
        .iter()
        .enumerate()
        .map(|(i, &category)| MoverSpec {
            category,
            size: [
                rng.random_range(0.5..4.0),
                rng.random_range(0.5..2.0),
                rng.random_range(1.0..2.0),
            ],
            points: 5 + size * 3,
            velocity: [rng.random_range(1.0..15.0), rng.random_range(-2.0..2.0), 0.0],
            position: [rng.random_range(-20.0..20.0), 4.0 * i as f64 - 6.0, 1.0],
            yaw: rng.random_range(-1.0..1.0),
        })
        .collect();
    SceneSpec {
        seed: rng.random(),
        n_frames: 2 + size % 4,
        dt: 0.1,
        extent: [60.0, 60.0, 6.0],
        background: BackgroundSpec {
            ground_points: 20 * size,
            buildings: 2,
            building_points: 10,
        },
        movers,
        ego: EgoSpec::Constant {
            velocity: [rng.random_range(0.0..10.0), rng.random_range(-1.0..1.0), 0.0],
            yaw_rate: rng.random_range(-0.3..0.3),
            height: 1.8,
        },
    }
}

fn synth_transport(rng: &mut ChaCha8Rng, size: usize, _: &Kernels) -> Outcome {
    let seq = lift(generate(&random_scene(rng, size)))?;
    for k in 0..seq.len() - 1 {
        let f = &seq.frames[k];
        let ego = lift(ego_flow(f, &seq.relative_pose(k)))?;
        let gt = f.gt_flow().ok_or("missing ground truth")?;
        for i in 0..f.len() {
            let d = (f.points()[i] + ego[i] + gt[i] - seq.frames[k + 1].points()[i]).norm();
            check(d < 1e-9, || format!("frame {k} point {i} lands {d:e} away"))?;
        }
    }
    Ok(())
}

fn synth_rigidity(rng: &mut ChaCha8Rng, size: usize, _: &Kernels) -> Outcome {
    let spec = random_scene(rng, size);
    let seq = lift(generate(&spec))?;
    let f = &seq.frames[0];
    let gt = f.gt_flow().ok_or("missing ground truth")?;
    let mut counts = [0usize; 4];
    for (id, m) in spec.movers.iter().enumerate() {
        let members: Vec<usize> = (0..f.len())
            .filter(|&i| f.label(i).is_some_and(|l| l.instance == id as u32))
            .collect();
        check(members.len() == m.points, || {
            format!("mover {id} has {} points", members.len())
        })?;
        check(members.iter().all(|&i| gt[i] == gt[members[0]]), || {
            format!("mover {id} is not rigid")
        })?;
        counts[m.category.index()] += members.len();
    }
    check(counts.iter().all(|c| *c > 0), || "a category is missing".into())
}

fn metric_baselines(rng: &mut ChaCha8Rng, size: usize, _: &Kernels) -> Outcome {
    let seq = lift(generate(&random_scene(rng, size)))?;
    let zero = lift(reference_predictor(&seq, Predictor::ZeroResidual))?;
    let oracle = lift(reference_predictor(&seq, Predictor::Oracle))?;
    for k in 0..zero.len() {
        let z = lift(evaluate(&zero[k], &seq.frames[k], seq.dt))?;
        for c in Category::ALL {
            let r = z
                .bucket
                .ratio(c)
                .ok_or_else(|| format!("no dynamic {} points", c.name()))?;
            check((r - 1.0).abs() <= 1e-9, || {
                format!("zero predictor ratio {r} for {}", c.name())
            })?;
        }
        check(z.threeway.bs.abs() <= 1e-9, || {
            format!("static background EPE {}", z.threeway.bs)
        })?;
        let o = lift(evaluate(&oracle[k], &seq.frames[k], seq.dt))?;
        check(o.threeway.mean == 0.0 && o.bucket.mean == Some(0.0), || {
            "oracle scores nonzero".into()
        })?;
    }
    Ok(())
}

fn format_round_trip(rng: &mut ChaCha8Rng, size: usize, _: &Kernels) -> Outcome {
    let seq = lift(generate(&random_scene(rng, size)))?;
    let frame = &seq.frames[0];
    let b1 = lift(encode_frame(frame))?;
    let b2 = lift(encode_frame(&lift(decode_frame(&b1, 0.0))?))?;
    check(b1 == b2, || "frame bytes changed on rewrite".into())?;
    let flow = lift(frame.gt_flow_field())?;
    let f1 = lift(encode_flow(&flow))?;
    check(f1 == lift(encode_flow(&lift(decode_flow(&f1))?))?, || {
        "flow bytes changed on rewrite".into()
    })?;
    let spec = random_spec(rng, size);
    let t = random_tensor(rng, &spec, 0.3).cast::<f32>();
    let t1 = lift(encode_tensor(&t))?;
    let back = lift(decode_tensor(&t1))?;
    check(back == t, || "tensor changed on round trip".into())?;
    check(t1 == lift(encode_tensor(&back))?, || {
        "tensor bytes changed on rewrite".into()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drop_last(
        a: &SparseVoxelTensor<f64>,
        b: &SparseVoxelTensor<f64>,
        op: SparseOp,
    ) -> Result<SparseVoxelTensor<f64>> {
        let full = sparse_delta(a, b, op)?;
        if full.is_empty() {
            return Ok(full);
        }
        let n = full.len() - 1;
        let c = full.width();
        SparseVoxelTensor::from_sorted_keys(
            *full.spec(),
            full.keys()[..n].to_vec(),
            full.features()[..n * c].to_vec(),
        )
    }

    fn quick() -> SuiteConfig {
        SuiteConfig {
            cases: 6,
            max_size: 4,
            shrink_budget: 4,
        }
    }

    #[test]
    fn correct_kernels_pass() {
        let s = run_with(1, &quick(), &Kernels::default());
        assert!(s.ok(), "{:?}", s.failures);
        assert_eq!(s.passed, property_names().len());
    }

    #[test]
    fn dropped_coordinate_is_caught_and_replays() {
        let broken = Kernels {
            sparse_delta: drop_last,
        };
        let s = run_with(5, &quick(), &broken);
        let f = s
            .failures
            .iter()
            .find(|f| f.property == "delta.union_law")
            .expect("union law must fail");
        let again = replay(f.property, f.seed, f.size, &broken).unwrap();
        assert_eq!(again, Err(f.message.clone()));
        assert_eq!(replay(f.property, f.seed, f.size, &Kernels::default()), Some(Ok(())));
    }
}
