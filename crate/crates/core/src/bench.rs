//! Sparse-vs-dense Δ scheme benchmark.
//!
//! Inputs are synthetic `f32` voxel frames: a static set of voxels shared by
//! every frame plus a set that drifts one voxel along x per frame, so the
//! coordinate union grows more slowly than the frame count. Memory figures
//! are exact byte counts, never allocator telemetry.

use std::io::Write;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::delta::{delta_scheme, dense_delta_oracle, DeltaConfig};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::voxel::{dense_bytes, sparse_bytes, storage_report, SparseVoxelTensor, VoxelGridSpec};

pub const ELEM_BYTES: usize = 4;
pub const DEFAULT_BUDGET_BYTES: u64 = 2 << 30;
/// The dense oracle holds three grids at once.
pub const DENSE_WORKING_SET: u64 = 3;
/// Sparse and dense results may differ by at most this much per cell.
pub const EQUIVALENCE_TOL: f64 = 1e-9;

/// Share of each frame's voxels that stay put.
const STATIC_SHARE: f64 = 0.7;

pub const CSV_HEADER: [&str; 12] = [
    "dims",
    "C",
    "occupancy",
    "N",
    "lambda",
    "t_sparse_ms",
    "t_dense_ms",
    "speedup",
    "bytes_sparse",
    "bytes_dense",
    "mem_ratio",
    "storage_ratio_pct",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchCase {
    pub dims: [u32; 3],
    pub channels: usize,
    pub occupancy: f64,
    /// Number of past frames `N`.
    pub n_frames: usize,
    pub decay: f64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_repetitions() -> usize {
    5
}

/// A TOML bench file: `[[case]]` tables and an optional budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFile {
    #[serde(default = "default_budget")]
    pub budget_bytes: u64,
    #[serde(rename = "case")]
    pub cases: Vec<BenchCase>,
}

fn default_budget() -> u64 {
    DEFAULT_BUDGET_BYTES
}

impl BenchFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let f: BenchFile = toml::from_str(text).map_err(|e| Error::config(format!("bench cases: {e}")))?;
        for c in &f.cases {
            c.validate()?;
        }
        Ok(f)
    }
}

impl BenchCase {
    /// 512×512×32, C = 16, 0.5 % occupancy, two past frames.
    pub fn reference() -> Self {
        Self {
            dims: [512, 512, 32],
            channels: 16,
            occupancy: 0.005,
            n_frames: 2,
            decay: 0.5,
            repetitions: 5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.occupancy > 0.0 && self.occupancy <= 1.0) {
            return Err(Error::config(format!(
                "occupancy {} must lie in (0, 1]",
                self.occupancy
            )));
        }
        if self.repetitions < 3 {
            return Err(Error::config("a bench case needs at least 3 repetitions"));
        }
        if self.channels == 0 {
            return Err(Error::config("channel count must be positive"));
        }
        DeltaConfig::new(self.n_frames, self.decay)?;
        self.spec().map(|_| ())
    }

    pub fn spec(&self) -> Result<VoxelGridSpec> {
        VoxelGridSpec::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), self.dims, self.channels)
    }

    pub fn dense_bytes(&self) -> Result<u64> {
        Ok(dense_bytes(&self.spec()?, ELEM_BYTES))
    }

    fn dims_label(&self) -> String {
        let [x, y, z] = self.dims;
        format!("{x}x{y}x{z}")
    }
}

/// Current frame followed by `N` past frames.
pub fn bench_frames(case: &BenchCase) -> Result<Vec<SparseVoxelTensor<f32>>> {
    case.validate()?;
    let spec = case.spec()?;
    let total = spec.voxel_count();
    let total_usize = usize::try_from(total).map_err(|_| Error::Overflow("grid too large to sample".into()))?;
    let active = ((case.occupancy * total as f64).round() as usize).clamp(1, total_usize);
    let n_static = if active == total_usize {
        active
    } else {
        (active as f64 * STATIC_SHARE).round() as usize
    };
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let static_keys: Vec<u64> = index::sample(&mut rng, total_usize, n_static)
        .into_iter()
        .map(|k| k as u64)
        .collect();
    let drift_seeds: Vec<[u32; 3]> = index::sample(&mut rng, total_usize, active - n_static)
        .into_iter()
        .map(|k| spec.coord(k as u64))
        .collect();

    let x_dim = spec.dims()[0];
    (0..=case.n_frames)
        .map(|j| {
            let mut keys = static_keys.clone();
            keys.extend(drift_seeds.iter().map(|&[x, y, z]| {
                let shifted = ((x as u64 + j as u64) % x_dim as u64) as u32;
                spec.key([shifted, y, z])
            }));
            keys.sort_unstable();
            keys.dedup();
            let mut frame_rng = ChaCha8Rng::seed_from_u64(case.seed);
            frame_rng.set_stream(j as u64 + 1);
            let features = (0..keys.len() * case.channels)
                .map(|_| frame_rng.random_range(-1.0f32..1.0))
                .collect();
            SparseVoxelTensor::from_sorted_keys(spec, keys, features)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub median_ms: f64,
    pub min_ms: f64,
}

/// One warm-up call, then `reps` timed calls.
fn time<R>(reps: usize, mut f: impl FnMut() -> Result<R>) -> Result<Timing> {
    drop(f()?);
    let mut ms = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        let out = f()?;
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
        drop(out);
    }
    ms.sort_by(f64::total_cmp);
    let mid = ms.len() / 2;
    let median_ms = if ms.len() % 2 == 0 {
        (ms[mid - 1] + ms[mid]) / 2.0
    } else {
        ms[mid]
    };
    Ok(Timing {
        median_ms,
        min_ms: ms[0],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub case: BenchCase,
    /// Rows of the Δ output (the coordinate union of all frames).
    pub active_union: u64,
    pub sparse: Timing,
    pub dense: Timing,
    pub bytes_sparse: u64,
    pub bytes_dense: u64,
    /// Largest per-cell difference between the sparse and dense results.
    pub max_abs_diff: f64,
}

impl BenchResult {
    pub fn speedup(&self) -> f64 {
        self.dense.median_ms / self.sparse.median_ms
    }

    pub fn mem_ratio(&self) -> f64 {
        self.bytes_dense as f64 / self.bytes_sparse as f64
    }

    pub fn storage_ratio_pct(&self) -> f64 {
        self.active_union as f64 / self.case.spec().map_or(f64::NAN, |s| s.voxel_count() as f64) * 100.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BenchOutcome {
    Done(BenchResult),
    Skipped { case: BenchCase, reason: String },
}

pub fn run_case(case: &BenchCase, budget_bytes: u64) -> Result<BenchOutcome> {
    case.validate()?;
    let bytes_dense = case.dense_bytes()?;
    let working = bytes_dense.saturating_mul(DENSE_WORKING_SET);
    if working > budget_bytes {
        return Ok(BenchOutcome::Skipped {
            case: *case,
            reason: format!("dense oracle needs {working} bytes, budget is {budget_bytes}"),
        });
    }
    let frames = bench_frames(case)?;
    let (current, past) = frames.split_first().expect("at least two frames");
    let cfg = DeltaConfig::new(case.n_frames, case.decay)?;

    let sparse_out = delta_scheme(current, past, &cfg)?;
    let max_abs_diff = {
        let dense_out = dense_delta_oracle(current, past, &cfg)?;
        dense_out.max_abs_diff_sparse(&sparse_out)
    };
    if !(max_abs_diff <= EQUIVALENCE_TOL) {
        return Err(Error::Verification(format!(
            "sparse and dense Δ differ by {max_abs_diff:e} on case {case:?}"
        )));
    }

    let sparse = time(case.repetitions, || delta_scheme(current, past, &cfg))?;
    let dense = time(case.repetitions, || dense_delta_oracle(current, past, &cfg))?;
    let active_union = sparse_out.len() as u64;
    Ok(BenchOutcome::Done(BenchResult {
        case: *case,
        active_union,
        sparse,
        dense,
        bytes_sparse: sparse_bytes(active_union, case.channels, ELEM_BYTES),
        bytes_dense,
        max_abs_diff,
    }))
}

/// Runs cases one after another.
pub fn run_bench(cases: &[BenchCase], budget_bytes: u64) -> Result<Vec<BenchOutcome>> {
    cases.iter().map(|c| run_case(c, budget_bytes)).collect()
}

/// Formats a storage ratio as the percentage shown in CSV output.
pub fn storage_ratio_label(spec: &VoxelGridSpec, active: u64) -> Result<String> {
    Ok(format!("{:.2}", storage_report(spec, active)?.percent()))
}

pub fn csv_row(outcome: &BenchOutcome) -> Result<Vec<String>> {
    let case = match outcome {
        BenchOutcome::Done(r) => &r.case,
        BenchOutcome::Skipped { case, .. } => case,
    };
    let mut row = vec![
        case.dims_label(),
        case.channels.to_string(),
        case.occupancy.to_string(),
        case.n_frames.to_string(),
        case.decay.to_string(),
    ];
    match outcome {
        BenchOutcome::Done(r) => row.extend([
            format!("{:.3}", r.sparse.median_ms),
            format!("{:.3}", r.dense.median_ms),
            format!("{:.2}", r.speedup()),
            r.bytes_sparse.to_string(),
            r.bytes_dense.to_string(),
            format!("{:.2}", r.mem_ratio()),
            storage_ratio_label(&case.spec()?, r.active_union)?,
        ]),
        BenchOutcome::Skipped { .. } => row.extend([
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            case.dense_bytes()?.to_string(),
            String::new(),
            String::new(),
        ]),
    }
    Ok(row)
}

pub fn write_csv<W: Write>(out: W, outcomes: &[BenchOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::invalid(format!("csv output: {e}"));
    w.write_record(CSV_HEADER).map_err(fail)?;
    for o in outcomes {
        w.write_record(csv_row(o)?).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv output: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n_frames: usize,
    pub active_union: u64,
    /// Output feature width; always the input `C`.
    pub width: usize,
    pub delta_bytes: u64,
    pub t_sparse_ms: f64,
    pub rel_time: f64,
    pub rel_bytes: f64,
    pub rel_union: f64,
}

/// Sparse Δ cost for each `N`, normalized to the first entry.
pub fn scaling_sweep(base: &BenchCase, n_frames: &[usize]) -> Result<Vec<SweepRow>> {
    let mut rows: Vec<SweepRow> = Vec::with_capacity(n_frames.len());
    for &n in n_frames {
        let case = BenchCase { n_frames: n, ..*base };
        let frames = bench_frames(&case)?;
        let (current, past) = frames.split_first().expect("at least two frames");
        let cfg = DeltaConfig::new(n, case.decay)?;
        let out = delta_scheme(current, past, &cfg)?;
        let t = time(case.repetitions, || delta_scheme(current, past, &cfg))?;
        let union = out.len() as u64;
        let bytes = sparse_bytes(union, out.width(), ELEM_BYTES);
        let (t0, b0, u0) = rows.first().map_or((t.median_ms, bytes as f64, union as f64), |r| {
            (r.t_sparse_ms, r.delta_bytes as f64, r.active_union as f64)
        });
        rows.push(SweepRow {
            n_frames: n,
            active_union: union,
            width: out.width(),
            delta_bytes: bytes,
            t_sparse_ms: t.median_ms,
            rel_time: t.median_ms / t0,
            rel_bytes: bytes as f64 / b0,
            rel_union: union as f64 / u0,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchCase {
        BenchCase {
            dims: [32, 32, 8],
            channels: 4,
            occupancy: 0.05,
            n_frames: 3,
            decay: 0.5,
            repetitions: 3,
            seed: 11,
        }
    }

    #[test]
    fn reference_memory_ratio() {
        let case = BenchCase::reference();
        let dense = case.dense_bytes().unwrap();
        assert_eq!(dense, 512 * 512 * 32 * 16 * 4);
        let active = (0.005f64 * 512.0 * 512.0 * 32.0).round() as u64;
        let ratio = dense as f64 / sparse_bytes(active, 16, ELEM_BYTES) as f64;
        // 64 bytes per dense voxel against 12 + 64 per active row.
        let expected = (512.0 * 512.0 * 32.0 * 64.0) / (active as f64 * 76.0);
        assert_eq!(ratio, expected);
        assert!(ratio >= 20.0);
    }

    #[test]
    fn full_occupancy_costs_more_sparse() {
        let case = BenchCase {
            occupancy: 1.0,
            ..small()
        };
        let BenchOutcome::Done(r) = run_case(&case, DEFAULT_BUDGET_BYTES).unwrap() else {
            panic!("skipped")
        };
        assert_eq!(r.active_union, 32 * 32 * 8);
        assert!(r.mem_ratio() < 1.0);
    }

    #[test]
    fn storage_label_rounds_to_two_places() {
        let spec = BenchCase::reference().spec().unwrap();
        assert_eq!(storage_ratio_label(&spec, 29475).unwrap(), "0.35");
    }

    #[test]
    fn budget_skips() {
        let out = run_case(&small(), 1000).unwrap();
        assert!(matches!(out, BenchOutcome::Skipped { .. }));
        assert_eq!(csv_row(&out).unwrap().len(), 12);
    }

    #[test]
    fn small_case_is_equivalent_and_deterministic() {
        let BenchOutcome::Done(a) = run_case(&small(), DEFAULT_BUDGET_BYTES).unwrap() else {
            panic!()
        };
        let BenchOutcome::Done(b) = run_case(&small(), DEFAULT_BUDGET_BYTES).unwrap() else {
            panic!()
        };
        assert!(a.max_abs_diff <= EQUIVALENCE_TOL);
        assert_eq!((a.active_union, a.bytes_sparse), (b.active_union, b.bytes_sparse));
        let row = csv_row(&BenchOutcome::Done(a)).unwrap();
        assert_eq!(row.len(), 12);
        assert_eq!(&row[..5], &["32x32x8", "4", "0.05", "3", "0.5"]);
    }

    #[test]
    fn sweep_is_self_normalized_and_sublinear() {
        let rows = scaling_sweep(&small(), &[1, 1, 2, 4, 8]).unwrap();
        assert_eq!(rows[0].rel_time, 1.0);
        assert_eq!(rows[0].rel_bytes, 1.0);
        assert_eq!(rows[1].rel_bytes, 1.0);
        assert_eq!(rows[1].rel_union, 1.0);
        assert!(rows.iter().all(|r| r.width == 4));
        let (u1, u8) = (rows[0].active_union as f64, rows[4].active_union as f64);
        assert!(u8 > u1 && u8 < 8.0 * u1 / 2.0);
    }

    #[test]
    fn cases_file() {
        let f = BenchFile::from_toml(
            "[[case]]\ndims = [8, 8, 4]\nchannels = 2\noccupancy = 0.1\nn_frames = 2\ndecay = 1.0\n",
        )
        .unwrap();
        assert_eq!(f.budget_bytes, DEFAULT_BUDGET_BYTES);
        assert_eq!(f.cases[0].repetitions, 5);
        assert!(BenchFile::from_toml(
            "[[case]]\ndims = [8, 8, 4]\nchannels = 2\noccupancy = 0.0\nn_frames = 2\ndecay = 1.0\n"
        )
        .is_err());
    }
}
