//! Temporal Δ features over sparse voxel tensors.
//!
//! `D_delta = Σ_{n=1..N} λ^{n−1} (D_t − D_{t−n}) / N`, evaluated with a
//! key-ordered merge of two COO streams followed by a segmented reduction over
//! equal keys. Frame differencing and the weighted accumulation both run
//! through [`sparse_delta`].

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::voxel::{to_dense, DenseGrid, Feature, SparseVoxelTensor};

/// Element-wise combination applied over the union of two coordinate sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparseOp {
    Add,
    Sub,
}

/// Number of past frames and temporal decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaConfig {
    n_past: usize,
    decay: f64,
}

impl DeltaConfig {
    pub fn new(n_past: usize, decay: f64) -> Result<Self> {
        if n_past == 0 {
            return Err(Error::config("at least one past frame is required"));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::config(format!("decay {decay} outside (0, 1]")));
        }
        Ok(Self { n_past, decay })
    }

    pub fn n_past(&self) -> usize {
        self.n_past
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// Weights `λ^{n−1}` for `n = 1..=N`, in application order.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_past).map(|i| self.decay.powi(i as i32)).collect()
    }
}

/// Merges two key-sorted streams (ties: `a` first) and reduces runs of equal
/// keys left to right. `map_b` transforms rows of `b` as they enter the
/// stream; the reduction is element-wise addition.
fn merge_reduce<T: Feature>(
    a: &SparseVoxelTensor<T>,
    b: &SparseVoxelTensor<T>,
    map_b: impl Fn(T) -> T,
) -> SparseVoxelTensor<T> {
    let c = a.width();
    let (ka, kb) = (a.keys(), b.keys());
    let mut keys: Vec<u64> = Vec::with_capacity(ka.len() + kb.len());
    let mut features: Vec<T> = Vec::with_capacity((ka.len() + kb.len()) * c);

    let (mut i, mut j) = (0, 0);
    while i < ka.len() || j < kb.len() {
        let take_a = j == kb.len() || (i < ka.len() && ka[i] <= kb[j]);
        let key = if take_a { ka[i] } else { kb[j] };
        let extend = keys.last() == Some(&key);
        if !extend {
            keys.push(key);
        }
        if take_a {
            push_row(&mut features, a.row(i), extend, |v| v);
            i += 1;
        } else {
            push_row(&mut features, b.row(j), extend, &map_b);
            j += 1;
        }
    }
    SparseVoxelTensor::from_parts_unchecked(*a.spec(), keys, features)
}

fn push_row<T: Feature>(out: &mut Vec<T>, row: &[T], extend: bool, map: impl Fn(T) -> T) {
    if extend {
        let base = out.len() - row.len();
        for (acc, &v) in out[base..].iter_mut().zip(row) {
            *acc = *acc + map(v);
        }
    } else {
        out.extend(row.iter().map(|&v| map(v)));
    }
}

/// Union-merge `a op b`; a row missing on one side counts as zeros. Explicit
/// zero rows in the result are kept.
pub fn sparse_delta<T: Feature>(
    a: &SparseVoxelTensor<T>,
    b: &SparseVoxelTensor<T>,
    op: SparseOp,
) -> Result<SparseVoxelTensor<T>> {
    a.spec().ensure_matches(b.spec())?;
    Ok(match op {
        SparseOp::Add => merge_reduce(a, b, |v| v),
        SparseOp::Sub => merge_reduce(a, b, |v| -v),
    })
}

const PAR_THRESHOLD: usize = 1 << 14;

pub fn scale<T: Feature>(a: &SparseVoxelTensor<T>, factor: T) -> SparseVoxelTensor<T> {
    let (spec, keys, mut features) = a.clone().into_parts();
    if features.len() >= PAR_THRESHOLD {
        features.par_iter_mut().for_each(|v| *v = *v * factor);
    } else {
        features.iter_mut().for_each(|v| *v = *v * factor);
    }
    SparseVoxelTensor::from_parts_unchecked(spec, keys, features)
}

fn check_inputs<T: Feature>(
    current: &SparseVoxelTensor<T>,
    past: &[SparseVoxelTensor<T>],
    cfg: &DeltaConfig,
) -> Result<()> {
    if past.len() != cfg.n_past {
        return Err(Error::config(format!(
            "expected {} past frames, got {}",
            cfg.n_past,
            past.len()
        )));
    }
    for p in past {
        current.spec().ensure_matches(p.spec())?;
    }
    Ok(())
}

/// Decay-weighted temporal Δ feature. `past[0]` is frame `t−1`, `past[1]` is
/// `t−2`, and so on. Terms accumulate in ascending `n`; the division by `N`
/// is applied once at the end.
pub fn delta_scheme<T: Feature>(
    current: &SparseVoxelTensor<T>,
    past: &[SparseVoxelTensor<T>],
    cfg: &DeltaConfig,
) -> Result<SparseVoxelTensor<T>> {
    check_inputs(current, past, cfg)?;
    let mut acc = SparseVoxelTensor::empty(*current.spec());
    for (p, w) in past.iter().zip(cfg.weights()) {
        let diff = sparse_delta(current, p, SparseOp::Sub)?;
        acc = sparse_delta(&acc, &scale(&diff, T::from_f64(w)), SparseOp::Add)?;
    }
    Ok(scale(&acc, T::ONE / T::from_f64(cfg.n_past as f64)))
}

/// Dense reference evaluation of the Δ scheme with plain per-cell loops.
///
/// Holds at most three dense grids at once (current, one past frame, output).
pub fn dense_delta_oracle<T: Feature>(
    current: &SparseVoxelTensor<T>,
    past: &[SparseVoxelTensor<T>],
    cfg: &DeltaConfig,
) -> Result<DenseGrid<T>> {
    check_inputs(current, past, cfg)?;
    let cur = to_dense(current);
    let mut out = DenseGrid::zeros(current.spec());
    for (n, p) in past.iter().enumerate() {
        let w = T::from_f64(cfg.decay.powi(n as i32));
        let prev = to_dense(p);
        out.data_mut()
            .par_iter_mut()
            .zip(cur.data().par_iter().zip(prev.data().par_iter()))
            .for_each(|(o, (c, q))| *o = *o + w * (*c - *q));
    }
    let inv = T::ONE / T::from_f64(past.len() as f64);
    out.data_mut().par_iter_mut().for_each(|o| *o = *o * inv);
    Ok(out)
}

/// Drops rows whose largest absolute entry is `≤ epsilon`.
pub fn prune_zeros<T: Feature>(a: &SparseVoxelTensor<T>, epsilon: f64) -> Result<SparseVoxelTensor<T>> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon {epsilon} must be ≥ 0")));
    }
    let mut keys = Vec::new();
    let mut features = Vec::new();
    for (i, &k) in a.keys().iter().enumerate() {
        let row = a.row(i);
        let max = row.iter().map(|v| v.abs().to_f64()).fold(0.0, f64::max);
        if max > epsilon {
            keys.push(k);
            features.extend_from_slice(row);
        }
    }
    Ok(SparseVoxelTensor::from_parts_unchecked(*a.spec(), keys, features))
}
