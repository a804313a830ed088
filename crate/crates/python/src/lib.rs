use std::path::PathBuf;

use deltavox::delta::{delta_scheme, dense_delta_oracle, DeltaConfig};
use deltavox::geometry::{Category, FlowField, PointCloudFrame, PointLabel, RigidTransform as CoreTransform, Vec3};
use deltavox::io::{load_sequence, read_tensor, write_sequence, write_tensor};
use deltavox::losses::{total_loss, LossWeights};
use deltavox::metrics::{EvalReport, Evaluator};
use deltavox::synth::{generate, reference_predictor, Predictor, SceneSequence, SceneSpec};
use deltavox::voxel::{storage_report, to_dense, SparseVoxelTensor, VoxelGridSpec};
use deltavox::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Verification(_) | Error::TestSetup(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for deltavox::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn vecs(v: &[[f64; 3]]) -> Vec<Vec3> {
    v.iter().map(|p| Vec3::from(*p)).collect()
}

fn arrays(v: &[Vec3]) -> Vec<[f64; 3]> {
    v.iter().map(|p| [p.x, p.y, p.z]).collect()
}

/// Rigid sensor-to-world transform.
#[pyclass(frozen, skip_from_py_object, module = "pydeltavox")]
#[derive(Clone)]
struct RigidTransform {
    inner: CoreTransform,
}

#[pymethods]
impl RigidTransform {
    /// Builds from 16 row-major entries of a 4×4 matrix.
    #[new]
    #[pyo3(signature = (matrix, tol=1e-6))]
    fn new(matrix: [f64; 16], tol: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreTransform::from_row_major(&matrix, tol).py()?,
        })
    }

    #[staticmethod]
    fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        Self {
            inner: CoreTransform::from_yaw(yaw, Vec3::from(translation)),
        }
    }

    fn inverse(&self) -> Self {
        Self {
            inner: self.inner.inverse(),
        }
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.inner.transform_point(&Vec3::from(p));
        [q.x, q.y, q.z]
    }

    fn matrix(&self) -> [f64; 16] {
        self.inner.to_row_major()
    }
}

/// Voxel grid geometry plus feature width.
#[pyclass(frozen, skip_from_py_object, module = "pydeltavox")]
#[derive(Clone, Copy)]
struct VoxelGrid {
    inner: VoxelGridSpec,
}

#[pymethods]
impl VoxelGrid {
    #[new]
    fn new(origin: [f64; 3], resolution: [f64; 3], dims: [u32; 3], feature_width: usize) -> PyResult<Self> {
        Ok(Self {
            inner: VoxelGridSpec::new(Vec3::from(origin), Vec3::from(resolution), dims, feature_width).py()?,
        })
    }

    #[getter]
    fn dims(&self) -> [u32; 3] {
        self.inner.dims()
    }

    #[getter]
    fn feature_width(&self) -> usize {
        self.inner.feature_width()
    }

    fn voxel_count(&self) -> u64 {
        self.inner.voxel_count()
    }

    /// Cell holding `p`, or None outside the grid.
    fn voxel_of(&self, p: [f64; 3]) -> Option<[u32; 3]> {
        self.inner.voxel_of(&Vec3::from(p))
    }

    /// `(active, dense, percent)` for `active` occupied voxels.
    fn storage_report(&self, active: u64) -> PyResult<(u64, u64, f64)> {
        let r = storage_report(&self.inner, active).py()?;
        Ok((r.active, r.dense, r.percent()))
    }
}

/// Coordinate-sorted sparse voxel features in double precision.
#[pyclass(frozen, skip_from_py_object, module = "pydeltavox")]
#[derive(Clone)]
struct SparseTensor {
    inner: SparseVoxelTensor,
}

#[pymethods]
impl SparseTensor {
    /// Rows may come in any order; duplicate coordinates are rejected.
    #[new]
    fn new(grid: &VoxelGrid, coords: Vec<[u32; 3]>, features: Vec<Vec<f64>>) -> PyResult<Self> {
        let c = grid.inner.feature_width();
        if let Some(bad) = features.iter().position(|r| r.len() != c) {
            return Err(PyValueError::new_err(format!(
                "feature row {bad} does not have width {c}"
            )));
        }
        let flat: Vec<f64> = features.into_iter().flatten().collect();
        Ok(Self {
            inner: SparseVoxelTensor::from_coords(grid.inner, &coords, &flat).py()?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn grid(&self) -> VoxelGrid {
        VoxelGrid {
            inner: *self.inner.spec(),
        }
    }

    fn coords(&self) -> Vec<[u32; 3]> {
        self.inner.coords().collect()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|i| self.inner.row(i).to_vec()).collect()
    }

    /// Flat dense grid in `(x, y, z, channel)` order.
    fn to_dense(&self) -> Vec<f64> {
        to_dense(&self.inner).data().to_vec()
    }

    fn byte_footprint(&self) -> u64 {
        self.inner.byte_footprint()
    }

    /// Writes single-precision features.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_tensor(&path, &self.inner.cast::<f32>()).py()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_tensor(&path).py()?.cast::<f64>(),
        })
    }
}

fn past_tensors(past: &[PyRef<'_, SparseTensor>]) -> Vec<SparseVoxelTensor> {
    past.iter().map(|p| p.inner.clone()).collect()
}

/// Decayed temporal Δ of `current` against `past` (nearest first).
#[pyfunction]
#[pyo3(signature = (current, past, decay=0.5))]
fn delta(current: &SparseTensor, past: Vec<PyRef<'_, SparseTensor>>, decay: f64) -> PyResult<SparseTensor> {
    let past = past_tensors(&past);
    let cfg = DeltaConfig::new(past.len(), decay).py()?;
    Ok(SparseTensor {
        inner: delta_scheme(&current.inner, &past, &cfg).py()?,
    })
}

/// Dense reference for [`delta`], flattened like `SparseTensor.to_dense`.
#[pyfunction]
#[pyo3(signature = (current, past, decay=0.5))]
fn dense_delta(current: &SparseTensor, past: Vec<PyRef<'_, SparseTensor>>, decay: f64) -> PyResult<Vec<f64>> {
    let past = past_tensors(&past);
    let cfg = DeltaConfig::new(past.len(), decay).py()?;
    Ok(dense_delta_oracle(&current.inner, &past, &cfg).py()?.data().to_vec())
}

/// A synthetic or loaded sequence with per-frame labels and ground truth.
#[pyclass(frozen, module = "pydeltavox")]
struct Sequence {
    inner: SceneSequence,
}

impl Sequence {
    fn frame(&self, k: usize) -> PyResult<&PointCloudFrame> {
        self.inner
            .frames
            .get(k)
            .ok_or_else(|| PyValueError::new_err(format!("frame {k} out of range")))
    }

    fn predictions(&self, pred: &Bound<'_, PyAny>) -> PyResult<Vec<FlowField>> {
        if let Ok(name) = pred.extract::<String>() {
            return reference_predictor(&self.inner, Predictor::parse(&name).py()?).py();
        }
        let flows: Vec<Vec<[f64; 3]>> = pred.extract()?;
        flows.iter().map(|f| FlowField::new(vecs(f)).py()).collect()
    }
}

fn eval_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epe_mean_cm", r.threeway.mean)?;
    d.set_item("epe_fd_cm", r.threeway.fd)?;
    d.set_item("epe_fs_cm", r.threeway.fs)?;
    d.set_item("epe_bs_cm", r.threeway.bs)?;
    d.set_item("points", r.threeway.counts)?;
    d.set_item("bucket_mean", r.bucket.mean)?;
    for c in Category::ALL {
        d.set_item(format!("bucket_{}", c.name().to_lowercase()), r.bucket.ratio(c))?;
    }
    Ok(d)
}

#[pymethods]
impl Sequence {
    /// Generates a sequence from a TOML scene description.
    #[staticmethod]
    fn synthesize(spec_toml: &str) -> PyResult<Self> {
        let spec = SceneSpec::from_toml(spec_toml).py()?;
        Ok(Self {
            inner: generate(&spec).py()?,
        })
    }

    #[staticmethod]
    fn load(manifest: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_sequence(&manifest).py()?.1,
        })
    }

    /// Writes the manifest, frames and ground truth; returns the manifest path.
    fn save(&self, dir: PathBuf) -> PyResult<PathBuf> {
        write_sequence(&dir, &self.inner).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    fn pose(&self, k: usize) -> PyResult<RigidTransform> {
        self.frame(k)?;
        Ok(RigidTransform {
            inner: self.inner.poses[k],
        })
    }

    fn points(&self, k: usize) -> PyResult<Vec<[f64; 3]>> {
        Ok(arrays(self.frame(k)?.points()))
    }

    /// `(instance, category)` per point, None for background.
    fn labels(&self, k: usize) -> PyResult<Vec<Option<(u32, &'static str)>>> {
        let f = self.frame(k)?;
        Ok((0..f.len())
            .map(|i| f.label(i).map(|l| (l.instance, l.category.name())))
            .collect())
    }

    /// Ground-truth residual flow; None for the last frame.
    fn gt_flow(&self, k: usize) -> PyResult<Option<Vec<[f64; 3]>>> {
        Ok(self.frame(k)?.gt_flow().map(arrays))
    }

    /// Scores `pred`: a builtin name ("zero", "oracle", "noisy:σ[:seed]") or
    /// one flow list per frame pair.
    fn evaluate<'py>(&self, py: Python<'py>, pred: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyDict>> {
        let preds = self.predictions(pred)?;
        let mut ev = Evaluator::new();
        for (k, p) in preds.iter().enumerate() {
            ev.add_frame(p, self.frame(k)?, self.inner.dt).py()?;
        }
        eval_dict(py, &ev.finish())
    }

    /// Mean loss terms over all frame pairs, with default or TOML weights.
    #[pyo3(signature = (pred, weights_toml=None))]
    fn loss<'py>(
        &self,
        py: Python<'py>,
        pred: &Bound<'py, PyAny>,
        weights_toml: Option<&str>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut w = match weights_toml {
            Some(t) => LossWeights::from_toml(t).py()?,
            None => LossWeights::default(),
        };
        w.frame_dt = self.inner.dt;
        let preds = self.predictions(pred)?;
        let mut sums = [0.0; 4];
        for (k, p) in preds.iter().enumerate() {
            let f = self.frame(k)?;
            let r = total_loss(p, &f.gt_flow_field().py()?, f, &w).py()?;
            for (s, v) in sums.iter_mut().zip([r.l_deflow, r.l_category, r.l_instance, r.l_total]) {
                *s += v;
            }
        }
        let n = preds.len().max(1) as f64;
        let d = PyDict::new(py);
        for (key, s) in ["l_deflow", "l_category", "l_instance", "l_total"].iter().zip(sums) {
            d.set_item(*key, s / n)?;
        }
        Ok(d)
    }
}

/// Loss terms and gradient for one frame given explicit arrays.
///
/// `labels` holds `(instance, category_name)` or None per point.
#[pyfunction]
#[pyo3(signature = (pred, gt, labels, frame_dt=0.1))]
fn frame_loss<'py>(
    py: Python<'py>,
    pred: Vec<[f64; 3]>,
    gt: Vec<[f64; 3]>,
    labels: Vec<Option<(u32, String)>>,
    frame_dt: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let labels = labels
        .into_iter()
        .map(|l| {
            l.map(|(instance, name)| {
                Category::parse(&name)
                    .map(|category| PointLabel { instance, category })
                    .ok_or_else(|| PyValueError::new_err(format!("unknown category '{name}'")))
            })
            .transpose()
        })
        .collect::<PyResult<Vec<_>>>()?;
    let frame = PointCloudFrame::new(vec![Vec3::zeros(); labels.len()], 0.0)
        .py()?
        .with_labels(labels)
        .py()?;
    let w = LossWeights {
        frame_dt,
        ..LossWeights::default()
    };
    let r = total_loss(
        &FlowField::new(vecs(&pred)).py()?,
        &FlowField::new(vecs(&gt)).py()?,
        &frame,
        &w,
    )
    .py()?;
    let d = PyDict::new(py);
    d.set_item("l_deflow", r.l_deflow)?;
    d.set_item("l_category", r.l_category)?;
    d.set_item("l_instance", r.l_instance)?;
    d.set_item("l_total", r.l_total)?;
    d.set_item("gradient", arrays(&r.gradient))?;
    Ok(d)
}

/// Runs the seeded property suite; returns `(passed, failed)`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn validate(py: Python<'_>, seed: u64) -> (usize, usize) {
    let s = py.detach(|| deltavox::validation::run_all(seed));
    (s.passed, s.failed)
}

#[pymodule]
fn pydeltavox(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RigidTransform>()?;
    m.add_class::<VoxelGrid>()?;
    m.add_class::<SparseTensor>()?;
    m.add_class::<Sequence>()?;
    m.add_function(wrap_pyfunction!(delta, m)?)?;
    m.add_function(wrap_pyfunction!(dense_delta, m)?)?;
    m.add_function(wrap_pyfunction!(frame_loss, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
