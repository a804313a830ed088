use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use deltavox::bench::{run_bench, write_csv, BenchFile, BenchOutcome};
use deltavox::delta::{delta_scheme, dense_delta_oracle, DeltaConfig};
use deltavox::geometry::{apply_ego_compensation, FlowField, RigidTransform};
use deltavox::io::{
    load_sequence, read_bytes, read_flow_dir, to_toml, write_bytes, write_flow_dir, write_sequence, write_tensor,
    EvalDocument, LossDocument, SequenceManifest, FLOW_MAGIC, FRAME_MAGIC, TENSOR_MAGIC,
};
use deltavox::losses::{finite_diff_gradient_at, gradient_relative_error, total_loss, LossWeights};
use deltavox::metrics::Evaluator;
use deltavox::synth::{generate, reference_predictor, Predictor, SceneSequence, SceneSpec};
use deltavox::validation::run_all;
use deltavox::voxel::{point_features, storage_report, voxelize, FeatureMode, SparseVoxelTensor, VoxelGridSpec};
use deltavox::{Error, Result};

use crate::{table, Command, Features};

/// Largest accepted relative gradient error under `--grad-check`.
const GRAD_TOL: f64 = 1e-5;
const GRAD_STEP: f64 = 1e-6;
const EQUIVALENCE_TOL: f64 = 1e-9;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::Delta {
            manifest,
            frames,
            lambda,
            res,
            dims,
            origin,
            features,
            out,
            check_dense,
        } => {
            let mode = match features {
                Features::Occupancy => FeatureMode::Occupancy,
                Features::Offset => FeatureMode::Offset,
            };
            let spec = match origin {
                Some(o) => VoxelGridSpec::new(o, res, dims, mode.width())?,
                None => VoxelGridSpec::centered(res, dims, mode.width())?,
            };
            let cfg = DeltaConfig::new(frames, lambda)?;
            delta(&manifest, &spec, &mode, &cfg, &out, check_dense)
        }
        Command::Eval { manifest, pred, out } => eval(&manifest, &pred, &out),
        Command::Loss {
            manifest,
            pred,
            weights,
            grad_check,
            grad_check_points,
            out,
        } => loss(
            &manifest,
            &pred,
            weights.as_deref(),
            grad_check.then_some(grad_check_points),
            &out,
        ),
        Command::Predict { manifest, pred, out } => predict(&manifest, &pred, &out),
        Command::Bench { cases, out } => bench(&cases, &out),
        Command::Validate { seed } => validate(seed),
        Command::ExportCsv { input, out } => export_csv(&input, out.as_deref()),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn synth(spec_path: &Path, out: &Path) -> Result<()> {
    let spec = SceneSpec::from_toml(&read_text(spec_path)?)?;
    let seq = generate(&spec)?;
    let manifest = write_sequence(out, &seq)?;
    println!(
        "wrote {} frames of {} points to {}",
        seq.len(),
        seq.frames[0].len(),
        manifest.display()
    );
    Ok(())
}

fn delta(
    manifest: &Path,
    spec: &VoxelGridSpec,
    mode: &FeatureMode,
    cfg: &DeltaConfig,
    out: &Path,
    check_dense: bool,
) -> Result<()> {
    let (_, seq) = load_sequence(manifest)?;
    let n = cfg.n_past();
    if seq.len() < n + 1 {
        return Err(Error::InvalidInput(format!(
            "{n} past frames need at least {} frames, manifest has {}",
            n + 1,
            seq.len()
        )));
    }
    let t = seq.len() - 1;
    let voxelize_in_current = |k: usize| -> Result<SparseVoxelTensor> {
        let to_current = RigidTransform::relative(&seq.poses[k], &seq.poses[t]);
        let frame = apply_ego_compensation(&seq.frames[k], &to_current)?;
        let feats = point_features(&frame, spec, mode)?;
        Ok(voxelize(&frame, &feats, spec)?.0)
    };
    let current = voxelize_in_current(t)?;
    let past = (1..=n)
        .map(|i| voxelize_in_current(t - i))
        .collect::<Result<Vec<_>>>()?;
    let result = delta_scheme(&current, &past, cfg)?;

    if check_dense {
        let dense = dense_delta_oracle(&current, &past, cfg)?;
        let diff = dense.max_abs_diff_sparse(&result);
        if diff.is_nan() || diff > EQUIVALENCE_TOL {
            return Err(Error::Verification(format!(
                "sparse Δ differs from the dense oracle by {diff:e}"
            )));
        }
        println!("dense check: max |sparse - dense| = {diff:e}");
    }
    write_tensor(out, &result.cast::<f32>())?;
    let report = storage_report(spec, result.len() as u64)?;
    println!("active voxels: {}", report.active);
    println!("dense voxels: {}", report.dense);
    println!("storage ratio: {:.4}%", report.percent());
    Ok(())
}

/// Loads a sequence and one prediction per frame pair.
fn sequence_and_predictions(manifest: &Path, pred: &str) -> Result<(SequenceManifest, SceneSequence, Vec<FlowField>)> {
    let (m, seq) = load_sequence(manifest)?;
    let preds = match pred.strip_prefix("builtin:") {
        Some(name) => reference_predictor(&seq, Predictor::parse(name)?)?,
        None => read_flow_dir(Path::new(pred), &m, &seq)?,
    };
    Ok((m, seq, preds))
}

fn eval(manifest: &Path, pred: &str, out: &Path) -> Result<()> {
    let (_, seq, preds) = sequence_and_predictions(manifest, pred)?;
    let mut ev = Evaluator::new();
    for (k, p) in preds.iter().enumerate() {
        ev.add_frame(p, &seq.frames[k], seq.dt)
            .map_err(|e| Error::InvalidInput(format!("frame {k}: {e}")))?;
    }
    let report = ev.finish();
    let doc = EvalDocument::new(&report, preds.len());
    write_bytes(out, to_toml(&doc)?.as_bytes())?;
    print!("{}", table::eval_table(&report));
    Ok(())
}

/// Evenly spaced points whose residual is clear of the norm kink.
fn grad_check_points(pred: &FlowField, gt: &FlowField, limit: usize) -> Vec<usize> {
    let eligible: Vec<usize> = (0..pred.len())
        .filter(|&i| (pred[i] - gt[i]).norm() > 10.0 * GRAD_STEP)
        .collect();
    if eligible.len() <= limit {
        return eligible;
    }
    (0..limit).map(|j| eligible[j * eligible.len() / limit]).collect()
}

fn loss(manifest: &Path, pred: &str, weights: Option<&Path>, grad_check: Option<usize>, out: &Path) -> Result<()> {
    let (_, seq, preds) = sequence_and_predictions(manifest, pred)?;
    let mut w = match weights {
        Some(path) => LossWeights::from_toml(&read_text(path)?)?,
        None => LossWeights::default(),
    };
    // Flows are per manifest interval.
    w.frame_dt = seq.dt;
    w.validate()?;

    let mut sums = [0.0; 4];
    let mut worst: f64 = 0.0;
    let mut checked = 0u64;
    for (k, p) in preds.iter().enumerate() {
        let frame = &seq.frames[k];
        let gt = frame.gt_flow_field()?;
        let rep = total_loss(p, &gt, frame, &w)?;
        for (s, v) in sums
            .iter_mut()
            .zip([rep.l_deflow, rep.l_category, rep.l_instance, rep.l_total])
        {
            *s += v;
        }
        if let Some(limit) = grad_check {
            let idx = grad_check_points(p, &gt, limit);
            let numeric = finite_diff_gradient_at(p, &gt, frame, &w, GRAD_STEP, &idx)?;
            let analytic: Vec<_> = idx.iter().map(|&i| rep.gradient[i]).collect();
            worst = worst.max(gradient_relative_error(&analytic, &numeric));
            checked += idx.len() as u64;
        }
    }
    if grad_check.is_some() && checked == 0 {
        return Err(Error::InvalidInput(
            "gradient check needs points whose residual is away from zero".into(),
        ));
    }
    let n = preds.len().max(1) as f64;
    let doc = LossDocument {
        frames: preds.len() as u64,
        l_deflow: sums[0] / n,
        l_category: sums[1] / n,
        l_instance: sums[2] / n,
        l_total: sums[3] / n,
        grad_check_max_rel_error: grad_check.map(|_| worst),
        grad_check_points: grad_check.map(|_| checked),
        weights: w,
    };
    write_bytes(out, to_toml(&doc)?.as_bytes())?;
    println!(
        "L_deflow {:.6}  L_category {:.6}  L_instance {:.6}  L_total {:.6}",
        doc.l_deflow, doc.l_category, doc.l_instance, doc.l_total
    );
    if grad_check.is_some() {
        println!("grad check: {checked} points, max relative error {worst:e}");
        if worst.is_nan() || worst > GRAD_TOL {
            return Err(Error::Verification(format!(
                "relative gradient error {worst:e} exceeds {GRAD_TOL:e}"
            )));
        }
    }
    Ok(())
}

fn predict(manifest: &Path, pred: &str, out: &Path) -> Result<()> {
    let name = pred
        .strip_prefix("builtin:")
        .ok_or_else(|| Error::InvalidInput("predict needs a builtin:<name> predictor".into()))?;
    let (m, seq) = load_sequence(manifest)?;
    let flows = reference_predictor(&seq, Predictor::parse(name)?)?;
    write_flow_dir(out, &m, &flows)?;
    println!("wrote {} flow files to {}", flows.len(), out.display());
    Ok(())
}

fn bench(cases: &Path, out: &Path) -> Result<()> {
    let file = BenchFile::from_toml(&read_text(cases)?)?;
    let outcomes = run_bench(&file.cases, file.budget_bytes)?;
    for o in &outcomes {
        match o {
            BenchOutcome::Done(r) => println!(
                "{:?} C={} occ={} N={}: sparse {:.3} ms, dense {:.3} ms, speedup {:.1}x, memory {:.1}x",
                r.case.dims,
                r.case.channels,
                r.case.occupancy,
                r.case.n_frames,
                r.sparse.median_ms,
                r.dense.median_ms,
                r.speedup(),
                r.mem_ratio()
            ),
            BenchOutcome::Skipped { case, reason } => {
                eprintln!("skipped {:?} C={}: {reason}", case.dims, case.channels)
            }
        }
    }
    write_csv(create(out)?, &outcomes)
}

fn validate(seed: u64) -> Result<()> {
    let s = run_all(seed);
    for f in &s.failures {
        println!("FAIL {} seed={} size={}: {}", f.property, f.seed, f.size, f.message);
    }
    println!("{} passed, {} failed", s.passed, s.failed);
    if s.ok() {
        Ok(())
    } else {
        Err(Error::Verification(format!("{} properties failed", s.failed)))
    }
}

fn export_csv(input: &Path, out: Option<&Path>) -> Result<()> {
    let bytes = read_bytes(input)?;
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let fail = |e: csv::Error| Error::InvalidInput(format!("csv output: {e}"));
    let magic = bytes.get(..4).unwrap_or_default();
    if magic == FRAME_MAGIC {
        let f = deltavox::io::decode_frame(&bytes, 0.0)?;
        w.write_record(["x", "y", "z", "instance", "category", "gx", "gy", "gz"])
            .map_err(fail)?;
        for (i, p) in f.points().iter().enumerate() {
            let mut rec: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            match f.label(i) {
                Some(l) => rec.extend([l.instance.to_string(), l.category.name().to_string()]),
                None => rec.extend([String::new(), String::new()]),
            }
            match f.gt_flow() {
                Some(g) => rec.extend(g[i].iter().map(|v| v.to_string())),
                None => rec.extend([String::new(), String::new(), String::new()]),
            }
            w.write_record(&rec).map_err(fail)?;
        }
    } else if magic == FLOW_MAGIC {
        let f = deltavox::io::decode_flow(&bytes)?;
        w.write_record(["fx", "fy", "fz"]).map_err(fail)?;
        for v in f.as_slice() {
            w.write_record(v.iter().map(|c| c.to_string())).map_err(fail)?;
        }
    } else if magic == TENSOR_MAGIC {
        let t = deltavox::io::decode_tensor(&bytes)?;
        let mut header = vec!["i".to_string(), "j".to_string(), "k".to_string()];
        header.extend((0..t.width()).map(|c| format!("f{c}")));
        w.write_record(&header).map_err(fail)?;
        for (r, c) in t.coords().enumerate() {
            let rec = c
                .iter()
                .map(|v| v.to_string())
                .chain(t.row(r).iter().map(|v| v.to_string()));
            w.write_record(rec).map_err(fail)?;
        }
    } else {
        return Err(Error::Format {
            offset: 0,
            message: format!("{}: not a frame, flow or tensor file", input.display()),
        });
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("csv output: {e}")))
}
