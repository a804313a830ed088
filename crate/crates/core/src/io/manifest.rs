//! JSON sequence manifest and the on-disk sequence layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/frames/000000.dfpc ...
//! <dir>/gt/000000.dffl ...      one per frame pair, named by the earlier frame
//! ```
//!
//! Poses are sensor-to-world row-major 4×4 matrices. The transform taking
//! frame `k` coordinates into frame `k + 1` is `pose_{k+1}⁻¹ · pose_k`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_flow, read_frame, write_bytes, write_flow, write_frame};
use crate::error::{Error, Result};
use crate::geometry::{FlowField, RigidTransform};
use crate::synth::SceneSequence;

pub const MANIFEST_VERSION: &str = "deltavox-manifest/1";
pub const MANIFEST_NAME: &str = "manifest.json";
/// Orthonormality tolerance for poses read from a manifest.
pub const POSE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub index: u64,
    /// Frame file, relative to the manifest directory.
    pub path: String,
    pub pose: Vec<f64>,
    /// Ground-truth residual flow to the next frame, if stored separately.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_flow: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub version: String,
    pub dt: f64,
    pub frames: Vec<FrameEntry>,
}

impl SequenceManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: SequenceManifest = serde_json::from_str(text)
            .map_err(|e| Error::format(e.column() as u64, format!("manifest line {}: {e}", e.line())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::config(format!(
                "unsupported manifest version '{}'",
                self.version
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("manifest dt {} must be positive", self.dt)));
        }
        for w in self.frames.windows(2) {
            if w[1].index <= w[0].index {
                return Err(Error::config(format!(
                    "frame index {} does not increase after {}",
                    w[1].index, w[0].index
                )));
            }
        }
        for e in &self.frames {
            e.transform()?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl FrameEntry {
    pub fn transform(&self) -> Result<RigidTransform> {
        let m: [f64; 16] = self
            .pose
            .as_slice()
            .try_into()
            .map_err(|_| Error::config(format!("frame {}: pose needs 16 entries", self.index)))?;
        RigidTransform::from_row_major(&m, POSE_TOL).map_err(|e| Error::config(format!("frame {}: {e}", self.index)))
    }
}

fn frame_name(index: u64) -> String {
    format!("frames/{index:06}.dfpc")
}

/// File name of the flow for the pair starting at frame `index`.
pub fn flow_name(index: u64) -> String {
    format!("{index:06}.dffl")
}

/// Writes a sequence under `dir` and returns the manifest path.
pub fn write_sequence(dir: &Path, seq: &SceneSequence) -> Result<PathBuf> {
    for sub in ["frames", "gt"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(seq.len());
    for (k, (frame, pose)) in seq.frames.iter().zip(&seq.poses).enumerate() {
        let index = k as u64;
        let path = frame_name(index);
        write_frame(&dir.join(&path), frame)?;
        let gt_flow = match frame.gt_flow() {
            Some(_) => {
                let rel = format!("gt/{}", flow_name(index));
                write_flow(&dir.join(&rel), &frame.gt_flow_field()?)?;
                Some(rel)
            }
            None => None,
        };
        entries.push(FrameEntry {
            index,
            path,
            pose: pose.to_row_major().to_vec(),
            gt_flow,
        });
    }
    let manifest = SequenceManifest {
        version: MANIFEST_VERSION.to_string(),
        dt: seq.dt,
        frames: entries,
    };
    let path = dir.join(MANIFEST_NAME);
    write_bytes(&path, manifest.to_json()?.as_bytes())?;
    Ok(path)
}

/// Loads every frame listed in a manifest. A frame without embedded ground
/// truth takes it from the entry's flow file when one is named.
pub fn load_sequence(manifest_path: &Path) -> Result<(SequenceManifest, SceneSequence)> {
    let manifest = SequenceManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut poses = Vec::with_capacity(manifest.frames.len());
    for e in &manifest.frames {
        let mut frame = read_frame(&base.join(&e.path), e.index as f64 * manifest.dt)?;
        if frame.gt_flow().is_none() {
            if let Some(rel) = &e.gt_flow {
                let flow = read_flow(&base.join(rel))?;
                frame = frame.with_gt_flow(flow.into_inner())?;
            }
        }
        frames.push(frame);
        poses.push(e.transform()?);
    }
    let seq = SceneSequence {
        frames,
        poses,
        dt: manifest.dt,
    };
    Ok((manifest, seq))
}

/// Writes one flow file per frame pair into `dir`.
pub fn write_flow_dir(dir: &Path, manifest: &SequenceManifest, flows: &[FlowField]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (e, f) in manifest.frames.iter().zip(flows) {
        write_flow(&dir.join(flow_name(e.index)), f)?;
    }
    Ok(())
}

/// Reads one flow per frame pair from `dir`, checking counts against the
/// earlier frame of each pair.
pub fn read_flow_dir(dir: &Path, manifest: &SequenceManifest, seq: &SceneSequence) -> Result<Vec<FlowField>> {
    let pairs = seq.len().saturating_sub(1);
    manifest.frames[..pairs]
        .iter()
        .zip(&seq.frames)
        .map(|(e, frame)| {
            let flow = read_flow(&dir.join(flow_name(e.index)))?;
            if flow.len() != frame.len() {
                return Err(Error::invalid(format!(
                    "frame {}: prediction has {} vectors for {} points",
                    e.index,
                    flow.len(),
                    frame.len()
                )));
            }
            Ok(flow)
        })
        .collect()
}
