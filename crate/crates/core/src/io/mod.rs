//! On-disk formats: binary frames, flows and tensors, the JSON manifest and
//! TOML reports. All binary values are little-endian.

mod binary;
mod manifest;
mod report;

use std::path::Path;

pub use binary::{
    decode_flow, decode_frame, decode_tensor, encode_flow, encode_frame, encode_tensor, FLAG_GT_FLOW, FLAG_LABELS,
    FLOW_MAGIC, FORMAT_VERSION, FRAME_MAGIC, TENSOR_MAGIC,
};
pub use manifest::{
    flow_name, load_sequence, read_flow_dir, write_flow_dir, write_sequence, FrameEntry, SequenceManifest,
    MANIFEST_NAME, MANIFEST_VERSION, POSE_TOL,
};
pub use report::{from_toml, to_toml, EvalDocument, LossDocument};

use crate::error::{Error, Result};
use crate::geometry::{FlowField, PointCloudFrame};
use crate::voxel::SparseVoxelTensor;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn read_frame(path: &Path, frame_time: f64) -> Result<PointCloudFrame> {
    in_file(path, decode_frame(&read_bytes(path)?, frame_time))
}

pub fn write_frame(path: &Path, frame: &PointCloudFrame) -> Result<()> {
    write_bytes(path, &encode_frame(frame)?)
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    in_file(path, decode_flow(&read_bytes(path)?))
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    write_bytes(path, &encode_flow(flow)?)
}

pub fn read_tensor(path: &Path) -> Result<SparseVoxelTensor<f32>> {
    in_file(path, decode_tensor(&read_bytes(path)?))
}

pub fn write_tensor(path: &Path, tensor: &SparseVoxelTensor<f32>) -> Result<()> {
    write_bytes(path, &encode_tensor(tensor)?)
}
