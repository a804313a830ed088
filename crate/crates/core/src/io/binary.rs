//! Little-endian binary codecs for frames, flow fields and sparse tensors.
//!
//! Decoders report the byte offset of the first violation. Encoders store
//! coordinates and features as `f32`, so a decode/encode cycle is
//! byte-identical while an encode of arbitrary `f64` data rounds once.

use crate::error::{Error, Result};
use crate::geometry::{Category, FlowField, PointCloudFrame, PointLabel, Vec3, BACKGROUND_INSTANCE};
use crate::voxel::{SparseVoxelTensor, VoxelGridSpec};

pub const FRAME_MAGIC: &[u8; 4] = b"DFPC";
pub const FLOW_MAGIC: &[u8; 4] = b"DFFL";
pub const TENSOR_MAGIC: &[u8; 4] = b"DFVX";
pub const FORMAT_VERSION: u16 = 1;

pub const FLAG_LABELS: u16 = 1;
pub const FLAG_GT_FLOW: u16 = 2;

const NO_CATEGORY: u8 = 255;
const FRAME_HEADER: u64 = 16;
const FLOW_HEADER: u64 = 14;
const TENSOR_HEADER: u64 = 80;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.buf.len() {
            return Err(Error::format(
                self.buf.len() as u64,
                format!("file ends while reading {what}"),
            ));
        }
        let out = self.buf[self.pos..end].try_into().expect("slice length is N");
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take::<1>(what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        self.take(what).map(u16::from_le_bytes)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take(what).map(u32::from_le_bytes)
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        self.take(what).map(i32::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.take(what).map(u64::from_le_bytes)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let at = self.offset();
        let v = f32::from_le_bytes(self.take(what)?);
        if !v.is_finite() {
            return Err(Error::format(at, format!("non-finite {what}")));
        }
        Ok(v)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let at = self.offset();
        let v = f64::from_le_bytes(self.take(what)?);
        if !v.is_finite() {
            return Err(Error::format(at, format!("non-finite {what}")));
        }
        Ok(v)
    }

    fn vec3(&mut self, what: &str) -> Result<Vec3> {
        Ok(Vec3::new(
            self.f32(what)? as f64,
            self.f32(what)? as f64,
            self.f32(what)? as f64,
        ))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take::<4>("magic")?;
        if &got != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let at = self.offset();
        let v = self.u16("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::format(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    /// Checks the total length against the size implied by the header.
    fn expect_len(&self, expected: u64) -> Result<()> {
        let actual = self.buf.len() as u64;
        if actual < expected {
            return Err(Error::format(
                actual,
                format!("file is {actual} bytes, header implies {expected}"),
            ));
        }
        if actual > expected {
            return Err(Error::format(
                expected,
                format!("{} trailing bytes after declared payload", actual - expected),
            ));
        }
        Ok(())
    }
}

fn payload_len(count: u64, per_point: u64, header: u64, at: u64) -> Result<u64> {
    count
        .checked_mul(per_point)
        .and_then(|b| b.checked_add(header))
        .ok_or_else(|| Error::format(at, format!("point count {count} overflows the file size")))
}

fn put_vec3(out: &mut Vec<u8>, v: &Vec3) {
    for c in v.iter() {
        out.extend_from_slice(&(*c as f32).to_le_bytes());
    }
}

fn check_f32_range(v: &Vec3, what: &str, i: usize) -> Result<()> {
    if v.iter().any(|c| !(*c as f32).is_finite()) {
        return Err(Error::invalid(format!("{what} {i} does not fit in f32")));
    }
    Ok(())
}

pub fn encode_frame(frame: &PointCloudFrame) -> Result<Vec<u8>> {
    let n = frame.len();
    let mut flags = 0;
    if frame.labels().is_some() {
        flags |= FLAG_LABELS;
    }
    if frame.gt_flow().is_some() {
        flags |= FLAG_GT_FLOW;
    }
    let mut out = Vec::with_capacity(FRAME_HEADER as usize + n * 29);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for (i, p) in frame.points().iter().enumerate() {
        check_f32_range(p, "point", i)?;
        put_vec3(&mut out, p);
    }
    if let Some(labels) = frame.labels() {
        for l in labels {
            let id = l.map_or(BACKGROUND_INSTANCE, |l| l.instance);
            out.extend_from_slice(&id.to_le_bytes());
        }
        for l in labels {
            out.push(l.map_or(NO_CATEGORY, |l| l.category.code()));
        }
    }
    if let Some(flow) = frame.gt_flow() {
        for (i, v) in flow.iter().enumerate() {
            check_f32_range(v, "ground-truth flow", i)?;
            put_vec3(&mut out, v);
        }
    }
    Ok(out)
}

/// Decodes a frame; `frame_time` is not stored in the file.
pub fn decode_frame(buf: &[u8], frame_time: f64) -> Result<PointCloudFrame> {
    let mut r = Reader::new(buf);
    r.magic(FRAME_MAGIC)?;
    r.version()?;
    let flags_at = r.offset();
    let flags = r.u16("flags")?;
    if flags & !(FLAG_LABELS | FLAG_GT_FLOW) != 0 {
        return Err(Error::format(flags_at, format!("unknown flag bits {flags:#06x}")));
    }
    let count_at = r.offset();
    let count = r.u64("point count")?;
    let mut per_point = 12;
    if flags & FLAG_LABELS != 0 {
        per_point += 5;
    }
    if flags & FLAG_GT_FLOW != 0 {
        per_point += 12;
    }
    r.expect_len(payload_len(count, per_point, FRAME_HEADER, count_at)?)?;
    let n = count as usize;

    let points = (0..n).map(|_| r.vec3("point coordinate")).collect::<Result<Vec<_>>>()?;
    let mut frame = PointCloudFrame::new(points, frame_time)?;
    if flags & FLAG_LABELS != 0 {
        let ids = (0..n).map(|_| r.u32("instance id")).collect::<Result<Vec<_>>>()?;
        let cat_start = r.offset();
        let mut labels = Vec::with_capacity(n);
        for (i, id) in ids.into_iter().enumerate() {
            let at = cat_start + i as u64;
            let code = r.u8("category")?;
            let label = match (id == BACKGROUND_INSTANCE, code) {
                (true, NO_CATEGORY) => None,
                (false, c) => match Category::from_code(c) {
                    Some(category) => Some(PointLabel { instance: id, category }),
                    None => {
                        return Err(Error::format(
                            at,
                            format!("point {i} has instance {id} but category code {c}"),
                        ))
                    }
                },
                (true, c) => return Err(Error::format(at, format!("background point {i} has category code {c}"))),
            };
            labels.push(label);
        }
        frame = frame.with_labels(labels)?;
    }
    if flags & FLAG_GT_FLOW != 0 {
        let flow = (0..n)
            .map(|_| r.vec3("ground-truth flow"))
            .collect::<Result<Vec<_>>>()?;
        frame = frame.with_gt_flow(flow)?;
    }
    Ok(frame)
}

pub fn encode_flow(flow: &FlowField) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(FLOW_HEADER as usize + flow.len() * 12);
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(flow.len() as u64).to_le_bytes());
    for (i, v) in flow.as_slice().iter().enumerate() {
        check_f32_range(v, "flow vector", i)?;
        put_vec3(&mut out, v);
    }
    Ok(out)
}

pub fn decode_flow(buf: &[u8]) -> Result<FlowField> {
    let mut r = Reader::new(buf);
    r.magic(FLOW_MAGIC)?;
    r.version()?;
    let count_at = r.offset();
    let count = r.u64("vector count")?;
    r.expect_len(payload_len(count, 12, FLOW_HEADER, count_at)?)?;
    let v = (0..count as usize)
        .map(|_| r.vec3("flow vector"))
        .collect::<Result<Vec<_>>>()?;
    FlowField::new(v)
}

pub fn encode_tensor(t: &SparseVoxelTensor<f32>) -> Result<Vec<u8>> {
    let spec = t.spec();
    if spec.dims().iter().any(|d| *d > i32::MAX as u32) {
        return Err(Error::invalid("grid dims exceed the i32 coordinate range"));
    }
    let mut out = Vec::with_capacity(TENSOR_HEADER as usize + t.len() * (12 + 4 * t.width()));
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(t.len() as u64).to_le_bytes());
    out.extend_from_slice(&(t.width() as u32).to_le_bytes());
    for d in spec.dims() {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in spec.origin().iter().chain(spec.resolution().iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in t.coords() {
        for axis in c {
            out.extend_from_slice(&(axis as i32).to_le_bytes());
        }
    }
    for v in t.features() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(buf: &[u8]) -> Result<SparseVoxelTensor<f32>> {
    let mut r = Reader::new(buf);
    r.magic(TENSOR_MAGIC)?;
    r.version()?;
    let reserved_at = r.offset();
    if r.u16("reserved")? != 0 {
        return Err(Error::format(reserved_at, "reserved field must be zero"));
    }
    let count_at = r.offset();
    let count = r.u64("row count")?;
    let width_at = r.offset();
    let width = r.u32("feature width")?;
    let dims_at = r.offset();
    let dims = [r.u32("dims")?, r.u32("dims")?, r.u32("dims")?];
    if dims.iter().any(|d| *d > i32::MAX as u32) {
        return Err(Error::format(dims_at, "grid dims exceed the i32 coordinate range"));
    }
    let origin = Vec3::new(r.f64("origin")?, r.f64("origin")?, r.f64("origin")?);
    let res = Vec3::new(r.f64("resolution")?, r.f64("resolution")?, r.f64("resolution")?);
    let spec = VoxelGridSpec::new(origin, res, dims, width as usize)
        .map_err(|e| Error::format(width_at, format!("invalid grid header: {e}")))?;
    let per_row = 12 + 4 * width as u64;
    r.expect_len(payload_len(count, per_row, TENSOR_HEADER, count_at)?)?;

    let n = count as usize;
    let mut keys = Vec::with_capacity(n);
    for i in 0..n {
        let at = r.offset();
        let mut c = [0u32; 3];
        for slot in &mut c {
            let v = r.i32("voxel coordinate")?;
            *slot = u32::try_from(v).map_err(|_| Error::format(at, format!("row {i} has negative coordinate {v}")))?;
        }
        if !spec.contains(c) {
            return Err(Error::format(
                at,
                format!("row {i} coordinate {c:?} lies outside the grid"),
            ));
        }
        let k = spec.key(c);
        if keys.last().is_some_and(|&prev| prev >= k) {
            return Err(Error::format(at, format!("row {i} is not in strictly ascending order")));
        }
        keys.push(k);
    }
    let features = (0..n * width as usize)
        .map(|_| r.f32("feature"))
        .collect::<Result<Vec<_>>>()?;
    SparseVoxelTensor::from_sorted_keys(spec, keys, features)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled_frame() -> PointCloudFrame {
        PointCloudFrame::new(vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-0.5, 0.25, 8.0)], 0.0)
            .unwrap()
            .with_labels(vec![
                None,
                Some(PointLabel {
                    instance: 4,
                    category: Category::Vru,
                }),
            ])
            .unwrap()
            .with_gt_flow(vec![Vec3::zeros(), Vec3::new(0.5, 0.0, -0.25)])
            .unwrap()
    }

    #[test]
    fn frame_layout() {
        let b = encode_frame(&labeled_frame()).unwrap();
        assert_eq!(&b[..4], b"DFPC");
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), 3);
        assert_eq!(b.len(), 16 + 2 * 29);
        assert_eq!(&b[40..44], &u32::MAX.to_le_bytes());
        assert_eq!(b[48], 255);
        assert_eq!(b[49], 3);
        assert_eq!(decode_frame(&b, 0.0).unwrap(), labeled_frame());
    }

    #[test]
    fn truncated_frame_reports_length() {
        let b = encode_frame(&labeled_frame()).unwrap();
        match decode_frame(&b[..b.len() - 1], 0.0) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, b.len() as u64 - 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_category_offset() {
        let mut b = encode_frame(&labeled_frame()).unwrap();
        b[48] = 1;
        match decode_frame(&b, 0.0) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 48),
            other => panic!("{other:?}"),
        }
        b[48] = 255;
        b[49] = 9;
        assert!(matches!(decode_frame(&b, 0.0), Err(Error::Format { offset: 49, .. })));
    }

    #[test]
    fn bad_magic_and_flags() {
        let mut b = encode_frame(&labeled_frame()).unwrap();
        b[6] = 0x80;
        assert!(matches!(decode_frame(&b, 0.0), Err(Error::Format { offset: 6, .. })));
        b[0] = b'X';
        assert!(matches!(decode_frame(&b, 0.0), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn flow_round_trip() {
        let f = FlowField::new(vec![Vec3::new(0.1, -2.0, 3.5); 3]).unwrap();
        let b = encode_flow(&f).unwrap();
        assert_eq!(b.len(), 14 + 36);
        let back = decode_flow(&b).unwrap();
        assert_eq!(encode_flow(&back).unwrap(), b);
        assert!(matches!(decode_flow(&b[..20]), Err(Error::Format { offset: 20, .. })));
    }

    #[test]
    fn tensor_round_trip_and_order() {
        let spec = VoxelGridSpec::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(0.5, 0.5, 0.25), [4, 4, 2], 2).unwrap();
        let t = SparseVoxelTensor::<f32>::from_coords(spec, &[[3, 0, 1], [0, 1, 0]], &[1.0, 2.0, -0.5, 0.0]).unwrap();
        let b = encode_tensor(&t).unwrap();
        assert_eq!(b.len(), 80 + 2 * 20);
        assert_eq!(decode_tensor(&b).unwrap(), t);
        let mut swapped = b.clone();
        let (a, c) = swapped[80..104].split_at_mut(12);
        a.swap_with_slice(c);
        assert!(matches!(decode_tensor(&swapped), Err(Error::Format { offset: 92, .. })));
    }
}
