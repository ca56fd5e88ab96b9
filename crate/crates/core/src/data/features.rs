//! `BVFF` frame-feature files.
//!
//! ```text
//! "BVFF" | u32 version=1 | u32 k | u32 D | k * D f32 (row = frame)
//! ```

use std::path::Path;

use crate::backbone::FrameFeatureSequence;
use crate::binio::{self, AccessLog, Reader, Writer};
use crate::error::Result;

const MAGIC: &[u8; 4] = b"BVFF";
const VERSION: u32 = 1;

pub fn encode_features(seq: &FrameFeatureSequence) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(MAGIC).u32(VERSION).usize(seq.frames()).usize(seq.dim()).f32s(seq.data());
    w.finish()
}

pub fn decode_features(bytes: &[u8], path: &Path, video_id: &str, label: Option<usize>) -> Result<FrameFeatureSequence> {
    let mut r = Reader::new(bytes, path);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let k = r.usize("frame count")?;
    let d = r.usize("feature width")?;
    if k < 3 || d == 0 {
        return Err(r.fail(format!("bad shape k = {k}, D = {d}")));
    }
    let n = k.checked_mul(d).ok_or_else(|| r.fail("shape overflow"))?;
    let data = r.f32s(n, "frame features")?;
    if !r.at_end() {
        return Err(r.fail("trailing bytes"));
    }
    FrameFeatureSequence::new(video_id, k, d, data, label).map_err(|e| r.fail(e.to_string()))
}

pub fn write_features(path: &Path, seq: &FrameFeatureSequence) -> Result<()> {
    binio::write_file(path, &encode_features(seq))
}

pub fn read_features(path: &Path, video_id: &str, label: Option<usize>, log: Option<&AccessLog>) -> Result<FrameFeatureSequence> {
    decode_features(&binio::read_file(path, log)?, path, video_id, label)
}
