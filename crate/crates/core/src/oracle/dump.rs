//! `BVPD` prediction dumps.
//!
//! ```text
//! "BVPD" | u32 version=1 | u32 C | records until end of file:
//!     u32 id length | id bytes (UTF-8) | C f32
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{BlackBox, OutputMode, MAX_BATCH};
use crate::backbone::FrameFeatureSequence;
use crate::binio::{self, AccessLog, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::ProbVector;

const MAGIC: &[u8; 4] = b"BVPD";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionDump {
    pub classes: usize,
    pub records: Vec<(String, ProbVector)>,
}

impl PredictionDump {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(MAGIC).u32(VERSION).usize(self.classes);
        for (id, p) in &self.records {
            let row: Vec<f32> = p.as_slice().iter().map(|&x| x as f32).collect();
            w.string(id).f32s(&row);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let classes = r.usize("class count")?;
        if classes < 2 {
            return Err(r.fail(format!("class count {classes} < 2")));
        }
        let mut records = Vec::new();
        while !r.at_end() {
            let id = r.string("video id")?;
            let row = r.f32s(classes, "probabilities")?;
            let p = ProbVector::new(row.into_iter().map(f64::from).collect()).map_err(|e| r.fail(e.to_string()))?;
            records.push((id, p));
        }
        Ok(Self { classes, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.encode())
    }

    pub fn load(path: &Path, log: Option<&AccessLog>) -> Result<Self> {
        Self::decode(&binio::read_file(path, log)?, path)
    }

    /// Id-keyed view; duplicate ids are a data error.
    pub fn to_map(&self) -> Result<BTreeMap<String, ProbVector>> {
        let mut m = BTreeMap::new();
        for (id, p) in &self.records {
            if m.insert(id.clone(), p.clone()).is_some() {
                return Err(Error::Data(format!("prediction dump lists {id} twice")));
            }
        }
        Ok(m)
    }
}

/// Queries `oracle` for every video (in batches of [`MAX_BATCH`]) and
/// writes the dump to `path`.
pub fn dump_predictions(
    oracle: &dyn BlackBox,
    videos: &[FrameFeatureSequence],
    mode: OutputMode,
    path: &Path,
) -> Result<PredictionDump> {
    let classes = oracle.meta()?.classes;
    let refs: Vec<&FrameFeatureSequence> = videos.iter().collect();
    let mut records = Vec::with_capacity(videos.len());
    for chunk in refs.chunks(MAX_BATCH) {
        let preds = oracle.predict(chunk, mode)?;
        records.extend(chunk.iter().map(|v| v.video_id.clone()).zip(preds));
    }
    let dump = PredictionDump { classes, records };
    dump.save(path)?;
    Ok(dump)
}
