use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::backbone::FrameFeatureSequence;
use crate::binio::AccessLog;
use crate::error::{Error, Result};
use crate::numerics::ProbVector;
use crate::oracle::{BlackBox, OutputMode, PredictionDump, RemoteTeacher};

/// Where black-box predictions come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TeacherSource {
    Dump(PathBuf),
    /// Base URL of a running prediction service.
    Endpoint(String),
}

/// Teacher predictions for every video, keyed by id, plus the class count.
///
/// Dumps hold whatever mode they were written in; asking for hard outputs
/// from a soft dump takes the argmax locally.
pub fn fetch_teacher(
    source: &TeacherSource,
    videos: &[FrameFeatureSequence],
    mode: OutputMode,
    log: Option<&AccessLog>,
) -> Result<(usize, BTreeMap<String, ProbVector>)> {
    match source {
        TeacherSource::Dump(path) => {
            let dump = PredictionDump::load(path, log)?;
            let mut map = dump.to_map()?;
            if mode == OutputMode::Hard {
                map.values_mut().for_each(|p| *p = p.to_hard());
            }
            Ok((dump.classes, map))
        }
        TeacherSource::Endpoint(url) => {
            let remote = RemoteTeacher::new(url.clone(), log.cloned());
            let meta = remote.meta()?;
            if let Some(v) = videos.iter().find(|v| v.frames() != meta.frames || v.dim() != meta.dim) {
                return Err(Error::Data(format!(
                    "video {} has shape ({}, {}), the service expects ({}, {})",
                    v.video_id,
                    v.frames(),
                    v.dim(),
                    meta.frames,
                    meta.dim
                )));
            }
            let refs: Vec<&FrameFeatureSequence> = videos.iter().collect();
            let preds = remote.predict(&refs, mode)?;
            let map = videos.iter().map(|v| v.video_id.clone()).zip(preds).collect();
            Ok((meta.classes, map))
        }
    }
}
