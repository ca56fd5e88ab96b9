use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{FrameFeatureSequence, TargetModel};
use crate::binio::AccessLog;
use crate::data::{load_manifest, LabelPolicy};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::numerics::ProbVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub videos: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the evaluated set.
    pub per_class: Vec<Option<f64>>,
}

/// Top-1 accuracy of `preds` against `labels`.
pub fn score(preds: &[ProbVector], labels: &[usize], classes: usize) -> Result<EvalReport> {
    if preds.len() != labels.len() {
        return Err(Error::Data(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let mut hits = vec![0usize; classes];
    let mut seen = vec![0usize; classes];
    for (p, &l) in preds.iter().zip(labels) {
        if l >= classes {
            return Err(Error::Data(format!("label {l} outside [0, {classes})")));
        }
        seen[l] += 1;
        if p.argmax() == l {
            hits[l] += 1;
        }
    }
    Ok(EvalReport {
        videos: labels.len(),
        accuracy: hits.iter().sum::<usize>() as f64 / labels.len() as f64,
        per_class: hits
            .iter()
            .zip(&seen)
            .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
            .collect(),
    })
}

/// Evaluation-mode accuracy on labeled videos.
pub fn evaluate(model: &TargetModel, videos: &[FrameFeatureSequence], weighted: bool, exec: ExecMode) -> Result<EvalReport> {
    let labels = videos
        .iter()
        .map(|v| v.label.ok_or_else(|| Error::Data(format!("video {} is unlabeled", v.video_id))))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&FrameFeatureSequence> = videos.iter().collect();
    let preds = model.predict_videos(&refs, weighted, exec)?;
    score(&preds, &labels, model.dims().classes)
}

pub fn evaluate_manifest(
    model: &TargetModel,
    manifest: &Path,
    weighted: bool,
    exec: ExecMode,
    log: Option<&AccessLog>,
) -> Result<EvalReport> {
    let m = load_manifest(manifest, LabelPolicy::Required, Some(model.dims().classes), log)?;
    evaluate(model, &m.load_videos(log, exec)?, weighted, exec)
}
