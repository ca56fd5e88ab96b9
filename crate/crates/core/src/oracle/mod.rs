//! The black-box source predictor: supervised source training, and the two
//! interchangeable ways of querying it (a local HTTP service and an offline
//! prediction dump). Adaptation code only ever sees [`BlackBox`] outputs.

mod dump;
mod service;
mod train;

use serde::{Deserialize, Serialize};

use crate::backbone::{FrameFeatureSequence, TemporalModel};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::numerics::ProbVector;

pub use dump::{dump_predictions, PredictionDump};
pub use service::{RemoteTeacher, Service, MAX_BATCH};
pub use train::{train_source, SourceConfig, SourceReport};

/// Soft probabilities or argmax one-hots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    #[default]
    Soft,
    Hard,
}

impl std::str::FromStr for OutputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(Self::Soft),
            "hard" => Ok(Self::Hard),
            other => Err(Error::Config(format!("unknown output mode `{other}` (soft | hard)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub classes: usize,
    pub frames: usize,
    pub dim: usize,
}

/// Query-only access to a trained classifier.
pub trait BlackBox {
    fn meta(&self) -> Result<ModelMeta>;
    fn predict(&self, videos: &[&FrameFeatureSequence], mode: OutputMode) -> Result<Vec<ProbVector>>;
}

/// In-process predictor wrapping a source model; the service and the dump
/// writer both answer through it.
#[derive(Clone, Debug)]
pub struct LocalOracle {
    model: TemporalModel<f32>,
    exec: ExecMode,
}

impl LocalOracle {
    pub fn new(model: TemporalModel<f32>, exec: ExecMode) -> Self {
        Self { model, exec }
    }

    fn check(&self, v: &FrameFeatureSequence) -> Result<()> {
        let m = self.model.dims();
        if v.frames() != m.frames || v.dim() != m.dim {
            return Err(Error::Protocol(format!(
                "sequence {} has shape ({}, {}), expected (k, D) = ({}, {})",
                v.video_id,
                v.frames(),
                v.dim(),
                m.frames,
                m.dim
            )));
        }
        Ok(())
    }
}

/// Probabilities are produced in single precision; both interfaces carry
/// exactly these values.
pub(crate) fn quantize(p: &ProbVector) -> Result<ProbVector> {
    ProbVector::new(p.as_slice().iter().map(|&x| x as f32 as f64).collect())
}

impl BlackBox for LocalOracle {
    fn meta(&self) -> Result<ModelMeta> {
        let d = self.model.dims();
        Ok(ModelMeta {
            classes: d.classes,
            frames: d.frames,
            dim: d.dim,
        })
    }

    fn predict(&self, videos: &[&FrameFeatureSequence], mode: OutputMode) -> Result<Vec<ProbVector>> {
        for v in videos {
            self.check(v)?;
        }
        // Source models aggregate clips without weights.
        let soft = self.model.predict_videos(videos, false, self.exec)?;
        soft.iter()
            .map(|p| match mode {
                OutputMode::Soft => quantize(p),
                OutputMode::Hard => Ok(p.to_hard()),
            })
            .collect()
    }
}
