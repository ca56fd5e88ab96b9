use serde::{Deserialize, Serialize};

use crate::backbone::{FrameFeatureSequence, ForwardOptions, ModelDims, TemporalModel};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::numerics::loss::cross_entropy_mean;
use crate::numerics::{cosine_lr, GradTape, RngState, Sgd};

/// Supervised recipe for the source model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip_dim: usize,
    pub hidden: usize,
    pub subsets: usize,
    /// Fraction of source videos held out for the reported accuracy.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            clip_dim: 64,
            hidden: 64,
            subsets: 3,
            holdout: 0.2,
            seed: 0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("need lr >= 0 and momentum in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config(format!("holdout fraction {} outside [0, 1)", self.holdout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub train_videos: usize,
    pub heldout_videos: usize,
    pub train_accuracy: f64,
    /// `None` when nothing was held out.
    pub heldout_accuracy: Option<f64>,
    pub final_loss: f64,
    pub config: SourceConfig,
}

const INIT_STREAM: u64 = 0x5_0001;
const SPLIT_STREAM: u64 = 0x5_0002;
const ORDER_STREAM: u64 = 0x5_0003;

fn accuracy(model: &TemporalModel<f32>, videos: &[&FrameFeatureSequence], exec: ExecMode) -> Result<f64> {
    let preds = model.predict_videos(videos, false, exec)?;
    let hits = preds.iter().zip(videos).filter(|(p, v)| Some(p.argmax()) == v.label).count();
    Ok(hits as f64 / videos.len().max(1) as f64)
}

/// Trains a relation-network classifier on labeled source videos with
/// batch-mean cross-entropy and unweighted clip aggregation.
pub fn train_source(
    videos: &[FrameFeatureSequence],
    classes: usize,
    cfg: &SourceConfig,
    exec: ExecMode,
) -> Result<(TemporalModel<f32>, SourceReport)> {
    cfg.validate()?;
    let first = videos.first().ok_or_else(|| Error::Data("empty source domain".into()))?;
    for v in videos {
        match v.label {
            None => return Err(Error::Data(format!("source video {} is unlabeled", v.video_id))),
            Some(l) if l >= classes => {
                return Err(Error::Data(format!("source video {} has label {l} >= {classes}", v.video_id)));
            }
            _ => {}
        }
        if v.frames() != first.frames() || v.dim() != first.dim() {
            return Err(Error::Data(format!("source video {} differs in shape", v.video_id)));
        }
    }
    let dims = ModelDims {
        frames: first.frames(),
        dim: first.dim(),
        clip_dim: cfg.clip_dim,
        hidden: cfg.hidden,
        classes,
        subsets: cfg.subsets,
    };
    let root = RngState::new(cfg.seed);
    let mut model = TemporalModel::<f32>::init(dims, &mut root.substream(INIT_STREAM))?;

    let mut idx = root.substream(SPLIT_STREAM).permutation(videos.len());
    let n_hold = ((videos.len() as f64 * cfg.holdout).round() as usize).min(videos.len() - 1);
    let train_idx = idx.split_off(n_hold);
    let hold: Vec<&FrameFeatureSequence> = idx.iter().map(|&i| &videos[i]).collect();
    let train: Vec<&FrameFeatureSequence> = train_idx.iter().map(|&i| &videos[i]).collect();

    let mut opt = Sgd::new(model.params(), cfg.momentum);
    let mut order_rng = root.substream(ORDER_STREAM);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut step = 0;
    let mut last = f64::NAN;
    for _ in 0..cfg.epochs {
        let order = order_rng.permutation(train.len());
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&FrameFeatureSequence> = chunk.iter().map(|&i| train[i]).collect();
            let mut tape = GradTape::new();
            let g = model.forward_batch(&mut tape, &batch, ForwardOptions::default())?;
            let mut onehot = vec![0.0f32; batch.len() * classes];
            for (i, v) in batch.iter().enumerate() {
                onehot[i * classes + v.label.expect("checked")] = 1.0;
            }
            let target = tape.constant(batch.len(), classes, onehot);
            let loss = cross_entropy_mean(&mut tape, target, g.probs)?;
            let value = tape.scalar(loss) as f64;
            if !value.is_finite() {
                return Err(Error::Numerical("source cross-entropy is not finite".into()));
            }
            sum += value;
            let grads = tape.backward(loss, model.params())?;
            opt.step(model.params_mut(), &grads, cosine_lr(cfg.lr, step, total));
            step += 1;
        }
        last = sum / steps_per_epoch.max(1) as f64;
    }
    let report = SourceReport {
        train_videos: train.len(),
        heldout_videos: hold.len(),
        train_accuracy: accuracy(&model, &train, exec)?,
        heldout_accuracy: if hold.is_empty() { None } else { Some(accuracy(&model, &hold, exec)?) },
        final_loss: last,
        config: cfg.clone(),
    };
    Ok((model, report))
}
