use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use crate::backbone::{FrameFeatureSequence, ModelDims, TargetModel, TemporalModel};
use crate::binio::AccessLog;
use crate::data::{load_manifest, LabelPolicy};
use crate::distillation::{init_teacher_bank, AdaLSConfig, TeacherBank};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::numerics::{cosine_lr, kl_div, GradTape, ProbVector, RngState, Sgd};
use crate::regularizers::{draw_exo, draw_mask};
use crate::trainer::{fetch_teacher, objective_nodes, AdaptConfig, EpochRecord, RunReport, StepDraws, TeacherSource};

/// Called after every epoch with the current model; the returned accuracy
/// goes into that epoch's record.
pub type EpochHook<'a> = dyn Fn(&TargetModel) -> Result<f64> + Sync + 'a;

#[derive(Clone, Debug)]
pub struct Adapted {
    pub model: TargetModel,
    pub bank: TeacherBank,
    pub report: RunReport,
}

const INIT_STREAM: u64 = 0xA_0001;
const ORDER_STREAM: u64 = 0xA_0002;
const MASK_STREAM: u64 = 0xA_0003;
const EXO_STREAM: u64 = 0xA_0004;

/// Loads the target manifest without labels, obtains teacher predictions,
/// and runs [`adapt_videos`].
pub fn adapt(
    target_manifest: &Path,
    teacher: &TeacherSource,
    cfg: &AdaptConfig,
    exec: ExecMode,
    log: Option<&AccessLog>,
    hook: Option<&EpochHook<'_>>,
) -> Result<Adapted> {
    cfg.validate()?;
    let manifest = load_manifest(target_manifest, LabelPolicy::Ignore, None, log)?;
    let videos = manifest.load_videos(log, exec)?;
    let (classes, preds) = fetch_teacher(teacher, &videos, cfg.teacher_mode, log)?;
    adapt_videos(&videos, classes, &preds, cfg, exec, hook)
}

#[derive(Default)]
struct Sums {
    kd: f64,
    endo: f64,
    exo: f64,
    mi: f64,
    total: f64,
    clip_weight: f64,
}

/// Trains a fresh target model on unlabeled videos against the black-box
/// predictions in `teacher`. Labels on `videos` are never read.
pub fn adapt_videos(
    videos: &[FrameFeatureSequence],
    classes: usize,
    teacher: &BTreeMap<String, ProbVector>,
    cfg: &AdaptConfig,
    exec: ExecMode,
    hook: Option<&EpochHook<'_>>,
) -> Result<Adapted> {
    let started = Instant::now();
    cfg.validate()?;
    let first = videos.first().ok_or_else(|| Error::Data("empty target domain".into()))?;
    if let Some(v) = videos.iter().find(|v| v.frames() != first.frames() || v.dim() != first.dim()) {
        return Err(Error::Data(format!("target video {} differs in shape", v.video_id)));
    }
    if let Some((id, p)) = teacher.iter().find(|(_, p)| p.classes() != classes) {
        return Err(Error::Data(format!("teacher prediction for {id} has {} classes, expected {classes}", p.classes())));
    }
    let ids: Vec<String> = videos.iter().map(|v| v.video_id.clone()).collect();
    let mut bank = init_teacher_bank(&ids, teacher, &AdaLSConfig::clamped(cfg.c, classes)?, cfg.gamma_ema)?;

    let dims = ModelDims {
        frames: first.frames(),
        dim: first.dim(),
        clip_dim: cfg.clip_dim,
        hidden: cfg.hidden,
        classes,
        subsets: cfg.subsets,
    };
    let root = RngState::new(cfg.seed);
    let frames = dims.frames;
    let mut model = TemporalModel::<f32>::init(dims, &mut root.substream(INIT_STREAM))?;
    let mut order_rng = root.substream(ORDER_STREAM);
    let mut mask_rng = root.substream(MASK_STREAM);
    let mut exo_rng = root.substream(EXO_STREAM);
    let reg = cfg.reg();
    let refs: Vec<&FrameFeatureSequence> = videos.iter().collect();

    let mut opt = Sgd::new(model.params(), cfg.momentum);
    let steps_per_epoch = videos.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut step = 0;
    let mut mask_draws = 0u64;
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let warm = epoch > cfg.warmup_epochs;
        let weighted = cfg.clip_weights && warm;
        let order = order_rng.permutation(videos.len());
        let mut sums = Sums::default();
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&FrameFeatureSequence> = chunk.iter().map(|&i| refs[i]).collect();
            let batch_ids: Vec<&str> = batch.iter().map(|v| v.video_id.as_str()).collect();
            let mut tape = GradTape::<f32>::new();
            let mut draws = StepDraws::default();
            if cfg.uses_masks() {
                let masks = (0..batch.len())
                    .map(|_| draw_mask(frames, &mut mask_rng, &reg))
                    .collect::<Result<Vec<_>>>()?;
                mask_draws += masks.len() as u64;
                draws.masks = Some(masks);
            }
            if cfg.exo {
                draws.exo = Some(draw_exo(batch.len(), &mut exo_rng, &reg)?);
            }
            let obj = objective_nodes(&mut tape, &model, &batch, &bank.targets(&batch_ids)?, &draws, cfg, weighted)?;
            obj.check_finite(&tape)
                .map_err(|e| Error::Numerical(format!("{e} at epoch {epoch}, step {step}")))?;
            let [(_, kd), (_, pre), (_, vir), (_, exo), (_, mi), (_, total)] = obj.values(&tape);
            sums.kd += kd;
            sums.endo += pre + vir;
            sums.exo += exo;
            sums.mi += mi;
            sums.total += total;
            if let Some(w) = &obj.graph.weights {
                let n = (w.len() * obj.graph.batch) as f64;
                sums.clip_weight += w.iter().flatten().map(|&x| x as f64).sum::<f64>() / n;
            }

            let grads = tape.backward(obj.total, model.params())?;
            lr = cosine_lr(cfg.lr, step, total_steps);
            opt.step(model.params_mut(), &grads, lr);
            if !model.params().all_finite() {
                return Err(Error::Numerical(format!("parameters diverged at epoch {epoch}, step {step}")));
            }
            step += 1;
        }

        let student = model.predict_videos(&refs, weighted, exec)?;
        let mut bank_kl = 0.0;
        let mut by_id = BTreeMap::new();
        for (id, y) in ids.iter().zip(student) {
            bank_kl += kl_div(bank.get(id).expect("bank covers every video"), &y)?;
            by_id.insert(id.clone(), y);
        }
        if warm {
            bank.ema_update(&by_id)?;
        }

        let n = steps_per_epoch as f64;
        records.push(EpochRecord {
            epoch,
            kd: sums.kd / n,
            endo: sums.endo / n,
            exo: sums.exo / n,
            mi: sums.mi / n,
            total: sums.total / n,
            bank_kl: bank_kl / videos.len() as f64,
            clip_weight: sums.clip_weight / n,
            lr,
            accuracy: hook.map(|h| h(&model)).transpose()?,
        });
    }

    let report = RunReport {
        seed: cfg.seed,
        config: cfg.clone(),
        classes,
        videos: videos.len(),
        epochs: records,
        mask_draws,
        accuracy: None,
        per_class: None,
        wall_clock: started.elapsed(),
    };
    Ok(Adapted { model, bank, report })
}
