use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backbone::FrameFeatureSequence;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::numerics::ProbVector;
use crate::trainer::{adapt_videos, evaluate, score, AdaptConfig, EvalReport, RunReport};

/// A target domain with its teacher predictions, held in memory so that
/// many runs can share it. Labels are kept apart from the videos and only
/// used to score finished runs.
#[derive(Clone, Debug)]
pub struct Benchmark {
    videos: Vec<FrameFeatureSequence>,
    labeled: Vec<FrameFeatureSequence>,
    labels: Vec<usize>,
    classes: usize,
    teacher: BTreeMap<String, ProbVector>,
    exec: ExecMode,
}

impl Benchmark {
    pub fn new(
        labeled: Vec<FrameFeatureSequence>,
        classes: usize,
        teacher: BTreeMap<String, ProbVector>,
        exec: ExecMode,
    ) -> Result<Self> {
        let labels = labeled
            .iter()
            .map(|v| v.label.ok_or_else(|| Error::Data(format!("video {} is unlabeled", v.video_id))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            videos: labeled.iter().map(FrameFeatureSequence::without_label).collect(),
            labeled,
            labels,
            classes,
            teacher,
            exec,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Accuracy of the black-box predictions themselves.
    pub fn zero_shot(&self) -> Result<EvalReport> {
        let preds = self
            .videos
            .iter()
            .map(|v| {
                self.teacher
                    .get(&v.video_id)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("no teacher prediction for {}", v.video_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        score(&preds, &self.labels, self.classes)
    }

    /// Adapts once and scores the result.
    pub fn run(&self, cfg: &AdaptConfig) -> Result<RunReport> {
        let out = adapt_videos(&self.videos, self.classes, &self.teacher, cfg, ExecMode::Sequential, None)?;
        let eval = evaluate(&out.model, &self.labeled, cfg.clip_weights, ExecMode::Sequential)?;
        let mut report = out.report;
        report.accuracy = Some(eval.accuracy);
        report.per_class = Some(eval.per_class);
        Ok(report)
    }

    /// Independent runs, spread over threads in parallel mode.
    pub fn run_many(&self, cfgs: &[AdaptConfig]) -> Result<Vec<RunReport>> {
        exec::map(self.exec, cfgs, |c| self.run(c)).into_iter().collect()
    }

    pub fn run_seeds(&self, cfg: &AdaptConfig, seeds: &[u64]) -> Result<Vec<RunReport>> {
        self.run_many(&with_seeds(cfg, seeds))
    }
}

fn with_seeds(cfg: &AdaptConfig, seeds: &[u64]) -> Vec<AdaptConfig> {
    seeds.iter().map(|&seed| AdaptConfig { seed, ..cfg.clone() }).collect()
}

/// Mean final accuracy of finished runs.
pub fn mean_accuracy(reports: &[RunReport]) -> f64 {
    let n = reports.len().max(1) as f64;
    reports.iter().filter_map(|r| r.accuracy).sum::<f64>() / n
}

fn std_accuracy(reports: &[RunReport]) -> f64 {
    let m = mean_accuracy(reports);
    let n = reports.len().max(1) as f64;
    (reports.iter().filter_map(|r| r.accuracy).map(|a| (a - m) * (a - m)).sum::<f64>() / n).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoEndo,
    NoExo,
    NoVir,
    NoPre,
    NoMi,
    /// Distillation plus information maximisation, no regularizers.
    KdOnly,
}

impl Variant {
    /// The rows of the ablation table, in order.
    pub const ABLATIONS: [Variant; 6] = [
        Variant::Full,
        Variant::NoEndo,
        Variant::NoExo,
        Variant::NoVir,
        Variant::NoPre,
        Variant::NoMi,
    ];

    pub fn apply(self, base: &AdaptConfig) -> AdaptConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoEndo => c.endo = false,
            Variant::NoExo => c.exo = false,
            Variant::NoVir => c.vir = false,
            Variant::NoPre => c.pre = false,
            Variant::NoMi => c.mi = false,
            Variant::KdOnly => {
                c.endo = false;
                c.exo = false;
            }
        }
        c
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoEndo => "w/o L_endo",
            Variant::NoExo => "w/o L_exo",
            Variant::NoVir => "w/o L_vir",
            Variant::NoPre => "w/o L_pre",
            Variant::NoMi => "w/o L_mi",
            Variant::KdOnly => "kd + mi only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub clip_weights: bool,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub reports: Vec<RunReport>,
}

/// Every ablation variant with clip weights on and off, once per seed.
pub fn run_ablation_suite(bench: &Benchmark, base: &AdaptConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let mut keys = Vec::new();
    let mut cfgs = Vec::new();
    for clip_weights in [true, false] {
        for v in Variant::ABLATIONS {
            keys.push((v, clip_weights));
            let cfg = AdaptConfig {
                clip_weights,
                ..v.apply(base)
            };
            cfgs.extend(with_seeds(&cfg, seeds));
        }
    }
    let mut reports = bench.run_many(&cfgs)?.into_iter();
    Ok(keys
        .into_iter()
        .map(|(variant, clip_weights)| {
            let reports: Vec<RunReport> = reports.by_ref().take(seeds.len()).collect();
            AblationRow {
                variant,
                clip_weights,
                mean_accuracy: mean_accuracy(&reports),
                std_accuracy: std_accuracy(&reports),
                reports,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta_reg: f64,
    pub alpha_v: f64,
    pub mean_accuracy: f64,
    pub reports: Vec<RunReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Largest minus smallest mean accuracy over the grid.
    pub band: f64,
}

/// Grid over `beta_reg` x `alpha_v`, row-major in `betas`.
pub fn sweep(bench: &Benchmark, base: &AdaptConfig, betas: &[f64], alphas: &[f64], seeds: &[u64]) -> Result<SweepResult> {
    if betas.is_empty() || alphas.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep grids and seed list must be non-empty".into()));
    }
    let mut cfgs = Vec::new();
    for &beta_reg in betas {
        for &alpha_v in alphas {
            let cfg = AdaptConfig {
                beta_reg,
                alpha_v,
                ..base.clone()
            };
            cfg.validate()?;
            cfgs.extend(with_seeds(&cfg, seeds));
        }
    }
    let mut reports = bench.run_many(&cfgs)?.into_iter();
    let mut points = Vec::new();
    for &beta_reg in betas {
        for &alpha_v in alphas {
            let reports: Vec<RunReport> = reports.by_ref().take(seeds.len()).collect();
            points.push(SweepPoint {
                beta_reg,
                alpha_v,
                mean_accuracy: mean_accuracy(&reports),
                reports,
            });
        }
    }
    let max = points.iter().map(|p| p.mean_accuracy).fold(f64::MIN, f64::max);
    let min = points.iter().map(|p| p.mean_accuracy).fold(f64::MAX, f64::min);
    Ok(SweepResult { points, band: max - min })
}
