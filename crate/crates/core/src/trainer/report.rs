use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::trainer::AdaptConfig;

/// Per-epoch means of the loss components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub kd: f64,
    pub endo: f64,
    pub exo: f64,
    pub mi: f64,
    pub total: f64,
    /// Mean KL from the teacher bank to the student, before the refresh.
    pub bank_kl: f64,
    /// Mean clip weight over the epoch; zero while aggregation is unweighted.
    pub clip_weight: f64,
    pub lr: f64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: AdaptConfig,
    pub classes: usize,
    pub videos: usize,
    pub epochs: Vec<EpochRecord>,
    pub mask_draws: u64,
    pub accuracy: Option<f64>,
    pub per_class: Option<Vec<Option<f64>>>,
    /// Kept out of the metrics file so that it stays reproducible.
    #[serde(skip)]
    pub wall_clock: Duration,
}

/// Equality ignores the wall-clock time.
impl PartialEq for RunReport {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = (self, other);
        (a.seed, &a.config, a.classes, a.videos, &a.epochs, a.mask_draws, a.accuracy, &a.per_class)
            == (b.seed, &b.config, b.classes, b.videos, &b.epochs, b.mask_draws, b.accuracy, &b.per_class)
    }
}

impl RunReport {
    /// One JSON object per epoch followed by a summary object.
    pub fn metrics_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            let mut v = serde_json::to_value(e).expect("plain struct");
            v["record"] = "epoch".into();
            out.push_str(&v.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "record": "summary",
            "seed": self.seed,
            "classes": self.classes,
            "videos": self.videos,
            "epochs": self.epochs.len(),
            "mask_draws": self.mask_draws,
            "final_total": self.epochs.last().map(|e| e.total),
            "accuracy": self.accuracy,
            "per_class": self.per_class,
            "config": self.config,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        Ok(out)
    }
}
