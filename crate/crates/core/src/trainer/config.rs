use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::OutputMode;
use crate::regularizers::RegConfig;

/// Hyper-parameters and ablation switches of one adaptation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub alpha_v: f64,
    pub alpha_t: f64,
    pub beta_reg: f64,
    /// Top classes kept by label smoothing; capped at `C - 1`.
    pub c: usize,
    pub gamma_ema: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub endo: bool,
    pub exo: bool,
    pub vir: bool,
    pub pre: bool,
    pub mi: bool,
    pub clip_weights: bool,
    /// Opening epochs that train against the initial teacher bank with
    /// unweighted aggregation; the bank refresh and clip weights start after.
    pub warmup_epochs: usize,
    /// Let gradients flow into the consistency targets as well.
    pub symmetric: bool,
    pub teacher_mode: OutputMode,
    pub clip_dim: usize,
    pub hidden: usize,
    pub subsets: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            alpha_v: 0.3,
            alpha_t: 0.3,
            beta_reg: 1.0,
            c: 3,
            gamma_ema: 0.6,
            epochs: 30,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            endo: true,
            exo: true,
            vir: true,
            pre: true,
            mi: true,
            clip_weights: true,
            warmup_epochs: 8,
            symmetric: false,
            teacher_mode: OutputMode::Soft,
            clip_dim: 64,
            hidden: 64,
            subsets: 3,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        self.reg().validate()?;
        if !(self.beta_reg >= 0.0 && self.beta_reg.is_finite()) {
            return Err(Error::Config(format!("beta_reg must be non-negative, got {}", self.beta_reg)));
        }
        if self.c == 0 {
            return Err(Error::Config("c must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma_ema) {
            return Err(Error::Config(format!("gamma_ema {} outside [0, 1]", self.gamma_ema)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("need lr >= 0 and momentum in [0, 1)".into()));
        }
        if self.clip_dim == 0 || self.hidden == 0 || self.subsets == 0 {
            return Err(Error::Config("clip_dim, hidden and subsets must be positive".into()));
        }
        Ok(())
    }

    pub fn reg(&self) -> RegConfig {
        RegConfig {
            alpha_v: self.alpha_v,
            alpha_t: self.alpha_t,
        }
    }

    pub(crate) fn use_pre(&self) -> bool {
        self.endo && self.pre
    }

    pub(crate) fn use_vir(&self) -> bool {
        self.endo && self.vir
    }

    pub(crate) fn uses_masks(&self) -> bool {
        self.use_pre() || self.use_vir()
    }
}
