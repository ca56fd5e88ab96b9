//! Mask-to-mix virtual temporal features and the endo- and exo-temporal
//! interpolation-consistency losses.
//!
//! Value-level functions work on single videos in double precision and serve
//! as reference implementations. The `*_nodes` builders record the same
//! quantities for a whole batch on a [`GradTape`].

use serde::{Deserialize, Serialize};

use crate::backbone::{BatchGraph, ClipFeatureSet, TemporalFeature, TemporalModel};
use crate::error::{Error, Result};
use crate::numerics::loss::{cross_entropy_mean, kl_mean, mix_rows};
use crate::numerics::{
    beta_sample, cross_entropy_soft, kl_div, mix_probs, mix_weights, GradTape, NodeId, ProbVector, RngState, Scalar,
};

/// Beta parameters of the two mixing coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub alpha_v: f64,
    pub alpha_t: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            alpha_v: 0.3,
            alpha_t: 0.3,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha_v", self.alpha_v), ("alpha_t", self.alpha_t)] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {a}")));
            }
        }
        Ok(())
    }
}

/// The two clip orders that survive masking and their mixing weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskDraw {
    pub r1: usize,
    pub r2: usize,
    pub lambda_v: f64,
}

impl MaskDraw {
    pub fn new(r1: usize, r2: usize, lambda_v: f64, frames: usize) -> Result<Self> {
        let ok = |r: usize| (2..=frames).contains(&r);
        if r1 == r2 || !ok(r1) || !ok(r2) {
            return Err(Error::Usage(format!("invalid clip pair ({r1}, {r2}) for {frames} frames")));
        }
        if !(0.0..=1.0).contains(&lambda_v) {
            return Err(Error::Parameter(format!("lambda_v {lambda_v} outside [0, 1]")));
        }
        Ok(Self { r1, r2, lambda_v })
    }

    /// `(r2, r1, 1 - lambda_v)`: describes the same virtual feature.
    pub fn swapped(&self) -> Self {
        Self {
            r1: self.r2,
            r2: self.r1,
            lambda_v: 1.0 - self.lambda_v,
        }
    }

    /// Orders in `2..=frames` excluded by this draw.
    pub fn masked(&self, frames: usize) -> Vec<usize> {
        (2..=frames).filter(|&r| r != self.r1 && r != self.r2).collect()
    }

    /// Unordered pair, smaller order first.
    pub fn pair(&self) -> (usize, usize) {
        (self.r1.min(self.r2), self.r1.max(self.r2))
    }
}

/// Keeps two of the `k - 1` clips uniformly at random and draws
/// `lambda_v ~ Beta(alpha_v, alpha_v)`.
pub fn draw_mask(frames: usize, rng: &mut RngState, cfg: &RegConfig) -> Result<MaskDraw> {
    if frames < 3 {
        return Err(Error::Config(format!(
            "mask-to-mix undefined below two clips (k = {frames})"
        )));
    }
    let clips = frames - 1;
    let a = rng.below(clips);
    let mut b = rng.below(clips - 1);
    if b >= a {
        b += 1;
    }
    let lambda_v = beta_sample(cfg.alpha_v, rng)?;
    Ok(MaskDraw {
        r1: a + 2,
        r2: b + 2,
        lambda_v,
    })
}

/// Virtual temporal feature with the draw that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualTemporalFeature<T> {
    pub feature: Vec<T>,
    pub draw: MaskDraw,
}

fn clip<T>(clips: &ClipFeatureSet<T>, r: usize) -> Result<&[T]> {
    r.checked_sub(2)
        .and_then(|i| clips.clips.get(i))
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Usage(format!("clip order {r} not present ({} clips)", clips.clips.len())))
}

pub fn virtual_temporal<T: Scalar>(clips: &ClipFeatureSet<T>, draw: &MaskDraw) -> Result<VirtualTemporalFeature<T>> {
    let a = clip(clips, draw.r1)?;
    let b = clip(clips, draw.r2)?;
    if a.len() != b.len() {
        return Err(Error::dim("clip feature", &[a.len()], &[b.len()]));
    }
    let (wa, wb) = mix_weights(T::lit(draw.lambda_v));
    Ok(VirtualTemporalFeature {
        feature: a.iter().zip(b).map(|(&x, &y)| wa * x + wb * y).collect(),
        draw: *draw,
    })
}

/// `D_KL(y_virtual || y)`.
pub fn loss_pre(virtual_pred: &ProbVector, pred: &ProbVector) -> Result<f64> {
    kl_div(virtual_pred, pred)
}

/// `lambda_v * H_T(cl^(r1)) + (1 - lambda_v) * H_T(cl^(r2))`.
pub fn mixed_clip_prediction<T: Scalar>(
    clips: &ClipFeatureSet<T>,
    model: &TemporalModel<T>,
    draw: &MaskDraw,
) -> Result<ProbVector> {
    let a = model.predict(clip(clips, draw.r1)?)?;
    let b = model.predict(clip(clips, draw.r2)?)?;
    mix_probs(&a, &b, draw.lambda_v)
}

/// Cross-entropy of the virtual prediction against the mixed clip predictions.
pub fn loss_vir(virtual_pred: &ProbVector, mixed: &ProbVector) -> Result<f64> {
    cross_entropy_soft(mixed, virtual_pred)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EndoTerm {
    pub vir: f64,
    pub pre: f64,
}

/// Batch mean of `vir + pre`.
pub fn loss_endo(terms: &[EndoTerm]) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::Usage("endo-temporal loss of an empty batch".into()));
    }
    Ok(terms.iter().map(|t| t.vir + t.pre).sum::<f64>() / terms.len() as f64)
}

/// Both endo terms for one video.
pub fn endo_term<T: Scalar>(model: &TemporalModel<T>, clips: &ClipFeatureSet<T>, draw: &MaskDraw) -> Result<EndoTerm> {
    let t = crate::backbone::temporal_feature(clips, clips.weights.is_some())?;
    let y = model.predict(&t.0)?;
    let v = virtual_temporal(clips, draw)?;
    let y_virtual = model.predict(&v.feature)?;
    let mixed = mixed_clip_prediction(clips, model, draw)?;
    Ok(EndoTerm {
        vir: loss_vir(&y_virtual, &mixed)?,
        pre: loss_pre(&y_virtual, &y)?,
    })
}

/// Exo-temporal loss for one pair at a fixed `lambda_t`.
pub fn loss_exo_at<T: Scalar>(
    model: &TemporalModel<T>,
    t_i: &TemporalFeature<T>,
    t_j: &TemporalFeature<T>,
    lambda_t: f64,
) -> Result<f64> {
    if t_i.0.len() != t_j.0.len() {
        return Err(Error::dim("temporal feature", &[t_i.0.len()], &[t_j.0.len()]));
    }
    let y_i = model.predict(&t_i.0)?;
    let y_j = model.predict(&t_j.0)?;
    let target = mix_probs(&y_i, &y_j, lambda_t)?;
    let (wa, wb) = mix_weights(T::lit(lambda_t));
    let mixed: Vec<T> = t_i.0.iter().zip(&t_j.0).map(|(&x, &y)| wa * x + wb * y).collect();
    cross_entropy_soft(&target, &model.predict(&mixed)?)
}

/// Exo-temporal loss for one pair with `lambda_t ~ Beta(alpha_t, alpha_t)`.
pub fn loss_exo<T: Scalar>(
    model: &TemporalModel<T>,
    t_i: &TemporalFeature<T>,
    t_j: &TemporalFeature<T>,
    rng: &mut RngState,
    cfg: &RegConfig,
) -> Result<f64> {
    let lambda_t = beta_sample(cfg.alpha_t, rng)?;
    loss_exo_at(model, t_i, t_j, lambda_t)
}

/// Partner index and mixing weight for every batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct ExoDraw {
    pub partner: Vec<usize>,
    pub lambda_t: Vec<f64>,
}

/// Pairs element `i` with `perm[i]` of a fresh permutation.
pub fn draw_exo(batch: usize, rng: &mut RngState, cfg: &RegConfig) -> Result<ExoDraw> {
    if batch == 0 {
        return Err(Error::Usage("exo-temporal pairing of an empty batch".into()));
    }
    let partner = rng.permutation(batch);
    let lambda_t = (0..batch).map(|_| beta_sample(cfg.alpha_t, rng)).collect::<Result<_>>()?;
    Ok(ExoDraw { partner, lambda_t })
}

/// Taped endo-temporal terms; either may be disabled.
#[derive(Clone, Copy, Debug, Default)]
pub struct EndoNodes {
    pub pre: Option<NodeId>,
    pub vir: Option<NodeId>,
}

/// Records `L_pre` and/or `L_vir` for a batch, one draw per video. Needs a
/// graph built with clip predictions. Targets are detached unless
/// `symmetric` is set.
#[allow(clippy::too_many_arguments)]
pub fn endo_nodes<T: Scalar>(
    tape: &mut GradTape<T>,
    model: &TemporalModel<T>,
    graph: &BatchGraph<T>,
    draws: &[MaskDraw],
    pre: bool,
    vir: bool,
    symmetric: bool,
) -> Result<EndoNodes> {
    if !pre && !vir {
        return Ok(EndoNodes::default());
    }
    let b = graph.batch;
    if draws.len() != b {
        return Err(Error::dim("mask draws", &[b], &[draws.len()]));
    }
    let (Some(stacked), Some(clip_probs)) = (graph.stacked, graph.clip_probs) else {
        return Err(Error::Usage("endo-temporal terms need clip predictions".into()));
    };
    let clips = graph.clips.len();
    let mut i1 = Vec::with_capacity(b);
    let mut i2 = Vec::with_capacity(b);
    for (i, d) in draws.iter().enumerate() {
        if d.r1 < 2 || d.r2 < 2 || d.r1 > clips + 1 || d.r2 > clips + 1 {
            return Err(Error::Usage(format!("clip pair ({}, {}) out of range", d.r1, d.r2)));
        }
        i1.push((d.r1 - 2) * b + i);
        i2.push((d.r2 - 2) * b + i);
    }
    let lambdas: Vec<T> = draws.iter().map(|d| T::lit(d.lambda_v)).collect();
    let a = tape.gather_rows(stacked, i1.clone())?;
    let c = tape.gather_rows(stacked, i2.clone())?;
    let t_virtual = mix_rows(tape, a, c, &lambdas)?;
    let y_virtual = model.head_probs(tape, t_virtual)?;
    let mut out = EndoNodes::default();
    if pre {
        let y = if symmetric { graph.probs } else { tape.detach(graph.probs) };
        out.pre = Some(kl_mean(tape, y_virtual, y)?);
    }
    if vir {
        let pa = tape.gather_rows(clip_probs, i1)?;
        let pc = tape.gather_rows(clip_probs, i2)?;
        let mixed = mix_rows(tape, pa, pc, &lambdas)?;
        let target = if symmetric { mixed } else { tape.detach(mixed) };
        out.vir = Some(cross_entropy_mean(tape, target, y_virtual)?);
    }
    Ok(out)
}

/// Records `L_exo` over the graph's temporal features.
pub fn exo_node<T: Scalar>(
    tape: &mut GradTape<T>,
    model: &TemporalModel<T>,
    graph: &BatchGraph<T>,
    draw: &ExoDraw,
    symmetric: bool,
) -> Result<NodeId> {
    let b = graph.batch;
    if draw.partner.len() != b || draw.lambda_t.len() != b {
        return Err(Error::dim("exo pairing", &[b], &[draw.partner.len()]));
    }
    let lambdas: Vec<T> = draw.lambda_t.iter().map(|&l| T::lit(l)).collect();
    let t_j = tape.gather_rows(graph.temporal, draw.partner.clone())?;
    let t_mix = mix_rows(tape, graph.temporal, t_j, &lambdas)?;
    let pred = model.head_probs(tape, t_mix)?;
    let y_j = tape.gather_rows(graph.probs, draw.partner.clone())?;
    let y_mix = mix_rows(tape, graph.probs, y_j, &lambdas)?;
    let target = if symmetric { y_mix } else { tape.detach(y_mix) };
    cross_entropy_mean(tape, target, pred)
}

#[cfg(test)]
mod tests;
