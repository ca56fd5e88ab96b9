use crate::backbone::{BatchGraph, ForwardOptions, FrameFeatureSequence, TemporalModel};
use crate::distillation::{kd_node, mi_node};
use crate::error::{Error, Result};
use crate::numerics::{GradTape, NodeId, Scalar};
use crate::regularizers::{endo_nodes, exo_node, ExoDraw, MaskDraw};
use crate::trainer::AdaptConfig;

/// The random choices of one optimisation step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDraws {
    /// One mask draw per video; needed when an endo-temporal term is on.
    pub masks: Option<Vec<MaskDraw>>,
    pub exo: Option<ExoDraw>,
}

/// Handles of every enabled loss term and of the total objective.
#[derive(Clone, Debug)]
pub struct ObjectiveNodes<T> {
    pub graph: BatchGraph<T>,
    pub kd: NodeId,
    pub pre: Option<NodeId>,
    pub vir: Option<NodeId>,
    pub exo: Option<NodeId>,
    pub mi: Option<NodeId>,
    pub total: NodeId,
}

impl<T: Scalar> ObjectiveNodes<T> {
    /// `(name, value)` of every term, disabled terms as zero.
    pub fn values(&self, tape: &GradTape<T>) -> [(&'static str, f64); 6] {
        let v = |n: Option<NodeId>| n.map_or(0.0, |n| tape.scalar(n).as_f64());
        [
            ("L_kd", v(Some(self.kd))),
            ("L_pre", v(self.pre)),
            ("L_vir", v(self.vir)),
            ("L_exo", v(self.exo)),
            ("L_mi", v(self.mi)),
            ("total", v(Some(self.total))),
        ]
    }

    /// Aborts on the first non-finite term.
    pub fn check_finite(&self, tape: &GradTape<T>) -> Result<()> {
        match self.values(tape).into_iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::Numerical(format!("{name} = {v}"))),
            None => Ok(()),
        }
    }
}

/// Records `L_kd + beta * (L_pre + L_vir + L_exo) - L_mi` for one batch,
/// leaving out the terms that `cfg` disables.
pub fn objective_nodes<T: Scalar>(
    tape: &mut GradTape<T>,
    model: &TemporalModel<T>,
    batch: &[&FrameFeatureSequence],
    teacher_rows: &[f64],
    draws: &StepDraws,
    cfg: &AdaptConfig,
    weighted: bool,
) -> Result<ObjectiveNodes<T>> {
    let opts = ForwardOptions {
        weighted,
        clip_predictions: cfg.uses_masks(),
    };
    let graph = model.forward_batch(tape, batch, opts)?;
    let kd = kd_node(tape, graph.probs, teacher_rows)?;
    let (mut pre, mut vir, mut exo, mut mi) = (None, None, None, None);
    if cfg.uses_masks() {
        let masks = draws
            .masks
            .as_ref()
            .ok_or_else(|| Error::Usage("endo-temporal terms enabled without mask draws".into()))?;
        let e = endo_nodes(tape, model, &graph, masks, cfg.use_pre(), cfg.use_vir(), cfg.symmetric)?;
        pre = e.pre;
        vir = e.vir;
    }
    if cfg.exo {
        let d = draws
            .exo
            .as_ref()
            .ok_or_else(|| Error::Usage("exo-temporal term enabled without a pairing draw".into()))?;
        exo = Some(exo_node(tape, model, &graph, d, cfg.symmetric)?);
    }
    if cfg.mi {
        mi = Some(mi_node(tape, graph.probs)?);
    }
    let mut reg: Option<NodeId> = None;
    for n in [pre, vir, exo].into_iter().flatten() {
        reg = Some(match reg {
            Some(a) => tape.add(a, n)?,
            None => n,
        });
    }
    let mut total = kd;
    if let Some(r) = reg {
        let r = tape.scale(r, T::lit(cfg.beta_reg));
        total = tape.add(total, r)?;
    }
    if let Some(m) = mi {
        total = tape.sub(total, m)?;
    }
    Ok(ObjectiveNodes {
        graph,
        kd,
        pre,
        vir,
        exo,
        mi,
        total,
    })
}
