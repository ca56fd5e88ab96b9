use serde::{Deserialize, Serialize};

use crate::backbone::FrameFeatureSequence;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::numerics::{prob, GradTape, Mlp, NodeId, ParamStore, ProbVector, RngState, Scalar};

/// Architecture sizes of a relation-network sequence classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Frames per video (`k`).
    pub frames: usize,
    /// Frame feature width.
    pub dim: usize,
    /// Clip / temporal feature width.
    pub clip_dim: usize,
    /// Hidden width of every relation module and of the head.
    pub hidden: usize,
    pub classes: usize,
    /// Frame subsets fused per relation order.
    pub subsets: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 3 {
            return Err(Error::Config(format!("frames per video must be >= 3, got {}", self.frames)));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.dim == 0 || self.clip_dim == 0 || self.hidden == 0 || self.subsets == 0 {
            return Err(Error::Config("model widths and subset count must be positive".into()));
        }
        Ok(())
    }

    pub fn clips(&self) -> usize {
        self.frames - 1
    }
}

/// Integration MLP `g^(r)` for one relation order plus its frozen frame subsets.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationModule {
    pub order: usize,
    /// Strictly increasing 0-based frame indices, each of length `order`.
    pub subsets: Vec<Vec<usize>>,
    pub mlp: Mlp,
}

/// One relation module per order `r = 2..=k`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationModuleBank {
    frames: usize,
    modules: Vec<RelationModule>,
}

impl RelationModuleBank {
    pub fn new(frames: usize, modules: Vec<RelationModule>) -> Result<Self> {
        if modules.len() + 1 != frames {
            return Err(Error::Config(format!(
                "{} relation modules for {frames} frames (need {})",
                modules.len(),
                frames.saturating_sub(1)
            )));
        }
        for (i, m) in modules.iter().enumerate() {
            if m.order != i + 2 {
                return Err(Error::Config(format!("relation module {i} has order {}, want {}", m.order, i + 2)));
            }
            if m.subsets.is_empty() {
                return Err(Error::Config(format!("order {} has no frame subsets", m.order)));
            }
            for s in &m.subsets {
                let increasing = s.windows(2).all(|w| w[0] < w[1]);
                if s.len() != m.order || !increasing || s.last().is_some_and(|&x| x >= frames) {
                    return Err(Error::Config(format!("bad frame subset {s:?} for order {}", m.order)));
                }
            }
        }
        Ok(Self { frames, modules })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn modules(&self) -> &[RelationModule] {
        &self.modules
    }
}

/// Draws `count` distinct strictly increasing `order`-subsets of `0..frames`,
/// or every subset when fewer exist.
pub fn sample_subsets(frames: usize, order: usize, count: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let total = binomial(frames, order);
    if total <= count as u128 {
        return all_subsets(frames, order);
    }
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut idx = rng.permutation(frames);
        idx.truncate(order);
        idx.sort_unstable();
        if !out.contains(&idx) {
            out.push(idx);
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn all_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Clip features of one video, ordered by relation order, and their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatureSet<T> {
    pub clips: Vec<Vec<T>>,
    pub weights: Option<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalFeature<T>(pub Vec<T>);

/// Relation-module bank plus classifier head. Used both for the black-box
/// source model and for the adapted target model.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalModel<T> {
    dims: ModelDims,
    bank: RelationModuleBank,
    head: Mlp,
    params: ParamStore<T>,
}

/// The model trained on the target domain.
pub type TargetModel<T = f32> = TemporalModel<T>;

/// Per-batch graph handles produced by [`TemporalModel::forward_batch`].
#[derive(Clone, Debug)]
pub struct BatchGraph<T> {
    pub batch: usize,
    /// Per relation order, `batch x clip_dim`.
    pub clips: Vec<NodeId>,
    /// All clips stacked order-major: row `o * batch + i` is order `o + 2` of video `i`.
    pub stacked: Option<NodeId>,
    /// Head softmax over `stacked`.
    pub clip_probs: Option<NodeId>,
    /// `weights[o][i]`, constants within the step.
    pub weights: Option<Vec<Vec<T>>>,
    pub temporal: NodeId,
    pub probs: NodeId,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Entropy-based clip weighting of the temporal aggregate.
    pub weighted: bool,
    /// Compute head predictions for every clip even when unweighted.
    pub clip_predictions: bool,
}

impl<T: Scalar> TemporalModel<T> {
    /// Fresh model with seeded uniform initialisation and frame subsets.
    pub fn init(dims: ModelDims, rng: &mut RngState) -> Result<Self> {
        dims.validate()?;
        let mut params = ParamStore::new();
        let mut modules = Vec::with_capacity(dims.clips());
        for order in 2..=dims.frames {
            let subsets = sample_subsets(dims.frames, order, dims.subsets, rng);
            let mlp = Mlp::init(
                &format!("relation{order}"),
                &[order * dims.dim, dims.hidden, dims.clip_dim],
                &mut params,
                rng,
            );
            modules.push(RelationModule { order, subsets, mlp });
        }
        let head = Mlp::init("head", &[dims.clip_dim, dims.hidden, dims.classes], &mut params, rng);
        let bank = RelationModuleBank::new(dims.frames, modules)?;
        Ok(Self { dims, bank, head, params })
    }

    pub fn from_parts(dims: ModelDims, bank: RelationModuleBank, head: Mlp, params: ParamStore<T>) -> Result<Self> {
        dims.validate()?;
        if bank.frames() != dims.frames {
            return Err(Error::Config("relation bank frame count disagrees with dims".into()));
        }
        if head.input_width() != dims.clip_dim || head.output_width() != dims.classes {
            return Err(Error::dim("head", &[dims.clip_dim, dims.classes], &[head.input_width(), head.output_width()]));
        }
        for m in bank.modules() {
            if m.mlp.input_width() != m.order * dims.dim || m.mlp.output_width() != dims.clip_dim {
                return Err(Error::dim(
                    "relation module",
                    &[m.order * dims.dim, dims.clip_dim],
                    &[m.mlp.input_width(), m.mlp.output_width()],
                ));
            }
        }
        Ok(Self { dims, bank, head, params })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn bank(&self) -> &RelationModuleBank {
        &self.bank
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> TemporalModel<U> {
        TemporalModel {
            dims: self.dims.clone(),
            bank: self.bank.clone(),
            head: self.head.clone(),
            params: self.params.cast(),
        }
    }

    fn check_video(&self, v: &FrameFeatureSequence) -> Result<()> {
        if v.frames() != self.dims.frames {
            return Err(Error::Config(format!(
                "video {} has {} frames, model expects {}",
                v.video_id,
                v.frames(),
                self.dims.frames
            )));
        }
        if v.dim() != self.dims.dim {
            return Err(Error::dim("frame width", &[self.dims.dim], &[v.dim()]));
        }
        Ok(())
    }

    /// Records `cl^(r)` for every order; one `batch x clip_dim` node per order.
    pub fn clip_nodes(&self, tape: &mut GradTape<T>, videos: &[&FrameFeatureSequence]) -> Result<Vec<NodeId>> {
        for v in videos {
            self.check_video(v)?;
        }
        let d = self.dims.dim;
        let mut out = Vec::with_capacity(self.bank.modules.len());
        for m in &self.bank.modules {
            let width = m.order * d;
            let rows = videos.len() * m.subsets.len();
            let mut x = Vec::with_capacity(rows * width);
            for v in videos {
                for s in &m.subsets {
                    for &j in s {
                        x.extend(v.frame(j).iter().map(|&f| T::lit(f as f64)));
                    }
                }
            }
            let xn = tape.constant(rows, width, x);
            let h = m.mlp.forward(tape, &self.params, xn)?;
            out.push(tape.sum_groups(h, m.subsets.len())?);
        }
        Ok(out)
    }

    /// Head softmax of a `rows x clip_dim` node.
    pub fn head_probs(&self, tape: &mut GradTape<T>, x: NodeId) -> Result<NodeId> {
        let logits = self.head.forward(tape, &self.params, x)?;
        Ok(tape.softmax_rows(logits))
    }

    /// Whole-batch forward pass up to the temporal prediction.
    pub fn forward_batch(
        &self,
        tape: &mut GradTape<T>,
        videos: &[&FrameFeatureSequence],
        opts: ForwardOptions,
    ) -> Result<BatchGraph<T>> {
        if videos.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let batch = videos.len();
        let clips = self.clip_nodes(tape, videos)?;
        let (mut stacked, mut clip_probs, mut weights) = (None, None, None);
        if opts.weighted || opts.clip_predictions {
            let st = tape.vstack(&clips)?;
            let cp = self.head_probs(tape, st)?;
            stacked = Some(st);
            clip_probs = Some(cp);
        }
        if opts.weighted {
            let cp = clip_probs.expect("computed above");
            let w: Vec<Vec<T>> = (0..clips.len())
                .map(|o| (0..batch).map(|i| clip_weight(tape.row(cp, o * batch + i))).collect())
                .collect();
            weights = Some(w);
        }
        let temporal = self.aggregate(tape, &clips, weights.as_deref())?;
        let probs = self.head_probs(tape, temporal)?;
        Ok(BatchGraph {
            batch,
            clips,
            stacked,
            clip_probs,
            weights,
            temporal,
            probs,
        })
    }

    /// Mean (optionally weighted) of the per-order clip nodes.
    pub fn aggregate(&self, tape: &mut GradTape<T>, clips: &[NodeId], weights: Option<&[Vec<T>]>) -> Result<NodeId> {
        let mut acc: Option<NodeId> = None;
        for (o, &c) in clips.iter().enumerate() {
            let term = match weights {
                Some(w) => tape.row_scale(c, w[o].clone())?,
                None => c,
            };
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        let acc = acc.ok_or_else(|| Error::Usage("no clips to aggregate".into()))?;
        Ok(tape.scale(acc, T::one() / T::lit(clips.len() as f64)))
    }

    /// `cl^(r)` for one video, weights unset.
    pub fn clip_features(&self, v: &FrameFeatureSequence) -> Result<ClipFeatureSet<T>> {
        let mut tape = GradTape::new();
        let nodes = self.clip_nodes(&mut tape, &[v])?;
        Ok(ClipFeatureSet {
            clips: nodes.iter().map(|&n| tape.value(n).to_vec()).collect(),
            weights: None,
        })
    }

    /// Sets `w^(r) = 1 - H(H_T(cl^(r))) / ln C` on every clip.
    pub fn clip_weights(&self, mut clips: ClipFeatureSet<T>) -> Result<ClipFeatureSet<T>> {
        if clips.clips.is_empty() {
            return Err(Error::Usage("no clips to weight".into()));
        }
        let mut w = Vec::with_capacity(clips.clips.len());
        for c in &clips.clips {
            w.push(clip_weight(&self.predict_raw(c)?));
        }
        clips.weights = Some(w);
        Ok(clips)
    }

    fn predict_raw(&self, feature: &[T]) -> Result<Vec<T>> {
        if feature.len() != self.dims.clip_dim {
            return Err(Error::dim("head input", &[self.dims.clip_dim], &[feature.len()]));
        }
        let mut tape = GradTape::new();
        let x = tape.constant(1, feature.len(), feature.to_vec());
        let p = self.head_probs(&mut tape, x)?;
        Ok(tape.value(p).to_vec())
    }

    /// Head prediction for a temporal feature or a single clip feature.
    pub fn predict(&self, feature: &[T]) -> Result<ProbVector> {
        to_prob(&self.predict_raw(feature)?)
    }

    /// Evaluation-mode predictions (no masking, no mixing) for many videos.
    pub fn predict_videos(&self, videos: &[&FrameFeatureSequence], weighted: bool, mode: ExecMode) -> Result<Vec<ProbVector>> {
        const CHUNK: usize = 64;
        let parts = exec::map_chunks(mode, videos, CHUNK, |chunk| -> Result<Vec<ProbVector>> {
            let mut tape = GradTape::new();
            let g = self.forward_batch(&mut tape, chunk, ForwardOptions { weighted, clip_predictions: false })?;
            (0..chunk.len()).map(|i| to_prob(tape.row(g.probs, i))).collect()
        });
        let mut out = Vec::with_capacity(videos.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// `(1/(k-1)) * sum_r [w_r] cl^(r)`.
pub fn temporal_feature<T: Scalar>(clips: &ClipFeatureSet<T>, weighted: bool) -> Result<TemporalFeature<T>> {
    let n = clips.clips.len();
    let Some(first) = clips.clips.first() else {
        return Err(Error::Usage("no clips to aggregate".into()));
    };
    let weights = match (weighted, &clips.weights) {
        (false, _) => None,
        (true, Some(w)) if w.len() == n => Some(w),
        (true, Some(w)) => return Err(Error::dim("clip weights", &[n], &[w.len()])),
        (true, None) => return Err(Error::Usage("weighted aggregation requested but clip weights are unset".into())),
    };
    let mut t = vec![T::zero(); first.len()];
    for (r, c) in clips.clips.iter().enumerate() {
        if c.len() != t.len() {
            return Err(Error::dim("clip feature", &[t.len()], &[c.len()]));
        }
        let w = weights.map_or(T::one(), |w| w[r]);
        for (a, &x) in t.iter_mut().zip(c) {
            *a = *a + w * x;
        }
    }
    let inv = T::one() / T::lit(n as f64);
    t.iter_mut().for_each(|x| *x = *x * inv);
    Ok(TemporalFeature(t))
}

/// `1 - H(p) / ln C`, clamped into `[0, 1]`.
pub fn clip_weight<T: Scalar>(p: &[T]) -> T {
    let h: f64 = -p.iter().map(|&x| x.as_f64() * prob::clamped_ln(x.as_f64())).sum::<f64>();
    let w = 1.0 - h / (p.len() as f64).ln();
    T::lit(w.clamp(0.0, 1.0))
}

pub(crate) fn to_prob<T: Scalar>(p: &[T]) -> Result<ProbVector> {
    ProbVector::new(p.iter().map(|x| x.as_f64()).collect())
}
