use super::*;
use crate::backbone::{
    temporal_feature, ForwardOptions, FrameFeatureSequence, ModelDims, RelationModuleBank, TemporalModel,
};
use crate::numerics::{entropy, GradTape, Mlp, ParamStore, ProbVector, RngState};
use proptest::prelude::*;

fn pv(x: &[f64]) -> ProbVector {
    ProbVector::new(x.to_vec()).unwrap()
}

fn dims(frames: usize) -> ModelDims {
    ModelDims {
        frames,
        dim: 4,
        clip_dim: 6,
        hidden: 5,
        classes: 3,
        subsets: 2,
    }
}

fn model(frames: usize, seed: u64) -> TemporalModel<f64> {
    TemporalModel::init(dims(frames), &mut RngState::new(seed)).unwrap()
}

fn videos(n: usize, frames: usize, dim: usize, rng: &mut RngState) -> Vec<FrameFeatureSequence> {
    (0..n)
        .map(|i| {
            let data = (0..frames * dim).map(|_| rng.normal() as f32).collect();
            FrameFeatureSequence::new(format!("v{i}"), frames, dim, data, None).unwrap()
        })
        .collect()
}

#[test]
fn three_frames_always_keep_both_clips() {
    let mut rng = RngState::new(1);
    for _ in 0..200 {
        let d = draw_mask(3, &mut rng, &RegConfig::default()).unwrap();
        assert_eq!(d.pair(), (2, 3));
        assert!(d.masked(3).is_empty());
    }
    assert!(matches!(draw_mask(2, &mut rng, &RegConfig::default()), Err(Error::Config(_))));
}

#[test]
fn five_frame_pairs_are_uniform() {
    let mut rng = RngState::new(2);
    let n = 60_000;
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..n {
        let d = draw_mask(5, &mut rng, &RegConfig::default()).unwrap();
        assert_eq!(d.masked(5).len(), 2);
        assert!(!d.masked(5).contains(&d.r1) && !d.masked(5).contains(&d.r2));
        *counts.entry(d.pair()).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 6);
    let p = 1.0 / 6.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for (&pair, &c) in &counts {
        assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{pair:?}: {c}");
    }
}

#[test]
fn invalid_alpha_is_rejected() {
    let cfg = RegConfig {
        alpha_v: 0.0,
        alpha_t: 0.3,
    };
    assert!(cfg.validate().is_err());
    assert!(draw_mask(5, &mut RngState::new(0), &cfg).is_err());
}

fn set(clips: Vec<Vec<f64>>) -> ClipFeatureSet<f64> {
    ClipFeatureSet { clips, weights: None }
}

#[test]
fn virtual_feature_examples() {
    let s = set(vec![vec![2.0, 4.0], vec![1.0, 0.0], vec![7.0, 7.0]]);
    let d = MaskDraw::new(2, 3, 1.0, 4).unwrap();
    assert_eq!(virtual_temporal(&s, &d).unwrap().feature, vec![2.0, 4.0]);
    let d = MaskDraw::new(2, 3, 0.3, 4).unwrap();
    let v = virtual_temporal(&s, &d).unwrap().feature;
    assert!((v[0] - 1.3).abs() < 1e-12 && (v[1] - 1.2).abs() < 1e-12);
    let eq = set(vec![vec![0.5, -1.0]; 3]);
    for l in [0.0, 0.17, 0.9] {
        let d = MaskDraw::new(4, 2, l, 4).unwrap();
        assert_eq!(virtual_temporal(&eq, &d).unwrap().feature, vec![0.5, -1.0]);
    }
    let bad = MaskDraw {
        r1: 2,
        r2: 9,
        lambda_v: 0.5,
    };
    assert!(matches!(virtual_temporal(&s, &bad), Err(Error::Usage(_))));
    assert!(MaskDraw::new(3, 3, 0.5, 4).is_err());
}

#[test]
fn scalar_loss_examples() {
    let p = pv(&[0.2, 0.5, 0.3]);
    assert!(loss_pre(&p, &p).unwrap().abs() < 1e-15);
    assert!((loss_pre(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.5])).unwrap() - 2f64.ln()).abs() < 1e-12);
    assert!((loss_pre(&pv(&[0.5, 0.5]), &pv(&[0.25, 0.75])).unwrap() - 0.1438).abs() < 5e-5);

    let u = ProbVector::uniform(4).unwrap();
    assert!((loss_vir(&u, &u).unwrap() - 4f64.ln()).abs() < 1e-12);
    let v = loss_vir(&pv(&[0.9, 0.1]), &pv(&[1.0, 0.0])).unwrap();
    assert!((v - 0.1054).abs() < 5e-5);
    let v = loss_vir(&pv(&[0.6, 0.4]), &pv(&[0.3, 0.7])).unwrap();
    let oracle = -(0.3 * 0.6f64.ln() + 0.7 * 0.4f64.ln());
    assert!((v - oracle).abs() < 1e-12);
    assert!(loss_vir(&pv(&[0.6, 0.4]), &ProbVector::uniform(3).unwrap()).is_err());
}

#[test]
fn mixed_prediction_arithmetic() {
    let m = mix_probs(&pv(&[0.8, 0.2]), &pv(&[0.4, 0.6]), 0.3).unwrap();
    assert!((m.as_slice()[0] - 0.52).abs() < 1e-12);
    let m = mix_probs(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0]), 0.5).unwrap();
    assert_eq!(m.as_slice(), &[0.5, 0.5]);
}

#[test]
fn endo_mean_examples() {
    let t = [EndoTerm { vir: 0.2, pre: 0.0 }, EndoTerm { vir: 0.1, pre: 0.3 }];
    assert!((loss_endo(&t).unwrap() - 0.3).abs() < 1e-15);
    assert!(matches!(loss_endo(&[]), Err(Error::Usage(_))));
}

/// Zeroes the head weights and sets the last bias to `ln p`.
fn constant_head(m: &mut TemporalModel<f64>, p: &[f64]) {
    let layers = m.head().layers().to_vec();
    for &(w, b) in &layers {
        m.params_mut().get_mut(w).data_mut().iter_mut().for_each(|x| *x = 0.0);
        m.params_mut().get_mut(b).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let (_, bias) = *layers.last().unwrap();
    let logits: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    m.params_mut().get_mut(bias).data_mut().copy_from_slice(&logits);
}

#[test]
fn constant_head_gives_entropy_and_zero_pre() {
    let mut m = model(5, 3);
    let p = [0.5, 0.3, 0.2];
    constant_head(&mut m, &p);
    let mut rng = RngState::new(4);
    let v = videos(3, 5, 4, &mut rng);
    for video in &v {
        let clips = m.clip_weights(m.clip_features(video).unwrap()).unwrap();
        for _ in 0..10 {
            let d = draw_mask(5, &mut rng, &RegConfig::default()).unwrap();
            let t = endo_term(&m, &clips, &d).unwrap();
            assert!(t.pre.abs() < 1e-12);
            assert!((t.vir - entropy(&pv(&p))).abs() < 1e-12);
        }
    }
}

#[test]
fn exo_degenerate_pairs() {
    let m = model(4, 5);
    let mut rng = RngState::new(6);
    let t_i = TemporalFeature((0..6).map(|_| rng.normal()).collect());
    let t_j = TemporalFeature((0..6).map(|_| rng.normal()).collect());
    let y_i = m.predict(&t_i.0).unwrap();
    let same = loss_exo(&m, &t_i, &t_i, &mut rng, &RegConfig::default()).unwrap();
    assert!((same - entropy(&y_i)).abs() < 1e-12);
    let end = loss_exo_at(&m, &t_i, &t_j, 1.0).unwrap();
    assert!((end - entropy(&y_i)).abs() < 1e-12);
}

fn linear_head_model(seed: u64) -> TemporalModel<f64> {
    let d = dims(4);
    let mut rng = RngState::new(seed);
    let mut params = ParamStore::new();
    let mut modules = Vec::new();
    for order in 2..=4 {
        let subsets = crate::backbone::sample_subsets(4, order, d.subsets, &mut rng);
        let mlp = Mlp::init(&format!("relation{order}"), &[order * d.dim, d.hidden, d.clip_dim], &mut params, &mut rng);
        modules.push(crate::backbone::RelationModule { order, subsets, mlp });
    }
    let head = Mlp::init("head", &[d.clip_dim, d.classes], &mut params, &mut rng);
    TemporalModel::from_parts(d, RelationModuleBank::new(4, modules).unwrap(), head, params).unwrap()
}

#[test]
fn exo_matches_linear_head_oracle() {
    let m = linear_head_model(7);
    let (w, b) = m.head().layers()[0];
    let (w, b) = (m.params().get(w).data().to_vec(), m.params().get(b).data().to_vec());
    let probs = |t: &[f64]| -> Vec<f64> {
        let z: Vec<f64> = (0..3).map(|c| b[c] + (0..6).map(|i| t[i] * w[i * 3 + c]).sum::<f64>()).collect();
        let e: Vec<f64> = z.iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    };
    let mut rng = RngState::new(8);
    for _ in 0..20 {
        let ti: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let tj: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let (yi, yj) = (probs(&ti), probs(&tj));
        let mid: Vec<f64> = ti.iter().zip(&tj).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
        let ym = probs(&mid);
        let want: f64 = -(0..3).map(|c| 0.5 * (yi[c] + yj[c]) * ym[c].ln()).sum::<f64>();
        let got = loss_exo_at(&m, &TemporalFeature(ti), &TemporalFeature(tj), 0.5).unwrap();
        assert!((got - want).abs() < 1e-6);
    }
}

fn graph_terms(
    m: &TemporalModel<f64>,
    v: &[FrameFeatureSequence],
    draws: &[MaskDraw],
    exo: &ExoDraw,
    symmetric: bool,
) -> (GradTape<f64>, BatchGraph<f64>, EndoNodes, NodeId) {
    let refs: Vec<&FrameFeatureSequence> = v.iter().collect();
    let mut tape = GradTape::new();
    let opts = ForwardOptions {
        weighted: true,
        clip_predictions: true,
    };
    let g = m.forward_batch(&mut tape, &refs, opts).unwrap();
    let endo = endo_nodes(&mut tape, m, &g, draws, true, true, symmetric).unwrap();
    let x = exo_node(&mut tape, m, &g, exo, symmetric).unwrap();
    (tape, g, endo, x)
}

#[test]
fn batched_terms_match_per_video_reference() {
    let m = model(5, 9);
    let mut rng = RngState::new(10);
    let v = videos(4, 5, 4, &mut rng);
    let cfg = RegConfig::default();
    let draws: Vec<MaskDraw> = (0..4).map(|_| draw_mask(5, &mut rng, &cfg).unwrap()).collect();
    let exo = draw_exo(4, &mut rng, &cfg).unwrap();
    let (tape, g, endo, x) = graph_terms(&m, &v, &draws, &exo, false);

    let mut terms = Vec::new();
    let mut temporal = Vec::new();
    for (video, d) in v.iter().zip(&draws) {
        let clips = m.clip_weights(m.clip_features(video).unwrap()).unwrap();
        terms.push(endo_term(&m, &clips, d).unwrap());
        temporal.push(temporal_feature(&clips, true).unwrap());
    }
    let pre = terms.iter().map(|t| t.pre).sum::<f64>() / 4.0;
    let vir = terms.iter().map(|t| t.vir).sum::<f64>() / 4.0;
    assert!((tape.scalar(endo.pre.unwrap()) - pre).abs() < 1e-6);
    assert!((tape.scalar(endo.vir.unwrap()) - vir).abs() < 1e-6);
    assert!((tape.scalar(endo.pre.unwrap()) + tape.scalar(endo.vir.unwrap()) - loss_endo(&terms).unwrap()).abs() < 1e-6);

    let mut exo_ref = 0.0;
    for i in 0..4 {
        let j = exo.partner[i];
        for (a, b) in temporal[i].0.iter().zip(tape.row(g.temporal, i)) {
            assert!((a - b).abs() < 1e-9);
        }
        exo_ref += loss_exo_at(&m, &temporal[i], &temporal[j], exo.lambda_t[i]).unwrap() / 4.0;
    }
    assert!((tape.scalar(x) - exo_ref).abs() < 1e-6);
}

#[test]
fn endo_needs_clip_predictions() {
    let m = model(4, 11);
    let v = videos(2, 4, 4, &mut RngState::new(12));
    let refs: Vec<&FrameFeatureSequence> = v.iter().collect();
    let mut tape = GradTape::new();
    let g = m.forward_batch(&mut tape, &refs, ForwardOptions::default()).unwrap();
    let d = vec![MaskDraw::new(2, 3, 0.5, 4).unwrap(); 2];
    assert!(matches!(endo_nodes(&mut tape, &m, &g, &d, true, false, false), Err(Error::Usage(_))));
    let none = endo_nodes(&mut tape, &m, &g, &d, false, false, false).unwrap();
    assert!(none.pre.is_none() && none.vir.is_none());
}

fn total(tape: &mut GradTape<f64>, endo: EndoNodes, x: NodeId) -> NodeId {
    let e = tape.add(endo.pre.unwrap(), endo.vir.unwrap()).unwrap();
    tape.add(e, x).unwrap()
}

#[test]
fn regularizer_gradients_match_finite_differences() {
    for symmetric in [false, true] {
        let mut m = model(5, 13);
        let mut rng = RngState::new(14);
        let v = videos(4, 5, 4, &mut rng);
        let cfg = RegConfig::default();
        let draws: Vec<MaskDraw> = (0..4).map(|_| draw_mask(5, &mut rng, &cfg).unwrap()).collect();
        let exo = draw_exo(4, &mut rng, &cfg).unwrap();

        // Detached targets and clip weights are evaluated at the base point.
        let (mut tape, g, endo, x) = graph_terms(&m, &v, &draws, &exo, symmetric);
        let loss = total(&mut tape, endo, x);
        let grads = tape.backward(loss, m.params()).unwrap();
        let base_probs = tape.value(g.probs).to_vec();
        let base_clip_probs = tape.value(g.clip_probs.unwrap()).to_vec();
        let weights = g.weights.clone();

        // Clip weights are constants within a step; detached targets are
        // frozen at the base point by feeding them in as constants.
        let eval = |m: &TemporalModel<f64>| -> f64 {
            let refs: Vec<&FrameFeatureSequence> = v.iter().collect();
            let mut tape = GradTape::new();
            let clips = m.clip_nodes(&mut tape, &refs).unwrap();
            let stacked = tape.vstack(&clips).unwrap();
            let mut clip_probs = m.head_probs(&mut tape, stacked).unwrap();
            let temporal = m.aggregate(&mut tape, &clips, weights.as_deref()).unwrap();
            let mut probs = m.head_probs(&mut tape, temporal).unwrap();
            if !symmetric {
                probs = tape.constant(4, 3, base_probs.clone());
                clip_probs = tape.constant(16, 3, base_clip_probs.clone());
            }
            let g2 = BatchGraph {
                batch: 4,
                clips,
                stacked: Some(stacked),
                clip_probs: Some(clip_probs),
                weights: weights.clone(),
                temporal,
                probs,
            };
            let e = endo_nodes(&mut tape, m, &g2, &draws, true, true, symmetric).unwrap();
            let xn = exo_node(&mut tape, m, &g2, &exo, symmetric).unwrap();
            let l = total(&mut tape, e, xn);
            tape.scalar(l)
        };
        let ids: Vec<_> = m.params().ids().collect();
        let mut checked = 0;
        for id in ids {
            let n = m.params().get(id).len();
            for k in [0, n / 2, n - 1] {
                let g = grads.get(id)[k];
                let orig = m.params().get(id).data()[k];
                let h = 1e-5;
                m.params_mut().get_mut(id).data_mut()[k] = orig + h;
                let up = eval(&m);
                m.params_mut().get_mut(id).data_mut()[k] = orig - h;
                let down = eval(&m);
                m.params_mut().get_mut(id).data_mut()[k] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g).abs() <= 1e-4 * (1.0 + fd.abs().max(g.abs())), "{fd} vs {g}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }
}

proptest! {
    #[test]
    fn swapping_the_draw_leaves_endo_terms_unchanged(seed in 0u64..500, r1 in 2usize..6, off in 1usize..4, lambda in 0.0f64..=1.0) {
        let r2 = 2 + (r1 - 2 + off) % 4;
        let m = model(5, seed);
        let v = videos(1, 5, 4, &mut RngState::new(seed + 1));
        let clips = m.clip_weights(m.clip_features(&v[0]).unwrap()).unwrap();
        let d = MaskDraw::new(r1, r2, lambda, 5).unwrap();
        let a = endo_term(&m, &clips, &d).unwrap();
        let b = endo_term(&m, &clips, &d.swapped()).unwrap();
        prop_assert!((a.vir - b.vir).abs() <= 1e-7 && (a.pre - b.pre).abs() <= 1e-7);
        prop_assert_eq!(virtual_temporal(&clips, &d).unwrap().feature, virtual_temporal(&clips, &d.swapped()).unwrap().feature);
    }

    #[test]
    fn regularizer_losses_are_finite_and_non_negative(seed in 0u64..1000) {
        let m = model(4, seed);
        let mut rng = RngState::new(seed ^ 0xabc);
        let v = videos(3, 4, 4, &mut rng);
        let cfg = RegConfig::default();
        let draws: Vec<MaskDraw> = (0..3).map(|_| draw_mask(4, &mut rng, &cfg).unwrap()).collect();
        let exo = draw_exo(3, &mut rng, &cfg).unwrap();
        let (tape, _, endo, x) = graph_terms(&m, &v, &draws, &exo, false);
        for n in [endo.pre.unwrap(), endo.vir.unwrap(), x] {
            let s = tape.scalar(n);
            prop_assert!(s.is_finite() && s >= -1e-12);
        }
    }
}
