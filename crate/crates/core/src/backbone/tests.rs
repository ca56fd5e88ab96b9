use std::path::Path;

use super::*;
use crate::error::Error;
use crate::numerics::{entropy, DenseTensor, GradTape, Mlp, ParamStore, ProbVector, RngState};

fn dims(frames: usize, subsets: usize) -> ModelDims {
    ModelDims {
        frames,
        dim: 3,
        clip_dim: 5,
        hidden: 6,
        classes: 4,
        subsets,
    }
}

fn video(frames: usize, dim: usize, rng: &mut RngState) -> FrameFeatureSequence {
    let data = (0..frames * dim).map(|_| rng.normal() as f32).collect();
    FrameFeatureSequence::new("v", frames, dim, data, None).unwrap()
}

fn zero_params<T: crate::numerics::Scalar>(store: &mut ParamStore<T>, prefix: &str) {
    let ids: Vec<_> = store.ids().filter(|&id| store.name(id).starts_with(prefix)).collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = T::zero());
    }
}

/// Head with zero weights whose final bias is `ln p`, so every input maps to `p`.
fn constant_head(model: &mut TemporalModel<f64>, p: &[f64]) {
    zero_params(model.params_mut(), "head");
    let (_, bias) = *model.head().layers().last().unwrap();
    let logits: Vec<f64> = p.iter().map(|x| x.max(1e-300).ln()).collect();
    model.params_mut().get_mut(bias).data_mut().copy_from_slice(&logits);
}

#[test]
fn clip_count_is_frames_minus_one() {
    let mut rng = RngState::new(1);
    for s in [1, 3, 10] {
        let m = TemporalModel::<f64>::init(dims(5, s), &mut rng).unwrap();
        let orders: Vec<usize> = m.bank().modules().iter().map(|r| r.order).collect();
        assert_eq!(orders, vec![2, 3, 4, 5]);
        let cf = m.clip_features(&video(5, 3, &mut rng)).unwrap();
        assert_eq!(cf.clips.len(), 4);
    }
}

#[test]
fn subsets_are_strictly_increasing_and_distinct() {
    let mut rng = RngState::new(2);
    for order in 2..=8 {
        let s = sample_subsets(8, order, 3, &mut rng);
        assert_eq!(s.len(), if order == 8 { 1 } else { 3 });
        for x in &s {
            assert!(x.windows(2).all(|w| w[0] < w[1]) && *x.last().unwrap() < 8);
        }
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
    }
}

#[test]
fn zero_relation_weights_give_zero_clips() {
    let mut rng = RngState::new(3);
    let mut m = TemporalModel::<f64>::init(dims(5, 3), &mut rng).unwrap();
    zero_params(m.params_mut(), "relation");
    let cf = m.clip_features(&video(5, 3, &mut rng)).unwrap();
    assert!(cf.clips.iter().flatten().all(|&x| x == 0.0));
}

#[test]
fn frame_count_mismatch_is_a_config_error() {
    let mut rng = RngState::new(4);
    let m = TemporalModel::<f64>::init(dims(5, 3), &mut rng).unwrap();
    assert!(matches!(m.clip_features(&video(6, 3, &mut rng)), Err(Error::Config(_))));
}

#[test]
fn clip_features_match_independent_recomputation() {
    // k = 4, one hand-chosen subset per order.
    let mut rng = RngState::new(5);
    let d = dims(4, 1);
    let mut params = ParamStore::<f64>::new();
    let chosen = [vec![0, 2], vec![0, 1, 3], vec![0, 1, 2, 3]];
    let mut modules = Vec::new();
    for (i, s) in chosen.iter().enumerate() {
        let order = i + 2;
        let mlp = Mlp::init(&format!("relation{order}"), &[order * d.dim, d.hidden, d.clip_dim], &mut params, &mut rng);
        modules.push(RelationModule { order, subsets: vec![s.clone()], mlp });
    }
    let head = Mlp::init("head", &[d.clip_dim, d.hidden, d.classes], &mut params, &mut rng);
    let bank = RelationModuleBank::new(4, modules).unwrap();
    let model = TemporalModel::from_parts(d.clone(), bank, head, params).unwrap();
    let v = video(4, 3, &mut rng);
    let got = model.clip_features(&v).unwrap();

    for (o, s) in chosen.iter().enumerate() {
        let x: Vec<f64> = s.iter().flat_map(|&j| v.frame(j).iter().map(|&f| f as f64)).collect();
        let m = &model.bank().modules()[o].mlp;
        let mut h = x;
        for (li, &(w, b)) in m.layers().iter().enumerate() {
            let wt = model.params().get(w);
            let bt = model.params().get(b).data();
            let (rows, cols) = (wt.shape()[0], wt.shape()[1]);
            let mut next = vec![0.0; cols];
            for j in 0..cols {
                let mut acc = bt[j];
                for i in 0..rows {
                    acc += h[i] * wt.data()[i * cols + j];
                }
                next[j] = if li + 1 < m.layers().len() { acc.max(0.0) } else { acc };
            }
            h = next;
        }
        for (a, b) in got.clips[o].iter().zip(&h) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn uniform_head_gives_zero_weights_and_one_hot_gives_one() {
    let mut rng = RngState::new(6);
    let mut m = TemporalModel::<f64>::init(dims(5, 3), &mut rng).unwrap();
    let v = video(5, 3, &mut rng);
    constant_head(&mut m, &[0.25; 4]);
    let w = m.clip_weights(m.clip_features(&v).unwrap()).unwrap().weights.unwrap();
    assert!(w.iter().all(|&x| x.abs() < 1e-12));
    zero_params(m.params_mut(), "head");
    let (_, bias) = *m.head().layers().last().unwrap();
    m.params_mut().get_mut(bias).data_mut().copy_from_slice(&[0.0, 200.0, 0.0, 0.0]);
    let w = m.clip_weights(m.clip_features(&v).unwrap()).unwrap().weights.unwrap();
    assert!(w.iter().all(|&x| x == 1.0), "{w:?}");
}

#[test]
fn clip_weight_scalar_example() {
    let mut rng = RngState::new(7);
    let mut m = TemporalModel::<f64>::init(dims(5, 3), &mut rng).unwrap();
    constant_head(&mut m, &[0.7, 0.1, 0.1, 0.1]);
    let w = m
        .clip_weights(m.clip_features(&video(5, 3, &mut rng)).unwrap())
        .unwrap()
        .weights
        .unwrap();
    let h = -(0.7f64 * 0.7f64.ln() + 3.0 * 0.1 * 0.1f64.ln());
    let want = 1.0 - h / 4f64.ln();
    assert!((want - 0.32162).abs() < 5e-5);
    for x in w {
        assert!((x - want).abs() < 1e-9);
    }
}

#[test]
fn temporal_feature_examples() {
    let c = vec![1.0f64, -2.0, 0.5];
    let same = ClipFeatureSet {
        clips: vec![c.clone(); 4],
        weights: None,
    };
    let t = temporal_feature(&same, false).unwrap();
    for (a, b) in t.0.iter().zip(&c) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(matches!(temporal_feature(&same, true), Err(Error::Usage(_))));

    let mut rng = RngState::new(8);
    let clips: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.normal()).collect()).collect();
    let ones = ClipFeatureSet {
        clips: clips.clone(),
        weights: Some(vec![1.0; 3]),
    };
    assert_eq!(temporal_feature(&ones, true).unwrap(), temporal_feature(&ones, false).unwrap());

    let w: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
    let set = ClipFeatureSet {
        clips: clips.clone(),
        weights: Some(w.clone()),
    };
    let t = temporal_feature(&set, true).unwrap();
    for j in 0..5 {
        let want = (w[0] * clips[0][j] + w[1] * clips[1][j] + w[2] * clips[2][j]) / 3.0;
        assert!((t.0[j] - want).abs() < 1e-6);
    }
}

#[test]
fn weighted_aggregate_scales_linearly() {
    let mut rng = RngState::new(9);
    let clips: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.normal()).collect()).collect();
    let w: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
    let norm = |s: f64| {
        let set = ClipFeatureSet {
            clips: clips.clone(),
            weights: Some(w.iter().map(|x| x * s).collect()),
        };
        temporal_feature(&set, true).unwrap().0.iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    let base = norm(1.0);
    for s in [0.5, 0.1, 0.01, 0.0] {
        assert!((norm(s) - s * base).abs() < 1e-12);
    }
}

#[test]
fn aggregation_is_order_free() {
    let mut rng = RngState::new(10);
    let m = TemporalModel::<f64>::init(dims(6, 2), &mut rng).unwrap();
    for _ in 0..20 {
        let set = m.clip_weights(m.clip_features(&video(6, 3, &mut rng)).unwrap()).unwrap();
        let t = temporal_feature(&set, true).unwrap();
        let perm = rng.permutation(set.clips.len());
        let permuted = ClipFeatureSet {
            clips: perm.iter().map(|&i| set.clips[i].clone()).collect(),
            weights: set.weights.as_ref().map(|w| perm.iter().map(|&i| w[i]).collect()),
        };
        let tp = temporal_feature(&permuted, true).unwrap();
        assert_eq!(m.predict(&t.0).unwrap().argmax(), m.predict(&tp.0).unwrap().argmax());
    }
}

#[test]
fn reversing_frames_changes_clip_features() {
    let mut rng = RngState::new(11);
    let mut sensitive = 0;
    for _ in 0..100 {
        let m = TemporalModel::<f64>::init(dims(5, 3), &mut rng).unwrap();
        let v = video(5, 3, &mut rng);
        let a = m.clip_features(&v).unwrap();
        let b = m.clip_features(&v.reversed()).unwrap();
        let differs = a.clips.iter().flatten().zip(b.clips.iter().flatten()).any(|(x, y)| (x - y).abs() > 1e-6);
        sensitive += differs as usize;
    }
    assert!(sensitive >= 95, "{sensitive}/100");
}

#[test]
fn predict_examples() {
    let mut rng = RngState::new(12);
    let mut m = TemporalModel::<f64>::init(dims(5, 3), &mut rng).unwrap();
    let f: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
    assert_eq!(m.predict(&f).unwrap(), m.predict(&f.clone()).unwrap());

    // independent forward script over the head weights
    let mut h = f.clone();
    for (li, &(w, b)) in m.head().layers().iter().enumerate() {
        let wt = m.params().get(w);
        let (rows, cols) = (wt.shape()[0], wt.shape()[1]);
        h = (0..cols)
            .map(|j| {
                let acc = m.params().get(b).data()[j] + (0..rows).map(|i| h[i] * wt.data()[i * cols + j]).sum::<f64>();
                if li == 0 { acc.max(0.0) } else { acc }
            })
            .collect();
    }
    let s: f64 = h.iter().map(|x| x.exp()).sum();
    for (a, z) in m.predict(&f).unwrap().as_slice().iter().zip(&h) {
        assert!((a - z.exp() / s).abs() < 1e-6);
    }

    assert!(matches!(m.predict(&[1.0, 2.0]), Err(Error::Dimension { .. })));
    zero_params(m.params_mut(), "head");
    assert_eq!(m.predict(&f).unwrap(), ProbVector::uniform(4).unwrap());
}

#[test]
fn batch_graph_agrees_with_per_video_operations() {
    let mut rng = RngState::new(13);
    let m = TemporalModel::<f64>::init(dims(6, 3), &mut rng).unwrap();
    let vids: Vec<FrameFeatureSequence> = (0..5).map(|_| video(6, 3, &mut rng)).collect();
    let refs: Vec<&FrameFeatureSequence> = vids.iter().collect();
    for weighted in [false, true] {
        let mut tape = GradTape::new();
        let g = m
            .forward_batch(&mut tape, &refs, ForwardOptions { weighted, clip_predictions: true })
            .unwrap();
        for (i, v) in vids.iter().enumerate() {
            let set = m.clip_weights(m.clip_features(v).unwrap()).unwrap();
            let t = temporal_feature(&set, weighted).unwrap();
            for (a, b) in tape.row(g.temporal, i).iter().zip(&t.0) {
                assert!((a - b).abs() < 1e-9);
            }
            let p = m.predict(&t.0).unwrap();
            for (a, b) in tape.row(g.probs, i).iter().zip(p.as_slice()) {
                assert!((a - b).abs() < 1e-9);
            }
            let h = entropy(&p);
            assert!(h.is_finite());
        }
    }
    let seq = m.predict_videos(&refs, true, crate::exec::ExecMode::Sequential).unwrap();
    let par = m.predict_videos(&refs, true, crate::exec::ExecMode::Parallel).unwrap();
    assert_eq!(seq, par);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let mut rng = RngState::new(14);
    let m = TemporalModel::<f32>::init(dims(5, 3), &mut rng).unwrap();
    let bytes = checkpoint::encode(&m);
    let back = checkpoint::decode(&bytes, Path::new("mem")).unwrap();
    assert_eq!(back, m);
    assert_eq!(checkpoint::encode(&back), bytes);
    assert_eq!(&bytes[..4], b"BVCK");

    for cut in [3, 20, bytes.len() - 1] {
        match checkpoint::decode(&bytes[..cut], Path::new("mem")) {
            Err(Error::Format { .. }) => {}
            other => panic!("cut {cut}: {other:?}"),
        }
    }
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(checkpoint::decode(&bad, Path::new("mem")), Err(Error::Format { offset: 4, .. })));
}

#[test]
fn mlp_forward_values_through_model_params() {
    let mut rng = RngState::new(15);
    let m = TemporalModel::<f64>::init(dims(5, 3), &mut rng).unwrap();
    let x = DenseTensor::matrix(2, 5, (0..10).map(|i| i as f64 * 0.1).collect()).unwrap();
    let y = m.head().forward_values(m.params(), &x).unwrap();
    assert_eq!(y.shape(), &[2, 4]);
}
