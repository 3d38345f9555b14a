use std::sync::Arc;

use nalgebra::Vector3;
use oazr_core::encoding::{encode_degrees, normalize_orientation, positional_encode, OrientationAngle};
use oazr_core::geometry::{
    assign_orientation_bin, build_camera_rig, project_motion, render_all_views, uniform_sample_frames, Intrinsics,
    NoiseParams, ProjectedView, RigSpec, ORIENTATION_BINS,
};
use oazr_core::inference::{fuse_views, mv_classify_probs, predict, score_against, SimilarityScores, ViewMode};
use oazr_core::model::{cross_attention, AttentionParams, ModelBundle, ModelConfig, OrientationAwareModel};
use oazr_core::numerics::{uniform, ParamStore, Tape, Tensor};
use oazr_core::synthdata::{gen_action, ActionSpec};
use oazr_core::textbank::{DescriptionCatalog, TextBank, TextEmbeddingTable};
use oazr_core::training::{contrastive_distance, sym_loss, sym_loss_on_tape, PairBatch};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(num_classes: usize) -> ModelConfig {
    ModelConfig {
        levels: 8,
        branch_dim: 8,
        heads: 2,
        encoder_dim: 8,
        joint_dim: 8,
        text_dim: 12,
        gcn_channels: 4,
        temporal_kernel: 4,
        temporal_stride: 4,
        temporal_channels: 4,
        segments: 4,
        classifier_hidden: 8,
        orientation_hidden: 8,
        num_classes,
    }
}

fn bundle(seed: u64) -> ModelBundle {
    let model = OrientationAwareModel::new(tiny(3)).unwrap();
    let store = model.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
    ModelBundle::new(model, store, vec!["a".into(), "b".into(), "c".into()]).unwrap()
}

/// Twelve noise-free views of one synthetic motion, 32 frames each.
fn views(generator: &str, yaw: f64, seed: u64) -> Vec<ProjectedView> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = gen_action(&ActionSpec::standard(generator).unwrap(), yaw, &mut rng).unwrap();
    let m = uniform_sample_frames(&m, 32, &mut rng).unwrap();
    let rig = RigSpec::default().rig_for(&m).unwrap();
    render_all_views(&m, &rig, &NoiseParams::NONE, &mut rng).unwrap().views
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / s).collect()
}

proptest! {
    #[test]
    fn rig_covers_the_bins_for_any_size(radius in 0.5f64..20.0, height in -3.0f64..5.0) {
        let rig = build_camera_rig(radius, height, Vector3::new(0.3, -0.2, 1.0), Intrinsics::default()).unwrap();
        let mut yaws: Vec<i32> = rig.cameras.iter().map(|c| c.yaw_deg).collect();
        yaws.sort();
        prop_assert_eq!(yaws, ORIENTATION_BINS.to_vec());
    }

    #[test]
    fn projection_ignores_global_scale(s in 0.05f64..20.0, yaw in -180.0f64..180.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = gen_action(&ActionSpec::standard("wave").unwrap(), yaw, &mut rng).unwrap();
        let m = uniform_sample_frames(&m, 8, &mut rng).unwrap();
        let mut scaled = m.clone();
        scaled.joints.iter_mut().flatten().flatten().for_each(|v| *v *= s);
        let spec = RigSpec::default();
        let big = RigSpec { radius: spec.radius * s, height: spec.height * s, ..spec };
        let (ra, rb) = (spec.rig_for(&m).unwrap(), big.rig_for(&scaled).unwrap());
        for (ca, cb) in ra.cameras.iter().zip(&rb.cameras) {
            let (va, vb) = (project_motion(&m, ca).unwrap(), project_motion(&scaled, cb).unwrap());
            prop_assert_eq!(&va.visibility, &vb.visibility);
            prop_assert_eq!(va.theta_deg, vb.theta_deg);
            for (fa, fb) in va.joints2d.iter().zip(&vb.joints2d) {
                for (a, b) in fa.iter().zip(fb) {
                    prop_assert!((a[0] - b[0]).abs() < 1e-7 && (a[1] - b[1]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn bins_are_nearest(yaw in -1000.0f64..1000.0) {
        let b = assign_orientation_bin(yaw).unwrap();
        prop_assert!(ORIENTATION_BINS.contains(&b));
        let d = (yaw - b as f64).rem_euclid(360.0);
        prop_assert!(d.min(360.0 - d) <= 15.0 + 1e-9);
    }

    #[test]
    fn encoding_shape_bounds_and_period(theta in -720.0f64..720.0, levels in 1usize..64) {
        let a = normalize_orientation(theta).unwrap();
        prop_assert!(a.theta.abs() <= std::f64::consts::PI);
        let (s, c) = a.continuous;
        prop_assert!((s * s + c * c - 1.0).abs() <= 1e-12);
        let g = positional_encode(&a, levels).unwrap().gamma;
        prop_assert_eq!(g.len(), 2 * levels);
        prop_assert!(g.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn encoding_has_period_two(n in -(1i64 << 20)..=(1i64 << 20), levels in 1usize..64) {
        // dyadic angles so that adding 2 is exact
        let x = n as f64 / (1u64 << 20) as f64;
        let g = positional_encode(&OrientationAngle::from_normalized(x), levels).unwrap().gamma;
        let shifted = positional_encode(&OrientationAngle::from_normalized(x + 2.0), levels).unwrap().gamma;
        prop_assert_eq!(g, shifted);
    }

    #[test]
    fn distance_is_in_the_unit_interval(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (unit(&mut rng, n), unit(&mut rng, n));
        let d = contrastive_distance(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(contrastive_distance(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn sym_loss_ignores_scale(seed in any::<u64>(), pairs in 1usize..6, k in 0.01f64..100.0, mu in 0.05f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = 2 * pairs;
        let m: Vec<Vec<f64>> = (0..rows).map(|_| unit(&mut rng, 5)).collect();
        let t: Vec<Vec<f64>> = (0..rows).map(|_| unit(&mut rng, 5)).collect();
        let y: Vec<f64> = (0..rows).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let stack = |r: &[Vec<f64>]| Tensor::matrix(rows, 5, r.concat()).unwrap();
        let batch = PairBatch { m: stack(&m), t: stack(&t), y: y.clone(), class_labels: vec![0; pairs] };
        let base = sym_loss(&batch, mu).unwrap();
        prop_assert!(base >= 0.0);
        let mut tape = Tape::new();
        let raw = tape.constant(stack(&m));
        let raw = tape.scale(raw, k);
        let mv = tape.l2_normalize(raw).unwrap();
        let tv = tape.constant(stack(&t));
        let l = sym_loss_on_tape(&mut tape, mv, tv, &y, mu).unwrap();
        prop_assert!((tape.scalar(l) - base).abs() < 1e-12);
    }

    #[test]
    fn fusion_ignores_view_order(seed in any::<u64>(), views in 1usize..12, k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<SimilarityScores> = (0..views)
            .map(|_| SimilarityScores { scores: (0..k).map(|_| rng.random_range(-1.0..1.0)).collect() })
            .collect();
        let fused = fuse_views(&s).unwrap();
        let mut rev = s.clone();
        rev.reverse();
        rev.rotate_left(views / 2);
        for (a, b) in fused.s_bar.iter().zip(&fuse_views(&rev).unwrap().s_bar) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let doubled: Vec<SimilarityScores> = s.iter().chain(&s).cloned().collect();
        for (a, b) in fused.s_bar.iter().zip(&fuse_views(&doubled).unwrap().s_bar) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for (i, v) in fused.s_bar.iter().enumerate() {
            let mean = s.iter().map(|x| x.scores[i]).sum::<f64>() / views as f64;
            prop_assert!((v - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn ranking_survives_increasing_maps(perm_seed in any::<u64>(), k in 1usize..10, a in 0.1f64..10.0, c in -5.0f64..5.0) {
        // well-separated distinct scores
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        let mut s: Vec<f64> = (0..k).map(|i| i as f64 * 0.1 - 0.45).collect();
        for i in (1..k).rev() {
            s.swap(i, rng.random_range(0..=i));
        }
        let base = predict(&oazr_core::inference::FusedScores { s_bar: s.clone(), views_used: 1 }, ViewMode::Sv).unwrap();
        for f in [|x: f64, a: f64, c: f64| a * x + c, |x: f64, a: f64, _c: f64| (a * x).exp(), |x: f64, _a: f64, c: f64| x.powi(3) + c] {
            let t: Vec<f64> = s.iter().map(|&x| f(x, a, c)).collect();
            let p = predict(&oazr_core::inference::FusedScores { s_bar: t, views_used: 1 }, ViewMode::Sv).unwrap();
            prop_assert_eq!(&p.topk, &base.topk);
            prop_assert_eq!(p.k_hat, base.k_hat);
        }
    }

    #[test]
    fn scores_are_cosines(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = unit(&mut rng, 7);
        let texts: Vec<Vec<f64>> = (0..k).map(|_| unit(&mut rng, 7)).collect();
        let s = score_against(&m, &texts).unwrap();
        prop_assert_eq!(s.scores.len(), k);
        prop_assert!(s.scores.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn softmax_rows_are_simplex_points(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..32, spread in 0.1f64..200.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::new();
        let x = t.constant(uniform(&mut rng, &[rows, cols], spread));
        let p = t.softmax(x);
        let v = t.value(p);
        for r in 0..rows {
            let row = v.row_slice(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&q| (0.0..=1.0).contains(&q) && q.is_finite()));
        }
    }
}

#[test]
fn bin_encodings_are_pairwise_distinct() {
    let enc: Vec<Vec<f64>> = ORIENTATION_BINS.iter().map(|&b| encode_degrees(b as f64, 192).unwrap().gamma).collect();
    let mut min = f64::INFINITY;
    for i in 0..12 {
        for j in i + 1..12 {
            let d = enc[i].iter().zip(&enc[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            min = min.min(d);
        }
    }
    assert!(min > 1.0, "{min}");
    // -180 and 180 are the same direction
    assert_eq!(encode_degrees(180.0, 192).unwrap(), encode_degrees(-180.0, 192).unwrap());
}

#[test]
fn attention_rows_sum_to_one_in_both_branches() {
    let b = bundle(4);
    for v in views("jumping_jack", 40.0, 1).iter().take(4) {
        let input = b.model.prepare(v).unwrap();
        let gamma = b.model.orientation(v.theta_deg as f64).unwrap();
        let mut tape = Tape::new();
        let vars = b.model.forward(&mut tape, &b.store, &input, &gamma).unwrap();
        assert_eq!(vars.attention_a.len(), 2);
        assert_eq!(vars.attention_b.len(), 2);
        for w in vars.attention_a.iter().chain(&vars.attention_b) {
            let t = tape.value(*w);
            for r in 0..t.rows() {
                assert!((t.row_slice(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn attention_ignores_joint_key_value_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let p = AttentionParams::with_prefix("att", 3);
    for name in [&p.wq, &p.wk, &p.wv, &p.wo] {
        store.insert(name.clone(), uniform(&mut rng, &[6, 6], 0.7)).unwrap();
    }
    let q = uniform(&mut rng, &[2, 6], 1.0);
    let kv = uniform(&mut rng, &[5, 6], 1.0);
    let order = [3usize, 0, 4, 1, 2];
    let permuted: Vec<f64> = order.iter().flat_map(|&r| kv.row_slice(r).to_vec()).collect();
    let permuted = Tensor::matrix(5, 6, permuted).unwrap();
    let run = |kv: &Tensor| {
        let mut t = Tape::new();
        let (q, k) = (t.constant(q.clone()), t.constant(kv.clone()));
        let out = cross_attention(&mut t, &store, &p, q, k, k).unwrap();
        t.value(out.output).data().to_vec()
    };
    for (a, b) in run(&kv).iter().zip(&run(&permuted)) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn hidden_joints_do_not_leak() {
    let b = bundle(5);
    let vs = views("raise_arm", -100.0, 2);
    let hidden: Vec<&ProjectedView> = vs.iter().filter(|v| v.visible_count() < v.frames() * 17).collect();
    assert!(!hidden.is_empty(), "fixture has no occluded joints");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for v in hidden {
        let mut scrambled = v.clone();
        for (pts, vis) in scrambled.joints2d.iter_mut().zip(&v.visibility) {
            for j in 0..17 {
                if vis[j] == 0 {
                    pts[j] = [rng.random_range(-1e4..1e4), rng.random_range(-1e4..1e4)];
                }
            }
        }
        assert_eq!(b.model.run_view(&b.store, v).unwrap(), b.model.run_view(&b.store, &scrambled).unwrap());
    }
}

#[test]
fn theta_changes_the_embedding() {
    let b = bundle(6);
    let v = &views("point", 10.0, 3)[0];
    let embs: Vec<Vec<f64>> = ORIENTATION_BINS
        .iter()
        .map(|&t| {
            let w = ProjectedView { theta_deg: t, ..v.clone() };
            b.model.run_view(&b.store, &w).unwrap().embedding.m_hat
        })
        .collect();
    for i in 0..12 {
        for j in i + 1..12 {
            let d: f64 = embs[i].iter().zip(&embs[j]).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(d > 0.0, "bins {i} and {j} collide");
        }
        let n: f64 = embs[i].iter().map(|x| x * x).sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn multiview_probabilities_form_a_simplex() {
    let b = bundle(7);
    let vs = views("squat", 70.0, 4);
    let all: Vec<&ProjectedView> = vs.iter().collect();
    let p = mv_classify_probs(&all, &b).unwrap();
    assert_eq!(p.len(), 3);
    assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    assert!(p.iter().all(|&q| q > 0.0 && q < 1.0));
    let one = mv_classify_probs(&all[..1], &b).unwrap();
    let thrice = mv_classify_probs(&[all[0], all[0], all[0]], &b).unwrap();
    for (a, c) in one.iter().zip(&thrice) {
        assert!((a - c).abs() <= 1e-12);
    }
}

#[test]
fn lookup_is_total_and_unit() {
    let bank = TextBank::new(TextEmbeddingTable::new(24).unwrap(), DescriptionCatalog::builtin(), 1);
    for action in ["wave", "squat", "never_described"] {
        for bin in ORIENTATION_BINS.iter().map(|&b| Some(b)).chain([None]) {
            let e = bank.embedding(action, bin).unwrap();
            let n = e.t_hat.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_eq!(e.t_hat.len(), 24);
            assert!((n - 1.0).abs() <= 1e-10);
        }
    }
}

#[test]
fn masked_mean_matches_pooled() {
    let b = bundle(8);
    for v in views("march", 0.0, 5).iter().take(3) {
        let out = b.model.run_view(&b.store, v).unwrap();
        let tok = &out.tokens;
        let w: f64 = tok.token_mask.iter().sum();
        for c in 0..tok.tokens.cols() {
            let m: f64 = (0..tok.tokens.rows()).map(|r| tok.tokens.get(r, c) * tok.token_mask[r]).sum::<f64>() / w;
            assert!((m - tok.pooled[c]).abs() <= 1e-10);
        }
    }
}

#[test]
fn wide_shapes_still_check() {
    // one 32x32 matmul chain through the finite-difference checker shipped with the crate
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::new();
    store.insert("a", uniform(&mut rng, &[32, 32], 1.0)).unwrap();
    store.insert("b", uniform(&mut rng, &[32, 32], 1.0)).unwrap();
    let mask = Arc::new((0..32).map(|i| (i % 3) as f64).collect::<Vec<_>>());
    let report = oazr_core::numerics::grad_check(
        |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let y = t.matmul(a, b)?;
            let y = t.softmax(y);
            let y = t.masked_mean(y, mask.clone())?;
            let y = t.square(y);
            Ok(t.sum(y))
        },
        &mut store,
        1e-5,
        200,
        &mut rng,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-5, "{report:?}");
}
