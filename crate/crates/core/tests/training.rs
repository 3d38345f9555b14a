use oazr_core::geometry::{render_dataset, NoiseParams, ProjectedView, RigSpec};
use oazr_core::model::{project_to_joint_space, ModelConfig, HEAD_MOTION, HEAD_TEXT};
use oazr_core::numerics::{ParamStore, Tape, Tensor};
use oazr_core::synthdata::{gen_dataset, ActionSpec, YawDistribution};
use oazr_core::textbank::{build_table, DescriptionCatalog, TextBank};
use oazr_core::training::{format_metrics, sym_loss_on_tape, train, TrainConfig, TrainOutcome};

fn small_model(k: usize) -> ModelConfig {
    ModelConfig {
        levels: 16,
        branch_dim: 16,
        heads: 2,
        encoder_dim: 16,
        joint_dim: 16,
        text_dim: 32,
        orientation_hidden: 16,
        classifier_hidden: 32,
        ..ModelConfig::new(k)
    }
}

/// 2 classes, 25 motions each, one view per motion cycling through the bins.
fn fixture() -> (Vec<ProjectedView>, Vec<String>, TextBank) {
    let classes: Vec<String> = vec!["wave".into(), "squat".into()];
    let specs: Vec<ActionSpec> = classes.iter().map(|c| ActionSpec::standard(c).unwrap()).collect();
    let data = gen_dataset(&specs, 25, YawDistribution::default(), 21).unwrap();
    let rendered = render_dataset(&data.motions, &RigSpec::default(), &NoiseParams::default(), 48, 22).unwrap();
    let views: Vec<ProjectedView> = rendered
        .views
        .into_iter()
        .filter(|v| v.view_index == v.sequence.unwrap() % 12)
        .collect();
    assert_eq!(views.len(), 50);
    let table = build_table(&DescriptionCatalog::builtin(), &classes, 32, 0).unwrap();
    (views, classes, TextBank::new(table, DescriptionCatalog::builtin(), 0))
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        pretrain_epochs: 7,
        finetune_epochs: 3,
        seed,
        record_wall_time: false,
        ..TrainConfig::default()
    }
}

fn run(seed: u64) -> TrainOutcome {
    let (views, classes, bank) = fixture();
    train(&views, &classes, &bank, small_model(2), &config(seed)).unwrap()
}

#[test]
fn loss_falls_early_and_runs_repeat() {
    let a = run(3);
    assert_eq!(a.metrics.len(), 10);
    let totals: Vec<f64> = a.metrics.iter().map(|m| m.losses.total).collect();
    assert!(totals[0] > totals[1] && totals[1] > totals[2], "{totals:?}");
    for m in &a.metrics {
        assert!(m.losses.l_sym >= 0.0 && m.losses.l_ce >= 0.0);
        let lambda = if m.epoch <= 7 { 0.5 } else { 1.0 };
        let mix = lambda * m.losses.l_ce + (1.0 - lambda) * m.losses.l_sym;
        assert!((m.losses.total - mix).abs() <= 1e-12);
    }
    // finetuning runs at lambda 1: the contrastive term is logged but not counted
    for m in &a.metrics[7..] {
        assert_eq!(m.losses.total, m.losses.l_ce);
        assert!(m.losses.l_sym > 0.0);
    }
    let b = run(3);
    assert_eq!(format_metrics(&a.metrics), format_metrics(&b.metrics));
    for ((na, ta), (nb, tb)) in a.bundle.store.iter().zip(b.bundle.store.iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data());
    }
    let c = run(4);
    assert_ne!(format_metrics(&a.metrics), format_metrics(&c.metrics));
}

#[test]
fn single_class_data_is_rejected() {
    let (views, _, bank) = fixture();
    let waves: Vec<ProjectedView> = views.into_iter().filter(|v| v.label == "wave").collect();
    let err = train(&waves, &["wave".to_string()], &bank, small_model(1), &config(0));
    assert!(err.is_err());
}

#[test]
fn satisfied_pairs_leave_the_heads_alone() {
    let dim = 6;
    let eye: Vec<f64> = (0..dim * dim).map(|i| if i % (dim + 1) == 0 { 1.0 } else { 0.0 }).collect();
    let mut store = ParamStore::new();
    store.insert(HEAD_MOTION, Tensor::matrix(dim, dim, eye.clone()).unwrap()).unwrap();
    store.insert(HEAD_TEXT, Tensor::matrix(dim, dim, eye).unwrap()).unwrap();
    // anchors a1, a2; positives equal their anchor, negatives point the other way
    let a1 = [0.3, -1.0, 0.2, 0.5, 0.0, 0.1];
    let a2 = [-0.4, 0.2, 0.9, 0.0, 0.3, -0.6];
    let neg = |a: &[f64; 6]| a.map(|v| -2.0 * v);
    let m: Vec<f64> = [a1, neg(&a1), a2, neg(&a2)].concat();
    let t: Vec<f64> = [a1, a1, a2, a2].concat();
    let mut tape = Tape::new();
    let mv = tape.constant(Tensor::matrix(4, dim, m).unwrap());
    let tv = tape.constant(Tensor::matrix(4, dim, t).unwrap());
    let mj = project_to_joint_space(&mut tape, &store, mv, HEAD_MOTION).unwrap();
    let tj = project_to_joint_space(&mut tape, &store, tv, HEAD_TEXT).unwrap();
    let l = sym_loss_on_tape(&mut tape, mj, tj, &[1.0, 0.0, 1.0, 0.0], 0.5).unwrap();
    assert!(tape.scalar(l).abs() < 1e-24);
    tape.backward(l, &mut store).unwrap();
    for head in [HEAD_MOTION, HEAD_TEXT] {
        assert!(store.grad_of(head).unwrap().data().iter().all(|g| g.abs() < 1e-12));
    }
}
