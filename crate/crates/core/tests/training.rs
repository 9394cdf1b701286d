use canet_core::dataset::{split_leave_one_subject_out, synth_generate, Dataset, DatasetView, Geometry, SynthConfig};
use canet_core::geometry::{pitchyaw_to_vector, GazeVector};
use canet_core::model::{Model, VariantKind};
use canet_core::training::*;
use canet_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_synth(subjects: u16, per: u32) -> SynthConfig {
    SynthConfig {
        subjects,
        samples_per_subject: per,
        geometry: Geometry {
            face: (16, 16, 3),
            eye: (8, 12),
        },
        ..SynthConfig::default()
    }
}

fn tiny_train(variant: VariantKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        width_scale: 1.0 / 16.0,
        ..TrainConfig::toy(variant, 3)
    }
}

fn build(cfg: &TrainConfig, ds: &Dataset) -> (Model, canet_core::ParamStore<f32>) {
    Model::build::<f32>(&cfg.model_config(ds.geometry())).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let ds = synth_generate(&tiny_synth(2, 20)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..tiny_train(VariantKind::Canet, 2)
    };
    let (model, mut store) = build(&cfg, &ds);
    let before: Vec<Vec<u32>> = store.ids().map(|id| store.get(id).data().iter().map(|v| v.to_bits()).collect()).collect();
    train(&model, &mut store, &DatasetView::all(&ds), &cfg).unwrap();
    let after: Vec<Vec<u32>> = store.ids().map(|id| store.get(id).data().iter().map(|v| v.to_bits()).collect()).collect();
    assert_eq!(before, after);
}

#[test]
fn short_run_lowers_the_loss() {
    let ds = synth_generate(&tiny_synth(2, 100)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        ..tiny_train(VariantKind::Canet, 10)
    };
    let (model, mut store) = build(&cfg, &ds);
    let curve = train(&model, &mut store, &DatasetView::all(&ds), &cfg).unwrap();
    assert_eq!(curve.len(), 10);
    assert_eq!(curve.iter().map(|s| s.epoch).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    let (first, last) = (curve[0].mean_loss, curve[9].mean_loss);
    assert!(last < 0.7 * first, "loss {first} -> {last}");
}

#[test]
fn seeded_runs_repeat_exactly() {
    let ds = synth_generate(&tiny_synth(2, 24)).unwrap();
    let cfg = tiny_train(VariantKind::Canet, 2);
    let run = || {
        let (model, mut store) = build(&cfg, &ds);
        let curve = train(&model, &mut store, &DatasetView::all(&ds), &cfg).unwrap();
        let mut bytes = Vec::new();
        model.weight_file(&store).write_to(&mut bytes).unwrap();
        (loss_curve_csv(&curve), bytes)
    };
    assert_eq!(run(), run());
}

#[test]
fn evaluate_is_pure_and_rejects_empty_views() {
    let ds = synth_generate(&tiny_synth(2, 10)).unwrap();
    let cfg = tiny_train(VariantKind::Canet, 1);
    let (model, store) = build(&cfg, &ds);
    let snapshot = store.clone();
    let view = DatasetView::all(&ds);
    let a = evaluate(&model, &store, &view).unwrap();
    let b = evaluate(&model, &store, &view).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.count, 20);
    assert!(store.named_tensors().zip(snapshot.named_tensors()).all(|(x, y)| x.1.data() == y.1.data()));
    let empty = DatasetView::filter_subjects(&ds, |_| false);
    assert!(matches!(evaluate(&model, &store, &empty), Err(Error::EmptyDataset)));
    assert!(matches!(evaluate_constant(&empty, pitchyaw_to_vector(0.0, 0.0).unwrap()), Err(Error::EmptyDataset)));
}

#[test]
fn constant_predictor_at_the_truth_scores_zero() {
    let mut ds = Dataset::new(tiny_synth(1, 1).geometry);
    let g = tiny_synth(1, 1);
    let straight = pitchyaw_to_vector(0.0, 0.0).unwrap();
    for i in 0..4 {
        ds.push(canet_core::dataset::render_sample(&g, 0, i, straight)).unwrap();
    }
    let r = evaluate_constant(&DatasetView::all(&ds), straight).unwrap();
    assert_eq!(r.refined_deg, 0.0);
    assert_eq!(r.basic_deg, 0.0);
}

/// Mean of `arccos(cos p · cos y)` with pitch and yaw uniform in `±range`,
/// the error of always answering straight ahead.
fn constant_error_oracle(range_deg: f64, samples: usize, seed: u64) -> f64 {
    let r = range_deg.to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = (0..samples)
        .map(|_| {
            let (p, y): (f64, f64) = (rng.gen_range(-r..=r), rng.gen_range(-r..=r));
            (p.cos() * y.cos()).clamp(-1.0, 1.0).acos()
        })
        .sum();
    (total / samples as f64).to_degrees()
}

#[test]
fn constant_predictor_matches_monte_carlo_oracle() {
    let oracle = constant_error_oracle(20.0, 400_000, 9);
    // closed-form sanity: the error is bounded by the corner angle
    assert!(oracle > 10.0 && oracle < (20f64.to_radians().cos().powi(2)).acos().to_degrees());
    let ds = synth_generate(&tiny_synth(4, 500)).unwrap();
    let r = evaluate_constant(&DatasetView::all(&ds), pitchyaw_to_vector(0.0, 0.0).unwrap()).unwrap();
    // 2000 draws: the standard error of the mean is about 0.12 degrees
    assert!((r.refined_deg - oracle).abs() < 0.6, "dataset {} vs oracle {oracle}", r.refined_deg);
}

#[test]
fn subject_rows_aggregate_to_the_overall_mean() {
    let ds = synth_generate(&tiny_synth(3, 17)).unwrap();
    let r = evaluate_constant(&DatasetView::all(&ds), GazeVector::new(0.1, -0.05, -1.0)).unwrap();
    assert_eq!(r.subjects.len(), 3);
    let n: usize = r.subjects.iter().map(|s| s.count).sum();
    assert_eq!(n, r.count);
    let weighted: f64 = r.subjects.iter().map(|s| s.refined_deg * s.count as f64).sum::<f64>() / n as f64;
    assert!((weighted - r.refined_deg).abs() < 1e-9);
    let csv = r.to_csv();
    assert!(csv.starts_with("subject,count,basic_deg,refined_deg,w_l_mean,w_l_std\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with("all,51,"));
}

#[test]
fn epoch_batches_cover_and_fold_singletons() {
    let b = epoch_batches(33, 16, 1, 0);
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![16, 17]);
    let mut all: Vec<usize> = b.concat();
    all.sort_unstable();
    assert_eq!(all, (0..33).collect::<Vec<_>>());
    assert_ne!(epoch_batches(33, 16, 1, 0), epoch_batches(33, 16, 1, 1));
    assert_eq!(epoch_batches(33, 16, 1, 2), epoch_batches(33, 16, 1, 2));
    assert_eq!(epoch_batches(1, 16, 0, 0), vec![vec![0]]);
}

#[test]
fn non_finite_weights_abort_with_a_diagnostic() {
    let ds = synth_generate(&tiny_synth(1, 8)).unwrap();
    let cfg = tiny_train(VariantKind::Canet, 1);
    let (model, mut store) = build(&cfg, &ds);
    let id = store.find("face.fc.w").or_else(|| store.ids().next()).unwrap();
    store.get_mut(id).data_mut()[0] = f32::NAN;
    match train(&model, &mut store, &DatasetView::all(&ds), &cfg) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("epoch 1"), "{msg}"),
        other => panic!("expected a numeric abort, got {other:?}"),
    }
}

#[test]
fn mismatched_geometry_is_rejected() {
    let ds = synth_generate(&tiny_synth(1, 4)).unwrap();
    let cfg = tiny_train(VariantKind::Canet, 1);
    let other = Geometry {
        face: (20, 20, 3),
        eye: (8, 12),
    };
    let (model, mut store) = Model::build::<f32>(&cfg.model_config(other)).unwrap();
    let view = DatasetView::all(&ds);
    assert!(matches!(train(&model, &mut store, &view, &cfg), Err(Error::GeometryMismatch { .. })));
    assert!(matches!(evaluate(&model, &store, &view), Err(Error::GeometryMismatch { .. })));
}

#[test]
fn invalid_training_configs_are_rejected() {
    let ds = synth_generate(&tiny_synth(1, 4)).unwrap();
    let base = tiny_train(VariantKind::Canet, 1);
    let (model, mut store) = build(&base, &ds);
    let view = DatasetView::all(&ds);
    for cfg in [
        TrainConfig { epochs: 0, ..base.clone() },
        TrainConfig { batch_size: 1, ..base.clone() },
        TrainConfig { learning_rate: -1.0, ..base.clone() },
        TrainConfig { learning_rate: f64::NAN, ..base.clone() },
    ] {
        assert!(matches!(train(&model, &mut store, &view, &cfg), Err(Error::Config(_))));
    }
    let json = r#"{"epochs": 3, "learnig_rate": 0.1}"#;
    assert!(serde_json::from_str::<TrainConfig>(json).is_err());
}

#[test]
fn ablation_suite_reports_every_variant() {
    let ds = synth_generate(&tiny_synth(2, 12)).unwrap();
    let cfg = AblationConfig {
        train: tiny_train(VariantKind::Canet, 1),
        held_out: 1,
        variants: VariantKind::ALL.to_vec(),
    };
    let mut seen = Vec::new();
    let table = run_ablation_suite(&ds, &cfg, |v, _| seen.push(v)).unwrap();
    assert_eq!(table.rows.len(), 10);
    assert_eq!(seen, VariantKind::ALL.to_vec());
    for (row, kind) in table.rows.iter().zip(VariantKind::ALL) {
        assert_eq!(row.variant, kind);
        assert_eq!(row.report.count, 12);
        assert!(row.final_loss.is_finite());
    }
    let fixed = table.get(VariantKind::AttentionAblation).unwrap().report.w_l.unwrap();
    assert_eq!((fixed.mean, fixed.std), (0.5, 0.0));
    let learned = table.get(VariantKind::Canet).unwrap().report.w_l.unwrap();
    assert!(learned.std > 0.0);
    for single in VariantKind::ALL.iter().filter(|k| k.is_single_stage()) {
        let r = &table.get(*single).unwrap().report;
        assert_eq!(r.basic_deg, r.refined_deg);
    }
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.lines().nth(1).unwrap().starts_with("canet,"));
    let (_, test) = split_leave_one_subject_out(&ds, 1).unwrap();
    assert_eq!(test.subjects(), vec![1]);
}
