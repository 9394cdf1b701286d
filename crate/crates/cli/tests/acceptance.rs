//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Criteria run one after another so the
//! timed ones are not slowed by each other.
//!
//! The learning criteria train real models and take several minutes on a
//! single core.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use canet_core::dataset::{split_leave_one_subject_out, synth_generate, Dataset, DatasetView, SynthConfig};
use canet_core::geometry::*;
use canet_core::layers::{BackboneSpec, Mode};
use canet_core::model::*;
use canet_core::training::*;
use canet_core::weights::WeightFile;
use canet_core::{ParamStore, Tape, Tensor};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn canet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_canet")).args(args).output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn sha256(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn values(tape: &Tape<f64>, v: canet_core::Var) -> Vec<f64> {
    tape.value(v).data().to_vec()
}

/// The mean of the "refined" column in the last row of a report CSV.
fn report_all_refined(path: &Path) -> f64 {
    let csv = fs::read_to_string(path).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("all,"));
    last.split(',').nth(3).unwrap().parse().unwrap()
}

/// Mean angle between straight ahead and a gaze drawn uniformly from the
/// `±range` pitch/yaw box.
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

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let o = canet(&["gradcheck"]);
    let elapsed = start.elapsed();
    let out = text(&o.stdout);
    ensure!(o.status.success(), "gradcheck exited {:?}\n{out}{}", o.status.code(), text(&o.stderr));
    ensure!(elapsed < Duration::from_secs(60), "gradcheck took {elapsed:?}");
    let ops = out.lines().filter(|l| l.contains("worst rel err")).count();
    ensure!(ops >= 23, "only {ops} checks reported");
    let model = out.lines().find(|l| l.starts_with("model")).unwrap_or_default();
    Ok(format!("{ops} checks ok in {:.1}s; {model}", elapsed.as_secs_f64()))
}

fn algebra() -> Outcome {
    // (a) attention weights and the convex combination
    let mut worst_sum: f64 = 0.0;
    let mut worst_fe: f64 = 0.0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let att = AttentionParams::new(&mut store, "attention", ScoreMode::Full, 6, 6, 6, &mut rng);
        let mut tape = Tape::new();
        let q = tape.constant(uniform(&mut rng, vec![4, 6]));
        let (l, r) = (uniform(&mut rng, vec![4, 6]), uniform(&mut rng, vec![4, 6]));
        let (lv, rv) = (tape.constant(l.clone()), tape.constant(r.clone()));
        let out = attention_fuse(&mut tape, &store, &att, q, lv, rv).unwrap();
        let (wl, wr, fe) = (values(&tape, out.w_l), values(&tape, out.w_r), values(&tape, out.f_e));
        for i in 0..4 {
            worst_sum = worst_sum.max((wl[i] + wr[i] - 1.0).abs());
            for k in 0..6 {
                let j = i * 6 + k;
                worst_fe = worst_fe.max((fe[j] - (wl[i] * l.data()[j] + wr[i] * r.data()[j])).abs());
            }
        }
    }
    ensure!(worst_sum <= 1e-6 && worst_fe <= 1e-6, "attention: |w_l+w_r-1| {worst_sum:e}, f_e {worst_fe:e}");

    // (b) gate identities with the update gate forced shut and open
    let gate = |z_bias: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let g = GateParams::new(&mut store, "gate", 5, 5, GateActivation::Relu, 0.0, &mut rng);
        store.get_mut(g.wz.weight).data_mut().fill(0.0);
        store.get_mut(g.wz.bias).data_mut().fill(z_bias);
        let mut tape = Tape::new();
        let h = uniform(&mut rng, vec![3, 5]);
        let hv = tape.constant(h.clone());
        let f = tape.constant(uniform(&mut rng, vec![3, 5]));
        let s = gate_step(&mut tape, &store, &g, hv, f).unwrap();
        (values(&tape, s.h), h.data().to_vec(), values(&tape, s.h_tilde))
    };
    let (h_shut, h, _) = gate(-60.0);
    let shut = h_shut.iter().zip(&h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (h_open, _, cand) = gate(60.0);
    let open = h_open.iter().zip(&cand).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(shut <= 1e-6 && open <= 1e-6, "gate: z=0 gap {shut:e}, z=1 gap {open:e}");

    // (c) exact composition of the final gaze
    let mut composed = 0usize;
    for kind in VariantKind::ALL {
        let cfg = canet_core::checks::model_check_config(kind, 1);
        let (model, store) = Model::build::<f64>(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let face = tape.constant(uniform(&mut rng, vec![3, 3, 8, 8]));
        let left = tape.constant(uniform(&mut rng, vec![3, 1, 6, 10]));
        let right = tape.constant(uniform(&mut rng, vec![3, 1, 6, 10]));
        let out = model.forward(&mut tape, &store, face, left, right, Mode::Train).unwrap();
        let (g, gb, gr) = (values(&tape, out.g), values(&tape, out.g_b), values(&tape, out.g_r));
        ensure!(g.iter().zip(gb.iter().zip(&gr)).all(|(g, (b, r))| *g == b + r), "{kind}: g != g_b + g_r");
        composed += g.len();
    }

    // (d) loss reference values
    let loss = |gb: [f64; 3], g: [f64; 3], t: [f64; 3], w: LossWeights| {
        let mut tape = Tape::<f64>::new();
        let v = |tape: &mut Tape<f64>, x: [f64; 3]| tape.constant(Tensor::from_f64(vec![1, 3], &x).unwrap());
        let (a, b, c) = (v(&mut tape, gb), v(&mut tape, g), v(&mut tape, t));
        let l = canet_loss(&mut tape, a, b, c, w).unwrap();
        tape.value(l).item()
    };
    let w = LossWeights { alpha: 1.0, beta: 2.0 };
    let t = [0.3, -0.2, -0.9];
    let zero = loss(t, t, t, w);
    let ortho = loss([0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0], w);
    ensure!(zero.abs() <= 1e-6, "loss at the target {zero:e}");
    ensure!((ortho - std::f64::consts::PI).abs() <= 1e-6, "orthogonal loss {ortho}");
    Ok(format!(
        "|w_l+w_r-1| {worst_sum:.1e}, f_e gap {worst_fe:.1e}, gate gaps {shut:.1e}/{open:.1e}, {composed} exact sums, loss {zero} and {ortho:.12}"
    ))
}

fn architecture() -> Outcome {
    let cfg = ModelConfig::new(VariantKind::Canet, 1.0, (224, 224, 3), (36, 60), 0);
    let (model, store) = Model::build::<f32>(&cfg).unwrap();
    let expect_face = [64, 64, 128, 128, 256, 256, 256, 256, 256, 256, 512, 512, 1024];
    let expect_eye = [64, 64, 128, 128, 128, 256, 256, 256, 512, 1024];
    let face = model.face.as_ref().ok_or("no face backbone")?;
    let channels = |b: &canet_core::layers::Backbone| b.blocks.iter().map(|k| k.conv.out_channels).collect::<Vec<_>>();
    let pools = |b: &canet_core::layers::Backbone| {
        b.blocks.iter().enumerate().filter(|(_, k)| k.pool_after).map(|(i, _)| i + 1).collect::<Vec<_>>()
    };
    ensure!(face.blocks.len() == 13, "face has {} blocks", face.blocks.len());
    ensure!(channels(face) == expect_face, "face channels {:?}", channels(face));
    ensure!(pools(face) == [2, 4, 7, 10], "face pools {:?}", pools(face));
    ensure!((face.gap_dim(), face.output_dim()) == (1024, 256), "face head {} -> {}", face.gap_dim(), face.output_dim());
    ensure!(face.spec.input.height == 224 && face.spec.input.width == 224 && face.spec.input.channels == 3, "face input");
    ensure!(face.blocks[0].conv.in_channels == 3, "face first conv");
    let shape = |name: &str| store.get(store.find(name).unwrap()).shape().to_vec();
    ensure!(shape("face.block1.conv.weight")[2..] == [3, 3], "face kernels {:?}", shape("face.block1.conv.weight"));
    for (name, eye) in [("left", &model.left), ("right", &model.right)] {
        let eye = eye.as_ref().ok_or(format!("no {name} eye backbone"))?;
        ensure!(eye.blocks.len() == 10, "{name} eye has {} blocks", eye.blocks.len());
        ensure!(channels(eye) == expect_eye, "{name} eye channels {:?}", channels(eye));
        ensure!(pools(eye) == [2, 5, 8], "{name} eye pools {:?}", pools(eye));
        ensure!((eye.gap_dim(), eye.output_dim()) == (1024, 256), "{name} eye head");
        ensure!(eye.spec.input.height == 36 && eye.spec.input.width == 60 && eye.spec.input.channels == 1, "{name} eye input");
    }
    ensure!(BackboneSpec::face_full().final_spatial() == (14, 14), "face final map");
    Ok(format!(
        "face 13 blocks {:?} pools 2/4/7/10 -> 1024 -> 256; eyes 10 blocks -> 1024 -> 256; {} parameters",
        expect_face,
        store.num_scalars()
    ))
}

fn toy_learning(dir: &Path) -> Outcome {
    let data = dir.join("toy.gzds");
    let o = canet(&["synth", "--out", data.to_str().unwrap()]);
    ensure!(o.status.success(), "synth failed: {}", text(&o.stderr));
    let out = dir.join("toy");
    let start = Instant::now();
    let args = ["--data", data.to_str().unwrap(), "--hold-out-subject", "0", "--out", out.to_str().unwrap()];
    let o = canet(&[&["train", "--epochs", "30"][..], &args].concat());
    let train_time = start.elapsed();
    ensure!(o.status.success(), "train failed: {}", text(&o.stderr));
    ensure!(train_time < Duration::from_secs(600), "training took {train_time:?}");
    let ckpt = out.join("checkpoint.canw");
    let o = canet(&[&["eval", "--checkpoint", ckpt.to_str().unwrap()][..], &args].concat());
    ensure!(o.status.success(), "eval failed: {}", text(&o.stderr));
    let model_err = report_all_refined(&out.join("report.csv"));
    let o = canet(&[&["eval", "--constant"][..], &args].concat());
    ensure!(o.status.success(), "constant eval failed: {}", text(&o.stderr));
    let constant_err = report_all_refined(&out.join("report.csv"));
    let cfg = SynthConfig::default();
    let oracle = constant_error_oracle(cfg.pitch_range_deg, 1_000_000, 17);
    ensure!((constant_err - oracle).abs() < 1.0, "constant eval {constant_err:.3} far from oracle {oracle:.3}");
    ensure!(model_err < 5.0, "held-out error {model_err:.3} deg");
    ensure!(model_err < oracle, "held-out error {model_err:.3} not below constant {oracle:.3}");
    Ok(format!(
        "held-out {model_err:.2} deg vs constant {oracle:.2} deg (oracle), {constant_err:.2} deg (eval); trained in {:.0}s",
        train_time.as_secs_f64()
    ))
}

/// Per-seed budget of the trend comparison: toy width and data, fewer
/// epochs than the single toy run so ten trainings fit on one core.
const TREND_EPOCHS: usize = 6;
const TREND_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn coarse_to_fine_trend(ds: &Dataset) -> Outcome {
    let (train_view, test_view) = split_leave_one_subject_out(ds, 0).unwrap();
    let mut refined_wins = 0;
    let mut canet_wins = 0;
    let mut rows = Vec::new();
    for seed in TREND_SEEDS {
        let run = |kind| {
            let cfg = TrainConfig { epochs: TREND_EPOCHS, ..TrainConfig::toy(kind, seed) };
            let (model, mut store) = Model::build::<f32>(&cfg.model_config(ds.geometry())).unwrap();
            train(&model, &mut store, &train_view, &cfg).unwrap();
            evaluate(&model, &store, &test_view).unwrap()
        };
        let c = run(VariantKind::Canet);
        let j = run(VariantKind::JointNet);
        refined_wins += usize::from(c.refined_deg <= c.basic_deg);
        canet_wins += usize::from(c.refined_deg < j.refined_deg);
        rows.push(format!("s{seed}: {:.2}->{:.2} vs {:.2}", c.basic_deg, c.refined_deg, j.refined_deg));
    }
    let detail = format!(
        "refined<=basic {refined_wins}/5, canet<joint_net {canet_wins}/5 ({} epochs) [{}]",
        TREND_EPOCHS,
        rows.join("; ")
    );
    ensure!(refined_wins >= 3 && canet_wins >= 3, "{detail}");
    Ok(detail)
}

fn ablation_structure(ds: &Dataset) -> Outcome {
    let cfg = AblationConfig {
        train: TrainConfig { epochs: 1, ..TrainConfig::toy(VariantKind::Canet, 0) },
        held_out: 0,
        variants: VariantKind::ALL.to_vec(),
    };
    let small = DatasetView::filter_subjects(ds, |s| s < 3);
    let mut subset = Dataset::new(ds.geometry());
    for r in small.iter().filter(|r| r.sample_id % 10 == 0) {
        subset.push(r.clone()).unwrap();
    }
    let table = run_ablation_suite(&subset, &cfg, |_, _| {}).unwrap();
    let kinds: Vec<VariantKind> = table.rows.iter().map(|r| r.variant).collect();
    ensure!(kinds == VariantKind::ALL, "variants {kinds:?}");
    let params = |k| table.get(k).unwrap().params;
    use VariantKind::*;
    ensure!(params(OneGram) == params(Canet), "one_gram changes only the wiring");
    ensure!(params(AttentionAblation) < params(Canet), "attention_ablation drops the scorer");
    ensure!(params(FaceNet) < params(JointNet) && params(EyeNet) < params(JointNet), "single-input baselines");
    ensure!(params(JointNet) < params(Canet), "joint_net has no gated head");
    let distinct: std::collections::BTreeSet<usize> = table.rows.iter().map(|r| r.params).collect();
    let fixed = table.get(AttentionAblation).unwrap().report.w_l.ok_or("no attention stats")?;
    ensure!(fixed.mean == 0.5 && fixed.std == 0.0, "attention_ablation w_l {fixed:?}");
    for k in [FaceNet, EyeNet, JointNet] {
        let r = &table.get(k).unwrap().report;
        ensure!(r.w_l.is_none() && r.basic_deg == r.refined_deg, "{k} should be single-stage");
    }

    // one_gram: the residual gate's previous state is zero whatever the face path does
    let mcfg = canet_core::checks::model_check_config(OneGram, 5);
    let (model, store) = Model::build::<f64>(&mcfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tape = Tape::new();
    let face = tape.constant(uniform(&mut rng, vec![4, 3, 8, 8]));
    let left = tape.constant(uniform(&mut rng, vec![4, 1, 6, 10]));
    let right = tape.constant(uniform(&mut rng, vec![4, 1, 6, 10]));
    let out = model.forward(&mut tape, &store, face, left, right, Mode::Eval).unwrap();
    let prev = values(&tape, out.h2.ok_or("one_gram has no residual gate")?.prev);
    ensure!(prev.iter().all(|&x| x == 0.0), "one_gram previous state {prev:?}");
    let h1 = values(&tape, out.h1.unwrap().h);
    ensure!(h1.iter().any(|&x| x != 0.0), "first state is trivially zero");
    Ok(format!("10 variants, {} distinct parameter counts, attention_ablation w_l = 0.5 +- 0, one_gram prev = 0", distinct.len()))
}

fn geometry_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..500 {
        let a = GazeVector::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let b = GazeVector::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let s = rng.gen_range(0.01..100.0);
        let d = angular_distance(a, b).unwrap();
        ensure!(d == angular_distance(b, a).unwrap(), "asymmetric");
        ensure!((d - angular_distance(a.scaled(s), b).unwrap()).abs() < 1e-9, "scale dependent");
    }
    let a = GazeVector::new(0.1, 0.1, 0.1);
    let same = angular_distance(a, a.scaled(3.0)).unwrap();
    let anti = angular_distance(a, a.scaled(-2.0)).unwrap();
    ensure!(same.is_finite() && anti.is_finite() && same <= (1.0 - ANGLE_EPS).acos() + 1e-15, "clamp");
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (p, y) = (rng.gen_range(-1.4..1.4), rng.gen_range(-3.0..3.0));
        let (p2, y2) = vector_to_pitchyaw(pitchyaw_to_vector(p, y).unwrap()).unwrap();
        worst = worst.max((p - p2).abs()).max((y - y2).abs());
    }
    ensure!(worst < 1e-6, "pitch/yaw round trip {worst:e}");

    // roll cancellation on projected eye-corner fixtures
    let cam = CameraIntrinsics { fx: 900.0, fy: 900.0, cx: 160.0, cy: 120.0 };
    let corners = [[-45.0, 0.0, 0.0], [-15.0, 0.0, 0.0], [15.0, 0.0, 0.0], [45.0, 0.0, 0.0]];
    let cfg = NormalizationConfig { face_size: (96, 96), ..NormalizationConfig::default() };
    let mut worst_roll: f64 = 0.0;
    for (pitch, yaw, roll_deg, t) in [
        (0.1, -0.2, 10.0, Vector3::new(40.0, -25.0, 520.0)),
        (-0.15, 0.25, -7.0, Vector3::new(-60.0, 30.0, 480.0)),
        (0.0, 0.3, 15.0, Vector3::new(0.0, 0.0, 600.0)),
    ] {
        let head = HeadPose::from_euler(pitch, yaw, f64::to_radians(roll_deg), t).unwrap();
        let p: Vec<[f64; 2]> = corners
            .iter()
            .map(|c| cam.project(head.rotation * Vector3::new(c[0], c[1], c[2]) + head.translation))
            .collect();
        let marks = EyeLandmarks { left_outer: p[0], left_inner: p[1], right_inner: p[2], right_outer: p[3] };
        let img = Image::filled(240, 320, 1, 100);
        let r = normalize_sample(&img, &marks, &head, &cam, None, &cfg).unwrap();
        worst_roll = worst_roll.max(r.landmarks.eye_line_angle().abs());
    }
    ensure!(worst_roll < 1e-3, "residual roll {worst_roll:e} rad");

    let mut px = vec![0u8; 50];
    px.extend([255u8; 50]);
    let eq = equalize_grayscale(&Image::new(10, 10, 1, px).unwrap());
    ensure!(eq.data[..50].iter().all(|&v| v == 127) && eq.data[50..].iter().all(|&v| v == 255), "two-level case");
    Ok(format!("round trip {worst:.1e} rad, residual roll {worst_roll:.1e} rad, two-level -> 127/255"))
}

fn determinism(dir: &Path) -> Outcome {
    let cfg_path = dir.join("det.json");
    fs::write(
        &cfg_path,
        r#"{"synth": {"subjects": 2, "samples_per_subject": 20, "seed": 4, "geometry": {"face": [16, 16, 3], "eye": [8, 12]}},
            "train": {"epochs": 2, "batch_size": 8, "width_scale": 0.0625, "seed": 4}}"#,
    )
    .unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        let data = dir.join(format!("{run}.gzds"));
        let out = dir.join(run);
        ensure!(canet(&["synth", "--config", cfg, "--out", data.to_str().unwrap()]).status.success(), "synth");
        let o = canet(&["train", "--config", cfg, "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        ensure!(o.status.success(), "train: {}", text(&o.stderr));
        digests.push([sha256(&data), sha256(&out.join("loss.csv")), sha256(&out.join("checkpoint.canw"))]);
    }
    ensure!(digests[0] == digests[1], "artifacts differ between runs");

    let data = dir.join("a.gzds");
    let bytes = fs::read(&data).unwrap();
    let ds = Dataset::from_bytes(&bytes).map_err(|e| e.to_string())?;
    ensure!(ds.to_bytes() == bytes, "dataset round trip changed bytes");
    let ckpt = fs::read(dir.join("a").join("checkpoint.canw")).unwrap();
    let wf = WeightFile::<f32>::read_from(&mut &ckpt[..]).map_err(|e| e.to_string())?;
    let mut again = Vec::new();
    wf.write_to(&mut again).unwrap();
    ensure!(again == ckpt, "weight file round trip changed bytes");
    let (_, store) = Model::load_checkpoint::<f32>(dir.join("a").join("checkpoint.canw")).map_err(|e| e.to_string())?;
    ensure!(
        store.named_tensors().zip(&wf.tensors).all(|((n, t), (m, u))| n == m && t.data() == u.data()),
        "loaded tensors differ"
    );
    Ok(format!("dataset, loss curve and checkpoint identical across runs; {} + {} byte round trips", bytes.len(), ckpt.len()))
}

#[test]
fn acceptance() {
    let dir = TempDir::new().unwrap();
    let toy = synth_generate(&SynthConfig::default()).unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 gradient fidelity", Box::new(gradient_fidelity)),
        ("2 algebra suite", Box::new(algebra)),
        ("3 architecture conformance", Box::new(architecture)),
        ("4 toy learning", Box::new(|| toy_learning(dir.path()))),
        ("5 coarse-to-fine trend", Box::new(|| coarse_to_fine_trend(&toy))),
        ("6 ablation harness", Box::new(|| ablation_structure(&toy))),
        ("7 geometry suite", Box::new(geometry_suite)),
        ("8 determinism and formats", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = Vec::new();
    for (name, check) in &criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                println!("FAIL criterion {name} ({secs:.1}s): {detail}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
