//! Training loop, evaluation metrics and the variant comparison harness.

mod optim;
mod report;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_leave_one_subject_out, Dataset, DatasetView, Geometry, SampleRecord};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{canet_loss, GateActivation, LossWeights, Model, ModelConfig, VariantKind};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tape, Tensor};

pub use optim::{Optimizer, OptimizerConfig};
pub use report::{
    evaluate, evaluate_constant, loss_curve_csv, AblationRow, AblationTable, AttentionStats, EvalReport, SubjectReport,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: VariantKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerConfig,
    pub loss: LossWeights,
    pub width_scale: f64,
    pub seed: u64,
    pub gate_activation: GateActivation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: VariantKind::Canet,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerConfig::default(),
            loss: LossWeights::default(),
            width_scale: 1.0,
            seed: 0,
            gate_activation: GateActivation::Relu,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: width 1/8 and a 30-epoch budget.
    pub fn toy(variant: VariantKind, seed: u64) -> Self {
        TrainConfig {
            variant,
            epochs: 30,
            width_scale: 0.125,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for batch statistics".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(self.width_scale > 0.0 && self.width_scale <= 1.0) {
            return Err(Error::Config(format!("width_scale {} outside (0, 1]", self.width_scale)));
        }
        self.optimizer.validate()?;
        self.loss.validate()
    }

    pub fn model_config(&self, geometry: Geometry) -> ModelConfig {
        ModelConfig {
            gate_activation: self.gate_activation,
            ..ModelConfig::new(self.variant, self.width_scale, geometry.face, geometry.eye, self.seed)
        }
    }
}

/// Network inputs for a list of records: `N×C×H×W` faces, `N×1×h×w` eyes
/// with pixels mapped to `[-1, 1]`, and `N×3` gaze labels.
pub struct Batch<T: Scalar> {
    pub face: Tensor<T>,
    pub left: Tensor<T>,
    pub right: Tensor<T>,
    pub gaze: Tensor<T>,
}

fn pixel<T: Scalar>(p: u8) -> T {
    T::of(p as f64 / 127.5 - 1.0)
}

pub fn make_batch<T: Scalar>(records: &[&SampleRecord], geometry: Geometry) -> Batch<T> {
    let n = records.len();
    let (h, w, c) = geometry.face;
    let (eh, ew) = geometry.eye;
    let mut face = Vec::with_capacity(n * c * h * w);
    for r in records {
        for ch in 0..c {
            face.extend(r.face.iter().skip(ch).step_by(c).map(|&p| pixel::<T>(p)));
        }
    }
    let eyes = |pick: fn(&SampleRecord) -> &[u8]| -> Vec<T> {
        records.iter().flat_map(|r| pick(r).iter().map(|&p| pixel::<T>(p))).collect()
    };
    let gaze = records.iter().flat_map(|r| r.gaze.map(|v| T::of(v as f64))).collect();
    Batch {
        face: Tensor::new(vec![n, c, h, w], face).expect("face geometry"),
        left: Tensor::new(vec![n, 1, eh, ew], eyes(|r| &r.left_eye)).expect("eye geometry"),
        right: Tensor::new(vec![n, 1, eh, ew], eyes(|r| &r.right_eye)).expect("eye geometry"),
        gaze: Tensor::new(vec![n, 3], gaze).expect("gaze shape"),
    }
}

/// Shuffled batches for one epoch. The permutation comes from the
/// `epoch`-th stream of the seed, and a trailing batch of one sample is
/// folded into its predecessor so batch statistics stay defined.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub mean_loss: f64,
}

pub(crate) fn check_geometry(model: &Model, geometry: Geometry) -> Result<()> {
    let c = &model.config;
    if c.face != geometry.face || c.eye != geometry.eye {
        return Err(Error::GeometryMismatch {
            expected: format!("face {:?}, eyes {:?} (model)", c.face, c.eye),
            actual: format!("face {:?}, eyes {:?} (dataset)", geometry.face, geometry.eye),
        });
    }
    Ok(())
}

pub fn train(model: &Model, store: &mut ParamStore<f32>, view: &DatasetView, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    train_with(model, store, view, cfg, |_, _| {})
}

/// Runs `cfg.epochs` epochs of minibatch descent on the two-term loss and
/// returns the per-epoch mean loss. `on_epoch` sees each epoch's stats and
/// the parameters as it ends.
pub fn train_with(
    model: &Model,
    store: &mut ParamStore<f32>,
    view: &DatasetView,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &ParamStore<f32>),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if view.len() < 2 {
        return Err(Error::InvalidArgument("training needs at least two samples".into()));
    }
    let geometry = view.dataset().geometry();
    check_geometry(model, geometry)?;
    let mut optimizer = cfg.optimizer.build(cfg.learning_rate);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for (b, idx) in epoch_batches(view.len(), cfg.batch_size, cfg.seed, epoch).iter().enumerate() {
            let records: Vec<&SampleRecord> = idx.iter().map(|&i| view.get(i)).collect();
            let batch = make_batch::<f32>(&records, geometry);
            let mut tape = Tape::new();
            let face = tape.constant(batch.face);
            let left = tape.constant(batch.left);
            let right = tape.constant(batch.right);
            let target = tape.constant(batch.gaze);
            let out = model.forward(&mut tape, store, face, left, right, Mode::Train)?;
            let loss = canet_loss(&mut tape, out.g_b, out.g, target, cfg.loss)?;
            let value = tape.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {} batch {b}; first non-finite tensor: {}",
                    epoch + 1,
                    tape.first_non_finite().unwrap_or_else(|| "loss".into())
                )));
            }
            tape.backward(loss)?;
            store.zero_grad();
            store.accumulate_grads(&tape);
            store.commit_bn_updates(tape.take_bn_updates());
            optimizer.step(store);
            if let Err(name) = store.all_finite() {
                return Err(Error::NonFinite(format!("parameter {name} after epoch {} batch {b}", epoch + 1)));
            }
            total += value * idx.len() as f64;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: total / view.len() as f64,
        };
        on_epoch(&stats, store);
        curve.push(stats);
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub held_out: u16,
    pub variants: Vec<VariantKind>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            train: TrainConfig::toy(VariantKind::Canet, 0),
            held_out: 0,
            variants: VariantKind::ALL.to_vec(),
        }
    }
}

/// Trains every requested variant with the same seed and budget on all
/// subjects but `held_out`, and evaluates each on the held-out subject.
pub fn run_ablation_suite(
    dataset: &Dataset,
    cfg: &AblationConfig,
    mut progress: impl FnMut(VariantKind, &EpochStats),
) -> Result<AblationTable> {
    let (train_view, test_view) = split_leave_one_subject_out(dataset, cfg.held_out)?;
    let mut rows = Vec::with_capacity(cfg.variants.len());
    for &variant in &cfg.variants {
        let tc = TrainConfig { variant, ..cfg.train.clone() };
        let (model, mut store) = Model::build::<f32>(&tc.model_config(dataset.geometry()))?;
        let curve = train_with(&model, &mut store, &train_view, &tc, |s, _| progress(variant, s))?;
        let report = evaluate(&model, &store, &test_view)?;
        rows.push(AblationRow {
            variant,
            params: store.num_scalars(),
            final_loss: curve.last().map_or(f64::NAN, |s| s.mean_loss),
            report,
        });
    }
    Ok(AblationTable { rows })
}
