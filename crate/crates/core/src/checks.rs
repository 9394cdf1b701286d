//! Finite-difference suites over every differentiable op and over a whole
//! toy model, run in 64-bit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::layers::Mode;
use crate::model::{canet_loss, LossWeights, Model, ModelConfig, VariantKind};
use crate::params::ParamStore;
use crate::tensor::gradcheck::{finite_difference_check, CheckOptions, CheckReport};
use crate::tensor::{Tape, Tensor, Var};

type Build = Box<dyn FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>>;

/// One randomized instance of an op check: parameters plus the scalar
/// function of them.
struct Case {
    store: ParamStore<f64>,
    build: Build,
}

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub trials: usize,
    pub tol: f64,
    pub max_rel_error: f64,
    /// Worst parameter tensor, for diagnostics.
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub trials: usize,
    pub op_tol: f64,
    pub op_step: f64,
    pub model_tol: f64,
    pub model_step: f64,
    /// Step of the fourth-order stencil used for the attention/gate graph.
    pub head_step: f64,
    /// Coordinates probed per parameter tensor in the model check.
    pub model_coords: usize,
    pub model_batch: usize,
    pub seed: u64,
    pub fault: Option<String>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            trials: 100,
            op_tol: 1e-5,
            op_step: 1e-5,
            model_tol: 1e-4,
            model_step: 1e-6,
            head_step: 1e-3,
            model_coords: 4,
            model_batch: 8,
            seed: 0,
            fault: None,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Entries in `±[0.5, 1.5]`, so no output is weighted near zero.
fn projection(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.5..1.5);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Normal samples pushed at least `gap` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>, gap: f64) -> Tensor<f64> {
    let mut t = normal(rng, shape);
    for v in t.data_mut() {
        *v += gap.copysign(*v);
    }
    t
}

/// Distinct values spaced at least `0.05` apart, in random order.
fn distinct(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.05).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape, vals).expect("shape matches")
}

/// `sum(out ⊙ R)` for a fixed random `R`.
fn projected(tape: &mut Tape<f64>, out: Var, r: &Tensor<f64>) -> Result<Var> {
    let c = tape.constant(r.clone());
    let p = tape.mul(out, c)?;
    tape.sum(p)
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

/// Draws the output shape by running the op once on the initial values.
fn case_with<F>(rng: &mut ChaCha8Rng, store: ParamStore<f64>, mut f: F) -> Case
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var> + 'static,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, &store).expect("op case is well formed");
    let r = projection(rng, tape.shape(out));
    Case {
        store,
        build: Box::new(move |tape, s| {
            let out = f(tape, s)?;
            projected(tape, out, &r)
        }),
    }
}

fn unary_case(rng: &mut ChaCha8Rng, op: &'static str) -> Case {
    let shape = vec![dims(rng, 1, 4), dims(rng, 1, 5)];
    let mut store = ParamStore::new();
    let x = if op == "relu" {
        away_from_zero(rng, shape, 0.05)
    } else {
        normal(rng, shape)
    };
    let a = store.add_param("x", x);
    let scale = rng.gen_range(-2.0..2.0);
    case_with(rng, store, move |tape, s| {
        let x = s.var(tape, a);
        match op {
            "relu" => tape.relu(x),
            "tanh" => tape.tanh(x),
            "sigmoid" => tape.sigmoid(x),
            "scale" => tape.scale(x, scale),
            "sum" => tape.sum(x),
            "mean" => tape.mean(x),
            "reshape" => {
                let n = tape.shape(x).iter().product::<usize>();
                tape.reshape(x, &[n])
            }
            "softmax" => tape.softmax(x),
            _ => unreachable!("unknown unary op {op}"),
        }
    })
}

fn binary_case(rng: &mut ChaCha8Rng, op: &'static str) -> Case {
    let shape = vec![dims(rng, 1, 4), dims(rng, 1, 5)];
    let mut store = ParamStore::new();
    let a = store.add_param("a", normal(rng, shape.clone()));
    let b = store.add_param("b", normal(rng, shape));
    case_with(rng, store, move |tape, s| {
        let (x, y) = (s.var(tape, a), s.var(tape, b));
        match op {
            "add" => tape.add(x, y),
            "sub" => tape.sub(x, y),
            "mul" => tape.mul(x, y),
            _ => unreachable!("unknown binary op {op}"),
        }
    })
}

fn matmul_case(rng: &mut ChaCha8Rng) -> Case {
    let (m, k, n) = (dims(rng, 1, 5), dims(rng, 1, 5), dims(rng, 1, 5));
    let mut store = ParamStore::new();
    let a = store.add_param("a", normal(rng, vec![m, k]));
    let b = store.add_param("b", normal(rng, vec![k, n]));
    case_with(rng, store, move |tape, s| {
        let (x, y) = (s.var(tape, a), s.var(tape, b));
        tape.matmul(x, y)
    })
}

fn concat_case(rng: &mut ChaCha8Rng) -> Case {
    let axis = rng.gen_range(0..3);
    let mut sa = vec![dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3)];
    let mut sb = sa.clone();
    sa[axis] = dims(rng, 1, 3);
    sb[axis] = dims(rng, 1, 3);
    let mut store = ParamStore::new();
    let a = store.add_param("a", normal(rng, sa));
    let b = store.add_param("b", normal(rng, sb));
    case_with(rng, store, move |tape, s| {
        let (x, y) = (s.var(tape, a), s.var(tape, b));
        tape.concat(x, y, axis)
    })
}

fn slice_case(rng: &mut ChaCha8Rng) -> Case {
    let axis = rng.gen_range(0..2);
    let shape = vec![dims(rng, 1, 5), dims(rng, 1, 5)];
    let start = rng.gen_range(0..shape[axis]);
    let len = rng.gen_range(1..=shape[axis] - start);
    let mut store = ParamStore::new();
    let a = store.add_param("x", normal(rng, shape));
    case_with(rng, store, move |tape, s| {
        let x = s.var(tape, a);
        tape.slice(x, axis, start, len)
    })
}

fn expand_case(rng: &mut ChaCha8Rng, rows: bool) -> Case {
    let (n, d) = (dims(rng, 1, 4), dims(rng, 1, 4));
    let mut store = ParamStore::new();
    let shape = if rows { vec![d] } else { vec![n, 1] };
    let a = store.add_param("x", normal(rng, shape));
    case_with(rng, store, move |tape, s| {
        let x = s.var(tape, a);
        if rows {
            tape.expand_rows(x, n)
        } else {
            tape.expand_cols(x, d)
        }
    })
}

fn conv_case(rng: &mut ChaCha8Rng) -> Case {
    let (n, c, o) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 3));
    let (h, w) = (dims(rng, 2, 6), dims(rng, 2, 6));
    let stride = rng.gen_range(1..=2);
    let mut store = ParamStore::new();
    let x = store.add_param("x", normal(rng, vec![n, c, h, w]));
    let k = store.add_param("weight", normal(rng, vec![o, c, 3, 3]));
    let b = store.add_param("bias", normal(rng, vec![o]));
    case_with(rng, store, move |tape, s| {
        let (x, k, b) = (s.var(tape, x), s.var(tape, k), s.var(tape, b));
        tape.conv2d(x, k, b, stride)
    })
}

fn batchnorm_case(rng: &mut ChaCha8Rng, train: bool) -> Case {
    // two values per channel normalize to ±1 whatever x is, which leaves
    // only an eps-sized gradient; use at least three
    let c = dims(rng, 1, 3);
    let shape = if rng.gen::<bool>() {
        vec![dims(rng, 3, 5), c]
    } else {
        vec![dims(rng, 2, 4), c, dims(rng, 2, 3), dims(rng, 1, 3)]
    };
    let mut store = ParamStore::new();
    let x = store.add_param("x", normal(rng, shape));
    let gamma = store.add_param("gamma", normal(rng, vec![c]));
    let beta = store.add_param("beta", normal(rng, vec![c]));
    let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
    case_with(rng, store, move |tape, s| {
        let (x, g, b) = (s.var(tape, x), s.var(tape, gamma), s.var(tape, beta));
        tape.batch_norm(x, g, b, (&mean, &var), (0, 1), 1e-5, 0.1, train)
    })
}

fn maxpool_case(rng: &mut ChaCha8Rng) -> Case {
    let shape = vec![dims(rng, 1, 2), dims(rng, 1, 2), dims(rng, 1, 5), dims(rng, 1, 5)];
    let mut store = ParamStore::new();
    let x = store.add_param("x", distinct(rng, shape));
    case_with(rng, store, move |tape, s| {
        let x = s.var(tape, x);
        tape.maxpool2x2(x)
    })
}

fn gap_case(rng: &mut ChaCha8Rng) -> Case {
    let shape = vec![dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 1, 4)];
    let mut store = ParamStore::new();
    let x = store.add_param("x", normal(rng, shape));
    case_with(rng, store, move |tape, s| {
        let x = s.var(tape, x);
        tape.global_avg_pool(x)
    })
}

fn angular_case(rng: &mut ChaCha8Rng) -> Case {
    let n = dims(rng, 1, 4);
    let mut store = ParamStore::new();
    let a = store.add_param("a", normal(rng, vec![n, 3]));
    let b = store.add_param("b", normal(rng, vec![n, 3]));
    case_with(rng, store, move |tape, s| {
        let (x, y) = (s.var(tape, a), s.var(tape, b));
        tape.angular(x, y, Some(crate::geometry::ANGLE_EPS))
    })
}

/// Names of the ops covered by [`run_op_suite`], in report order.
pub const OPS: [&str; 22] = [
    "add",
    "sub",
    "mul",
    "relu",
    "tanh",
    "sigmoid",
    "scale",
    "matmul",
    "concat",
    "slice",
    "softmax",
    "sum",
    "mean",
    "reshape",
    "expand_rows",
    "expand_cols",
    "conv2d",
    "batchnorm_train",
    "batchnorm_eval",
    "maxpool2x2",
    "global_avg_pool",
    "angular",
];

fn make_case(op: &'static str, rng: &mut ChaCha8Rng) -> Case {
    match op {
        "add" | "sub" | "mul" => binary_case(rng, op),
        "relu" | "tanh" | "sigmoid" | "scale" | "sum" | "mean" | "reshape" | "softmax" => unary_case(rng, op),
        "matmul" => matmul_case(rng),
        "concat" => concat_case(rng),
        "slice" => slice_case(rng),
        "expand_rows" => expand_case(rng, true),
        "expand_cols" => expand_case(rng, false),
        "conv2d" => conv_case(rng),
        "batchnorm_train" => batchnorm_case(rng, true),
        "batchnorm_eval" => batchnorm_case(rng, false),
        "maxpool2x2" => maxpool_case(rng),
        "global_avg_pool" => gap_case(rng),
        "angular" => angular_case(rng),
        _ => unreachable!("unknown op {op}"),
    }
}

/// Attention fusion followed by two chained gate steps, all parameters
/// and features trainable.
fn head_case(rng: &mut ChaCha8Rng) -> Case {
    use crate::model::{attention_fuse, gate_step, AttentionParams, GateActivation, GateParams, ScoreMode};
    let (n, d) = (dims(rng, 1, 3), dims(rng, 2, 4));
    let mut store = ParamStore::new();
    let f_f = store.add_param("f_f", normal(rng, vec![n, d]));
    let f_l = store.add_param("f_l", normal(rng, vec![n, d]));
    let f_r = store.add_param("f_r", normal(rng, vec![n, d]));
    let att = AttentionParams::new(&mut store, "attention", ScoreMode::Full, d, d, d, rng);
    let g1 = GateParams::new(&mut store, "gate1", d, d, GateActivation::Relu, 1.0, rng);
    let g2 = GateParams::new(&mut store, "gate2", d, d, GateActivation::Relu, 1.0, rng);
    // W1 acts only through the difference of the two tanh slopes, so it
    // needs inputs of unit scale; the candidate pre-activations are pushed
    // clear of the ReLU kink
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with("wh.bias") {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v += 1.5);
        }
    }
    let build = move |tape: &mut Tape<f64>, s: &ParamStore<f64>| -> Result<Var> {
        let h0 = tape.constant(Tensor::zeros(vec![n, d]));
        let ff = s.var(tape, f_f);
        let h1 = gate_step(tape, s, &g1, h0, ff)?;
        let (fl, fr) = (s.var(tape, f_l), s.var(tape, f_r));
        let a = attention_fuse(tape, s, &att, h1.h, fl, fr)?;
        let h2 = gate_step(tape, s, &g2, h1.h, a.f_e)?;
        Ok(h2.h)
    };
    case_with(rng, store, build)
}

/// Gradient check of attention fusion feeding two chained gate steps, over
/// `trials` random instances. Uses the model tolerance.
pub fn check_head(opts: &SuiteOptions) -> Result<OpCheck> {
    let check = CheckOptions {
        step: opts.head_step,
        tol: opts.model_tol,
        max_coords: None,
        seed: opts.seed,
        fault: opts.fault.clone(),
        five_point: true,
    };
    run_cases("attention_gate", opts.trials, check, 0, head_case)
}

/// Runs `trials` randomized checks of every op in [`OPS`].
pub fn run_op_suite(opts: &SuiteOptions) -> Result<Vec<OpCheck>> {
    OPS.iter().map(|&op| check_op(op, opts)).collect()
}

pub fn check_op(op: &'static str, opts: &SuiteOptions) -> Result<OpCheck> {
    let stream = OPS.iter().position(|&o| o == op).map_or(OPS.len(), |i| i + 1) as u64;
    let check = CheckOptions {
        step: opts.op_step,
        tol: opts.op_tol,
        max_coords: None,
        seed: opts.seed,
        fault: opts.fault.clone(),
        five_point: false,
    };
    run_cases(op, opts.trials, check, stream, |rng| make_case(op, rng))
}

fn run_cases(
    op: &'static str,
    trials: usize,
    check_opts: CheckOptions,
    stream: u64,
    mut make: impl FnMut(&mut ChaCha8Rng) -> Case,
) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(check_opts.seed);
    rng.set_stream(stream);
    let mut result = OpCheck {
        op,
        trials,
        tol: check_opts.tol,
        max_rel_error: 0.0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
    };
    for _ in 0..trials {
        let mut case = make(&mut rng);
        let report = finite_difference_check(&mut case.store, &mut case.build, &check_opts)?;
        if let Some(w) = report.worst() {
            if w.max_rel_error > result.max_rel_error || result.worst_param.is_empty() {
                result.max_rel_error = w.max_rel_error;
                result.worst_param = w.name.clone();
                result.analytic = w.analytic;
                result.numeric = w.numeric;
            }
        }
    }
    Ok(result)
}

/// Input geometry of the whole-model check: scale 1/16, 8×8 faces,
/// 6×10 eyes, batch of 4.
pub fn model_check_config(kind: VariantKind, seed: u64) -> ModelConfig {
    ModelConfig::new(kind, 1.0 / 16.0, (8, 8, 3), (6, 10), seed)
}

/// Compares the CA-Net loss gradient of every parameter tensor against
/// central differences on a sample of coordinates.
pub fn run_model_check(kind: VariantKind, opts: &SuiteOptions) -> Result<CheckReport> {
    let cfg = model_check_config(kind, opts.seed);
    let (model, store) = Model::build::<f64>(&cfg)?;
    let mut store = store;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let n = opts.model_batch;
    let mut uniform = |len: usize| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let face = Tensor::new(vec![n, 3, 8, 8], uniform(n * 192))?;
    let left = Tensor::new(vec![n, 1, 6, 10], uniform(n * 60))?;
    let right = Tensor::new(vec![n, 1, 6, 10], uniform(n * 60))?;
    let mut gaze = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let g = crate::geometry::pitchyaw_to_vector(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4))?;
        gaze.extend(g.to_array());
    }
    let gaze = Tensor::new(vec![n, 3], gaze)?;
    let check_opts = CheckOptions {
        step: opts.model_step,
        tol: opts.model_tol,
        max_coords: Some(opts.model_coords),
        seed: opts.seed,
        fault: opts.fault.clone(),
        five_point: false,
    };
    finite_difference_check(
        &mut store,
        |tape, s| {
            let (f, l, r) = (tape.constant(face.clone()), tape.constant(left.clone()), tape.constant(right.clone()));
            let out = model.forward(tape, s, f, l, r, Mode::Train)?;
            let gs = tape.constant(gaze.clone());
            canet_loss(tape, out.g_b, out.g, gs, LossWeights::default())
        },
        &check_opts,
    )
}
