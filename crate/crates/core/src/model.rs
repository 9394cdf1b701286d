//! Coarse-to-fine gaze model: face and eye backbones, attention fusion of
//! the eye features, a two-step gated state chain, residual composition and
//! the two-term angular loss.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ANGLE_EPS;
use crate::layers::{msra_normal, scaled_feature_dim, Backbone, BackboneSpec, Linear, Mode};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::weights::WeightFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Canet,
    FaceNet,
    EyeNet,
    JointNet,
    GateAblation,
    AttentionAblation,
    OneGram,
    FineToCoarse,
    FaceAttention,
    EyeAttention,
}

impl VariantKind {
    pub const ALL: [VariantKind; 10] = [
        VariantKind::Canet,
        VariantKind::FaceNet,
        VariantKind::EyeNet,
        VariantKind::JointNet,
        VariantKind::GateAblation,
        VariantKind::AttentionAblation,
        VariantKind::OneGram,
        VariantKind::FineToCoarse,
        VariantKind::FaceAttention,
        VariantKind::EyeAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Canet => "canet",
            VariantKind::FaceNet => "face_net",
            VariantKind::EyeNet => "eye_net",
            VariantKind::JointNet => "joint_net",
            VariantKind::GateAblation => "gate_ablation",
            VariantKind::AttentionAblation => "attention_ablation",
            VariantKind::OneGram => "one_gram",
            VariantKind::FineToCoarse => "fine_to_coarse",
            VariantKind::FaceAttention => "face_attention",
            VariantKind::EyeAttention => "eye_attention",
        }
    }

    /// Variants that regress gaze in one stage, with no residual.
    pub fn is_single_stage(self) -> bool {
        matches!(self, VariantKind::FaceNet | VariantKind::EyeNet | VariantKind::JointNet)
    }

    fn uses_face(self) -> bool {
        self != VariantKind::EyeNet
    }

    fn uses_eyes(self) -> bool {
        self != VariantKind::FaceNet
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 2.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: VariantKind,
    pub width_scale: f64,
    /// Face input as (height, width, channels).
    pub face: (usize, usize, usize),
    /// Eye input as (height, width); eyes are single-channel.
    pub eye: (usize, usize),
    pub seed: u64,
    pub gate_activation: GateActivation,
    /// Initial bias of the update gate.
    pub z_bias: f64,
}

impl ModelConfig {
    pub fn new(kind: VariantKind, width_scale: f64, face: (usize, usize, usize), eye: (usize, usize), seed: u64) -> Self {
        ModelConfig {
            kind,
            width_scale,
            face,
            eye,
            seed,
            gate_activation: GateActivation::Relu,
            z_bias: 1.0,
        }
    }

    /// Desk-scale profile: scale 1/8, 56×56 faces, 18×30 eyes.
    pub fn toy(kind: VariantKind, seed: u64) -> Self {
        Self::new(kind, 0.125, (56, 56, 3), (18, 30), seed)
    }

    pub fn state_dim(&self) -> usize {
        scaled_feature_dim(self.width_scale)
    }

    fn face_spec(&self) -> BackboneSpec {
        let mut s = BackboneSpec::face(self.width_scale, self.face.0, self.face.1);
        s.input.channels = self.face.2;
        s
    }

    fn eye_spec(&self, name: &str) -> BackboneSpec {
        let mut s = BackboneSpec::eye(self.width_scale, self.eye.0, self.eye.1);
        s.name = name.to_string();
        s
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let act = match self.gate_activation {
            GateActivation::Relu => "relu",
            GateActivation::Tanh => "tanh",
        };
        [
            ("variant", self.kind.name().to_string()),
            ("width_scale", format!("{}", self.width_scale)),
            ("face", format!("{}x{}x{}", self.face.0, self.face.1, self.face.2)),
            ("eye", format!("{}x{}", self.eye.0, self.eye.1)),
            ("seed", self.seed.to_string()),
            ("gate_activation", act.to_string()),
            ("z_bias", format!("{}", self.z_bias)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn from_metadata(meta: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| meta.get(k).ok_or_else(|| Error::Malformed(format!("checkpoint metadata lacks `{k}`")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Malformed(format!("bad `{k}` metadata"))) };
        let dims = |k: &str| -> Result<Vec<usize>> {
            get(k)?
                .split('x')
                .map(|d| d.parse().map_err(|_| Error::Malformed(format!("bad `{k}` metadata"))))
                .collect()
        };
        let face = dims("face")?;
        let eye = dims("eye")?;
        if face.len() != 3 || eye.len() != 2 {
            return Err(Error::Malformed("bad input geometry metadata".into()));
        }
        Ok(ModelConfig {
            kind: get("variant")?.parse()?,
            width_scale: num("width_scale")?,
            face: (face[0], face[1], face[2]),
            eye: (eye[0], eye[1]),
            seed: get("seed")?.parse().map_err(|_| Error::Malformed("bad `seed` metadata".into()))?,
            gate_activation: match get("gate_activation")?.as_str() {
                "relu" => GateActivation::Relu,
                "tanh" => GateActivation::Tanh,
                other => return Err(Error::Malformed(format!("gate activation `{other}`"))),
            },
            z_bias: num("z_bias")?,
        })
    }
}

/// How attention scores are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// `m = vᵀ tanh(W1ᵀ q + W2ᵀ f)` with shared `v, W1, W2`.
    Full,
    /// `m_l = v_lᵀ tanh(W1ᵀ q)`, `m_r = v_rᵀ tanh(W1ᵀ q)`.
    QueryOnly,
    /// `m = vᵀ tanh(W2ᵀ f)`.
    EyeOnly,
    /// Fixed weights of one half.
    Fixed,
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub mode: ScoreMode,
    /// `d_a × 1`
    pub v: Option<ParamId>,
    /// Second projector used only by [`ScoreMode::QueryOnly`].
    pub v_r: Option<ParamId>,
    /// `query_dim × d_a`
    pub w1: Option<ParamId>,
    /// `feature_dim × d_a`
    pub w2: Option<ParamId>,
}

impl AttentionParams {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        mode: ScoreMode,
        query_dim: usize,
        feature_dim: usize,
        d_a: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = AttentionParams {
            mode,
            v: None,
            v_r: None,
            w1: None,
            w2: None,
        };
        if mode == ScoreMode::Fixed {
            return p;
        }
        if mode != ScoreMode::EyeOnly {
            p.w1 = Some(store.add_param(format!("{name}.w1"), msra_normal(rng, vec![query_dim, d_a], query_dim)));
        }
        if mode != ScoreMode::QueryOnly {
            p.w2 = Some(store.add_param(format!("{name}.w2"), msra_normal(rng, vec![feature_dim, d_a], feature_dim)));
        }
        if mode == ScoreMode::QueryOnly {
            p.v = Some(store.add_param(format!("{name}.v_l"), msra_normal(rng, vec![d_a, 1], d_a)));
            p.v_r = Some(store.add_param(format!("{name}.v_r"), msra_normal(rng, vec![d_a, 1], d_a)));
        } else {
            p.v = Some(store.add_param(format!("{name}.v"), msra_normal(rng, vec![d_a, 1], d_a)));
        }
        p
    }
}

/// Per-sample scores and weights are `N × 1`; `f_e` is `N × d`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub m_l: Var,
    pub m_r: Var,
    pub w_l: Var,
    pub w_r: Var,
    pub f_e: Var,
}

fn score<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    v: ParamId,
    q_proj: Option<Var>,
    f: Option<(Var, ParamId)>,
) -> Result<Var> {
    let f_proj = match f {
        Some((f, w2)) => {
            let w2 = store.var(tape, w2);
            Some(tape.matmul(f, w2)?)
        }
        None => None,
    };
    let pre = match (q_proj, f_proj) {
        (Some(a), Some(b)) => tape.add(a, b)?,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => return Err(Error::invalid("attention", "no score inputs")),
    };
    let act = tape.tanh(pre)?;
    let v = store.var(tape, v);
    tape.matmul(act, v)
}

/// Softmax-weighted fusion `f_e = w_l f_l + w_r f_r` of two eye features.
pub fn attention_fuse<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    params: &AttentionParams,
    query: Var,
    f_l: Var,
    f_r: Var,
) -> Result<AttentionOutput> {
    if tape.shape(f_l) != tape.shape(f_r) || tape.shape(f_l).len() != 2 {
        return Err(Error::shape("attention_fuse", tape.shape(f_l), tape.shape(f_r)));
    }
    let (n, d) = (tape.shape(f_l)[0], tape.shape(f_l)[1]);
    if tape.shape(query)[0] != n {
        return Err(Error::shape("attention_fuse", tape.shape(query), tape.shape(f_l)));
    }
    let (m_l, m_r, w) = if params.mode == ScoreMode::Fixed {
        let zeros = tape.constant(Tensor::zeros(vec![n, 1]));
        let w = tape.constant(Tensor::full(vec![n, 2], T::of(0.5)));
        (zeros, zeros, w)
    } else {
        let q_proj = match params.w1 {
            Some(w1) => {
                let w1 = store.var(tape, w1);
                Some(tape.matmul(query, w1)?)
            }
            None => None,
        };
        let v = params.v.expect("scored attention has v");
        let (m_l, m_r) = match params.mode {
            ScoreMode::QueryOnly => (
                score(tape, store, v, q_proj, None)?,
                score(tape, store, params.v_r.expect("query-only attention has v_r"), q_proj, None)?,
            ),
            _ => {
                let w2 = params.w2.expect("eye scores need w2");
                (
                    score(tape, store, v, q_proj, Some((f_l, w2)))?,
                    score(tape, store, v, q_proj, Some((f_r, w2)))?,
                )
            }
        };
        let m = tape.concat(m_l, m_r, 1)?;
        let w = tape.softmax(m)?;
        (m_l, m_r, w)
    };
    let w_l = tape.slice(w, 1, 0, 1)?;
    let w_r = tape.slice(w, 1, 1, 1)?;
    let wl = tape.expand_cols(w_l, d)?;
    let wr = tape.expand_cols(w_r, d)?;
    let a = tape.mul(wl, f_l)?;
    let b = tape.mul(wr, f_r)?;
    let f_e = tape.add(a, b)?;
    Ok(AttentionOutput { m_l, m_r, w_l, w_r, f_e })
}

#[derive(Debug, Clone)]
pub struct GateParams {
    pub wz: Linear,
    pub wr: Linear,
    pub wh: Linear,
    pub activation: GateActivation,
}

impl GateParams {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        state_dim: usize,
        feature_dim: usize,
        activation: GateActivation,
        z_bias: f64,
        rng: &mut R,
    ) -> Self {
        let input = state_dim + feature_dim;
        GateParams {
            wz: Linear::with_bias(store, &format!("{name}.wz"), input, state_dim, z_bias, rng),
            wr: Linear::new(store, &format!("{name}.wr"), input, state_dim, rng),
            wh: Linear::new(store, &format!("{name}.wh"), input, state_dim, rng),
            activation,
        }
    }
}

/// State after a gate step, with the intermediates that produced it.
#[derive(Debug, Clone, Copy)]
pub struct HeadState {
    pub h: Var,
    pub z: Var,
    pub r: Var,
    pub h_tilde: Var,
    /// The state this step started from.
    pub prev: Var,
}

/// `z = σ(Wz[h,f])`, `r = σ(Wr[h,f])`, `h̃ = act(Wh[r∗h, f])`,
/// `h' = (1 − z)∗h + z∗h̃`.
pub fn gate_step<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, params: &GateParams, h: Var, f: Var) -> Result<HeadState> {
    let hf = tape.concat(h, f, 1)?;
    let zl = params.wz.forward(tape, store, hf)?;
    let z = tape.sigmoid(zl)?;
    let rl = params.wr.forward(tape, store, hf)?;
    let r = tape.sigmoid(rl)?;
    let rh = tape.mul(r, h)?;
    let rhf = tape.concat(rh, f, 1)?;
    let hl = params.wh.forward(tape, store, rhf)?;
    let h_tilde = match params.activation {
        GateActivation::Relu => tape.relu(hl)?,
        GateActivation::Tanh => tape.tanh(hl)?,
    };
    // (1 − z)∗h + z∗h̃ written as h + z∗(h̃ − h)
    let diff = tape.sub(h_tilde, h)?;
    let step = tape.mul(z, diff)?;
    let h_next = tape.add(h, step)?;
    Ok(HeadState {
        h: h_next,
        z,
        r,
        h_tilde,
        prev: h,
    })
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub face: Option<Backbone>,
    pub left: Option<Backbone>,
    pub right: Option<Backbone>,
    pub attention: Option<AttentionParams>,
    pub gate1: Option<GateParams>,
    pub gate2: Option<GateParams>,
    /// Basic-gaze head, or the only head of single-stage variants.
    pub fc_b: Linear,
    pub fc_r: Option<Linear>,
}

/// Model outputs for one batch; every gaze is `N × 3`.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub g_b: Var,
    pub g_r: Var,
    pub g: Var,
    pub attention: Option<AttentionOutput>,
    pub h1: Option<HeadState>,
    pub h2: Option<HeadState>,
}

impl Model {
    /// Builds `config.kind` and registers its parameters in a fresh store.
    pub fn build<T: Scalar>(config: &ModelConfig) -> Result<(Model, ParamStore<T>)> {
        if !(config.width_scale > 0.0 && config.width_scale <= 1.0) {
            return Err(Error::Config(format!("width_scale {} outside (0, 1]", config.width_scale)));
        }
        let kind = config.kind;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.state_dim();
        let face = match kind.uses_face() {
            true => Some(Backbone::new(&config.face_spec(), &mut store, "face", &mut rng)?),
            false => None,
        };
        let (left, right) = match kind.uses_eyes() {
            true => (
                Some(Backbone::new(&config.eye_spec("left"), &mut store, "left", &mut rng)?),
                Some(Backbone::new(&config.eye_spec("right"), &mut store, "right", &mut rng)?),
            ),
            false => (None, None),
        };
        let gate = |store: &mut ParamStore<T>, name: &str, rng: &mut ChaCha8Rng| {
            GateParams::new(store, name, d, d, config.gate_activation, config.z_bias, rng)
        };
        let head_in = match kind {
            VariantKind::EyeNet => 2 * d,
            VariantKind::JointNet => 3 * d,
            _ => d,
        };
        let mut model = Model {
            config: config.clone(),
            face,
            left,
            right,
            attention: None,
            gate1: None,
            gate2: None,
            fc_b: Linear::new(&mut store, "head_b", head_in, 3, &mut rng),
            fc_r: None,
        };
        match kind {
            VariantKind::FaceNet | VariantKind::EyeNet | VariantKind::JointNet => {}
            VariantKind::GateAblation => {
                model.attention = Some(AttentionParams::new(&mut store, "attention", ScoreMode::Full, d, d, d, &mut rng));
                model.fc_r = Some(Linear::new(&mut store, "head_r", 2 * d, 3, &mut rng));
            }
            _ => {
                let mode = match kind {
                    VariantKind::AttentionAblation => ScoreMode::Fixed,
                    VariantKind::FaceAttention => ScoreMode::QueryOnly,
                    VariantKind::EyeAttention => ScoreMode::EyeOnly,
                    _ => ScoreMode::Full,
                };
                model.gate1 = Some(gate(&mut store, "gate1", &mut rng));
                model.attention = Some(AttentionParams::new(&mut store, "attention", mode, d, d, d, &mut rng));
                model.gate2 = Some(gate(&mut store, "gate2", &mut rng));
                model.fc_r = Some(Linear::new(&mut store, "head_r", d, 3, &mut rng));
            }
        }
        Ok((model, store))
    }

    pub fn kind(&self) -> VariantKind {
        self.config.kind
    }

    /// Runs the variant on `N×C×H×W` face and `N×1×h×w` eye batches.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        face: Var,
        left: Var,
        right: Var,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let n = tape.shape(face)[0];
        let f_f = match &self.face {
            Some(bb) => Some(bb.forward(tape, store, face, mode)?),
            None => None,
        };
        let (f_l, f_r) = match (&self.left, &self.right) {
            (Some(l), Some(r)) => (Some(l.forward(tape, store, left, mode)?), Some(r.forward(tape, store, right, mode)?)),
            _ => (None, None),
        };
        let d = self.config.state_dim();
        let kind = self.kind();

        if kind.is_single_stage() {
            let x = match kind {
                VariantKind::FaceNet => f_f.expect("face path"),
                VariantKind::EyeNet => tape.concat(f_l.expect("left path"), f_r.expect("right path"), 1)?,
                _ => {
                    let fe = tape.concat(f_l.expect("left path"), f_r.expect("right path"), 1)?;
                    tape.concat(f_f.expect("face path"), fe, 1)?
                }
            };
            let g = self.fc_b.forward(tape, store, x)?;
            let g_r = tape.constant(Tensor::zeros(vec![n, 3]));
            return Ok(ForwardOutput {
                g_b: g,
                g_r,
                g,
                attention: None,
                h1: None,
                h2: None,
            });
        }

        let (f_f, f_l, f_r) = (f_f.expect("face path"), f_l.expect("left path"), f_r.expect("right path"));
        let attention = self.attention.as_ref().expect("two-stage variants fuse eyes");
        let fc_r = self.fc_r.as_ref().expect("two-stage variants have a residual head");
        let zeros = || Tensor::zeros(vec![n, d]);

        let (g_b, g_r, att, h1, h2) = match kind {
            VariantKind::GateAblation => {
                let g_b = self.fc_b.forward(tape, store, f_f)?;
                let att = attention_fuse(tape, store, attention, f_f, f_l, f_r)?;
                let x = tape.concat(f_f, att.f_e, 1)?;
                let g_r = fc_r.forward(tape, store, x)?;
                (g_b, g_r, att, None, None)
            }
            VariantKind::FineToCoarse => {
                let (g1, g2) = (self.gate1.as_ref().unwrap(), self.gate2.as_ref().unwrap());
                let att = attention_fuse(tape, store, attention, f_f, f_l, f_r)?;
                let h0 = tape.constant(zeros());
                let h1 = gate_step(tape, store, g1, h0, att.f_e)?;
                let g_b = self.fc_b.forward(tape, store, h1.h)?;
                let h2 = gate_step(tape, store, g2, h1.h, f_f)?;
                let g_r = fc_r.forward(tape, store, h2.h)?;
                (g_b, g_r, att, Some(h1), Some(h2))
            }
            _ => {
                let (g1, g2) = (self.gate1.as_ref().unwrap(), self.gate2.as_ref().unwrap());
                let h0 = tape.constant(zeros());
                let h1 = gate_step(tape, store, g1, h0, f_f)?;
                let g_b = self.fc_b.forward(tape, store, h1.h)?;
                let att = attention_fuse(tape, store, attention, h1.h, f_l, f_r)?;
                let prev = match kind {
                    VariantKind::OneGram => tape.constant(zeros()),
                    _ => h1.h,
                };
                let h2 = gate_step(tape, store, g2, prev, att.f_e)?;
                let g_r = fc_r.forward(tape, store, h2.h)?;
                (g_b, g_r, att, Some(h1), Some(h2))
            }
        };
        let g = tape.add(g_b, g_r)?;
        Ok(ForwardOutput {
            g_b,
            g_r,
            g,
            attention: Some(att),
            h1,
            h2,
        })
    }

    pub fn save_checkpoint<T: Scalar>(&self, store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
        self.weight_file(store).save(path)
    }

    pub fn weight_file<T: Scalar>(&self, store: &ParamStore<T>) -> WeightFile<T> {
        let mut wf = WeightFile::from_store(store);
        wf.metadata = self.config.metadata();
        wf
    }

    /// Rebuilds the variant recorded in the file's metadata and loads its
    /// tensors.
    pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(Model, ParamStore<T>)> {
        let wf = WeightFile::<T>::load(path)?;
        Self::from_weight_file(wf)
    }

    pub fn from_weight_file<T: Scalar>(wf: WeightFile<T>) -> Result<(Model, ParamStore<T>)> {
        let config = ModelConfig::from_metadata(&wf.metadata)?;
        let (model, mut store) = Model::build::<T>(&config)?;
        let expected = store.named_tensors().count();
        if wf.tensors.len() != expected {
            return Err(Error::Malformed(format!(
                "checkpoint holds {} tensors, {} expects {expected}",
                wf.tensors.len(),
                config.kind
            )));
        }
        store.load_from(wf.tensors)?;
        Ok((model, store))
    }
}

/// Shorthand for [`Model::build`].
pub fn build_variant<T: Scalar>(kind: VariantKind, config: &ModelConfig) -> Result<(Model, ParamStore<T>)> {
    Model::build(&ModelConfig { kind, ..config.clone() })
}

/// `mean(α · ∠(g_b, g*) + β · ∠(g, g*))` over the batch.
pub fn canet_loss<T: Scalar>(tape: &mut Tape<T>, g_b: Var, g: Var, g_star: Var, weights: LossWeights) -> Result<Var> {
    weights.validate()?;
    let a = tape.angular(g_b, g_star, Some(ANGLE_EPS))?;
    let b = tape.angular(g, g_star, Some(ANGLE_EPS))?;
    let a = tape.scale(a, T::of(weights.alpha))?;
    let b = tape.scale(b, T::of(weights.beta))?;
    let total = tape.add(a, b)?;
    tape.mean(total)
}
