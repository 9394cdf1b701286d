//! Parameterized layers and the face / eye convolutional backbones.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tensor::{conv_out_dim, pool_out_dim, Scalar, Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Width of the backbone output feature at scale 1.
pub const FEATURE_DIM: usize = 256;

pub const FACE_CHANNELS: [usize; 13] = [64, 64, 128, 128, 256, 256, 256, 256, 256, 256, 512, 512, 1024];
pub const FACE_POOLS: [usize; 4] = [2, 4, 7, 10];
pub const EYE_CHANNELS: [usize; 10] = [64, 64, 128, 128, 128, 256, 256, 256, 512, 1024];
pub const EYE_POOLS: [usize; 3] = [2, 5, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Draws `Normal(0, sqrt(2 / fan_in))` samples.
pub fn msra_normal<T: Scalar, R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape matches sample count")
}

/// Channel count after width scaling: `ceil(c * scale)`, at least one.
pub fn scaled_channels(c: usize, scale: f64) -> usize {
    ((c as f64 * scale - 1e-9).ceil() as usize).max(1)
}

/// Feature width after scaling: `round(256 * scale)`, at least one.
pub fn scaled_feature_dim(scale: f64) -> usize {
    ((FEATURE_DIM as f64 * scale).round() as usize).max(1)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let w = msra_normal(rng, vec![out_channels, in_channels, 3, 3], in_channels * 9);
        Conv2d {
            weight: store.add_param(format!("{name}.weight"), w),
            bias: store.add_param(format!("{name}.bias"), Tensor::zeros(vec![out_channels])),
            in_channels,
            out_channels,
            stride,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let c = tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: tape.shape(x).to_vec(),
                right: vec![self.out_channels, self.in_channels, 3, 3],
            });
        }
        let w = store.var(tape, self.weight);
        let b = store.var(tape, self.bias);
        tape.conv2d(x, w, b, self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(vec![channels], T::one())),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(vec![channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(vec![channels], T::one())),
            channels,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let g = store.var(tape, self.gamma);
        let b = store.var(tape, self.beta);
        tape.batch_norm(
            x,
            g,
            b,
            (store.buffer(self.running_mean).data(), store.buffer(self.running_var).data()),
            (self.running_mean.0, self.running_var.0),
            self.eps,
            self.momentum,
            mode == Mode::Train,
        )
    }
}

/// Fully connected layer `y = x·W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        Self::with_bias(store, name, in_features, out_features, 0.0, rng)
    }

    pub fn with_bias<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: f64,
        rng: &mut R,
    ) -> Self {
        let w = msra_normal(rng, vec![in_features, out_features], in_features);
        Linear {
            weight: store.add_param(format!("{name}.weight"), w),
            bias: store.add_param(format!("{name}.bias"), Tensor::full(vec![out_features], T::of(bias))),
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let n = tape.shape(x)[0];
        let w = store.var(tape, self.weight);
        let y = tape.matmul(x, w)?;
        let b = store.var(tape, self.bias);
        let b = tape.expand_rows(b, n)?;
        tape.add(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// Structural description of a convolutional backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    /// Unscaled output channels per block.
    pub channels: Vec<usize>,
    /// 1-based block indices followed by a 2×2 max-pool.
    pub pool_after: Vec<usize>,
    pub strides: Vec<usize>,
    pub width_scale: f64,
    pub input: InputGeometry,
}

impl BackboneSpec {
    pub fn face(width_scale: f64, height: usize, width: usize) -> Self {
        BackboneSpec {
            name: "face".into(),
            channels: FACE_CHANNELS.to_vec(),
            pool_after: FACE_POOLS.to_vec(),
            strides: vec![1; FACE_CHANNELS.len()],
            width_scale,
            input: InputGeometry {
                height,
                width,
                channels: 3,
            },
        }
    }

    pub fn eye(width_scale: f64, height: usize, width: usize) -> Self {
        BackboneSpec {
            name: "eye".into(),
            channels: EYE_CHANNELS.to_vec(),
            pool_after: EYE_POOLS.to_vec(),
            strides: vec![1; EYE_CHANNELS.len()],
            width_scale,
            input: InputGeometry {
                height,
                width,
                channels: 1,
            },
        }
    }

    /// Full-size face backbone on 224×224×3 input.
    pub fn face_full() -> Self {
        Self::face(1.0, 224, 224)
    }

    /// Full-size eye backbone on 36×60 grayscale input.
    pub fn eye_full() -> Self {
        Self::eye(1.0, 36, 60)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_scale.is_finite() && self.width_scale > 0.0) {
            return Err(Error::Config(format!("width_scale must be positive, got {}", self.width_scale)));
        }
        if self.channels.is_empty() {
            return Err(Error::Config(format!("{} backbone has no blocks", self.name)));
        }
        if self.strides.len() != self.channels.len() || self.strides.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("{} backbone needs one positive stride per block", self.name)));
        }
        if self.pool_after.iter().any(|&p| p == 0 || p > self.channels.len()) {
            return Err(Error::Config(format!("{} backbone pool position out of range", self.name)));
        }
        let g = &self.input;
        if g.height == 0 || g.width == 0 || g.channels == 0 {
            return Err(Error::Config(format!("{} backbone input geometry must be positive", self.name)));
        }
        Ok(())
    }

    pub fn scaled_channels(&self) -> Vec<usize> {
        self.channels.iter().map(|&c| scaled_channels(c, self.width_scale)).collect()
    }

    pub fn feature_dim(&self) -> usize {
        scaled_feature_dim(self.width_scale)
    }

    /// Spatial size of the map entering global average pooling.
    pub fn final_spatial(&self) -> (usize, usize) {
        let (mut h, mut w) = (self.input.height, self.input.width);
        for (i, &s) in self.strides.iter().enumerate() {
            h = conv_out_dim(h, s);
            w = conv_out_dim(w, s);
            if self.pool_after.contains(&(i + 1)) {
                h = pool_out_dim(h);
                w = pool_out_dim(w);
            }
        }
        (h, w)
    }
}

/// Convolution → ReLU → batch normalization, optionally followed by a pool.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub pool_after: bool,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub blocks: Vec<ConvBlock>,
    pub fc: Linear,
}

impl Backbone {
    /// Registers all parameters under `prefix` (e.g. `face`) in `store`.
    pub fn new<T: Scalar, R: Rng>(spec: &BackboneSpec, store: &mut ParamStore<T>, prefix: &str, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let channels = spec.scaled_channels();
        let mut blocks = Vec::with_capacity(channels.len());
        let mut in_c = spec.input.channels;
        for (i, (&out_c, &stride)) in channels.iter().zip(&spec.strides).enumerate() {
            let name = format!("{prefix}.block{}", i + 1);
            blocks.push(ConvBlock {
                conv: Conv2d::new(store, &format!("{name}.conv"), in_c, out_c, stride, rng),
                bn: BatchNorm::new(store, &format!("{name}.bn"), out_c),
                pool_after: spec.pool_after.contains(&(i + 1)),
            });
            in_c = out_c;
        }
        let fc = Linear::new(store, &format!("{prefix}.fc"), in_c, spec.feature_dim(), rng);
        Ok(Backbone {
            spec: spec.clone(),
            blocks,
            fc,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.fc.out_features
    }

    pub fn gap_dim(&self) -> usize {
        self.fc.in_features
    }

    /// Maps `N×C×H×W` input to `N×feature_dim` features.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let s = tape.shape(x);
        let g = &self.spec.input;
        if s.len() != 4 || s[1] != g.channels || s[2] != g.height || s[3] != g.width {
            return Err(Error::GeometryMismatch {
                expected: format!("N×{}×{}×{} {} input", g.channels, g.height, g.width, self.spec.name),
                actual: format!("{s:?}"),
            });
        }
        let mut h = x;
        for block in &self.blocks {
            h = block.conv.forward(tape, store, h)?;
            h = tape.relu(h)?;
            h = block.bn.forward(tape, store, h, mode)?;
            if block.pool_after {
                h = tape.maxpool2x2(h)?;
            }
        }
        let pooled = tape.global_avg_pool(h)?;
        self.fc.forward(tape, store, pooled)
    }
}

/// Builds a standalone backbone with its own parameter store.
pub fn build_backbone<T: Scalar>(spec: &BackboneSpec, seed: u64) -> Result<(Backbone, ParamStore<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let bb = Backbone::new(spec, &mut store, &spec.name, &mut rng)?;
    Ok((bb, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn face_spec_full_scale_structure() {
        let (bb, store) = build_backbone::<f32>(&BackboneSpec::face_full(), 1).unwrap();
        assert_eq!(bb.blocks.len(), 13);
        let ch: Vec<_> = bb.blocks.iter().map(|b| b.conv.out_channels).collect();
        assert_eq!(ch, FACE_CHANNELS);
        let pools: Vec<_> = bb.blocks.iter().enumerate().filter(|(_, b)| b.pool_after).map(|(i, _)| i + 1).collect();
        assert_eq!(pools, FACE_POOLS);
        assert_eq!((bb.gap_dim(), bb.output_dim()), (1024, 256));
        assert_eq!(bb.spec.final_spatial(), (14, 14));
        assert!(bb.blocks.iter().all(|b| b.conv.stride == 1));
        assert!(store.find("face.block3.conv.weight").is_some());
    }

    #[test]
    fn eye_spec_full_scale_structure() {
        let spec = BackboneSpec::eye_full();
        let (bb, _) = build_backbone::<f32>(&spec, 1).unwrap();
        assert_eq!(bb.blocks.len(), 10);
        let ch: Vec<_> = bb.blocks.iter().map(|b| b.conv.out_channels).collect();
        assert_eq!(ch, EYE_CHANNELS);
        assert_eq!((bb.gap_dim(), bb.output_dim()), (1024, 256));
        assert_eq!(spec.final_spatial(), (5, 8));
    }

    #[test]
    fn scaled_widths() {
        let spec = BackboneSpec::face(0.125, 56, 56);
        assert_eq!(spec.scaled_channels(), vec![8, 8, 16, 16, 32, 32, 32, 32, 32, 32, 64, 64, 128]);
        assert_eq!(spec.feature_dim(), 32);
        assert_eq!(scaled_feature_dim(1.0 / 16.0), 16);
        assert_eq!(scaled_channels(3, 0.125), 1);
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = BackboneSpec::eye(0.0, 36, 60);
        assert!(build_backbone::<f32>(&spec, 0).is_err());
        spec.width_scale = 1.0;
        spec.pool_after.push(11);
        assert!(build_backbone::<f32>(&spec, 0).is_err());
    }

    #[test]
    fn build_is_deterministic_in_seed() {
        let spec = BackboneSpec::eye(0.125, 18, 30);
        let (_, a) = build_backbone::<f32>(&spec, 5).unwrap();
        let (_, b) = build_backbone::<f32>(&spec, 5).unwrap();
        let (_, c) = build_backbone::<f32>(&spec, 6).unwrap();
        let first = |s: &ParamStore<f32>| s.get(s.find("eye.block1.conv.weight").unwrap()).data().to_vec();
        assert_eq!(first(&a), first(&b));
        assert_ne!(first(&a), first(&c));
    }

    #[test]
    fn msra_variance_matches_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fan_in = 64 * 9;
        let t: Tensor<f64> = msra_normal(&mut rng, vec![100_000], fan_in);
        let mean = t.data().iter().sum::<f64>() / t.numel() as f64;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.numel() as f64;
        let expected = 2.0 / fan_in as f64;
        assert!((var / expected - 1.0).abs() < 0.1, "var {var} vs {expected}");
    }

    #[test]
    fn eye_forward_shape_at_toy_scale() {
        let spec = BackboneSpec::eye(0.125, 18, 30);
        let (bb, store) = build_backbone::<f32>(&spec, 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![2, 1, 18, 30], 0.3));
        let y = bb.forward(&mut tape, &store, x, Mode::Train).unwrap();
        assert_eq!(tape.shape(y), &[2, 32]);
        let bad = tape.constant(Tensor::zeros(vec![2, 1, 36, 60]));
        assert!(matches!(bb.forward(&mut tape, &store, bad, Mode::Train), Err(Error::GeometryMismatch { .. })));
    }

    #[test]
    fn batchnorm_train_statistics() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let data: Vec<f64> = (0..24).map(|i| ((i * 7) % 5) as f64 * 1.3 - 0.4 * i as f64).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3, 2, 2, 2], data).unwrap());
        let y = bn.forward(&mut tape, &store, x, Mode::Train).unwrap();
        let out = tape.value(y).data().to_vec();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| out[(n * 2 + ch) * 4..(n * 2 + ch) * 4 + 4].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5, "mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
    }

    #[test]
    fn batchnorm_affine_law() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        store.get_mut(bn.gamma).data_mut()[0] = 2.0;
        store.get_mut(bn.beta).data_mut()[0] = 3.0;
        // standardized input: mean 0, population variance 1
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(vec![4, 1], &[-1.0, 1.0, -1.0, 1.0]).unwrap());
        let y = bn.forward(&mut tape, &store, x, Mode::Train).unwrap();
        let out = tape.value(y).data();
        let m = out.iter().sum::<f64>() / 4.0;
        let sd = (out.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((m - 3.0).abs() < 1e-9);
        assert!((sd - 2.0).abs() < 1e-4);
    }

    #[test]
    fn batchnorm_running_update_and_eval() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(vec![2, 1], &[1.0, 3.0]).unwrap());
        bn.forward(&mut tape, &store, x, Mode::Train).unwrap();
        store.commit_bn_updates(tape.take_bn_updates());
        // batch mean 2, unbiased var 2
        assert!((store.buffer(bn.running_mean).data()[0] - 0.2).abs() < 1e-12);
        assert!((store.buffer(bn.running_var).data()[0] - 1.1).abs() < 1e-12);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(vec![1, 1], &[0.2]).unwrap());
        let y = bn.forward(&mut tape, &store, x, Mode::Eval).unwrap();
        assert!(tape.value(y).data()[0].abs() < 1e-12);
        assert!(tape.take_bn_updates().is_empty());
    }
}
