use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Relu,
    Tanh,
    Sigmoid,
}

impl ElementwiseKind {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "mul",
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
        }
    }
}

/// Batch statistics produced by a train-mode batch normalization, to be
/// folded into the running estimates by whoever owns them.
#[derive(Debug, Clone)]
pub struct BnStatUpdate<T> {
    pub running_mean: usize,
    pub running_var: usize,
    pub momentum: f64,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Binary(ElementwiseKind, Var, Var),
    Unary(ElementwiseKind, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Concat {
        a: Var,
        b: Var,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    ExpandRows(Var),
    ExpandCols(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
        dims: (usize, usize, usize),
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
        spatial: usize,
    },
    Angular {
        a: Var,
        b: Var,
        clamp: Option<f64>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary(k, ..) | Op::Unary(k, _) => k.name(),
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Softmax(_) => "softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
            Op::ExpandRows(_) => "expand_rows",
            Op::ExpandCols(_) => "expand_cols",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm",
            Op::MaxPool { .. } => "maxpool2x2",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Angular { .. } => "angular",
        }
    }
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    label: Option<String>,
}

/// Records differentiable operations in execution order and replays them in
/// reverse to compute gradients.
///
/// A tape supports a single [`backward`](Tape::backward); a second call
/// fails with [`Error::StaleTape`] until [`reset_grads`](Tape::reset_grads).
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
    tagged: HashMap<usize, Var>,
    bn_updates: Vec<BnStatUpdate<T>>,
    fault: Option<String>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn plane_dims(shape: &[usize]) -> (usize, usize, usize) {
    // (outer, axis, inner) helper is below; this one gives n, c, spatial
    let n = shape[0];
    let c = shape.get(1).copied().unwrap_or(1);
    let s = shape.iter().skip(2).product();
    (n, c, s)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            tagged: HashMap::new(),
            bn_updates: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Flips the sign of one op's backward rule. Used by mutation tests of
    /// the gradient checker.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, op_name: &str) {
        self.fault = Some(op_name.to_string());
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a constant or trainable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let rg = value.requires_grad();
        self.push(value, Op::Leaf, rg)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value.with_requires_grad(false), Op::Leaf, false)
    }

    /// Records a leaf under an external key, reusing the existing leaf when
    /// the key was already recorded.
    pub fn tagged_leaf(&mut self, key: usize, label: &str, make: impl FnOnce() -> Tensor<T>) -> Var {
        if let Some(&v) = self.tagged.get(&key) {
            return v;
        }
        let v = self.leaf(make());
        self.nodes[v.0].label = Some(label.to_string());
        self.tagged.insert(key, v);
        v
    }

    pub fn tagged_vars(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.tagged.iter().map(|(&k, &v)| (k, v))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnStatUpdate<T>> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Drops computed gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Label and index of the first recorded value holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            (!n.value.is_finite()).then(|| match &n.label {
                Some(l) => format!("{l} (node {i})"),
                None => format!("{} output (node {i})", n.op.name()),
            })
        })
    }

    /// Hash of every piecewise branch taken so far: ReLU input signs,
    /// max-pool winners and active angle clamps. Two evaluations with equal
    /// signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Unary(ElementwiseKind::Relu, a) => {
                    i.hash(&mut h);
                    for v in self.value(*a).data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => {
                    i.hash(&mut h);
                    argmax.hash(&mut h);
                }
                Op::Angular { a, b, clamp: Some(eps) } => {
                    i.hash(&mut h);
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let d = va.shape()[1];
                    for (ra, rb) in va.data().chunks_exact(d).zip(vb.data().chunks_exact(d)) {
                        let c = cosine(ra, rb).unwrap_or(0.0);
                        (c.abs() > 1.0 - eps).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    fn unary_value(kind: ElementwiseKind, x: T) -> T {
        match kind {
            ElementwiseKind::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            ElementwiseKind::Tanh => x.tanh(),
            ElementwiseKind::Sigmoid => {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            }
            _ => unreachable!(),
        }
    }

    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => {
                let (va, vb) = (self.value(a), self.value(b));
                if va.shape() != vb.shape() {
                    return Err(Error::shape(kind.name(), va.shape(), vb.shape()));
                }
                let data = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .map(|(&x, &y)| match kind {
                        ElementwiseKind::Add => x + y,
                        ElementwiseKind::Sub => x - y,
                        _ => x * y,
                    })
                    .collect();
                let out = Tensor::new(va.shape().to_vec(), data)?;
                let rg = self.rg(a) || self.rg(b);
                Ok(self.push(out, Op::Binary(kind, a, b), rg))
            }
            (false, None) => {
                let va = self.value(a);
                let data = va.data().iter().map(|&x| Self::unary_value(kind, x)).collect();
                let out = Tensor::new(va.shape().to_vec(), data)?;
                let rg = self.rg(a);
                Ok(self.push(out, Op::Unary(kind, a), rg))
            }
            _ => Err(Error::InvalidArgument(format!(
                "{} takes {} operand(s)",
                kind.name(),
                if kind.is_binary() { 2 } else { 1 }
            ))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Sub, a, Some(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Mul, a, Some(b))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Relu, a, None)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Tanh, a, None)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Sigmoid, a, None)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let va = self.value(a);
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| x * c).collect())?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Scale(a, c), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::shape("matmul", va.shape(), vb.shape()));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut c = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), va.data(), (k as isize, 1), vb.data(), (n as isize, 1), T::zero(), &mut c, (n as isize, 1));
        let out = Tensor::new(vec![m, n], c)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let compatible = va.rank() == vb.rank()
            && axis < va.rank()
            && va
                .shape()
                .iter()
                .zip(vb.shape())
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::shape("concat", va.shape(), vb.shape()));
        }
        let (outer, na, inner) = split_axis(va.shape(), axis);
        let nb = vb.shape()[axis];
        let mut data = Vec::with_capacity(va.numel() + vb.numel());
        for o in 0..outer {
            data.extend_from_slice(&va.data()[o * na * inner..(o + 1) * na * inner]);
            data.extend_from_slice(&vb.data()[o * nb * inner..(o + 1) * nb * inner]);
        }
        let mut shape = va.shape().to_vec();
        shape[axis] = na + nb;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat { a, b, axis }, rg))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() || len == 0 || start + len > vx.shape()[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {:?}", start + len, vx.shape()),
            ));
        }
        let (outer, n, inner) = split_axis(vx.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&vx.data()[base..base + len * inner]);
        }
        let mut shape = vx.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Slice { x, axis, start }, rg))
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let d = *vx.shape().last().unwrap();
        let mut data = vx.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            row.iter_mut().for_each(|v| *v = *v / sum);
        }
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let s: T = vx.data().iter().copied().sum::<T>() / T::of(vx.numel() as f64);
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Repeats a `[d]` or `[1, d]` row `n` times into `[n, d]`.
    pub fn expand_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let vx = self.value(x);
        let ok = vx.rank() == 1 || (vx.rank() == 2 && vx.shape()[0] == 1);
        if !ok || n == 0 {
            return Err(Error::invalid("expand_rows", format!("cannot expand {:?} to {n} rows", vx.shape())));
        }
        let d = vx.numel();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(vx.data());
        }
        let out = Tensor::new(vec![n, d], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::ExpandRows(x), rg))
    }

    /// Repeats an `[n, 1]` column `d` times into `[n, d]`.
    pub fn expand_cols(&mut self, x: Var, d: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 2 || vx.shape()[1] != 1 || d == 0 {
            return Err(Error::invalid("expand_cols", format!("cannot expand {:?} to {d} columns", vx.shape())));
        }
        let n = vx.shape()[0];
        let data = vx.data().iter().flat_map(|&v| std::iter::repeat(v).take(d)).collect();
        let out = Tensor::new(vec![n, d], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::ExpandCols(x), rg))
    }

    /// 3×3 convolution with one pixel of zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vx.rank() != 4 {
            return Err(Error::invalid("conv2d", format!("expected N×C×H×W input, got {:?}", vx.shape())));
        }
        if vw.rank() != 4 || vw.shape()[2] != 3 || vw.shape()[3] != 3 {
            return Err(Error::invalid("conv2d", format!("expected O×C×3×3 kernel, got {:?}", vw.shape())));
        }
        if vw.shape()[1] != vx.shape()[1] {
            return Err(Error::shape("conv2d", vx.shape(), vw.shape()));
        }
        if vb.shape() != [vw.shape()[0]] {
            return Err(Error::shape("conv2d", vw.shape(), vb.shape()));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let s = vx.shape();
        let geom = ConvGeom {
            n: s[0],
            c: s[1],
            h: s[2],
            w: s[3],
            o: vw.shape()[0],
            stride,
        };
        let y = kernels::conv2d_forward(vx.data(), vw.data(), vb.data(), &geom);
        let out = Tensor::new(vec![geom.n, geom.o, geom.ho(), geom.wo()], y)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Per-channel normalization of an `N×C` or `N×C×H×W` input.
    ///
    /// Train mode normalizes with batch statistics and queues a
    /// [`BnStatUpdate`]; eval mode uses the supplied running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[T], &[T]),
        running_keys: (usize, usize),
        eps: f64,
        momentum: f64,
        train: bool,
    ) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 2 && vx.rank() != 4 {
            return Err(Error::invalid("batchnorm", format!("expected rank 2 or 4 input, got {:?}", vx.shape())));
        }
        let (n, c, s) = plane_dims(vx.shape());
        let (vg, vb) = (self.value(gamma), self.value(beta));
        if vg.shape() != [c] || vb.shape() != [c] || running.0.len() != c || running.1.len() != c {
            return Err(Error::shape("batchnorm", vx.shape(), vg.shape()));
        }
        let eps_t = T::of(eps);
        let shape = vx.shape().to_vec();
        let (y, xhat, inv_std) = if train {
            if n < 2 {
                return Err(Error::invalid("batchnorm", "train mode needs a batch of at least 2"));
            }
            let f = kernels::batchnorm_train(vx.data(), n, c, s, vg.data(), vb.data(), eps_t);
            self.bn_updates.push(BnStatUpdate {
                running_mean: running_keys.0,
                running_var: running_keys.1,
                momentum,
                mean: f.mean,
                var: f.var_unbiased,
            });
            (f.y, f.xhat, f.inv_std)
        } else {
            kernels::batchnorm_eval(vx.data(), n, c, s, vg.data(), vb.data(), running.0, running.1, eps_t)
        };
        let out = Tensor::new(shape, y)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
                dims: (n, c, s),
            },
            rg,
        ))
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 4 {
            return Err(Error::invalid("maxpool2x2", format!("expected N×C×H×W input, got {:?}", vx.shape())));
        }
        let s = vx.shape();
        let (y, argmax) = kernels::maxpool2x2_forward(vx.data(), s[0] * s[1], s[2], s[3]);
        let out = Tensor::new(vec![s[0], s[1], kernels::pool_out_dim(s[2]), kernels::pool_out_dim(s[3])], y)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxPool { x, argmax }, rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 4 {
            return Err(Error::invalid("global_avg_pool", format!("expected N×C×H×W input, got {:?}", vx.shape())));
        }
        let (n, c, s) = plane_dims(vx.shape());
        let inv = T::one() / T::of(s as f64);
        let data = vx.data().chunks_exact(s).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::new(vec![n, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::GlobalAvgPool { x, spatial: s }, rg))
    }

    /// Row-wise angle `arccos(a·b / ‖a‖‖b‖)` between two `N×D` inputs.
    ///
    /// With `clamp = Some(eps)` the derivative of `arccos` is taken at the
    /// cosine clipped to `[-1+eps, 1-eps]`, so it stays finite for parallel
    /// inputs. The value itself uses the cosine clipped to `[-1, 1]` and is
    /// exactly zero for identical directions.
    pub fn angular(&mut self, a: Var, b: Var, clamp: Option<f64>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || va.shape() != vb.shape() {
            return Err(Error::shape("angular", va.shape(), vb.shape()));
        }
        let (n, d) = (va.shape()[0], va.shape()[1]);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (ra, rb) = (&va.data()[i * d..(i + 1) * d], &vb.data()[i * d..(i + 1) * d]);
            let c = cosine(ra, rb)?;
            let c = match clamp {
                Some(_) => c.clamp(-1.0, 1.0),
                None => c,
            };
            out.push(T::of(c.acos()));
        }
        let out = Tensor::new(vec![n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Angular { a, b, clamp }, rg))
    }

    /// Reverse pass from a scalar root. Gradients land on every node that
    /// requires them and are read back with [`grad`](Tape::grad).
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::StaleTape);
        }
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.backward_done = true;
        if !self.rg(root) {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let flip = self
            .fault
            .as_deref()
            .is_some_and(|f| f == self.nodes[i].op.name());
        let mut pending: Vec<(Var, Vec<T>)> = Vec::with_capacity(3);
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (a, b) = (*a, *b);
                match kind {
                    ElementwiseKind::Add => {
                        pending.push((a, g.to_vec()));
                        pending.push((b, g.to_vec()));
                    }
                    ElementwiseKind::Sub => {
                        pending.push((a, g.to_vec()));
                        pending.push((b, g.iter().map(|&x| -x).collect()));
                    }
                    _ => {
                        if rg(a) {
                            pending.push((a, g.iter().zip(val(b)).map(|(&x, &y)| x * y).collect()));
                        }
                        if rg(b) {
                            pending.push((b, g.iter().zip(val(a)).map(|(&x, &y)| x * y).collect()));
                        }
                    }
                }
            }
            Op::Unary(kind, a) => {
                let y = node.value.data();
                let x = val(*a);
                let d: Vec<T> = match kind {
                    ElementwiseKind::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                    ElementwiseKind::Tanh => g.iter().zip(y).map(|(&g, &y)| g * (T::one() - y * y)).collect(),
                    _ => g.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
                };
                pending.push((*a, d));
            }
            Op::Scale(a, c) => pending.push((*a, g.iter().map(|&x| x * *c).collect())),
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, T::one(), g, (n as isize, 1), vb.data(), (1, n as isize), T::zero(), &mut da, (k as isize, 1));
                    pending.push((*a, da));
                }
                if rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, T::one(), va.data(), (1, k as isize), g, (n as isize, 1), T::zero(), &mut db, (n as isize, 1));
                    pending.push((*b, db));
                }
            }
            Op::Concat { a, b, axis } => {
                let sa = self.nodes[a.0].value.shape();
                let (outer, na, inner) = split_axis(sa, *axis);
                let nb = self.nodes[b.0].value.shape()[*axis];
                let (mut ga, mut gb) = (Vec::new(), Vec::new());
                for o in 0..outer {
                    let base = o * (na + nb) * inner;
                    ga.extend_from_slice(&g[base..base + na * inner]);
                    gb.extend_from_slice(&g[base + na * inner..base + (na + nb) * inner]);
                }
                pending.push((*a, ga));
                pending.push((*b, gb));
            }
            Op::Slice { x, axis, start } => {
                let sx = self.nodes[x.0].value.shape();
                let (outer, n, inner) = split_axis(sx, *axis);
                let len = node.value.shape()[*axis];
                let mut gx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                pending.push((*x, gx));
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let d = *node.value.shape().last().unwrap();
                let mut gx = vec![T::zero(); y.len()];
                for ((gr, yr), out) in g.chunks_exact(d).zip(y.chunks_exact(d)).zip(gx.chunks_exact_mut(d)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                pending.push((*x, gx));
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                pending.push((*x, vec![g[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                pending.push((*x, vec![g[0] / T::of(n as f64); n]));
            }
            Op::Reshape(x) => pending.push((*x, g.to_vec())),
            Op::ExpandRows(x) => {
                let d = self.nodes[x.0].value.numel();
                let mut gx = vec![T::zero(); d];
                for row in g.chunks_exact(d) {
                    gx.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                }
                pending.push((*x, gx));
            }
            Op::ExpandCols(x) => {
                let d = node.value.shape()[1];
                pending.push((*x, g.chunks_exact(d).map(|r| r.iter().copied().sum()).collect()));
            }
            Op::Conv2d { x, w, b, geom } => {
                let grads = kernels::conv2d_backward(val(*x), val(*w), g, geom, (rg(*x), rg(*w), rg(*b)));
                if let Some(dx) = grads.dx {
                    pending.push((*x, dx));
                }
                if let Some(dw) = grads.dw {
                    pending.push((*w, dw));
                }
                if let Some(db) = grads.db {
                    pending.push((*b, db));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
                dims: (n, c, s),
            } => {
                let (n, c, s) = (*n, *c, *s);
                let gam = val(*gamma);
                if rg(*gamma) || rg(*beta) {
                    let mut dg = vec![T::zero(); c];
                    let mut db = vec![T::zero(); c];
                    for bi in 0..n {
                        for ch in 0..c {
                            let off = (bi * c + ch) * s;
                            for k in off..off + s {
                                dg[ch] = dg[ch] + g[k] * xhat[k];
                                db[ch] = db[ch] + g[k];
                            }
                        }
                    }
                    pending.push((*gamma, dg));
                    pending.push((*beta, db));
                }
                if rg(*x) {
                    let dx = if *train {
                        kernels::batchnorm_train_dx(g, xhat, inv_std, gam, n, c, s)
                    } else {
                        let mut dx = vec![T::zero(); g.len()];
                        for bi in 0..n {
                            for ch in 0..c {
                                let off = (bi * c + ch) * s;
                                for k in off..off + s {
                                    dx[k] = g[k] * gam[ch] * inv_std[ch];
                                }
                            }
                        }
                        dx
                    };
                    pending.push((*x, dx));
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![T::zero(); self.nodes[x.0].value.numel()];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    gx[idx] = gx[idx] + gv;
                }
                pending.push((*x, gx));
            }
            Op::GlobalAvgPool { x, spatial } => {
                let inv = T::one() / T::of(*spatial as f64);
                let gx = g.iter().flat_map(|&v| std::iter::repeat(v * inv).take(*spatial)).collect();
                pending.push((*x, gx));
            }
            Op::Angular { a, b, clamp } => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let d = va.shape()[1];
                let mut ga = vec![T::zero(); va.numel()];
                let mut gb = vec![T::zero(); vb.numel()];
                for (row, &gr) in g.iter().enumerate() {
                    let ra: Vec<f64> = va.data()[row * d..(row + 1) * d].iter().map(|v| v.as_f64()).collect();
                    let rb: Vec<f64> = vb.data()[row * d..(row + 1) * d].iter().map(|v| v.as_f64()).collect();
                    let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let c = ra.iter().zip(&rb).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
                    let cs = clamp.map_or(c, |eps| c.clamp(-1.0 + eps, 1.0 - eps));
                    let dtheta = -gr.as_f64() / (1.0 - cs * cs).sqrt();
                    for j in 0..d {
                        let dca = rb[j] / (na * nb) - c * ra[j] / (na * na);
                        let dcb = ra[j] / (na * nb) - c * rb[j] / (nb * nb);
                        ga[row * d + j] = T::of(dtheta * dca);
                        gb[row * d + j] = T::of(dtheta * dcb);
                    }
                }
                pending.push((*a, ga));
                pending.push((*b, gb));
            }
        }
        for (v, mut gv) in pending {
            if flip {
                gv.iter_mut().for_each(|x| *x = -*x);
            }
            self.acc(v, gv);
        }
    }
}

fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    let na = a.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("angular"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum::<f64>() / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    fn param(tape: &mut Tape<f64>, shape: &[usize], data: &[f64]) -> Var {
        tape.leaf(t(shape, data).with_requires_grad(true))
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.constant(t(&[1], &[0.0]));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
    }

    #[test]
    fn binary_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn matmul_hand_values() {
        let mut tape = Tape::<f64>::new();
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
        let r = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let p = tape.matmul(r, c).unwrap();
        assert_eq!(tape.value(p).data(), &[11.0]);
        assert!(tape.matmul(r, r).is_err());
    }

    #[test]
    fn concat_and_gradient_slices() {
        let mut tape = Tape::<f64>::new();
        let a = param(&mut tape, &[2], &[1.0, 2.0]);
        let b = param(&mut tape, &[1], &[3.0]);
        let c = tape.concat(a, b, 0).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
        let w = tape.constant(t(&[3], &[10.0, 20.0, 30.0]));
        let p = tape.mul(c, w).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[10.0, 20.0]);
        assert_eq!(tape.grad(b).unwrap(), &[30.0]);
    }

    #[test]
    fn concat_feature_axis_width() {
        let mut tape = Tape::<f32>::new();
        let h = tape.constant(Tensor::zeros(vec![1, 256]));
        let f = tape.constant(Tensor::zeros(vec![1, 256]));
        let c = tape.concat(h, f, 1).unwrap();
        assert_eq!(tape.shape(c), &[1, 512]);
        let bad = tape.constant(Tensor::zeros(vec![2, 256]));
        assert!(tape.concat(h, bad, 1).is_err());
    }

    #[test]
    fn softmax_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[0.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
        let x = tape.constant(t(&[2], &[2f64.ln(), 0.0]));
        let y = tape.softmax(x).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12 && (v[1] - 1.0 / 3.0).abs() < 1e-12);
        let x = tape.constant(t(&[2], &[1000.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        let v = tape.value(y).data();
        assert!(v.iter().all(|v| v.is_finite()));
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-300);
        let x = tape.constant(t(&[2], &[f64::NAN, 0.0]));
        assert!(matches!(tape.softmax(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn backward_square_and_relu() {
        let mut tape = Tape::<f64>::new();
        let x = param(&mut tape, &[1], &[3.0]);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);

        let mut tape = Tape::<f64>::new();
        let x = param(&mut tape, &[2], &[-1.0, 2.0]);
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = param(&mut tape, &[1], &[0.0]);
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::<f64>::new();
        let x = param(&mut tape, &[2], &[1.0, 2.0]);
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot(_))));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::StaleTape)));
        tape.reset_grads();
        tape.backward(s).unwrap();
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = param(&mut tape, &[1], &[2.0]);
        let a = tape.scale(x, 3.0).unwrap();
        let b = tape.mul(x, x).unwrap();
        let y = tape.add(a, b).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn conv_delta_kernel_and_ones() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let x = tape.constant(t(&[1, 1, 4, 4], &data));
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = tape.constant(t(&[1, 1, 3, 3], &k));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b, 1).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);

        let x = tape.constant(t(&[1, 1, 3, 3], &[1.0; 9]));
        let w = tape.constant(t(&[1, 1, 3, 3], &[1.0; 9]));
        let y = tape.conv2d(x, w, b, 1).unwrap();
        assert_eq!(tape.value(y).data()[4], 9.0);
        assert_eq!(tape.value(y).data()[0], 4.0);

        let w2 = tape.constant(t(&[1, 2, 3, 3], &[1.0; 18]));
        assert!(tape.conv2d(x, w2, b, 1).is_err());
    }

    #[test]
    fn conv_stride_output_dims() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 1, 7, 8]));
        let w = tape.constant(Tensor::zeros(vec![2, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(vec![2]));
        let y = tape.conv2d(x, w, b, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 4, 4]);
    }

    #[test]
    fn maxpool_values_and_tie_routing() {
        let mut tape = Tape::<f64>::new();
        let x = param(&mut tape, &[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = tape.maxpool2x2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);

        let mut tape = Tape::<f64>::new();
        let x = param(&mut tape, &[1, 1, 2, 4], &[5.0; 8]);
        let y = tape.maxpool2x2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 5.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_224_four_times_gives_14() {
        let mut h = 224;
        for _ in 0..4 {
            h = kernels::pool_out_dim(h);
        }
        assert_eq!(h, 14);
    }

    #[test]
    fn gap_constant_and_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = param(&mut tape, &[1, 2, 2, 3], &[7.0; 12]);
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0, 7.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|&g| (g - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn angular_zero_norm_is_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[1, 3], &[0.0, 0.0, 0.0]));
        let b = tape.constant(t(&[1, 3], &[0.0, 0.0, 1.0]));
        assert!(matches!(tape.angular(a, b, Some(1e-7)), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn batchnorm_rejects_single_sample_in_train() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let g = tape.constant(t(&[2], &[1.0, 1.0]));
        let b = tape.constant(t(&[2], &[0.0, 0.0]));
        let rm = [0.0, 0.0];
        let rv = [1.0, 1.0];
        assert!(tape.batch_norm(x, g, b, (&rm, &rv), (0, 1), 1e-5, 0.1, true).is_err());
        assert!(tape.batch_norm(x, g, b, (&rm, &rv), (0, 1), 1e-5, 0.1, false).is_ok());
    }

    #[test]
    fn first_non_finite_names_node() {
        let mut tape = Tape::<f64>::new();
        let x = tape.tagged_leaf(0, "face.fc.weight", || t(&[1], &[f64::INFINITY]));
        let _ = tape.scale(x, 2.0).unwrap();
        assert!(tape.first_non_finite().unwrap().starts_with("face.fc.weight"));
    }
}
