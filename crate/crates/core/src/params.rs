//! Named parameter and buffer storage shared by layers, optimizers and
//! checkpoints.

use crate::error::{Error, Result};
use crate::tensor::{BnStatUpdate, Scalar, Tape, Tensor, Var};

/// Index of a trainable tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Index of a non-trainable tensor (running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar = f32> {
    params: Vec<(String, Tensor<T>)>,
    buffers: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.params.push((name.into(), tensor.with_requires_grad(true)));
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> BufferId {
        self.buffers.push((name.into(), tensor.with_requires_grad(false)));
        BufferId(self.buffers.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].0
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].1
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].1
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id.0].1
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn find_buffer(&self, name: &str) -> Option<BufferId> {
        self.buffers.iter().position(|(n, _)| n == name).map(BufferId)
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Trainable and buffer tensors in insertion order, parameters first.
    pub fn named_tensors(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params
            .iter()
            .chain(&self.buffers)
            .map(|(n, t)| (n.as_str(), t))
    }

    /// Records the parameter on the tape, once per tape.
    pub fn var(&self, tape: &mut Tape<T>, id: ParamId) -> Var {
        let (name, t) = &self.params[id.0];
        tape.tagged_leaf(id.0, name, || t.clone())
    }

    /// Adds the tape's gradients into every parameter recorded on it.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>) {
        let mut tagged: Vec<(usize, Var)> = tape.tagged_vars().collect();
        tagged.sort_unstable();
        for (id, var) in tagged {
            if let Some(g) = tape.grad(var) {
                self.params[id].1.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    /// Folds queued batch statistics into the running buffers:
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn commit_bn_updates(&mut self, updates: Vec<BnStatUpdate<T>>) {
        for u in updates {
            let m = T::of(u.momentum);
            let keep = T::one() - m;
            for (key, batch) in [(u.running_mean, &u.mean), (u.running_var, &u.var)] {
                let buf = self.buffers[key].1.data_mut();
                for (r, &b) in buf.iter_mut().zip(batch) {
                    *r = keep * *r + m * b;
                }
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            buffers: self.buffers.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Overwrites values by name from another store with identical layout.
    pub fn load_from(&mut self, named: impl IntoIterator<Item = (String, Tensor<T>)>) -> Result<()> {
        for (name, t) in named {
            let slot = if let Some(id) = self.find(&name) {
                &mut self.params[id.0].1
            } else if let Some(id) = self.find_buffer(&name) {
                &mut self.buffers[id.0].1
            } else {
                return Err(Error::Malformed(format!("unknown tensor `{name}`")));
            };
            if slot.shape() != t.shape() {
                return Err(Error::GeometryMismatch {
                    expected: format!("{name} {:?}", slot.shape()),
                    actual: format!("{:?}", t.shape()),
                });
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn all_finite(&self) -> std::result::Result<(), String> {
        for (name, t) in self.params.iter().chain(&self.buffers) {
            if !t.is_finite() {
                return Err(name.clone());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn var_is_recorded_once_per_tape() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add_param("w", Tensor::full(vec![2], 1.5));
        let mut tape = Tape::new();
        let a = store.var(&mut tape, id);
        let b = store.var(&mut tape, id);
        assert_eq!(a, b);
        let p = tape.mul(a, b).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        store.accumulate_grads(&tape);
        assert_eq!(store.get(id).grad().unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn backward_is_additive_across_tapes() {
        let mut joint = ParamStore::<f64>::new();
        let id = joint.add_param("w", Tensor::from_f64(vec![3], &[0.3, -1.2, 2.0]).unwrap());
        let mut split = joint.clone();

        let build = |store: &ParamStore<f64>, tape: &mut Tape<f64>, which: u8| {
            let w = store.var(tape, id);
            let y1 = {
                let t = tape.tanh(w).unwrap();
                tape.sum(t).unwrap()
            };
            let y2 = {
                let m = tape.mul(w, w).unwrap();
                tape.sum(m).unwrap()
            };
            match which {
                0 => tape.add(y1, y2).unwrap(),
                1 => y1,
                _ => y2,
            }
        };
        let mut tape = Tape::new();
        let y = build(&joint, &mut tape, 0);
        tape.backward(y).unwrap();
        joint.accumulate_grads(&tape);
        for which in [1, 2] {
            let mut tape = Tape::new();
            let y = build(&split, &mut tape, which);
            tape.backward(y).unwrap();
            split.accumulate_grads(&tape);
        }
        for (a, b) in joint.get(id).grad().unwrap().iter().zip(split.get(id).grad().unwrap()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn running_stats_follow_momentum_rule() {
        let mut store = ParamStore::<f64>::new();
        let m = store.add_buffer("bn.running_mean", Tensor::zeros(vec![1]));
        let v = store.add_buffer("bn.running_var", Tensor::full(vec![1], 1.0));
        store.commit_bn_updates(vec![BnStatUpdate {
            running_mean: m.0,
            running_var: v.0,
            momentum: 0.1,
            mean: vec![2.0],
            var: vec![3.0],
        }]);
        assert!((store.buffer(m).data()[0] - 0.2).abs() < 1e-12);
        assert!((store.buffer(v).data()[0] - 1.2).abs() < 1e-12);
    }
}
