//! Named trainable parameters with paired gradient buffers.

use std::collections::BTreeMap;

use rand::Rng;

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn index(self) -> usize {
        self.0
    }
    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

/// Flat store of named parameters. Gradient buffers always match the value
/// shapes and are zero after registration, [`ParamStore::zero_grads`], and
/// every optimizer step.
#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    by_name: BTreeMap<String, ParamId>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter `{name}`"
        );
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), id);
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.trainable.push(true);
        id
    }

    pub fn register_frozen(&mut self, name: &str, value: Tensor) -> ParamId {
        let id = self.register(name, value);
        self.trainable[id.0] = false;
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParam {
                name: name.to_string(),
            })
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Sorted (name, value) view, for checkpointing.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.by_name
            .iter()
            .map(|(n, id)| (n.as_str(), &self.values[id.0]))
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(self.values[id.0].shape(), value.shape());
        self.values[id.0] = value;
    }

    /// Adds a backward pass's gradients into the store.
    pub fn accumulate(&mut self, grads: &[(ParamId, Tensor)]) {
        for (id, g) in grads {
            let dst = &mut self.grads[id.0];
            debug_assert_eq!(dst.shape(), g.shape());
            for (d, s) in dst.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
        }
    }

    pub fn scale_grads(&mut self, c: f64) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}

/// Gaussian init via Box-Muller on a seeded stream.
pub fn normal_tensor(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        data.push(r * c * std);
        if data.len() < n {
            data.push(r * s * std);
        }
    }
    Tensor::from_vec_unchecked(shape.to_vec(), data)
}
