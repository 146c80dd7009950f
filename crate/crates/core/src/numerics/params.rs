use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a registered parameter. Only meaningful for the store that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors. Iteration is ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Contract(format!("parameter `{name}` registered twice")));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Registers a tensor drawn from uniform(-s, s) with s = 1/sqrt(fan_in).
    pub fn register_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let s = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        for v in t.values_mut() {
            *v = rng.random_range(-s..s);
        }
        self.register(name, t)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.by_name
            .iter()
            .map(move |(n, &id)| (id, n.as_str(), &self.tensors[id.0]))
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.by_name.values().copied().collect()
    }

    pub fn zero_all(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            params: self.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    /// Rebuilds a store from a checkpoint. Registration order follows name order.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        let mut store = ParamStore::new();
        for (name, t) in &ck.params {
            let t = Tensor::new(t.shape().to_vec(), t.values().to_vec())?;
            store.register(name, t)?;
        }
        Ok(store)
    }

    /// Copies values from `other` into this store, matching by name and shape.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, model expects {}",
                other.len(),
                self.len()
            )));
        }
        for (name, &id) in &self.by_name {
            let src = other
                .id(name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing `{name}`")))?;
            let src = other.get(src);
            let dst = &mut self.tensors[id.0];
            if src.shape() != dst.shape() {
                return Err(Error::shape(name.clone(), dst.shape(), src.shape()));
            }
            dst.values_mut().copy_from_slice(src.values());
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint()).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_checkpoint(&ck)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized parameter map: name → shape + values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: BTreeMap<String, Tensor>,
}

/// Gradient buffers aligned with a [`ParamStore`]. A `None` slot means the
/// gradient was never supplied, which is different from an all-zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            slots: store.tensors.iter().map(|t| Some(Tensor::zeros(t.shape()))).collect(),
        }
    }

    /// No gradient recorded for any parameter.
    pub fn empty(store: &ParamStore) -> Self {
        Self {
            slots: vec![None; store.len()],
        }
    }

    pub fn set(&mut self, id: ParamId, t: Tensor) {
        self.slots[id.0] = Some(t);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.slots[id.0]
            .as_mut()
            .expect("gradient slot not allocated")
            .values_mut()
    }

    pub fn global_norm(&self) -> f64 {
        self.slots.iter().flatten().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.slots.iter_mut().flatten() {
            t.values_mut().iter_mut().for_each(|v| *v *= k);
        }
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.values_mut().iter_mut().zip(b.values()).for_each(|(x, y)| *x += y),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    /// Flattened values in the store's name order; `None` slots contribute zeros.
    pub fn flatten(&self, store: &ParamStore) -> Vec<f64> {
        let mut out = Vec::with_capacity(store.num_values());
        for (id, _, t) in store.iter() {
            match self.get(id) {
                Some(g) => out.extend_from_slice(g.values()),
                None => out.extend(std::iter::repeat_n(0.0, t.len())),
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(Tensor::is_finite)
    }
}
