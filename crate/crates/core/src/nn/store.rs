use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Role of a stored tensor; drives weight decay and optimizer membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution / linear weights: trained, weight-decayed.
    Weight,
    /// Biases: trained, no weight decay.
    Bias,
    /// Normalization scale/shift: trained, no weight decay.
    Norm,
    /// Running statistics: saved in checkpoints, never trained.
    Buffer,
}

impl ParamKind {
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::Buffer)
    }

    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

#[derive(Debug, Clone)]
struct Entry {
    var: Var,
    kind: ParamKind,
}

#[derive(Debug)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
            entries: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&mut self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.get(name).map(|e| &e.var)
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.entries.get(name).map(|e| e.kind)
    }

    /// All stored tensors (trainable and buffers) in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var, ParamKind)> {
        self.entries
            .iter()
            .map(|(n, e)| (n.as_str(), &e.var, e.kind))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Var, ParamKind)> {
        self.iter().filter(|(_, _, k)| k.is_trainable())
    }

    /// Number of trainable scalars, optionally restricted to a name prefix.
    pub fn num_trainable(&self, prefix: &str) -> usize {
        self.trainable()
            .filter(|(n, _, _)| n.starts_with(prefix))
            .map(|(_, v, _)| v.elem_count())
            .sum()
    }

    /// Overwrites a stored tensor; shape must match.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Shape(format!("unknown parameter `{name}`")))?;
        if entry.var.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                entry.var.dims(),
                value.dims()
            )));
        }
        let value = value.to_dtype(self.dtype)?.to_device(&self.device)?;
        entry.var.set(&value)?;
        Ok(())
    }

    /// Sets every trainable tensor whose name satisfies `pred` to zero.
    pub fn zero_where(&self, pred: impl Fn(&str) -> bool) -> Result<()> {
        for (name, entry) in &self.entries {
            if pred(name) {
                entry.var.set(&entry.var.zeros_like()?)?;
            }
        }
        Ok(())
    }

    /// Snapshot of all tensors, detached from the graph.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(n, e)| (n.clone(), e.var.as_tensor().detach()))
            .collect()
    }

    fn insert(&mut self, name: String, tensor: Tensor, kind: ParamKind) -> Result<Var> {
        if self.entries.contains_key(&name) {
            return Err(Error::Shape(format!("duplicate parameter name `{name}`")));
        }
        let var = Var::from_tensor(&tensor)?;
        self.entries.insert(
            name,
            Entry {
                var: var.clone(),
                kind,
            },
        );
        Ok(var)
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        Ok(Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?)
    }
}

/// A naming scope inside a [`ParamStore`].
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl Scope<'_> {
    pub fn sub(&mut self, name: &str) -> Scope<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Scope {
            store: self.store,
            prefix,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn fan_in_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        kind: ParamKind,
    ) -> Result<Var> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = self.store.uniform(shape, bound)?;
        let full = self.full(name);
        self.store.insert(full, t, kind)
    }

    pub fn constant(
        &mut self,
        name: &str,
        shape: &[usize],
        value: f64,
        kind: ParamKind,
    ) -> Result<Var> {
        let t = (Tensor::ones(shape, self.store.dtype, &self.store.device)? * value)?;
        let full = self.full(name);
        self.store.insert(full, t, kind)
    }
}
