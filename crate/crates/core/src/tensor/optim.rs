//! Named parameter table and the Adam optimizer.

use super::Tensor;
use crate::io::{
    read_f64, read_string, read_u32, read_u64, write_f64, write_string, write_u32, write_u64,
};
use std::collections::BTreeMap;
use std::io::{self, Read, Write};

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Parameter table keyed by unique name. Iteration order is the sorted name
/// order, which keeps optimizer updates and checkpoints deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let grad = Tensor::zeros(value.rows(), value.cols());
        let prev = self.params.insert(
            name.to_string(),
            Parameter {
                name: name.to_string(),
                value,
                grad,
            },
        );
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Parameter {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Parameter {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor, scale: f64) {
        let p = self.get_mut(name);
        assert_eq!(p.grad.shape(), grad.shape(), "gradient shape for {name}");
        for (g, &d) in p.grad.data_mut().iter_mut().zip(grad.data()) {
            *g += scale * d;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Rescales all gradients when their global L2 norm exceeds `max_norm`.
    pub fn clip_global_grad_norm(&mut self, max_norm: f64) {
        if max_norm <= 0.0 {
            return;
        }
        let total: f64 = self
            .params
            .values()
            .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum();
        let norm = total.sqrt();
        if norm > max_norm {
            let scale = max_norm / norm;
            for p in self.params.values_mut() {
                p.grad.scale_assign(scale);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.values_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip applied before each update; 0 disables.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 0.0,
        }
    }
}

/// Adam with bias correction. Moment tensors are created lazily per
/// parameter and live in name order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        store.clip_global_grad_norm(self.config.clip_norm);
        self.step += 1;
        let t = self.step as f64;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for p in store.iter_mut() {
            let (m, v) = self.moments.entry(p.name.clone()).or_insert_with(|| {
                (
                    Tensor::zeros(p.value.rows(), p.value.cols()),
                    Tensor::zeros(p.value.rows(), p.value.cols()),
                )
            });
            for i in 0..p.value.len() {
                let g = p.grad.data()[i];
                let mi = c.beta1 * m.data()[i] + (1.0 - c.beta1) * g;
                let vi = c.beta2 * v.data()[i] + (1.0 - c.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.value.data_mut()[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }

    pub(crate) fn state(&self) -> (u64, &BTreeMap<String, (Tensor, Tensor)>) {
        (self.step, &self.moments)
    }

    pub(crate) fn restore(
        config: AdamConfig,
        step: u64,
        moments: BTreeMap<String, (Tensor, Tensor)>,
    ) -> Self {
        Adam {
            config,
            step,
            moments,
        }
    }

    /// Appends zero rows to the moment tensors of `name`, matching a
    /// parameter that grew the same way.
    pub(crate) fn extend_rows(&mut self, name: &str, new_rows: usize) {
        if let Some((m, v)) = self.moments.get_mut(name) {
            let cols = m.cols();
            let grow = |t: &Tensor| {
                let mut data = t.data().to_vec();
                data.resize(new_rows * cols, 0.0);
                Tensor::from_vec(new_rows, cols, data)
            };
            *m = grow(m);
            *v = grow(v);
        }
    }
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> io::Result<()> {
    write_u32(w, t.rows() as u32)?;
    write_u32(w, t.cols() as u32)?;
    for &v in t.data() {
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> io::Result<Tensor> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(read_f64(r)?);
    }
    Ok(Tensor::from_vec(rows, cols, data))
}

/// Parameter table in name order: count, then name/shape/values per entry.
pub(crate) fn write_param_store<W: Write>(w: &mut W, store: &ParamStore) -> io::Result<()> {
    write_u32(w, store.len() as u32)?;
    for p in store.iter() {
        write_string(w, &p.name)?;
        write_tensor(w, &p.value)?;
    }
    Ok(())
}

pub(crate) fn read_param_table<R: Read>(r: &mut R) -> io::Result<BTreeMap<String, Tensor>> {
    let count = read_u32(r)? as usize;
    let mut table = BTreeMap::new();
    for _ in 0..count {
        let name = read_string(r)?;
        let value = read_tensor(r)?;
        table.insert(name, value);
    }
    Ok(table)
}

/// Optimizer state: hyperparameters, step counter, first/second moments.
pub(crate) fn write_adam<W: Write>(w: &mut W, adam: &Adam) -> io::Result<()> {
    let c = adam.config;
    write_f64(w, c.lr)?;
    write_f64(w, c.beta1)?;
    write_f64(w, c.beta2)?;
    write_f64(w, c.eps)?;
    write_f64(w, c.clip_norm)?;
    let (step, moments) = adam.state();
    write_u64(w, step)?;
    write_u32(w, moments.len() as u32)?;
    for (name, (m, v)) in moments {
        write_string(w, name)?;
        write_tensor(w, m)?;
        write_tensor(w, v)?;
    }
    Ok(())
}

pub(crate) fn read_adam<R: Read>(r: &mut R) -> io::Result<Adam> {
    let config = AdamConfig {
        lr: read_f64(r)?,
        beta1: read_f64(r)?,
        beta2: read_f64(r)?,
        eps: read_f64(r)?,
        clip_norm: read_f64(r)?,
    };
    let step = read_u64(r)?;
    let count = read_u32(r)? as usize;
    let mut moments = BTreeMap::new();
    for _ in 0..count {
        let name = read_string(r)?;
        let m = read_tensor(r)?;
        let v = read_tensor(r)?;
        moments.insert(name, (m, v));
    }
    Ok(Adam::restore(config, step, moments))
}
