use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Array, Result, Scalar, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameters in insertion order, with gradient accumulators and
/// Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    by_name: BTreeMap<String, ParamId>,
    values: Vec<Array<S>>,
    grads: Vec<Array<S>>,
    m: Vec<Array<S>>,
    v: Vec<Array<S>>,
    step: u64,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            by_name: BTreeMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Array<S>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        let (r, c) = value.shape();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.grads.push(Array::zeros(r, c));
        self.m.push(Array::zeros(r, c));
        self.v.push(Array::zeros(r, c));
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array<S> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array<S> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Array<S> {
        &self.grads[id.0]
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Array<S>) {
        self.grads[id.0].add_assign(g);
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = S::zero());
        }
    }

    pub fn scale_grads(&mut self, s: S) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = *x * s);
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn load(&mut self, name: &str, value: Array<S>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| TensorError::Invalid(format!("unknown parameter {name}")))?;
        if value.shape() != self.values[id.0].shape() {
            return Err(TensorError::Shape {
                op: "load",
                left: self.values[id.0].shape(),
                right: value.shape(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<S>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// One bias-corrected Adam update over every parameter whose name passes
    /// `filter`, then zeroes all gradients.
    pub fn adam_step_filtered(&mut self, lr: f64, cfg: &AdamConfig, filter: impl Fn(&str) -> bool) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = S::from_f64(cfg.beta1);
        let b2 = S::from_f64(cfg.beta2);
        let c1 = S::one() - b1.powi(t);
        let c2 = S::one() - b2.powi(t);
        let lr = S::from_f64(lr);
        let eps = S::from_f64(cfg.eps);
        for k in 0..self.values.len() {
            if !filter(&self.names[k]) {
                continue;
            }
            let g = self.grads[k].data();
            let m = self.m[k].data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + (S::one() - b1) * gi;
            }
            let v = self.v[k].data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
            }
            let (m, v) = (self.m[k].data(), self.v[k].data());
            for ((p, &mi), &vi) in self.values[k].data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mi / c1;
                let vhat = vi / c2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.zero_grads();
    }

    pub fn adam_step(&mut self, lr: f64, cfg: &AdamConfig) {
        self.adam_step_filtered(lr, cfg, |_| true);
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            by_name: self.by_name.clone(),
            values: self.values.iter().map(Array::cast).collect(),
            grads: self.grads.iter().map(Array::cast).collect(),
            m: self.m.iter().map(Array::cast).collect(),
            v: self.v.iter().map(Array::cast).collect(),
            step: self.step,
        }
    }
}
