use std::collections::HashMap;

use rand::Rng;

use super::tape::Tape;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named trainable tensors with their gradient buffers and Adam moments.
#[derive(Debug, Clone)]
pub struct Parameters<T: Scalar = f32> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Vec<T>>,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
    step: u64,
    lookup: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for Parameters<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Parameters<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
            lookup: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.names.len());
        let n = value.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.grads.push(vec![T::ZERO; n]);
        self.first_moment.push(vec![T::ZERO; n]);
        self.second_moment.push(vec![T::ZERO; n]);
        Ok(id)
    }

    /// `[fan_in, fan_out]` weight drawn uniformly from `[-a, a]`,
    /// `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::from_f64(rng.random_range(-a..=a)))
            .collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data)?)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.lookup
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    pub fn moments(&self, id: ParamId) -> (&[T], &[T]) {
        (&self.first_moment[id.0], &self.second_moment[id.0])
    }

    pub(crate) fn set_moments(&mut self, id: ParamId, m: Vec<T>, v: Vec<T>) -> Result<()> {
        let n = self.values[id.0].len();
        if m.len() != n || v.len() != n {
            return Err(Error::ShapeMismatch {
                op: "set_moments",
                lhs: vec![n],
                rhs: vec![m.len(), v.len()],
            });
        }
        self.first_moment[id.0] = m;
        self.second_moment[id.0] = v;
        Ok(())
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Add the parameter gradients recorded on `tape` into the grad buffers.
    pub fn accumulate_grads<U: Scalar>(&mut self, tape: &Tape<U>) {
        for (id, g) in tape.param_grads() {
            for (dst, &src) in self.grads[id.0].iter_mut().zip(g) {
                *dst += T::from_f64(src.to_f64());
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = T::ZERO);
        }
    }

    /// One bias-corrected Adam update of every parameter, then zero the grads.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let c1 = T::from_f64(1.0 - cfg.beta1);
        let c2 = T::from_f64(1.0 - cfg.beta2);
        let bias1 = T::from_f64(1.0 - cfg.beta1.powi(t));
        let bias2 = T::from_f64(1.0 - cfg.beta2.powi(t));
        let lr = T::from_f64(cfg.lr);
        let eps = T::from_f64(cfg.eps);
        for i in 0..self.values.len() {
            let w = self.values[i].data_mut();
            let g = &self.grads[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..w.len() {
                m[j] = b1 * m[j] + c1 * g[j];
                v[j] = b2 * v[j] + c2 * g[j] * g[j];
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.zero_grad();
    }

    /// Same parameters in another precision; optimizer state is carried over.
    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        Parameters {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(conv).collect(),
            first_moment: self.first_moment.iter().map(conv).collect(),
            second_moment: self.second_moment.iter().map(conv).collect(),
            step: self.step,
            lookup: self.lookup.clone(),
        }
    }
}
