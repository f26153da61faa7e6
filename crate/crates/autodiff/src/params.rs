use std::collections::HashMap;

use rand::Rng;

use crate::error::{dim_err, AutodiffError, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named learnable tensor with its Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> Param<T> {
    fn new(name: String, shape: Vec<usize>, data: Vec<T>) -> Self {
        let n = data.len();
        Self {
            name,
            shape,
            data,
            grad: vec![T::zero(); n],
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Named parameters in registration order. Registration order is the
/// checkpoint order and the gradient reduction order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, shape: &[usize], data: Vec<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(AutodiffError::Contract(format!("duplicate parameter name {name}")));
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(AutodiffError::Contract(format!(
                "parameter {name} has invalid shape {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return dim_err(
                "register",
                format!("{name}: shape {shape:?} needs {n} values, got {}", data.len()),
            );
        }
        let id = ParamId(self.params.len());
        self.params.push(Param::new(name.to_string(), shape.to_vec(), data));
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Registers a parameter filled with `U(-scale, scale)` draws.
    pub fn register_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.gen_range(-scale..=scale))).collect();
        self.register(name, shape, data)
    }

    pub fn register_constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        self.register(name, shape, vec![T::lit(value); n])
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

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn total_numel(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds `grad` into the gradient of `id` starting at flat `offset`.
    pub fn accumulate(&mut self, id: ParamId, offset: usize, grad: &[T]) {
        let dst = &mut self.params[id.0].grad[offset..offset + grad.len()];
        for (d, g) in dst.iter_mut().zip(grad) {
            *d = *d + *g;
        }
    }

    pub fn scale_grads(&mut self, c: T) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = *g * c);
        }
    }

    /// Returns a copy in another precision. Optimizer state is not carried.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            let data = p.data.iter().map(|x| U::lit(x.to_f64().unwrap())).collect();
            out.register(&p.name, &p.shape, data).expect("cast preserves validity");
        }
        out
    }

    /// True when every value matches `other` bit for bit (names and shapes too).
    pub fn same_values(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.shape == b.shape
                    && a.data
                        .iter()
                        .zip(&b.data)
                        .all(|(x, y)| x.to_f64().unwrap().to_bits() == y.to_f64().unwrap().to_bits())
            })
    }

    /// One Adam update over every parameter, then clears gradients. Refuses
    /// the step (leaving parameters untouched) when any gradient is not finite.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for p in &self.params {
            if let Some(pos) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(AutodiffError::NonFinite(format!(
                    "gradient of {} at index {pos}",
                    p.name
                )));
            }
        }
        let lr = T::lit(cfg.learning_rate);
        let b1 = T::lit(cfg.beta1);
        let b2 = T::lit(cfg.beta2);
        let eps = T::lit(cfg.epsilon);
        let one = T::one();
        for p in &mut self.params {
            p.step += 1;
            let t = p.step as i32;
            let bc1 = one - b1.powi(t);
            let bc2 = one - b2.powi(t);
            for i in 0..p.data.len() {
                let g = p.grad[i];
                p.m[i] = b1 * p.m[i] + (one - b1) * g;
                p.v[i] = b2 * p.v[i] + (one - b2) * g * g;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                p.data[i] = p.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
                p.grad[i] = T::zero();
            }
        }
        Ok(())
    }
}

/// Dense per-parameter gradient accumulator, used to harvest one tape's
/// gradients off the store so several questions can be differentiated
/// independently and reduced in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer<T> {
    pub grads: Vec<Vec<T>>,
}

impl<T: Real> GradBuffer<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, offset: usize, grad: &[T]) {
        let dst = &mut self.grads[id.0][offset..offset + grad.len()];
        for (d, g) in dst.iter_mut().zip(grad) {
            *d = *d + *g;
        }
    }

    pub fn add_to_store(&self, store: &mut ParamStore<T>) {
        for (i, g) in self.grads.iter().enumerate() {
            store.accumulate(ParamId(i), 0, g);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}
