use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered registry of named parameters. Iteration order is registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Validation(format!("duplicate parameter name {name}")));
        }
        let tensor = Tensor::leaf(shape, data)?;
        self.params.push(Parameter {
            name,
            tensor: tensor.clone(),
        });
        Ok(tensor)
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        self.register(name, &[fan_in, fan_out], data)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..numel(shape)).map(|_| dist.sample(rng)).collect();
        self.register(name, shape, data)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        self.register(name, shape, vec![value; numel(shape)])
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.tensor.to_vec()).collect()
    }

    pub fn restore(&self, values: &[Vec<f64>]) {
        for (p, v) in self.params.iter().zip(values) {
            p.tensor.set_data(v);
        }
    }

    /// Perturbs every parameter by `N(0, std)`; used to leave the zero-init point in tests.
    pub fn jitter(&self, std: f64, rng: &mut impl Rng) {
        let dist = Normal::new(0.0, std).expect("finite std");
        for p in &self.params {
            p.tensor.update_data(|d| d.iter_mut().for_each(|v| *v += dist.sample(rng)));
        }
    }
}
