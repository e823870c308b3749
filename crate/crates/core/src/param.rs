//! Named parameter blocks and the optimizers that update them.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type ParamId = usize;

#[derive(Clone, Debug)]
pub struct ParamBlock {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Tensor,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        let grad = Tensor::zeros(tensor.shape());
        ParamBlock {
            name: name.into(),
            tensor,
            grad,
        }
    }
}

/// Every learned tensor of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::arg(format!("duplicate parameter name {name}")));
        }
        let id = self.blocks.len();
        self.by_name.insert(name.clone(), id);
        self.blocks.push(ParamBlock::new(name, tensor));
        Ok(id)
    }

    /// Weight matrix `fan_in × fan_out` drawn uniformly from
    /// `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
    pub fn insert_weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::matrix(fan_in, fan_out, data)?)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &ParamBlock {
        &self.blocks[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamBlock {
        &mut self.blocks[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamBlock> {
        self.id_of(name).map(|id| &self.blocks[id])
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks.iter().map(|b| b.tensor.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.grad.fill(0.0);
        }
    }

    /// First block whose value or gradient holds a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.blocks.iter().find_map(|b| {
            if !b.tensor.is_finite() {
                Some(format!("parameter {}", b.name))
            } else if !b.grad.is_finite() {
                Some(format!("gradient of {}", b.name))
            } else {
                None
            }
        })
    }
}

/// Plain gradient descent: `tensor -= lr * grad`.
pub fn sgd_step(params: &mut [ParamBlock], lr: f64) {
    for b in params {
        for (w, g) in b.tensor.data_mut().iter_mut().zip(b.grad.data()) {
            *w -= lr * g;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// Heavy-ball momentum SGD.
    Sgd {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

/// Stateful optimizer over a whole [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.blocks().iter().map(|b| Tensor::zeros(b.tensor.shape())).collect();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros.clone(),
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Optimizer {
            kind,
            first: zeros,
            second,
            steps: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd { momentum: 0.0 } => {
                sgd_step(store.blocks_mut(), lr);
            }
            OptimizerKind::Sgd { momentum } => {
                for (b, v) in store.blocks_mut().iter_mut().zip(&mut self.first) {
                    for ((w, g), vel) in b.tensor.data_mut().iter_mut().zip(b.grad.data()).zip(v.data_mut()) {
                        *vel = momentum * *vel + g;
                        *w -= lr * *vel;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((b, m), v) in store.blocks_mut().iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    for (((w, g), mi), vi) in b
                        .tensor
                        .data_mut()
                        .iter_mut()
                        .zip(b.grad.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
