//! Fully-connected layers built on the tape.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// `y = x · W + b` applied to every row of `x`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.insert_weight(format!("{name}.w"), in_dim, out_dim, rng)?;
        let bias = if bias {
            Some(store.insert_zeros(format!("{name}.b"), &[1, out_dim])?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(tape.param(store, self.weight))?;
        match self.bias {
            Some(b) => y.add_row(tape.param(store, b)),
            None => Ok(y),
        }
    }
}

/// A stack of [`Linear`] layers, each followed by its activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activations: Vec<Activation>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`, one activation per layer.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::shape(format!(
                "mlp {name}: {} widths with {} activations",
                widths.len(),
                activations.len()
            )));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect::<Result<_>>()?;
        Ok(Mlp {
            layers,
            activations: activations.to_vec(),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        mlp_forward(tape, store, &self.layers, &self.activations, x)
    }
}

/// `act_n(... act_1(x W_1 + b_1) ... W_n + b_n)`.
pub fn mlp_forward<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    layers: &[Linear],
    activations: &[Activation],
    x: Var<'t>,
) -> Result<Var<'t>> {
    if layers.len() != activations.len() {
        return Err(Error::shape(format!(
            "{} layers with {} activations",
            layers.len(),
            activations.len()
        )));
    }
    let mut h = x;
    for (i, (layer, act)) in layers.iter().zip(activations).enumerate() {
        if h.cols() != layer.in_dim {
            return Err(Error::shape(format!(
                "layer {i} expects {} inputs, got {}",
                layer.in_dim,
                h.cols()
            )));
        }
        h = act.apply(layer.forward(tape, store, h)?);
    }
    Ok(h)
}
