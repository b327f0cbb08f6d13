use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum ParamKind {
    /// Subject to the L2 penalty.
    Weight,
    Bias,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Named trainable tensors. Gradients are `Vec<Tensor>` in the same order.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> usize {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, kind, value });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.params[id].value
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.params[id].value
    }

    pub fn param(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Zero-filled gradient slots matching every parameter.
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect()
    }

    /// Turns raw tape output into shaped gradient slots.
    pub fn collect_grads(&self, raw: Vec<Option<Vec<f64>>>) -> Vec<Tensor> {
        let mut grads = self.zero_grads();
        for (id, g) in raw.into_iter().enumerate() {
            if let Some(g) = g {
                grads[id].data_mut().copy_from_slice(&g);
            }
        }
        grads
    }

    pub fn map_values(&mut self, mut f: impl FnMut(&mut Param)) {
        for p in &mut self.params {
            f(p);
        }
    }
}

/// `λ · ½ · Σ‖W‖²` over weight parameters.
pub fn l2_penalty(params: &ParamSet, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let s: f64 = params
        .iter()
        .filter(|p| p.kind == ParamKind::Weight)
        .map(|p| p.value.data().iter().map(|x| x * x).sum::<f64>())
        .sum();
    0.5 * lambda * s
}

/// Adds `λ·W` to the gradient of every weight parameter.
pub fn add_l2_grad(params: &ParamSet, lambda: f64, grads: &mut [Tensor]) {
    if lambda == 0.0 {
        return;
    }
    for (p, g) in params.iter().zip(grads.iter_mut()) {
        if p.kind == ParamKind::Weight {
            for (gv, w) in g.data_mut().iter_mut().zip(p.value.data()) {
                *gv += lambda * w;
            }
        }
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))` for an `out×in` matrix.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let s = math::sqrt(6.0 / (rows + cols) as f64);
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-s..s))
}
