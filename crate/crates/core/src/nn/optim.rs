use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &ParamSet) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (params.zero_grads(), params.zero_grads()),
        };
        OptState { kind, learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m, v }
    }
}

pub fn optimizer_step(params: &mut ParamSet, grads: &[Tensor], state: &mut OptState) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    state.step += 1;
    let lr = state.learning_rate;
    match state.kind {
        OptimizerKind::Sgd => {
            for (id, g) in grads.iter().enumerate() {
                for (p, gv) in params.value_mut(id).data_mut().iter_mut().zip(g.data()) {
                    *p -= lr * gv;
                }
            }
        }
        OptimizerKind::Adam => {
            let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
            let t = state.step as i32;
            let c1 = 1.0 - libm::pow(b1, t as f64);
            let c2 = 1.0 - libm::pow(b2, t as f64);
            for (id, g) in grads.iter().enumerate() {
                let m = state.m[id].data_mut();
                let v = state.v[id].data_mut();
                let p = params.value_mut(id).data_mut();
                for i in 0..p.len() {
                    let gi = g.data()[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    p[i] -= lr * mh / (math::sqrt(vh) + eps);
                }
            }
        }
    }
}
