//! Tape-free forward operations.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::tensor::{matmul_bt, Tensor};
use super::NnError;
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
}

/// `W x + b` for `W` of shape `out×in`; `x` is a vector or a batch of rows.
pub fn affine_forward(w: &Tensor, x: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let (out, inp) = (w.rows(), w.cols());
    if x.cols() != inp {
        return Err(NnError::ShapeMismatch { expected: vec![inp], found: x.shape().to_vec() });
    }
    if b.len() != out {
        return Err(NnError::ShapeMismatch { expected: vec![out], found: b.shape().to_vec() });
    }
    let rows = x.rows();
    let mut y = matmul_bt(x.data(), w.data(), rows, inp, out);
    for chunk in y.chunks_mut(out) {
        for (v, bv) in chunk.iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    let shape = if x.shape().len() == 1 { vec![out] } else { vec![rows, out] };
    Tensor::new(shape, y)
}

/// Elementwise activation; softmax normalizes along the last axis.
pub fn activation(kind: Activation, z: &Tensor) -> Tensor {
    match kind {
        Activation::Relu => z.map(|x| if x > 0.0 { x } else { 0.0 }),
        Activation::Tanh => z.map(math::tanh),
        Activation::Sigmoid => z.map(math::sigmoid),
        Activation::Softmax => {
            let c = z.cols();
            let mut out = z.clone();
            for row in out.data_mut().chunks_mut(c) {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = math::exp(*v - mx);
                    s += *v;
                }
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
            out
        }
    }
}

pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64, NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::ShapeMismatch { expected: target.shape().to_vec(), found: pred.shape().to_vec() });
    }
    let n = pred.len() as f64;
    Ok(pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
}

/// Inverted dropout; identity when not training or when `rate` is 0.
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, rate: f64, rng: &mut R, training: bool) -> Tensor {
    if !training || rate <= 0.0 {
        return x.clone();
    }
    let keep = 1.0 / (1.0 - rate);
    let data: Vec<f64> = x.data().iter().map(|&v| if rng.gen::<f64>() < rate { 0.0 } else { v * keep }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}
