//! Gated recurrent unit over a batch of rows (one row per lane).

use alloc::vec::Vec;

use crate::nn::{Tape, Tensor, Var};

/// `W*` are `hidden×input`, `U*` are `hidden×hidden`, biases are `1×hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = Tensor::zeros(&[hidden, input]);
        let u = Tensor::zeros(&[hidden, hidden]);
        let b = Tensor::zeros(&[1, hidden]);
        GruParams {
            w: w.clone(),
            u: u.clone(),
            b: b.clone(),
            w_r: w.clone(),
            u_r: u.clone(),
            b_r: b.clone(),
            w_z: w,
            u_z: u,
            b_z: b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.rows()
    }

    pub(crate) fn record(&self, tape: &mut Tape) -> GruVars {
        GruVars {
            w: tape.leaf(&self.w),
            u: tape.leaf(&self.u),
            b: tape.leaf(&self.b),
            w_r: tape.leaf(&self.w_r),
            u_r: tape.leaf(&self.u_r),
            b_r: tape.leaf(&self.b_r),
            w_z: tape.leaf(&self.w_z),
            u_z: tape.leaf(&self.u_z),
            b_z: tape.leaf(&self.b_z),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GruVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
}

/// `x Wᵀ + h Uᵀ + b` for row-batched inputs.
pub(crate) fn gate_pre(tape: &mut Tape, x: Var, w: Var, h: Var, u: Var, b: Var) -> Var {
    let xw = tape.matmul_bt(x, w);
    let hu = tape.matmul_bt(h, u);
    let s = tape.add(xw, hu);
    tape.add_row(s, b)
}

/// `(1 - z) ∘ h + z ∘ candidate`
pub(crate) fn blend(tape: &mut Tape, z: Var, h: Var, candidate: Var) -> Var {
    let keep = tape.one_minus(z);
    let old = tape.mul(keep, h);
    let new = tape.mul(z, candidate);
    tape.add(old, new)
}

pub(crate) fn step_vars(tape: &mut Tape, p: &GruVars, x: Var, h: Var) -> Var {
    let r = gate_pre(tape, x, p.w_r, h, p.u_r, p.b_r);
    let r = tape.sigmoid(r);
    let z = gate_pre(tape, x, p.w_z, h, p.u_z, p.b_z);
    let z = tape.sigmoid(z);
    let rh = tape.mul(r, h);
    let cand = gate_pre(tape, x, p.w, rh, p.u, p.b);
    let cand = tape.tanh(cand);
    blend(tape, z, h, cand)
}

pub fn gru_step(params: &GruParams, x: &Tensor, h_prev: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let p = params.record(&mut tape);
    let xv = tape.leaf(x);
    let hv = tape.leaf(h_prev);
    let out = step_vars(&mut tape, &p, xv, hv);
    tape.value(out)
}

/// Folds [`gru_step`] over `xs` from a zero state; returns every hidden state.
pub fn encode(params: &GruParams, xs: &[Tensor]) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let p = params.record(&mut tape);
    let rows = xs.first().map_or(1, |x| x.rows());
    let mut h = tape.leaf(&Tensor::zeros(&[rows, params.hidden()]));
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let xv = tape.leaf(x);
        h = step_vars(&mut tape, &p, xv, h);
        out.push(tape.value(h));
    }
    out
}
