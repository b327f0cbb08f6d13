//! Past-only temporal attention and the decoder GRU.

use alloc::vec::Vec;

use super::gru::{blend, gate_pre};
use crate::nn::{Tape, Tensor, Var};

/// Plain-tensor decoder parameters. Hidden width `H`, alignment width `A`,
/// output width `O`: `W_a, U_a` are `A×H`, `v_a` is `1×A`, `W*` are `H×O`,
/// `U*`, `C*` and `W_s` are `H×H`, `W_o` is `O×O`, `U_o, C_o` are `O×H`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnDecoderParams {
    pub w_a: Tensor,
    pub u_a: Tensor,
    pub v_a: Tensor,
    pub w: Tensor,
    pub u: Tensor,
    pub c: Tensor,
    pub b: Tensor,
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub c_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub c_r: Tensor,
    pub b_r: Tensor,
    pub w_s: Tensor,
    pub w_o: Tensor,
    pub u_o: Tensor,
    pub c_o: Tensor,
    pub b_o: Tensor,
}

impl AttnDecoderParams {
    pub fn zeros(hidden: usize, align: usize, outputs: usize) -> Self {
        let z = |r: usize, c: usize| Tensor::zeros(&[r, c]);
        AttnDecoderParams {
            w_a: z(align, hidden),
            u_a: z(align, hidden),
            v_a: z(1, align),
            w: z(hidden, outputs),
            u: z(hidden, hidden),
            c: z(hidden, hidden),
            b: z(1, hidden),
            w_z: z(hidden, outputs),
            u_z: z(hidden, hidden),
            c_z: z(hidden, hidden),
            b_z: z(1, hidden),
            w_r: z(hidden, outputs),
            u_r: z(hidden, hidden),
            c_r: z(hidden, hidden),
            b_r: z(1, hidden),
            w_s: z(hidden, hidden),
            w_o: z(outputs, outputs),
            u_o: z(outputs, hidden),
            c_o: z(outputs, hidden),
            b_o: z(1, outputs),
        }
    }

    pub(crate) fn record(&self, tape: &mut Tape) -> DecoderVars {
        let mut l = |t: &Tensor| tape.leaf(t);
        DecoderVars {
            w_a: l(&self.w_a),
            u_a: l(&self.u_a),
            v_a: l(&self.v_a),
            w: l(&self.w),
            u: l(&self.u),
            c: l(&self.c),
            b: l(&self.b),
            w_z: l(&self.w_z),
            u_z: l(&self.u_z),
            c_z: l(&self.c_z),
            b_z: l(&self.b_z),
            w_r: l(&self.w_r),
            u_r: l(&self.u_r),
            c_r: l(&self.c_r),
            b_r: l(&self.b_r),
            w_s: l(&self.w_s),
            w_o: l(&self.w_o),
            u_o: l(&self.u_o),
            c_o: l(&self.c_o),
            b_o: l(&self.b_o),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DecoderVars {
    pub w_a: Var,
    pub u_a: Var,
    pub v_a: Var,
    pub w: Var,
    pub u: Var,
    pub c: Var,
    pub b: Var,
    pub w_z: Var,
    pub u_z: Var,
    pub c_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub c_r: Var,
    pub b_r: Var,
    pub w_s: Var,
    pub w_o: Var,
    pub u_o: Var,
    pub c_o: Var,
    pub b_o: Var,
}

/// Context over encoder states `hs[..]` given `U_a h_j` already in `keys`.
pub(crate) fn context_vars(tape: &mut Tape, p: &DecoderVars, s_prev: Var, hs: &[Var], keys: &[Var]) -> (Var, Var) {
    let query = tape.matmul_bt(s_prev, p.w_a);
    let scores: Vec<Var> = keys
        .iter()
        .map(|&k| {
            let t = tape.add(query, k);
            let t = tape.tanh(t);
            tape.matmul_bt(t, p.v_a)
        })
        .collect();
    let e = if scores.len() == 1 { scores[0] } else { tape.concat_cols(&scores) };
    let alpha = tape.softmax_rows(e, None);
    let mut c = None;
    for (j, &h) in hs.iter().enumerate() {
        let a = tape.slice_cols(alpha, j, j + 1);
        let term = tape.mul_col(h, a);
        c = Some(match c {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    (c.expect("at least one encoder state"), alpha)
}

fn with_context(tape: &mut Tape, pre: Var, c: Var, cw: Var) -> Var {
    let cc = tape.matmul_bt(c, cw);
    tape.add(pre, cc)
}

/// Returns `(y_i, s_i)`.
pub(crate) fn step_vars(tape: &mut Tape, p: &DecoderVars, y_prev: Var, s_prev: Var, c: Var) -> (Var, Var) {
    let r = gate_pre(tape, y_prev, p.w_r, s_prev, p.u_r, p.b_r);
    let r = with_context(tape, r, c, p.c_r);
    let r = tape.sigmoid(r);
    let z = gate_pre(tape, y_prev, p.w_z, s_prev, p.u_z, p.b_z);
    let z = with_context(tape, z, c, p.c_z);
    let z = tape.sigmoid(z);
    let rs = tape.mul(r, s_prev);
    let cand = gate_pre(tape, y_prev, p.w, rs, p.u, p.b);
    let cand = with_context(tape, cand, c, p.c);
    let cand = tape.tanh(cand);
    let s = blend(tape, z, s_prev, cand);

    let y = gate_pre(tape, y_prev, p.w_o, s_prev, p.u_o, p.b_o);
    let y = with_context(tape, y, c, p.c_o);
    (y, s)
}

pub(crate) fn initial_state(tape: &mut Tape, p: &DecoderVars, h1: Var) -> Var {
    let s = tape.matmul_bt(h1, p.w_s);
    tape.tanh(s)
}

/// `(c_i, α_i)` over encoder states `h_1..h_i`, each an `N×H` batch.
pub fn attention_context(params: &AttnDecoderParams, s_prev: &Tensor, hs: &[Tensor]) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let p = params.record(&mut tape);
    let sv = tape.leaf(s_prev);
    let hv: Vec<Var> = hs.iter().map(|h| tape.leaf(h)).collect();
    let keys: Vec<Var> = hv.iter().map(|&h| tape.matmul_bt(h, p.u_a)).collect();
    let (c, alpha) = context_vars(&mut tape, &p, sv, &hv, &keys);
    (tape.value(c), tape.value(alpha))
}

pub fn decoder_step(params: &AttnDecoderParams, y_prev: &Tensor, s_prev: &Tensor, c: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let p = params.record(&mut tape);
    let yv = tape.leaf(y_prev);
    let sv = tape.leaf(s_prev);
    let cv = tape.leaf(c);
    let (y, s) = step_vars(&mut tape, &p, yv, sv, cv);
    (tape.value(y), tape.value(s))
}

/// `s_0 = tanh(W_s h_1)`.
pub fn decoder_initial_state(params: &AttnDecoderParams, h1: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let p = params.record(&mut tape);
    let hv = tape.leaf(h1);
    let s = initial_state(&mut tape, &p, hv);
    tape.value(s)
}
