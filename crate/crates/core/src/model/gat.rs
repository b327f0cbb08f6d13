//! Graph attention over the lane graph.

use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::nn::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Combine {
    Concat,
    Average,
}

/// Plain-tensor parameters of one multi-head layer. `W` is `F'×F`, `a` is `1×2F'`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatParams {
    pub heads: Vec<(Tensor, Tensor)>,
    pub combine: Combine,
    pub leak: f64,
}

/// Records one head and returns `(Σ_j α_ij W h_j, α)` before the output nonlinearity.
pub(crate) fn head_vars(tape: &mut Tape, h: Var, w: Var, a: Var, mask: usize, leak: f64) -> (Var, Var) {
    let wh = tape.matmul_bt(h, w);
    let f = tape.shape(w).0;
    let a_self = tape.slice_cols(a, 0, f);
    let a_nbr = tape.slice_cols(a, f, 2 * f);
    let s_self = tape.matmul_bt(wh, a_self);
    let s_nbr = tape.matmul_bt(wh, a_nbr);
    let s_nbr_row = tape.transpose(s_nbr);
    let e = tape.outer_sum(s_self, s_nbr_row);
    let e = tape.leaky_relu(e, leak);
    let alpha = tape.softmax_rows(e, Some(mask));
    (tape.matmul(alpha, wh), alpha)
}

/// Multi-head layer over recorded head parameters, `tanh` on the output.
pub(crate) fn layer_vars(
    tape: &mut Tape,
    h: Var,
    heads: &[(Var, Var)],
    combine: Combine,
    mask: usize,
    leak: f64,
) -> Var {
    let sums: Vec<Var> = heads.iter().map(|&(w, a)| head_vars(tape, h, w, a, mask, leak).0).collect();
    match combine {
        Combine::Concat => {
            let outs: Vec<Var> = sums.iter().map(|&s| tape.tanh(s)).collect();
            if outs.len() == 1 {
                outs[0]
            } else {
                tape.concat_cols(&outs)
            }
        }
        Combine::Average => {
            let mut acc = sums[0];
            for &s in &sums[1..] {
                acc = tape.add(acc, s);
            }
            let mean = tape.scale(acc, 1.0 / sums.len() as f64);
            tape.tanh(mean)
        }
    }
}

pub(crate) fn mask_from_adjacency(adj: &[f64]) -> Vec<bool> {
    adj.iter().map(|&v| v != 0.0).collect()
}

/// One attention head: `(tanh(Σ_j α_ij W h_j), α)`. `adj` is the `N×N` 0/1 matrix.
pub fn gat_head(h: &Tensor, adj: &Tensor, w: &Tensor, a: &Tensor, leak: f64) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let mask = tape.register_mask(mask_from_adjacency(adj.data()));
    let hv = tape.leaf(h);
    let wv = tape.leaf(w);
    let av = tape.leaf(a);
    let (sum, alpha) = head_vars(&mut tape, hv, wv, av, mask, leak);
    let out = tape.tanh(sum);
    (tape.value(out), tape.value(alpha))
}

pub fn gat_multi_head(h: &Tensor, adj: &Tensor, params: &GatParams) -> Tensor {
    let mut tape = Tape::new();
    let mask = tape.register_mask(mask_from_adjacency(adj.data()));
    let hv = tape.leaf(h);
    let heads: Vec<(Var, Var)> = params.heads.iter().map(|(w, a)| (tape.leaf(w), tape.leaf(a))).collect();
    let out = layer_vars(&mut tape, hv, &heads, params.combine, mask, params.leak);
    tape.value(out)
}
