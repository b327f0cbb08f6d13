//! Matrix-valued reverse-mode tape.
//!
//! Every node holds a 2-D value. Operations append nodes; [`Tape::backward`]
//! walks them in reverse and returns one gradient slot per parameter.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::params::ParamSet;
use super::tensor::{matmul, matmul_at_acc, matmul_bt, Tensor};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    OuterSum(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    MulConst(Var, Vec<f64>),
    Mse(Var, Vec<f64>),
    SumSquares(Var),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    masks: Vec<Vec<bool>>,
    param_vars: Vec<Option<Var>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::matrix(n.rows, n.cols, n.value.clone())
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// A constant input; gradients reaching it are discarded.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf)
    }

    pub fn leaf_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        self.push(rows, cols, data, Op::Leaf)
    }

    /// Parameter `id` of `params`, recorded once per tape.
    pub fn param(&mut self, params: &ParamSet, id: usize) -> Var {
        if self.param_vars.len() <= id {
            self.param_vars.resize(id + 1, None);
        }
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let t = params.value(id);
        let v = self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Param(id));
        self.param_vars[id] = Some(v);
        v
    }

    pub fn register_mask(&mut self, mask: Vec<bool>) -> usize {
        self.masks.push(mask);
        self.masks.len() - 1
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (r, k) = self.shape(a);
        let (k2, c) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let out = matmul(self.data(a), self.data(b), r, k, c);
        self.push(r, c, out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`, the natural form for `x Wᵀ` with `W` stored out×in.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (r, k) = self.shape(a);
        let (c, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_bt inner dimension");
        let out = matmul_bt(self.data(a), self.data(b), r, k, c);
        self.push(r, c, out, Op::MatMulBt(a, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let sa = self.shape(a);
        assert_eq!(sa, self.shape(b), "elementwise shape");
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        self.push(sa.0, sa.1, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row shape");
        let b = self.data(row).to_vec();
        let mut out = self.data(a).to_vec();
        for chunk in out.chunks_mut(c) {
            for (o, bv) in chunk.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push(r, c, out, Op::AddRow(a, row))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(col), (r, 1), "mul_col shape");
        let s = self.data(col).to_vec();
        let mut out = self.data(a).to_vec();
        for (i, chunk) in out.chunks_mut(c).enumerate() {
            for o in chunk.iter_mut() {
                *o *= s[i];
            }
        }
        self.push(r, c, out, Op::MulCol(a, col))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let out = self.data(a).iter().map(|&x| f(x)).collect();
        self.push(r, c, out, op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, math::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    /// Row-wise softmax. With a mask, excluded entries are exactly zero.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<usize>) -> Var {
        let (r, c) = self.shape(a);
        if let Some(m) = mask {
            assert_eq!(self.masks[m].len(), r * c, "mask shape");
        }
        let x = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let keep = |j: usize| mask.is_none_or(|m| self.masks[m][i * c + j]);
            let mut mx = f64::NEG_INFINITY;
            for j in 0..c {
                if keep(j) {
                    mx = mx.max(x[i * c + j]);
                }
            }
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let mut s = 0.0;
            for j in 0..c {
                if keep(j) {
                    let e = math::exp(x[i * c + j] - mx);
                    out[i * c + j] = e;
                    s += e;
                }
            }
            for j in 0..c {
                out[i * c + j] /= s;
            }
        }
        self.push(r, c, out, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.shape(parts[0]).0;
        let c: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let (pr, pc) = self.shape(p);
                assert_eq!(pr, r, "concat_cols rows");
                out.extend_from_slice(&self.data(p)[i * pc..(i + 1) * pc]);
            }
        }
        self.push(r, c, out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.shape(parts[0]).1;
        let mut out = Vec::new();
        let mut r = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            assert_eq!(pc, c, "concat_rows cols");
            out.extend_from_slice(self.data(p));
            r += pr;
        }
        self.push(r, c, out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start < end && end <= c, "slice_cols bounds");
        let w = end - start;
        let x = self.data(a);
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + end]);
        }
        self.push(r, w, out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start < end && end <= r, "slice_rows bounds");
        let out = self.data(a)[start * c..end * c].to_vec();
        self.push(end - start, c, out, Op::SliceRows(a, start))
    }

    /// `out[i][j] = col[i] + row[j]` for an `r×1` column and `1×c` row.
    pub fn outer_sum(&mut self, col: Var, row: Var) -> Var {
        let (r, one) = self.shape(col);
        let (one2, c) = self.shape(row);
        assert!(one == 1 && one2 == 1, "outer_sum operands");
        let a = self.data(col);
        let b = self.data(row);
        let mut out = Vec::with_capacity(r * c);
        for &ai in a {
            for &bj in b {
                out.push(ai + bj);
            }
        }
        self.push(r, c, out, Op::OuterSum(col, row))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let x = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        self.push(c, r, out, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.data(a);
        let s = x.iter().sum::<f64>() / x.len() as f64;
        self.push(1, 1, vec![s], Op::Mean(a))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, k: Vec<f64>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(k.len(), r * c, "mul_const shape");
        let out = self.data(a).iter().zip(&k).map(|(x, y)| x * y).collect();
        self.push(r, c, out, Op::MulConst(a, k))
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let n = self.data(a).len();
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        self.mul_const(a, mask)
    }

    /// Mean of squared differences against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Var {
        let x = self.data(pred);
        assert_eq!(x.len(), target.len(), "mse shape");
        let s = x.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / x.len() as f64;
        self.push(1, 1, vec![s], Op::Mse(pred, target.to_vec()))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().map(|x| x * x).sum();
        self.push(1, 1, vec![s], Op::SumSquares(a))
    }

    /// Gradients of scalar `loss` with respect to every parameter of a set
    /// with `param_count` entries; untouched parameters get `None`.
    pub fn backward(&self, loss: Var) -> Vec<Option<Vec<f64>>> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Option<Vec<f64>>> = Vec::new();
        out.resize_with(self.param_vars.len(), || None);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let (r, c) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out[*id] = Some(g),
                Op::MatMul(a, b) => {
                    let (_, k) = self.shape(*a);
                    // dA = dC · Bᵀ
                    let da = matmul_bt(&g, self.data(*b), r, c, k);
                    acc(&mut grads, *a, &da);
                    let db = slot(&mut grads, *b, k * c);
                    matmul_at_acc(db, self.data(*a), &g, r, k, c);
                }
                Op::MatMulBt(a, b) => {
                    let (_, k) = self.shape(*a);
                    // dA = dC · B, dB = dCᵀ · A
                    let da = matmul(&g, self.data(*b), r, c, k);
                    acc(&mut grads, *a, &da);
                    let db = slot(&mut grads, *b, c * k);
                    matmul_at_acc(db, &g, self.data(*a), r, c, k);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g);
                    acc(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &g);
                    let d = slot(&mut grads, *b, g.len());
                    for (x, y) in d.iter_mut().zip(&g) {
                        *x -= y;
                    }
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g.iter().zip(self.data(*b)).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.iter().zip(self.data(*a)).map(|(x, y)| x * y).collect();
                    acc(&mut grads, *a, &da);
                    acc(&mut grads, *b, &db);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *a, &g);
                    let d = slot(&mut grads, *row, c);
                    for chunk in g.chunks(c) {
                        for (x, y) in d.iter_mut().zip(chunk) {
                            *x += y;
                        }
                    }
                }
                Op::MulCol(a, col) => {
                    let s = self.data(*col);
                    let x = self.data(*a);
                    let mut da = vec![0.0; r * c];
                    let mut ds = vec![0.0; r];
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = g[i * c + j] * s[i];
                            ds[i] += g[i * c + j] * x[i * c + j];
                        }
                    }
                    acc(&mut grads, *a, &da);
                    acc(&mut grads, *col, &ds);
                }
                Op::Scale(a, s) => {
                    let d = slot(&mut grads, *a, g.len());
                    for (x, y) in d.iter_mut().zip(&g) {
                        *x += s * y;
                    }
                }
                Op::OneMinus(a) => {
                    let d = slot(&mut grads, *a, g.len());
                    for (x, y) in d.iter_mut().zip(&g) {
                        *x -= y;
                    }
                }
                Op::Tanh(a) => {
                    let d = slot(&mut grads, *a, g.len());
                    for ((x, y), o) in d.iter_mut().zip(&g).zip(&node.value) {
                        *x += y * (1.0 - o * o);
                    }
                }
                Op::Sigmoid(a) => {
                    let d = slot(&mut grads, *a, g.len());
                    for ((x, y), o) in d.iter_mut().zip(&g).zip(&node.value) {
                        *x += y * o * (1.0 - o);
                    }
                }
                Op::Relu(a) => {
                    let inp = &self.nodes[a.0].value;
                    let da: Vec<f64> = g.iter().zip(inp).map(|(y, &z)| if z > 0.0 { *y } else { 0.0 }).collect();
                    acc(&mut grads, *a, &da);
                }
                Op::LeakyRelu(a, slope) => {
                    let inp = &self.nodes[a.0].value;
                    let da: Vec<f64> = g.iter().zip(inp).map(|(y, &z)| if z > 0.0 { *y } else { slope * y }).collect();
                    acc(&mut grads, *a, &da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let row = i * c..(i + 1) * c;
                        let dot: f64 = g[row.clone()].iter().zip(&y[row.clone()]).map(|(p, q)| p * q).sum();
                        for j in row {
                            da[j] = y[j] * (g[j] - dot);
                        }
                    }
                    acc(&mut grads, *a, &da);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.shape(p).1;
                        let mut dp = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            dp.extend_from_slice(&g[i * c + off..i * c + off + pc]);
                        }
                        acc(&mut grads, p, &dp);
                        off += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.data(p).len();
                        acc(&mut grads, p, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ac = self.shape(*a).1;
                    let d = slot(&mut grads, *a, r * ac);
                    for i in 0..r {
                        for j in 0..c {
                            d[i * ac + start + j] += g[i * c + j];
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    let n = self.data(*a).len();
                    let d = slot(&mut grads, *a, n);
                    for (x, y) in d[start * c..].iter_mut().zip(&g) {
                        *x += y;
                    }
                }
                Op::OuterSum(col, row) => {
                    let mut dc = vec![0.0; r];
                    let mut dr = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            dc[i] += g[i * c + j];
                            dr[j] += g[i * c + j];
                        }
                    }
                    acc(&mut grads, *col, &dc);
                    acc(&mut grads, *row, &dr);
                }
                Op::Transpose(a) => {
                    // node is r×c, input is c×r
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            da[j * r + i] = g[i * c + j];
                        }
                    }
                    acc(&mut grads, *a, &da);
                }
                Op::Sum(a) => {
                    let n = self.data(*a).len();
                    let d = slot(&mut grads, *a, n);
                    for x in d.iter_mut() {
                        *x += g[0];
                    }
                }
                Op::Mean(a) => {
                    let n = self.data(*a).len();
                    let d = slot(&mut grads, *a, n);
                    for x in d.iter_mut() {
                        *x += g[0] / n as f64;
                    }
                }
                Op::MulConst(a, k) => {
                    let da: Vec<f64> = g.iter().zip(k).map(|(x, y)| x * y).collect();
                    acc(&mut grads, *a, &da);
                }
                Op::Mse(a, target) => {
                    let x = self.data(*a);
                    let n = x.len() as f64;
                    let d = slot(&mut grads, *a, x.len());
                    for ((dx, p), t) in d.iter_mut().zip(x).zip(target) {
                        *dx += g[0] * 2.0 * (p - t) / n;
                    }
                }
                Op::SumSquares(a) => {
                    let x = self.data(*a);
                    let d = slot(&mut grads, *a, x.len());
                    for (dx, p) in d.iter_mut().zip(x) {
                        *dx += g[0] * 2.0 * p;
                    }
                }
            }
        }
        out
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut grads[v.0] {
        Some(g) => {
            for (x, y) in g.iter_mut().zip(d) {
                *x += y;
            }
        }
        none => *none = Some(d.to_vec()),
    }
}
