//! The geometric stack: two GAT layers, two dense layers, a per-lane GRU
//! encoder and a past-only attention decoder.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use rand::{Rng, SeedableRng};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::nn::{add_l2_grad, glorot_uniform, l2_penalty, ParamKind, ParamSet, Tape, Tensor, Var};

pub mod decoder;
pub mod gat;
pub mod gru;

pub use decoder::{attention_context, decoder_initial_state, decoder_step, AttnDecoderParams};
pub use gat::{gat_head, gat_multi_head, Combine, GatParams};
pub use gru::{encode, gru_step, GruParams};

use decoder::DecoderVars;
use gru::GruVars;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ModelConfig {
    pub input_features: usize,
    /// Output width of each GAT layer.
    pub gat_width: usize,
    pub gat1_heads: usize,
    pub gat1_combine: Combine,
    pub gat2_heads: usize,
    pub gat2_combine: Combine,
    pub dense_width: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub leak: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_features: 8,
            gat_width: 128,
            gat1_heads: 2,
            gat1_combine: Combine::Concat,
            gat2_heads: 2,
            gat2_combine: Combine::Average,
            dense_width: 128,
            hidden: 128,
            outputs: 2,
            leak: 0.2,
        }
    }
}

impl ModelConfig {
    /// Same wiring with every width set to `width`.
    pub fn with_width(input_features: usize, width: usize) -> Self {
        ModelConfig { input_features, gat_width: width, dense_width: width, hidden: width, ..ModelConfig::default() }
    }

    fn per_head(&self, width: usize, heads: usize, combine: Combine) -> Result<usize, ModelError> {
        if heads == 0 {
            return Err(ModelError::Config("head count must be >= 1".into()));
        }
        match combine {
            Combine::Average => Ok(width),
            Combine::Concat if width.is_multiple_of(heads) => Ok(width / heads),
            Combine::Concat => {
                Err(ModelError::Config(format!("concat width {width} is not divisible by {heads} heads")))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelError {
    Config(String),
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Config(m) => write!(f, "model config: {m}"),
            ModelError::ShapeMismatch { expected, found } => {
                write!(f, "shape mismatch: expected {expected:?}, found {found:?}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct GatLayout {
    heads: Vec<(usize, usize)>,
    combine: Combine,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    gat1: GatLayout,
    gat2: GatLayout,
    dense1: (usize, usize),
    dense2: (usize, usize),
    enc: [usize; 9],
    dec: [usize; 20],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    layout: Layout,
}

struct Builder<'r, R: Rng + ?Sized> {
    params: ParamSet,
    rng: &'r mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn weight(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let t = glorot_uniform(rows, cols, self.rng);
        self.params.add(name, ParamKind::Weight, t)
    }

    fn bias(&mut self, name: String, width: usize) -> usize {
        self.params.add(name, ParamKind::Bias, Tensor::zeros(&[1, width]))
    }

    fn gat(&mut self, prefix: &str, input: usize, per_head: usize, heads: usize, combine: Combine) -> GatLayout {
        let heads = (0..heads)
            .map(|k| {
                let w = self.weight(format!("{prefix}.head{k}.W"), per_head, input);
                let a = self.weight(format!("{prefix}.head{k}.a"), 1, 2 * per_head);
                (w, a)
            })
            .collect();
        GatLayout { heads, combine }
    }
}

impl Model {
    /// Glorot-initialized weights except a zero output feedback, zero biases.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        let c = &config;
        let p1 = c.per_head(c.gat_width, c.gat1_heads, c.gat1_combine)?;
        let p2 = c.per_head(c.gat_width, c.gat2_heads, c.gat2_combine)?;
        if c.input_features == 0 || c.hidden == 0 || c.dense_width == 0 || c.outputs == 0 {
            return Err(ModelError::Config("widths must be positive".into()));
        }
        let mut b = Builder { params: ParamSet::new(), rng };
        let gat1 = b.gat("gat1", c.input_features, p1, c.gat1_heads, c.gat1_combine);
        let gat2 = b.gat("gat2", c.gat_width, p2, c.gat2_heads, c.gat2_combine);
        let dense1 =
            (b.weight("dense1.W".into(), c.dense_width, c.gat_width), b.bias("dense1.b".into(), c.dense_width));
        let dense2 =
            (b.weight("dense2.W".into(), c.dense_width, c.dense_width), b.bias("dense2.b".into(), c.dense_width));
        let (h, d, o) = (c.hidden, c.dense_width, c.outputs);
        let mut enc = [0; 9];
        for (i, g) in ["", "_r", "_z"].iter().enumerate() {
            enc[3 * i] = b.weight(format!("enc.W{g}"), h, d);
            enc[3 * i + 1] = b.weight(format!("enc.U{g}"), h, h);
            enc[3 * i + 2] = b.bias(format!("enc.b{g}"), h);
        }
        let mut dec = [0; 20];
        dec[0] = b.weight("dec.W_a".into(), h, h);
        dec[1] = b.weight("dec.U_a".into(), h, h);
        dec[2] = b.weight("dec.v_a".into(), 1, h);
        for (i, g) in ["", "_z", "_r"].iter().enumerate() {
            dec[3 + 4 * i] = b.weight(format!("dec.W{g}"), h, o);
            dec[4 + 4 * i] = b.weight(format!("dec.U{g}"), h, h);
            dec[5 + 4 * i] = b.weight(format!("dec.C{g}"), h, h);
            dec[6 + 4 * i] = b.bias(format!("dec.b{g}"), h);
        }
        dec[15] = b.weight("dec.W_s".into(), h, h);
        // the output feeds back into itself every step; a random start can
        // have gain above one and blow up over long sequences
        dec[16] = b.params.add("dec.W_o", ParamKind::Weight, Tensor::zeros(&[o, o]));
        dec[17] = b.weight("dec.U_o".into(), o, h);
        dec[18] = b.weight("dec.C_o".into(), o, h);
        dec[19] = b.bias("dec.b_o".into(), o);
        let layout = Layout { gat1, gat2, dense1, dense2, enc, dec };
        Ok(Model { config, params: b.params, layout })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self, ModelError> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(config, &mut rng)?;
        if model.params.len() != params.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (fresh, stored) in model.params.iter().zip(params.iter()) {
            if fresh.name != stored.name || fresh.value.shape() != stored.value.shape() {
                return Err(ModelError::ShapeMismatch {
                    expected: fresh.value.shape().to_vec(),
                    found: stored.value.shape().to_vec(),
                });
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn zero_params(&mut self) {
        self.params.map_values(|p| p.value.data_mut().iter_mut().for_each(|v| *v = 0.0));
    }

    fn gru_vars(&self, tape: &mut Tape) -> GruVars {
        let e = self.layout.enc;
        let mut v = |i: usize| tape.param(&self.params, e[i]);
        GruVars { w: v(0), u: v(1), b: v(2), w_r: v(3), u_r: v(4), b_r: v(5), w_z: v(6), u_z: v(7), b_z: v(8) }
    }

    fn decoder_vars(&self, tape: &mut Tape) -> DecoderVars {
        let d = self.layout.dec;
        let mut v = |i: usize| tape.param(&self.params, d[i]);
        DecoderVars {
            w_a: v(0),
            u_a: v(1),
            v_a: v(2),
            w: v(3),
            u: v(4),
            c: v(5),
            b: v(6),
            w_z: v(7),
            u_z: v(8),
            c_z: v(9),
            b_z: v(10),
            w_r: v(11),
            u_r: v(12),
            c_r: v(13),
            b_r: v(14),
            w_s: v(15),
            w_o: v(16),
            u_o: v(17),
            c_o: v(18),
            b_o: v(19),
        }
    }

    fn gat_layer(&self, tape: &mut Tape, layer: &GatLayout, h: Var, mask: usize) -> Var {
        let heads: Vec<(Var, Var)> =
            layer.heads.iter().map(|&(w, a)| (tape.param(&self.params, w), tape.param(&self.params, a))).collect();
        gat::layer_vars(tape, h, &heads, layer.combine, mask, self.config.leak)
    }

    fn dense(&self, tape: &mut Tape, (w, b): (usize, usize), x: Var) -> Var {
        let wv = tape.param(&self.params, w);
        let bv = tape.param(&self.params, b);
        let y = tape.matmul_bt(x, wv);
        let y = tape.add_row(y, bv);
        tape.relu(y)
    }

    /// Records one simulation `x` (`T×N×F`, row-major) and returns the
    /// per-timestep `N×outputs` predictions.
    pub fn forward_sim<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        x: &[f64],
        steps: usize,
        lanes: usize,
        mask: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Vec<Var> {
        let f = self.config.input_features;
        let h = self.config.hidden;
        assert_eq!(x.len(), steps * lanes * f, "sample size");
        let mut encoded = Vec::with_capacity(steps);
        let enc = self.gru_vars(tape);
        let mut state = tape.leaf_matrix(lanes, h, vec![0.0; lanes * h]);
        for t in 0..steps {
            let xt = tape.leaf_matrix(lanes, f, x[t * lanes * f..(t + 1) * lanes * f].to_vec());
            let g1 = self.gat_layer(tape, &self.layout.gat1, xt, mask);
            let g1 = tape.dropout(g1, dropout, rng);
            let g2 = self.gat_layer(tape, &self.layout.gat2, g1, mask);
            let g2 = tape.dropout(g2, dropout, rng);
            let d1 = self.dense(tape, self.layout.dense1, g2);
            let d1 = tape.dropout(d1, dropout, rng);
            let d2 = self.dense(tape, self.layout.dense2, d1);
            let d2 = tape.dropout(d2, dropout, rng);
            state = gru::step_vars(tape, &enc, d2, state);
            encoded.push(state);
        }

        let dec = self.decoder_vars(tape);
        let keys: Vec<Var> = encoded.iter().map(|&hj| tape.matmul_bt(hj, dec.u_a)).collect();
        let mut s = decoder::initial_state(tape, &dec, encoded[0]);
        let o = self.config.outputs;
        let mut y = tape.leaf_matrix(lanes, o, vec![0.0; lanes * o]);
        let mut outputs = Vec::with_capacity(steps);
        for i in 0..steps {
            let (c, _) = decoder::context_vars(tape, &dec, s, &encoded[..=i], &keys[..=i]);
            let (yi, si) = decoder::step_vars(tape, &dec, y, s, c);
            outputs.push(yi);
            y = yi;
            s = si;
        }
        outputs
    }
}

fn check_shapes(model: &Model, x: &Tensor, adj: &Tensor) -> Result<(usize, usize, usize), ModelError> {
    let s = x.shape();
    if s.len() != 4 || s[3] != model.config.input_features {
        return Err(ModelError::ShapeMismatch {
            expected: vec![0, 0, 0, model.config.input_features],
            found: s.to_vec(),
        });
    }
    if adj.shape() != [s[2], s[2]] {
        return Err(ModelError::ShapeMismatch { expected: vec![s[2], s[2]], found: adj.shape().to_vec() });
    }
    if s[1] == 0 {
        return Err(ModelError::ShapeMismatch { expected: vec![s[0], 1, s[2], s[3]], found: s.to_vec() });
    }
    Ok((s[0], s[1], s[2]))
}

/// Inference over `X: sims×T×N×F`, returning `sims×T×N×outputs`.
pub fn model_forward(model: &Model, x: &Tensor, adj: &Tensor) -> Result<Tensor, ModelError> {
    let (sims, steps, lanes) = check_shapes(model, x, adj)?;
    let f = model.config.input_features;
    let o = model.config.outputs;
    let per = steps * lanes * f;
    let mut out = Vec::with_capacity(sims * steps * lanes * o);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for sim in 0..sims {
        let mut tape = Tape::new();
        let mask = tape.register_mask(gat::mask_from_adjacency(adj.data()));
        let ys = model.forward_sim(&mut tape, &x.data()[sim * per..(sim + 1) * per], steps, lanes, mask, 0.0, &mut rng);
        for y in ys {
            out.extend_from_slice(tape.data(y));
        }
    }
    Ok(Tensor::new(vec![sims, steps, lanes, o], out).expect("shape arithmetic"))
}

/// `MSE(Ŷ, Y) + λ·½Σ‖W‖²` and its gradient, averaged over the simulations in `x`.
pub fn model_loss_and_grads<R: Rng + ?Sized>(
    model: &Model,
    x: &Tensor,
    y: &Tensor,
    adj: &Tensor,
    lambda: f64,
    dropout: f64,
    rng: &mut R,
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let (sims, steps, lanes) = check_shapes(model, x, adj)?;
    let o = model.config.outputs;
    if y.shape() != [sims, steps, lanes, o] {
        return Err(ModelError::ShapeMismatch { expected: vec![sims, steps, lanes, o], found: y.shape().to_vec() });
    }
    let f = model.config.input_features;
    let (per_x, per_y) = (steps * lanes * f, steps * lanes * o);
    let mut grads = model.params.zero_grads();
    let mut loss = 0.0;
    for sim in 0..sims {
        let mut tape = Tape::new();
        let mask = tape.register_mask(gat::mask_from_adjacency(adj.data()));
        let ys =
            model.forward_sim(&mut tape, &x.data()[sim * per_x..(sim + 1) * per_x], steps, lanes, mask, dropout, rng);
        let pred = tape.concat_rows(&ys);
        let l = tape.mse(pred, &y.data()[sim * per_y..(sim + 1) * per_y]);
        loss += tape.scalar(l) / sims as f64;
        let raw = tape.backward(l);
        for (g, r) in grads.iter_mut().zip(raw) {
            if let Some(r) = r {
                for (a, b) in g.data_mut().iter_mut().zip(r) {
                    *a += b / sims as f64;
                }
            }
        }
    }
    loss += l2_penalty(&model.params, lambda);
    add_l2_grad(&model.params, lambda, &mut grads);
    Ok((loss, grads))
}
