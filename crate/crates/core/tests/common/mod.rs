//! Brute-force evaluation of the layer equations, one vector at a time.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use shockgat_core::model::*;
use shockgat_core::network::{build_grid_network, LinkKind, Movement, RoadNetwork, Side};
use shockgat_core::nn::{glorot_uniform, ParamKind, ParamSet, Tape, Tensor};
use shockgat_core::sim::{CycleBounds, Phase, SimConfig, Simulation, TlsProgram, Trip, TripTable};

pub const LE: f64 = 6.67;

pub fn matvec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| (0..m.cols()).map(|c| m.at(r, c) * v[c]).sum()).collect()
}

pub fn row(t: &Tensor, r: usize) -> Vec<f64> {
    (0..t.cols()).map(|c| t.at(r, c)).collect()
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.gen_range(-s..s))
}

/// `(pre-activation sums, α)` of one head.
pub fn head_oracle(h: &Tensor, adj: &Tensor, w: &Tensor, a: &Tensor, leak: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = h.rows();
    let f = w.rows();
    let wh: Vec<Vec<f64>> = (0..n).map(|i| matvec(w, &row(h, i))).collect();
    let mut sums = Vec::new();
    let mut alphas = Vec::new();
    for i in 0..n {
        let mut e = vec![f64::NEG_INFINITY; n];
        for j in 0..n {
            if adj.at(i, j) != 0.0 {
                let mut s = 0.0;
                for k in 0..f {
                    s += a.data()[k] * wh[i][k] + a.data()[f + k] * wh[j][k];
                }
                e[j] = if s > 0.0 { s } else { leak * s };
            }
        }
        let z: f64 = e.iter().filter(|v| v.is_finite()).map(|v| v.exp()).sum();
        let alpha: Vec<f64> = e.iter().map(|v| if v.is_finite() { v.exp() / z } else { 0.0 }).collect();
        let mut out = vec![0.0; f];
        for j in 0..n {
            for k in 0..f {
                out[k] += alpha[j] * wh[j][k];
            }
        }
        sums.push(out);
        alphas.push(alpha);
    }
    (sums, alphas)
}

pub fn gru_oracle(p: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let r: Vec<f64> = add(&add(&matvec(&p.w_r, x), &matvec(&p.u_r, h)), p.b_r.data()).into_iter().map(sig).collect();
    let z: Vec<f64> = add(&add(&matvec(&p.w_z, x), &matvec(&p.u_z, h)), p.b_z.data()).into_iter().map(sig).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> =
        add(&add(&matvec(&p.w, x), &matvec(&p.u, &rh)), p.b.data()).into_iter().map(f64::tanh).collect();
    (0..h.len()).map(|k| (1.0 - z[k]) * h[k] + z[k] * cand[k]).collect()
}

pub fn context_oracle(p: &AttnDecoderParams, s: &[f64], hs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let q = matvec(&p.w_a, s);
    let e: Vec<f64> = hs
        .iter()
        .map(|h| {
            let t: Vec<f64> = add(&q, &matvec(&p.u_a, h)).into_iter().map(f64::tanh).collect();
            t.iter().zip(p.v_a.data()).map(|(a, b)| a * b).sum()
        })
        .collect();
    let z: f64 = e.iter().map(|v| v.exp()).sum();
    let alpha: Vec<f64> = e.iter().map(|v| v.exp() / z).collect();
    let mut c = vec![0.0; s.len()];
    for (a, h) in alpha.iter().zip(hs) {
        for k in 0..c.len() {
            c[k] += a * h[k];
        }
    }
    (c, alpha)
}

pub fn decoder_oracle(p: &AttnDecoderParams, y: &[f64], s: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let lin = |w: &Tensor, u: &Tensor, cm: &Tensor, b: &Tensor, sv: &[f64]| {
        add(&add(&add(&matvec(w, y), &matvec(u, sv)), &matvec(cm, c)), b.data())
    };
    let z: Vec<f64> = lin(&p.w_z, &p.u_z, &p.c_z, &p.b_z, s).into_iter().map(sig).collect();
    let r: Vec<f64> = lin(&p.w_r, &p.u_r, &p.c_r, &p.b_r, s).into_iter().map(sig).collect();
    let rs: Vec<f64> = r.iter().zip(s).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = lin(&p.w, &p.u, &p.c, &p.b, &rs).into_iter().map(f64::tanh).collect();
    let s_new = (0..s.len()).map(|k| (1.0 - z[k]) * s[k] + z[k] * cand[k]).collect();
    let y_new = lin(&p.w_o, &p.u_o, &p.c_o, &p.b_o, s);
    (y_new, s_new)
}

pub fn random_gru(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> GruParams {
    GruParams {
        w: rand_t(rng, hidden, input, 0.8),
        u: rand_t(rng, hidden, hidden, 0.8),
        b: rand_t(rng, 1, hidden, 0.5),
        w_r: rand_t(rng, hidden, input, 0.8),
        u_r: rand_t(rng, hidden, hidden, 0.8),
        b_r: rand_t(rng, 1, hidden, 0.5),
        w_z: rand_t(rng, hidden, input, 0.8),
        u_z: rand_t(rng, hidden, hidden, 0.8),
        b_z: rand_t(rng, 1, hidden, 0.5),
    }
}

pub fn random_decoder(rng: &mut ChaCha8Rng, h: usize, o: usize) -> AttnDecoderParams {
    let mut p = AttnDecoderParams::zeros(h, h, o);
    for t in [
        &mut p.w_a, &mut p.u_a, &mut p.v_a, &mut p.w, &mut p.u, &mut p.c, &mut p.b, &mut p.w_z, &mut p.u_z, &mut p.c_z,
        &mut p.b_z, &mut p.w_r, &mut p.u_r, &mut p.c_r, &mut p.b_r, &mut p.w_s, &mut p.w_o, &mut p.u_o, &mut p.c_o,
        &mut p.b_o,
    ] {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    p
}

pub fn micro_config() -> ModelConfig {
    ModelConfig {
        input_features: 2,
        gat_width: 4,
        gat1_heads: 2,
        gat1_combine: Combine::Concat,
        gat2_heads: 2,
        gat2_combine: Combine::Average,
        dense_width: 4,
        hidden: 4,
        outputs: 2,
        leak: 0.2,
    }
}

pub fn xor_data() -> (Tensor, Vec<f64>) {
    (Tensor::matrix(4, 2, vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]), vec![0.0, 1.0, 1.0, 0.0])
}

pub fn xor_net(rng: &mut ChaCha8Rng) -> ParamSet {
    let mut ps = ParamSet::new();
    ps.add("W1", ParamKind::Weight, glorot_uniform(2, 2, rng));
    ps.add("b1", ParamKind::Bias, Tensor::row(vec![0.1, 0.1]));
    ps.add("W2", ParamKind::Weight, glorot_uniform(1, 2, rng));
    ps.add("b2", ParamKind::Bias, Tensor::row(vec![0.0]));
    ps
}

pub fn xor_loss(ps: &ParamSet) -> (f64, Vec<Tensor>) {
    let (x, y) = xor_data();
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let w1 = tape.param(ps, 0);
    let b1 = tape.param(ps, 1);
    let w2 = tape.param(ps, 2);
    let b2 = tape.param(ps, 3);
    let h = tape.matmul_bt(xv, w1);
    let h = tape.add_row(h, b1);
    let h = tape.relu(h);
    let o = tape.matmul_bt(h, w2);
    let o = tape.add_row(o, b2);
    let l = tape.mse(o, &y);
    (tape.scalar(l), ps.collect_grads(tape.backward(l)))
}

pub fn regular_arrivals(ld: f64, offset: f64) -> (RoadNetwork, usize, TripTable, SimConfig) {
    let net = build_grid_network(1, 1, 300.0, 1, ld).unwrap();
    let n = net.links.iter().find(|l| l.kind == LinkKind::Entry && l.to.map(|t| t.1) == Some(Side::North)).unwrap().id;
    let ex = net.successors(n).find(|c| c.movement == Movement::Straight).unwrap().to_link;
    let program = TlsProgram {
        phases: vec![
            Phase { duration: 30.0, green: vec![Side::East, Side::West] },
            Phase { duration: 30.0, green: vec![Side::North, Side::South] },
        ],
    };
    let cfg = SimConfig { program: Some(program), ..Default::default() };
    let trips = TripTable {
        trips: (0..150).map(|k| Trip { id: k, depart: offset + 4.0 * k as f64, route: vec![n, ex] }).collect(),
    };
    let lane = net.links[n].first_lane;
    (net, lane, trips, cfg)
}

/// Furthest upstream reach of a halted vehicle's rear, per cycle, from
/// vehicle positions.
pub fn positional_max_queue(ld: f64, offset: f64, cycles: &[CycleBounds]) -> Vec<f64> {
    let (net, lane, trips, cfg) = regular_arrivals(ld, offset);
    let mut sim = Simulation::new(&net, cfg, trips, 600, 0).unwrap();
    let mut out = vec![0.0; cycles.len()];
    while !sim.is_finished() {
        let t = sim.time();
        sim.step();
        let Some(c) = cycles.iter().position(|c| t >= c.red_start && t < c.next_red_start) else { continue };
        for v in sim.lane_vehicles(lane) {
            if v.speed < 0.1 {
                out[c] = f64::max(out[c], 300.0 - v.pos + LE);
            }
        }
    }
    out
}
