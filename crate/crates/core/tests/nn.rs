use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shockgat_core::nn::*;

mod common;
use common::{xor_loss, xor_net};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn affine_identity_and_arithmetic() {
    let x = Tensor::new(vec![2], vec![0.3, -1.2]).unwrap();
    let y = affine_forward(&Tensor::identity(2), &x, &Tensor::zeros(&[2])).unwrap();
    assert_eq!(y.data(), x.data());

    let w = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    let y = affine_forward(&w, &Tensor::new(vec![2], vec![1.0, 1.0]).unwrap(), &Tensor::zeros(&[2])).unwrap();
    assert_eq!(y.data(), &[3.0, 7.0]);

    let b = Tensor::new(vec![2], vec![0.5, -0.25]).unwrap();
    let y = affine_forward(&Tensor::zeros(&[2, 2]), &x, &b).unwrap();
    assert_eq!(y.data(), b.data());
}

#[test]
fn affine_rejects_bad_shapes() {
    let w = Tensor::zeros(&[2, 3]);
    let x = Tensor::zeros(&[2]);
    assert!(matches!(affine_forward(&w, &x, &Tensor::zeros(&[2])), Err(NnError::ShapeMismatch { .. })));
    let x = Tensor::zeros(&[3]);
    assert!(affine_forward(&w, &x, &Tensor::zeros(&[3])).is_err());
}

#[test]
fn activation_examples() {
    let z = Tensor::row(vec![-1.0, 0.0, 2.0]);
    assert_eq!(activation(Activation::Relu, &z).data(), &[0.0, 0.0, 2.0]);
    let s = activation(Activation::Softmax, &Tensor::row(vec![0.0, 0.0]));
    assert_eq!(s.data(), &[0.5, 0.5]);
    // tanh(x) = (e^{2x} - 1) / (e^{2x} + 1) with e^{2x} from its Taylor series
    let x: f64 = 0.5;
    let e2 = {
        let mut s = 0.0;
        let mut t = 1.0;
        for n in 1..60 {
            s += t;
            t *= 2.0 * x / n as f64;
        }
        s
    };
    let reference = (e2 - 1.0) / (e2 + 1.0);
    let t = activation(Activation::Tanh, &Tensor::row(vec![0.5]));
    assert!(close(t.data()[0], reference, 1e-12));
    assert!(close(t.data()[0], 0.462117, 1e-6));
    let sg = activation(Activation::Sigmoid, &Tensor::row(vec![0.0]));
    assert_eq!(sg.data(), &[0.5]);
}

#[test]
fn mse_examples() {
    let p = Tensor::row(vec![1.0, 1.0]);
    assert_eq!(mse_loss(&p, &p).unwrap(), 0.0);
    assert_eq!(mse_loss(&p, &Tensor::row(vec![0.0, 0.0])).unwrap(), 1.0);
    assert_eq!(mse_loss(&Tensor::row(vec![2.0]), &Tensor::row(vec![0.0])).unwrap(), 4.0);
    assert!(mse_loss(&p, &Tensor::row(vec![0.0])).is_err());
}

#[test]
fn backward_linear_and_constant() {
    let mut ps = ParamSet::new();
    let w = ps.add("w", ParamKind::Weight, Tensor::scalar(0.7));
    let mut tape = Tape::new();
    let wv = tape.param(&ps, w);
    let x = tape.leaf(&Tensor::scalar(3.0));
    let l = tape.mul(wv, x);
    let g = ps.collect_grads(tape.backward(l));
    assert_eq!(g[0].data(), &[3.0]);

    let mut tape = Tape::new();
    let _ = tape.param(&ps, w);
    let c = tape.leaf(&Tensor::scalar(5.0));
    let l = tape.sum(c);
    let g = ps.collect_grads(tape.backward(l));
    assert_eq!(g[0].data(), &[0.0]);
}

#[test]
fn xor_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ps = xor_net(&mut rng);
    let (_, g) = xor_loss(&ps);
    let report = grad_check(&ps, &g, 1e-5, |p| xor_loss(p).0);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn grad_check_linear_and_tanh_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParamSet::new();
    ps.add("W", ParamKind::Weight, glorot_uniform(3, 4, &mut rng));
    let x = Tensor::from_fn(5, 4, |_, _| rng.gen_range(-1.0..1.0));
    let linear = |p: &ParamSet| {
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let w = tape.param(p, 0);
        let y = tape.matmul_bt(xv, w);
        let l = tape.sum(y);
        (tape.scalar(l), p.collect_grads(tape.backward(l)))
    };
    let (_, g) = linear(&ps);
    assert!(grad_check(&ps, &g, 1e-5, |p| linear(p).0).max_rel_error < 1e-8);

    let chain = |p: &ParamSet| {
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let w = tape.param(p, 0);
        let y = tape.matmul_bt(xv, w);
        let y = tape.tanh(y);
        let y = tape.tanh(y);
        let y = tape.sigmoid(y);
        let l = tape.mean(y);
        (tape.scalar(l), p.collect_grads(tape.backward(l)))
    };
    let (_, g) = chain(&ps);
    assert!(grad_check(&ps, &g, 1e-5, |p| chain(p).0).max_rel_error < 1e-4);
}

#[test]
fn every_tape_op_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ps = ParamSet::new();
    ps.add("A", ParamKind::Weight, Tensor::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0)));
    ps.add("B", ParamKind::Weight, Tensor::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0)));
    ps.add("r", ParamKind::Bias, Tensor::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0)));
    ps.add("c", ParamKind::Bias, Tensor::from_fn(3, 1, |_, _| rng.gen_range(-1.0..1.0)));
    let mask = vec![true, false, true, true, true, false, false, true, true];
    let target: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
    let f = |p: &ParamSet| {
        let mut tape = Tape::new();
        let m = tape.register_mask(mask.clone());
        let a = tape.param(p, 0);
        let b = tape.param(p, 1);
        let r = tape.param(p, 2);
        let c = tape.param(p, 3);
        let ab = tape.matmul(a, b); // 3x3
        let abt = tape.matmul_bt(a, a); // 3x3
        let s = tape.add(ab, abt);
        let s = tape.add_row(s, r);
        let s = tape.mul_col(s, c);
        let lr = tape.leaky_relu(s, 0.2);
        let sm = tape.softmax_rows(lr, Some(m));
        let full = tape.softmax_rows(s, None);
        let o = tape.outer_sum(c, r);
        let t = tape.transpose(o);
        let d = tape.sub(t, sm);
        let e = tape.mul(d, full);
        let e = tape.one_minus(e);
        let e = tape.scale(e, 0.7);
        let rl = tape.relu(e);
        let both = tape.concat_cols(&[rl, e]);
        let sc = tape.slice_cols(both, 1, 5);
        let sr = tape.slice_rows(sc, 1, 3);
        let top = tape.slice_rows(sc, 0, 1);
        let stacked = tape.concat_rows(&[sr, top]);
        let stacked = tape.mul_const(stacked, (0..12).map(|i| 0.5 + i as f64 * 0.1).collect());
        let th = tape.tanh(stacked);
        let wide = tape.concat_cols(&[th, th]);
        let wide = tape.slice_cols(wide, 0, 6);
        let l1 = tape.mse(wide, &target);
        let l2 = tape.sum_squares(ab);
        let l3 = tape.mean(full);
        let l = tape.add(l1, l2);
        let l = tape.add(l, l3);
        (tape.scalar(l), p.collect_grads(tape.backward(l)))
    };
    let (_, g) = f(&ps);
    let report = grad_check(&ps, &g, 1e-5, |p| f(p).0);
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn l2_penalty_examples() {
    let mut ps = ParamSet::new();
    ps.add("W", ParamKind::Weight, Tensor::row(vec![3.0, 4.0]));
    ps.add("b", ParamKind::Bias, Tensor::row(vec![10.0]));
    assert_eq!(l2_penalty(&ps, 0.0), 0.0);
    assert_eq!(l2_penalty(&ps, 1.0), 12.5);

    let lambda = 0.3;
    let mut g = ps.zero_grads();
    add_l2_grad(&ps, lambda, &mut g);
    let report = grad_check(&ps, &g, 1e-5, |p| l2_penalty(p, lambda));
    assert!(report.max_rel_error < 1e-8, "{report:?}");
    assert_eq!(g[1].data(), &[0.0]);
}

#[test]
fn dropout_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::from_fn(100, 100, |_, _| 1.0);
    assert_eq!(dropout(&x, 0.0, &mut rng, true), x);
    assert_eq!(dropout(&x, 0.5, &mut rng, false), x);
    let d = dropout(&x, 0.5, &mut rng, true);
    let n = d.len() as f64;
    let mean = d.data().iter().sum::<f64>() / n;
    // each element is 0 or 2 with equal odds: variance 1
    let sigma = (1.0 / n).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
    assert!(d.data().iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn sgd_examples() {
    let mut ps = ParamSet::new();
    ps.add("p", ParamKind::Weight, Tensor::scalar(1.0));
    let mut st = OptState::new(OptimizerKind::Sgd, 0.1, &ps);
    optimizer_step(&mut ps, &[Tensor::scalar(2.0)], &mut st);
    assert!(close(ps.value(0).data()[0], 0.8, 1e-15));

    let before = ps.clone();
    let mut adam = OptState::new(OptimizerKind::Adam, 0.1, &ps);
    optimizer_step(&mut ps, &[Tensor::scalar(0.0)], &mut adam);
    optimizer_step(&mut ps, &[Tensor::scalar(0.0)], &mut st);
    assert_eq!(ps, before);
}

#[test]
fn adam_minimizes_square() {
    let mut ps = ParamSet::new();
    ps.add("x", ParamKind::Weight, Tensor::scalar(1.0));
    let mut st = OptState::new(OptimizerKind::Adam, 0.01, &ps);
    let mut trace = vec![1.0f64];
    for _ in 0..500 {
        let x = ps.value(0).data()[0];
        optimizer_step(&mut ps, &[Tensor::scalar(2.0 * x)], &mut st);
        trace.push(ps.value(0).data()[0].abs());
    }
    let last = *trace.last().unwrap();
    assert!(last < 1e-3, "final |x| = {last}");
    // bias-corrected steps start at the full learning rate, so |x| shrinks
    // every step until the iterate first gets within a few learning rates of 0
    let warm = trace.iter().position(|&v| v < 0.05).unwrap();
    assert!(trace[..=warm].windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn xor_trains_to_small_loss() {
    // two hidden units leave little slack: many seeds start with a dead ReLU
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ps = xor_net(&mut rng);
    let mut st = OptState::new(OptimizerKind::Sgd, 0.1, &ps);
    let mut loss = f64::INFINITY;
    for _ in 0..5000 {
        let (l, g) = xor_loss(&ps);
        loss = l;
        if loss < 0.01 {
            break;
        }
        optimizer_step(&mut ps, &g, &mut st);
    }
    assert!(loss < 0.01, "xor loss {loss}");
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-50.0f64..50.0, 12), keep in proptest::collection::vec(any::<bool>(), 12)) {
        let mut mask = keep.clone();
        for r in 0..3 { mask[r * 4 + r] = true; }
        let mut tape = Tape::new();
        let m = tape.register_mask(mask.clone());
        let x = tape.leaf(&Tensor::matrix(3, 4, vals));
        let s = tape.softmax_rows(x, Some(m));
        let d = tape.data(s);
        for r in 0..3 {
            let row = &d[r * 4..(r + 1) * 4];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for c in 0..4 {
                prop_assert!(row[c] >= 0.0);
                if !mask[r * 4 + c] { prop_assert_eq!(row[c], 0.0); }
            }
        }
    }

    #[test]
    fn relu_is_idempotent(vals in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
        let z = Tensor::row(vals);
        let once = activation(Activation::Relu, &z);
        prop_assert_eq!(activation(Activation::Relu, &once), once);
    }
}
