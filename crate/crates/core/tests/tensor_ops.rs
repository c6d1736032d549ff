use cascnn_core::tensor::{GradCheck, Tape, Tensor, Var};
use cascnn_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    t
}

/// Quadruple-loop same-padded convolution over an explicitly padded copy.
fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let pad = k / 2;
    let (ph, pw) = (h + 2 * pad, wd + 2 * pad);
    let mut padded = vec![0.0; c_in * ph * pw];
    for m in 0..c_in {
        for r in 0..h {
            for c in 0..wd {
                padded[(m * ph + r + pad) * pw + c + pad] = x.data()[(m * h + r) * wd + c];
            }
        }
    }
    let mut out = vec![0.0; c_out * h * wd];
    for co in 0..c_out {
        for r in 0..h {
            for c in 0..wd {
                let mut acc = b.data()[co];
                for m in 0..c_in {
                    for p in 0..k {
                        for q in 0..k {
                            acc += w.data()[((co * c_in + m) * k + p) * k + q]
                                * padded[(m * ph + r + p) * pw + c + q];
                        }
                    }
                }
                out[(co * h + r) * wd + c] = acc;
            }
        }
    }
    out
}

fn conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, Error> {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
    let out = tape.conv2d_same(xv, wv, bv)?;
    Ok(tape.value(out).clone())
}

fn conv1(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, Error> {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
    let out = tape.conv1x1(xv, wv, bv)?;
    Ok(tape.value(out).clone())
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[1, 3, 3], &mut rng);
    let mut w = Tensor::zeros(&[1, 1, 3, 3]);
    w.data_mut()[4] = 1.0;
    assert_eq!(conv(&x, &w, &Tensor::zeros(&[1])).unwrap().data(), x.data());
}

#[test]
fn conv_zero_weights_gives_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 4, 5], &mut rng);
    let out = conv(&x, &Tensor::zeros(&[3, 2, 5, 5]), &Tensor::from_vec(vec![0.5, -1.0, 2.0])).unwrap();
    for (c, plane) in out.data().chunks(20).enumerate() {
        assert!(plane.iter().all(|&v| v == [0.5, -1.0, 2.0][c]));
    }
}

#[test]
fn conv_all_ones_on_two_by_two() {
    let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let out = conv(&x, &Tensor::full(&[1, 1, 3, 3], 1.0), &Tensor::zeros(&[1])).unwrap();
    assert_eq!(out.data(), &[10.0, 10.0, 10.0, 10.0]);
    assert_eq!(conv_oracle(&x, &Tensor::full(&[1, 1, 3, 3], 1.0), &Tensor::zeros(&[1])), vec![10.0; 4]);
}

#[test]
fn conv_matches_brute_force_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let k = [1, 3, 5][rng.random_range(0..3)];
        let (c_in, c_out) = (rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (rng.random_range(1..8), rng.random_range(1..8));
        let x = random(&[c_in, h, w], &mut rng);
        let wt = random(&[c_out, c_in, k, k], &mut rng);
        let b = random(&[c_out], &mut rng);
        let got = conv(&x, &wt, &b).unwrap();
        let want = conv_oracle(&x, &wt, &b);
        for (g, o) in got.data().iter().zip(&want) {
            assert!((g - o).abs() <= 1e-12 * o.abs().max(1.0), "{g} vs {o}");
        }
    }
}

#[test]
fn conv_shape_errors_name_the_axis() {
    let x = Tensor::zeros(&[2, 3, 3]);
    let err = conv(&x, &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1])).unwrap_err();
    assert!(matches!(err, Error::Dimension { ref axis, expected: 2, actual: 3, .. } if axis == "weight in_channels"));
    let err = conv(&x, &Tensor::zeros(&[1, 2, 3, 3]), &Tensor::zeros(&[2])).unwrap_err();
    assert!(matches!(err, Error::Dimension { ref axis, .. } if axis == "bias out_channels"));
    assert!(matches!(
        conv(&x, &Tensor::zeros(&[1, 2, 2, 2]), &Tensor::zeros(&[1])),
        Err(Error::Usage(_))
    ));
}

#[test]
fn conv1x1_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 4, 4], &mut rng);
    let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(conv1(&x, &eye, &Tensor::zeros(&[2])).unwrap().data(), x.data());

    let summed = conv1(&x, &Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(), &Tensor::zeros(&[1])).unwrap();
    for s in 0..16 {
        assert_eq!(summed.data()[s], x.data()[s] + x.data()[16 + s]);
    }

    let w = random(&[3, 2], &mut rng);
    let b = random(&[3], &mut rng);
    let out = conv1(&x, &w, &b).unwrap();
    for co in 0..3 {
        for s in 0..16 {
            let oracle = b.data()[co] + (0..2).map(|m| w.data()[co * 2 + m] * x.data()[m * 16 + s]).sum::<f64>();
            assert!((out.data()[co * 16 + s] - oracle).abs() < 1e-14);
        }
    }
}

#[test]
fn conv1x1_equals_k1_convolution_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (c_in, c_out) = (rng.random_range(1..5), rng.random_range(1..5));
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let x = random(&[c_in, h, w], &mut rng);
        let wt = random(&[c_out, c_in], &mut rng);
        let b = random(&[c_out], &mut rng);
        let k1 = wt.reshape(&[c_out, c_in, 1, 1]).unwrap();
        assert_eq!(conv1(&x, &wt, &b).unwrap(), conv(&x, &k1, &b).unwrap());
    }
}

fn unary(x: &Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var, Error>) -> Result<Tensor, Error> {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).clone())
}

#[test]
fn global_avg_pool_examples() {
    let c = Tensor::full(&[1, 3, 2], 2.5);
    assert_eq!(unary(&c, |t, v| t.global_avg_pool(v)).unwrap().data(), &[2.5]);
    let x = Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
    assert_eq!(unary(&x, |t, v| t.global_avg_pool(v)).unwrap().data(), &[4.0]);
    let z = Tensor::zeros(&[3, 2, 2]);
    assert_eq!(unary(&z, |t, v| t.global_avg_pool(v)).unwrap().data(), &[0.0; 3]);
    assert!(matches!(
        unary(&Tensor::zeros(&[4]), |t, v| t.global_avg_pool(v)),
        Err(Error::Dimension { .. })
    ));
}

fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, Error> {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
    let out = tape.dense(xv, wv, bv)?;
    Ok(tape.value(out).clone())
}

#[test]
fn dense_examples() {
    let x = Tensor::from_vec(vec![0.3, -2.0]);
    let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(dense(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);
    let b = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
    assert_eq!(dense(&x, &Tensor::zeros(&[3, 2]), &b).unwrap(), b);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = random(&[3, 2], &mut rng);
    let out = dense(&x, &w, &b).unwrap();
    for o in 0..3 {
        let oracle = b.data()[o] + w.data()[o * 2] * 0.3 + w.data()[o * 2 + 1] * -2.0;
        assert!((out.data()[o] - oracle).abs() < 1e-15);
    }
    assert!(matches!(dense(&Tensor::zeros(&[3]), &w, &b), Err(Error::Dimension { .. })));
}

#[test]
fn activation_and_broadcast_examples() {
    assert_eq!(unary(&Tensor::scalar(0.0), |t, v| Ok(t.sigmoid(v))).unwrap().data(), &[0.5]);
    assert_eq!(
        unary(&Tensor::from_vec(vec![-1.0, 0.0, 2.0]), |t, v| Ok(t.relu(v))).unwrap().data(),
        &[0.0, 0.0, 2.0]
    );
    let mut tape = Tape::new();
    let m = tape.leaf(Tensor::zeros(&[2, 2]));
    let v = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
    let out = tape.broadcast_rows(m, v).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 1.0, 2.0, 2.0]);
    let bad = tape.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
    assert!(matches!(tape.broadcast_rows(m, bad), Err(Error::Dimension { .. })));
    assert!(matches!(tape.add(m, bad), Err(Error::Dimension { .. })));
}

#[test]
fn elementwise_ops_match_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&[3, 4, 2], &mut rng);
    let b = random(&[3, 4, 2], &mut rng);
    let s = random(&[3], &mut rng);
    let mut tape = Tape::new();
    let (av, bv, sv) = (tape.leaf(a.clone()), tape.leaf(b.clone()), tape.leaf(s.clone()));
    let prod = tape.mul(av, bv).unwrap();
    let sum = tape.add(av, bv).unwrap();
    let scaled = tape.scale_channels(av, sv).unwrap();
    let sig = tape.sigmoid(av);
    for i in 0..a.len() {
        assert_eq!(tape.value(prod).data()[i], a.data()[i] * b.data()[i]);
        assert_eq!(tape.value(sum).data()[i], a.data()[i] + b.data()[i]);
        assert_eq!(tape.value(scaled).data()[i], a.data()[i] * s.data()[i / 8]);
        let oracle = 1.0 / (1.0 + (-a.data()[i]).exp());
        assert!((tape.value(sig).data()[i] - oracle).abs() < 1e-15);
    }
}

#[test]
fn backward_simple_sums() {
    let x = Tensor::from_vec(vec![1.5, -2.0, 0.25]);
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let s = tape.sum(v);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(v).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let sq = tape.mul(v, v).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(v).unwrap(), &[3.0, -4.0, 0.5]);

    assert!(matches!(tape.backward(sq), Err(Error::Usage(_))));
}

#[test]
fn backward_twice_doubles_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut tape = Tape::new();
    let x = tape.leaf(random(&[2, 5, 5], &mut rng));
    let w = tape.leaf(random(&[3, 2, 3, 3], &mut rng));
    let b = tape.leaf(random(&[3], &mut rng));
    let y = tape.conv2d_same(x, w, b).unwrap();
    let r = tape.relu(y);
    let loss = tape.sum(r);
    tape.backward(loss).unwrap();
    let once: Vec<Vec<f64>> = [x, w, b].iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();
    tape.backward(loss).unwrap();
    for (v, g1) in [x, w, b].iter().zip(&once) {
        let g2 = tape.grad(*v).unwrap();
        for (a, b) in g1.iter().zip(g2) {
            assert_eq!(2.0 * a, *b);
        }
    }
}

/// Projects a tensor output onto a fixed random direction so every output
/// element contributes to the scalar.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = random(tape.value(out).shape(), &mut rng);
    let d = tape.leaf(dir);
    let p = tape.mul(out, d)?;
    Ok(tape.sum(p))
}

fn assert_gradcheck(errors: &[f64], what: &str) {
    for (i, e) in errors.iter().enumerate() {
        assert!(*e < 1e-4, "{what}: input {i} relative error {e}");
    }
}

#[test]
fn gradients_match_finite_differences_over_random_trials() {
    let check = GradCheck::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..100u64 {
        let k = [1, 3, 5][rng.random_range(0..3)];
        let (c_in, c_out) = (rng.random_range(1..3), rng.random_range(1..3));
        let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
        let inputs = [
            random(&[c_in, h, w], &mut rng),
            random(&[c_out, c_in, k, k], &mut rng),
            random(&[c_out], &mut rng),
        ];
        let e = check
            .run(&inputs, |t, v| {
                let o = t.conv2d_same(v[0], v[1], v[2])?;
                project(t, o, trial)
            })
            .unwrap();
        assert_gradcheck(&e, "conv2d_same");

        let inputs = [
            random(&[c_in, h, w], &mut rng),
            random(&[c_out, c_in], &mut rng),
            random(&[c_out], &mut rng),
        ];
        let e = check
            .run(&inputs, |t, v| {
                let o = t.conv1x1(v[0], v[1], v[2])?;
                project(t, o, trial)
            })
            .unwrap();
        assert_gradcheck(&e, "conv1x1");

        let e = check
            .run(&[random(&[c_in, h, w], &mut rng)], |t, v| {
                let o = t.global_avg_pool(v[0])?;
                project(t, o, trial)
            })
            .unwrap();
        assert_gradcheck(&e, "global_avg_pool");

        let inputs = [random(&[c_in], &mut rng), random(&[c_out, c_in], &mut rng), random(&[c_out], &mut rng)];
        let e = check
            .run(&inputs, |t, v| {
                let o = t.dense(v[0], v[1], v[2])?;
                project(t, o, trial)
            })
            .unwrap();
        assert_gradcheck(&e, "dense");

        let e = check
            .run(&[random(&[h, w], &mut rng)], |t, v| {
                let o = t.relu(v[0]);
                project(t, o, trial)
            })
            .unwrap();
        assert_gradcheck(&e, "relu");

        let e = check
            .run(&[random(&[h, w], &mut rng)], |t, v| {
                let o = t.sigmoid(v[0]);
                project(t, o, trial)
            })
            .unwrap();
        assert_gradcheck(&e, "sigmoid");

        let inputs = [random(&[h, w], &mut rng), random(&[h, w], &mut rng)];
        let e = check
            .run(&inputs, |t, v| {
                let o = t.mul(v[0], v[1])?;
                let o = t.add(o, v[1])?;
                project(t, o, trial)
            })
            .unwrap();
        assert_gradcheck(&e, "mul/add");

        let inputs = [random(&[c_in, h, w], &mut rng), random(&[c_in], &mut rng)];
        let e = check
            .run(&inputs, |t, v| {
                let o = t.scale_channels(v[0], v[1])?;
                project(t, o, trial)
            })
            .unwrap();
        assert_gradcheck(&e, "scale_channels");

        let inputs = [random(&[h, w], &mut rng), random(&[h], &mut rng)];
        let e = check
            .run(&inputs, |t, v| {
                let o = t.broadcast_rows(v[0], v[1])?;
                let o = t.reshape(o, &[h * w])?;
                project(t, o, trial)
            })
            .unwrap();
        assert_gradcheck(&e, "broadcast_rows");

        let target = random(&[h, w], &mut rng);
        let mut mask: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.6)).collect();
        mask[0] = true;
        let e = check
            .run(&[random(&[h, w], &mut rng)], |t, v| t.masked_mse(v[0], &target, &mask))
            .unwrap();
        assert_gradcheck(&e, "masked_mse");
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut tape = Tape::new();
        let x = tape.leaf(random(&[3, 6, 6], &mut rng));
        let w = tape.leaf(random(&[4, 3, 5, 5], &mut rng));
        let b = tape.leaf(random(&[4], &mut rng));
        let y = tape.conv2d_same(x, w, b).unwrap();
        let p = tape.global_avg_pool(y).unwrap();
        let s = tape.sigmoid(p);
        let l = tape.sum(s);
        tape.backward(l).unwrap();
        (tape.value(y).clone(), tape.grad(w).unwrap().to_vec(), tape.grad(x).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}
