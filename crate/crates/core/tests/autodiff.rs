mod common;

use common::{gradient_error, input_gradient_error, randn, rng, uniform};
use gnas::autodiff::{forward_backward, sgd_step, AutodiffError, Bindings, ParamGroup, ParamStore, PoolKind, Tape, Var};
use gnas::losses::train_loss;
use gnas::search_space::{OpKind, Operation};
use gnas::tensor::Tensor;

const STACK_TOL: f64 = 1e-4;
const PRIMITIVE_TOL: f64 = 1e-6;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

/// Direct nested-loop cross-correlation with zero padding `dil * (k - 1) / 2`.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, dil: usize, groups: usize) -> Tensor<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cpg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (ph, pw) = ((dil * (kh - 1) / 2) as isize, (dil * (kw - 1) / 2) as isize);
    let oh = (h + 2 * ph as usize - dil * (kh - 1) - 1) / stride + 1;
    let ow = (wd + 2 * pw as usize - dil * (kw - 1) - 1) / stride + 1;
    let opg = cout / groups;
    let xv = |b: usize, c: usize, y: isize, x_: isize| -> Option<f64> {
        (y >= 0 && x_ >= 0 && (y as usize) < h && (x_ as usize) < wd)
            .then(|| x.data()[((b * cin + c) * h + y as usize) * wd + x_ as usize])
    };
    let mut out = Vec::new();
    for b in 0..n {
        for o in 0..cout {
            let g = o / opg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..cpg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky * dil) as isize - ph;
                                let ix = (ox * stride + kx * dil) as isize - pw;
                                if let Some(v) = xv(b, g * cpg + ci, iy, ix) {
                                    s += v * w.data()[((o * cpg + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    Tensor::from_vec([n, cout, oh, ow], out).unwrap()
}

/// Direct 3x3 pooling; padded cells are skipped, max keeps the first maximum.
fn naive_pool(x: &Tensor<f64>, kind: PoolKind, stride: usize) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = ((h - 1) / stride + 1, (w - 1) / stride + 1);
    let mut out = Vec::new();
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut vals = Vec::new();
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (y, xx) = ((oy * stride) as isize + dy, (ox * stride) as isize + dx);
                        if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                            vals.push(x.data()[(plane * h + y as usize) * w + xx as usize]);
                        }
                    }
                }
                out.push(match kind {
                    PoolKind::Avg => vals.iter().fold(0.0, |a, v| a + v) / vals.len() as f64,
                    PoolKind::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                });
            }
        }
    }
    Tensor::from_vec([n, c, oh, ow], out).unwrap()
}

fn run_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, dil: usize, groups: usize) -> Tensor<f64> {
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
    let y = tape.conv2d(xv, wv, stride, dil, groups).unwrap();
    tape.value(y).clone()
}

fn run_pool(x: &Tensor<f64>, kind: PoolKind, stride: usize) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = tape.pool2d(xv, kind, 3, stride).unwrap();
    tape.value(y).clone()
}

#[test]
fn sum_and_half_square_norm_gradients() {
    let mut store = ParamStore::new();
    store.insert("p", ParamGroup::Head, t(&[3], &[0.3, -1.0, 2.0])).unwrap();
    let mut tape = Tape::new();
    let b = store.bind(&mut tape, &[ParamGroup::Head]);
    let s = tape.sum_all(b.get("p").unwrap());
    let g = forward_backward(&tape, s, &b).unwrap();
    assert_eq!(g["p"].data(), &[1.0, 1.0, 1.0]);

    let mut store = ParamStore::new();
    store.insert("p", ParamGroup::Head, t(&[2], &[1.0, -2.0])).unwrap();
    let mut tape = Tape::new();
    let b = store.bind(&mut tape, &[ParamGroup::Head]);
    let sq = tape.square(b.get("p").unwrap());
    let s = tape.sum_all(sq);
    let half = tape.scale(s, 0.5);
    let g = forward_backward(&tape, half, &b).unwrap();
    assert_eq!(g["p"].data(), &[1.0, -2.0]);
}

#[test]
fn unreachable_parameters_get_zero_and_loss_gets_one() {
    let mut store = ParamStore::new();
    store.insert("used", ParamGroup::Head, t(&[2], &[1.0, 2.0])).unwrap();
    store.insert("unused", ParamGroup::Backbone, t(&[3], &[1.0, 2.0, 3.0])).unwrap();
    let mut tape = Tape::new();
    let b = store.bind(&mut tape, &[ParamGroup::Head, ParamGroup::Backbone]);
    let loss = tape.sum_all(b.get("used").unwrap());
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(loss).unwrap().item(), 1.0);
    let g = forward_backward(&tape, loss, &b).unwrap();
    assert_eq!(g["unused"].data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_from_non_scalar_is_rejected() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
    assert!(matches!(tape.backward(x), Err(AutodiffError::Contract(_))));
}

#[test]
fn elementwise_primitives_pass_gradient_checks() {
    let mut r = rng(1);
    for _ in 0..10 {
        let a = randn(&[3, 4], &mut r);
        let b = randn(&[3, 4], &mut r);
        let c = randn(&[3, 4], &mut r);
        let k = randn(&[3, 4], &mut r);
        let ops: Vec<(&str, f64)> = vec![
            ("add", input_gradient_error(&[a.clone(), b.clone()], |t, x| t.add(x[0], x[1]))),
            ("sub", input_gradient_error(&[a.clone(), b.clone()], |t, x| t.sub(x[0], x[1]))),
            ("sum", input_gradient_error(&[a.clone(), b.clone(), c.clone()], |t, x| t.sum(x))),
            ("scale", input_gradient_error(&[a.clone()], |t, x| Ok(t.scale(x[0], -1.7)))),
            ("add_const", input_gradient_error(&[a.clone()], |t, x| t.add_const(x[0], &k))),
            ("mul_const", input_gradient_error(&[a.clone()], |t, x| t.mul_const(x[0], k.clone()))),
            ("mul", input_gradient_error(&[a.clone(), b.clone()], |t, x| t.mul(x[0], x[1]))),
            ("relu", input_gradient_error(&[a.clone()], |t, x| Ok(t.relu(x[0])))),
            ("softplus", input_gradient_error(&[a.map(|v| 4.0 * v)], |t, x| Ok(t.softplus(x[0])))),
            ("square", input_gradient_error(&[a.clone()], |t, x| Ok(t.square(x[0])))),
            ("smooth_l1", input_gradient_error(&[a.map(|v| 3.0 * v)], |t, x| Ok(t.smooth_l1(x[0])))),
            ("sum_all", input_gradient_error(&[a.clone()], |t, x| Ok(t.sum_all(x[0])))),
            ("mean_all", input_gradient_error(&[a.clone()], |t, x| Ok(t.mean_all(x[0])))),
            ("softmax", input_gradient_error(&[a.map(|v| 3.0 * v)], |t, x| Ok(t.softmax(x[0])))),
            ("row", input_gradient_error(&[a.clone()], |t, x| t.row(x[0], 2))),
            ("reshape", input_gradient_error(&[a.clone()], |t, x| t.reshape(x[0], &[2, 6]))),
        ];
        for (name, err) in ops {
            assert!(err < PRIMITIVE_TOL, "{name}: relative error {err:e}");
        }
    }
}

#[test]
fn structural_primitives_pass_gradient_checks() {
    let mut r = rng(2);
    for _ in 0..10 {
        let xs: Vec<Tensor<f64>> = (0..3).map(|_| randn(&[2, 3, 5, 4], &mut r)).collect();
        let w = randn(&[3], &mut r);
        let mut inputs = xs.clone();
        inputs.push(w);
        let err = input_gradient_error(&inputs, |t, x| t.weighted_sum(&x[..3], x[3]));
        assert!(err < PRIMITIVE_TOL, "weighted_sum: {err:e}");
        let err = input_gradient_error(&xs, |t, x| t.concat_channels(x));
        assert!(err < PRIMITIVE_TOL, "concat: {err:e}");
        let err = input_gradient_error(&xs[..1], |t, x| t.global_avg_pool(x[0]));
        assert!(err < PRIMITIVE_TOL, "global_avg_pool: {err:e}");
        for shape in [[2, 3, 5, 4], [1, 2, 6, 6]] {
            let x = randn(&shape, &mut r);
            let err = input_gradient_error(&[x], |t, x| t.subsample2(x[0]));
            assert!(err < PRIMITIVE_TOL, "subsample2 {shape:?}: {err:e}");
        }
        let lin = [randn(&[4, 6], &mut r), randn(&[2, 6], &mut r), randn(&[2], &mut r)];
        let err = input_gradient_error(&lin, |t, x| t.linear(x[0], x[1], x[2]));
        assert!(err < PRIMITIVE_TOL, "linear: {err:e}");
    }
}

#[test]
fn conv_and_pool_pass_gradient_checks() {
    let mut r = rng(3);
    for trial in 0..10 {
        let x = randn(&[2, 4, 7, 6], &mut r);
        for stride in [1, 2] {
            for dil in [1, 2] {
                for (groups, k) in [(1, 3), (4, 3), (4, 5), (1, 1)] {
                    let w = randn(&[4, 4 / groups, k, k], &mut r);
                    let err = input_gradient_error(&[x.clone(), w], |t, v| t.conv2d(v[0], v[1], stride, dil, groups));
                    assert!(err < STACK_TOL, "conv s{stride} d{dil} g{groups} k{k} trial {trial}: {err:e}");
                }
            }
            for kind in [PoolKind::Avg, PoolKind::Max] {
                let err = input_gradient_error(&[x.clone()], |t, v| t.pool2d(v[0], kind, 3, stride));
                assert!(err < STACK_TOL, "pool {kind:?} s{stride}: {err:e}");
            }
        }
    }
}

#[test]
fn every_operation_passes_gradient_checks() {
    let mut r = rng(4);
    for kind in OpKind::ALL {
        for stride in [1, 2] {
            let mut store = ParamStore::new();
            let op = Operation::build(kind, 4, stride, "op", &mut store, &mut r).unwrap();
            let x = randn(&[2, 4, 8, 8], &mut r);
            let err = gradient_error(&store, &[x], 200, &|t: &mut Tape<f64>, b: &Bindings, v: &[Var]| {
                op.forward(t, b, v[0])
            });
            assert!(err < STACK_TOL, "{kind} stride {stride}: {err:e}");
        }
    }
}

#[test]
fn conv_pool_stack_passes_gradient_check() {
    let mut r = rng(5);
    let mut store = ParamStore::new();
    store.insert("c1", ParamGroup::Backbone, randn(&[4, 3, 3, 3], &mut r)).unwrap();
    store.insert("dw", ParamGroup::Head, randn(&[4, 1, 5, 5], &mut r)).unwrap();
    store.insert("pw", ParamGroup::Head, randn(&[4, 4, 1, 1], &mut r)).unwrap();
    let x = uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut r);
    let err = gradient_error(&store, &[x], 120, &|t: &mut Tape<f64>, b: &Bindings, v: &[Var]| {
        let h = t.conv2d(v[0], b.get("c1")?, 1, 1, 1)?;
        let h = t.relu(h);
        let h = t.pool2d(h, PoolKind::Max, 3, 2)?;
        let h = t.conv2d(h, b.get("dw")?, 1, 2, 4)?;
        let h = t.conv2d(h, b.get("pw")?, 1, 1, 1)?;
        let h = t.pool2d(h, PoolKind::Avg, 3, 1)?;
        t.global_avg_pool(h)
    });
    assert!(err < STACK_TOL, "stack: {err:e}");
}

#[test]
fn composite_loss_on_two_layer_net_matches_finite_differences() {
    let mut r = rng(6);
    for _ in 0..5 {
        let mut store = ParamStore::new();
        store.insert("w1", ParamGroup::Backbone, randn(&[5, 4], &mut r)).unwrap();
        store.insert("b1", ParamGroup::Backbone, randn(&[5], &mut r)).unwrap();
        store.insert("wc", ParamGroup::Head, randn(&[1, 5], &mut r)).unwrap();
        store.insert("bc", ParamGroup::Head, randn(&[1], &mut r)).unwrap();
        store.insert("wr", ParamGroup::Head, randn(&[2, 5], &mut r)).unwrap();
        store.insert("br", ParamGroup::Head, randn(&[2], &mut r)).unwrap();
        let x = randn(&[6, 4], &mut r);
        let y1: Vec<f64> = (0..6).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let y2 = uniform(&[12], -0.8, 0.8, &mut r).into_data();
        let err = gradient_error(&store, &[x], usize::MAX, &|t: &mut Tape<f64>, b: &Bindings, v: &[Var]| {
            let h = t.linear(v[0], b.get("w1")?, b.get("b1")?)?;
            let h = t.softplus(h);
            let c = t.linear(h, b.get("wc")?, b.get("bc")?)?;
            let c = t.reshape(c, &[6])?;
            let p = t.linear(h, b.get("wr")?, b.get("br")?)?;
            Ok(train_loss(t, c, p, &y1, &y2, 1.0)?.total)
        });
        assert!(err < 1e-6, "composite: {err:e}");
    }
}

#[test]
fn conv_matches_naive_loops_exactly() {
    let mut r = rng(7);
    let x = randn(&[2, 3, 8, 8], &mut r);
    let w = randn(&[4, 3, 3, 3], &mut r);
    assert_eq!(run_conv(&x, &w, 1, 2, 1), naive_conv(&x, &w, 1, 2, 1));
    for stride in [1, 2] {
        for dil in [1, 2] {
            for k in [3, 5] {
                let x = randn(&[2, 4, 8, 7], &mut r);
                let w = randn(&[4, 1, k, k], &mut r);
                assert_eq!(run_conv(&x, &w, stride, dil, 4), naive_conv(&x, &w, stride, dil, 4));
                let w = randn(&[6, 4, k, k], &mut r);
                assert_eq!(run_conv(&x, &w, stride, dil, 1), naive_conv(&x, &w, stride, dil, 1));
            }
        }
    }
}

#[test]
fn conv_identity_and_delta_response() {
    let mut r = rng(8);
    let x = randn(&[1, 3, 5, 5], &mut r);
    let mut eye = Tensor::zeros([3, 3, 1, 1]);
    for c in 0..3 {
        eye.data_mut()[c * 3 + c] = 1.0;
    }
    assert_eq!(run_conv(&x, &eye, 1, 1, 1), x);

    let mut hot = Tensor::zeros([1, 1, 5, 5]);
    hot.data_mut()[2 * 5 + 2] = 1.0;
    let y = run_conv(&hot, &Tensor::full([1, 1, 3, 3], 1.0), 1, 1, 1);
    for row in 0..5 {
        for col in 0..5 {
            let inside = (1..=3).contains(&row) && (1..=3).contains(&col);
            assert_eq!(y.data()[row * 5 + col], if inside { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros([1, 3, 4, 4]));
    let w = tape.constant(Tensor::zeros([2, 2, 3, 3]));
    assert!(matches!(tape.conv2d(x, w, 1, 1, 1), Err(AutodiffError::Contract(_))));
}

#[test]
fn pool_matches_naive_loops_and_shapes() {
    let mut r = rng(9);
    for stride in [1, 2] {
        for kind in [PoolKind::Avg, PoolKind::Max] {
            let x = randn(&[2, 3, 8, 8], &mut r);
            let y = run_pool(&x, kind, stride);
            assert_eq!(y, naive_pool(&x, kind, stride));
            assert_eq!(y.shape(), &[2, 3, 8 / stride, 8 / stride]);
        }
    }
    let c = Tensor::full([1, 2, 6, 6], 0.37);
    assert!(run_pool(&c, PoolKind::Avg, 1).data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    assert!(run_pool(&c, PoolKind::Avg, 2).data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
}

#[test]
fn max_pool_on_ramp_picks_bottom_right() {
    let (h, w) = (6, 6);
    let ramp = Tensor::from_vec([1, 1, h, w], (0..h * w).map(|i| i as f64).collect()).unwrap();
    for stride in [1, 2] {
        let y = run_pool(&ramp, PoolKind::Max, stride);
        let ow = y.shape()[3];
        for (o, &v) in y.data().iter().enumerate() {
            let (oy, ox) = ((o / ow) * stride, (o % ow) * stride);
            let corner = ((oy + 1).min(h - 1) * w + (ox + 1).min(w - 1)) as f64;
            assert_eq!(v, corner);
        }
    }
}

#[test]
fn max_pool_gradient_goes_to_first_maximum() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::full([1, 1, 3, 3], 2.0), true);
    let y = tape.pool2d(x, PoolKind::Max, 3, 2).unwrap();
    let s = tape.sum_all(y);
    let g = tape.backward(s).unwrap();
    // Windows centred on (0,0), (0,2), (2,0), (2,2); after clipping their
    // first cells are 0, 1, 3 and 4.
    let gx = g.get(x).unwrap().data().to_vec();
    assert_eq!(gx, vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn softmax_closed_forms_and_simplex() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::full([7], 0.25));
    let s = tape.softmax(a);
    assert!(tape.value(s).data().iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
    let b = tape.constant(t(&[2], &[2f64.ln(), 0.0]));
    let s = tape.softmax(b);
    assert!((tape.value(s).data()[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((tape.value(s).data()[1] - 1.0 / 3.0).abs() < 1e-15);

    let mut r = rng(10);
    for _ in 0..200 {
        let logits = uniform(&[7], -50.0, 50.0, &mut r);
        let shifted = logits.map(|v| v + 13.5);
        let p = tape.constant(logits);
        let q = tape.constant(shifted);
        let (sp, sq) = (tape.softmax(p), tape.softmax(q));
        let vals = tape.value(sp).data().to_vec();
        assert!(vals.iter().all(|&v| v > 0.0));
        assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (u, v) in vals.iter().zip(tape.value(sq).data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut r = rng(13);
    for _ in 0..10 {
        let logits = randn(&[7], &mut r);
        let err = input_gradient_error(&[logits], |t, x| Ok(t.softmax(x[0])));
        assert!(err < 1e-8, "softmax: {err:e}");
    }
}

#[test]
fn sgd_examples() {
    let mut store = ParamStore::new();
    store.insert("p", ParamGroup::Head, t(&[1], &[1.0])).unwrap();
    store.insert("frozen", ParamGroup::Arch, t(&[1], &[3.0])).unwrap();
    let mut grads = gnas::autodiff::GradMap::new();
    grads.insert("p".to_string(), t(&[1], &[0.5]));
    sgd_step(&mut store, &grads, 0.02, &[ParamGroup::Head]).unwrap();
    assert_eq!(store.get("p").unwrap().value.data(), &[0.99]);
    assert_eq!(store.get("frozen").unwrap().value.data(), &[3.0]);

    grads.insert("p".to_string(), t(&[1], &[0.0]));
    sgd_step(&mut store, &grads, 0.02, &[ParamGroup::Head]).unwrap();
    assert_eq!(store.get("p").unwrap().value.data(), &[0.99]);

    assert!(sgd_step(&mut store, &grads, 0.02, &[ParamGroup::Arch]).is_err());
    assert!(sgd_step(&mut store, &grads, 0.0, &[ParamGroup::Head]).is_err());

    let mut store = ParamStore::new();
    store.insert("p", ParamGroup::Head, t(&[1], &[1.0])).unwrap();
    for _ in 0..2 {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[ParamGroup::Head]);
        let sq = tape.square(b.get("p").unwrap());
        let f = tape.scale(sq, 0.5);
        let f = tape.sum_all(f);
        let g = forward_backward(&tape, f, &b).unwrap();
        sgd_step(&mut store, &g, 0.1, &[ParamGroup::Head]).unwrap();
    }
    assert!((store.get("p").unwrap().value.item() - 0.81).abs() < 1e-15);
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut r = rng(11);
    let x = randn(&[2, 3, 6, 6], &mut r);
    let w = randn(&[3, 3, 3, 3], &mut r);
    let grads = |a: f64, b: f64| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.leaf(w.clone(), true);
        let y = tape.conv2d(xv, wv, 1, 1, 1).unwrap();
        let l1 = tape.softplus(y);
        let l1 = tape.sum_all(l1);
        let l2 = tape.pool2d(y, PoolKind::Max, 3, 2).unwrap();
        let l2 = tape.square(l2);
        let l2 = tape.mean_all(l2);
        let (s1, s2) = (tape.scale(l1, a), tape.scale(l2, b));
        let total = tape.add(s1, s2).unwrap();
        tape.backward(total).unwrap().get(wv).unwrap().clone()
    };
    let (a, b) = (0.7, -2.3);
    let combined = grads(a, b);
    let (g1, g2) = (grads(1.0, 0.0), grads(0.0, 1.0));
    for ((c, u), v) in combined.data().iter().zip(g1.data()).zip(g2.data()) {
        assert!((c - (a * u + b * v)).abs() < 1e-10);
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let mut r = rng(12);
    let x = randn(&[2, 4, 8, 8], &mut r);
    let mut store = ParamStore::new();
    let op = Operation::build(OpKind::DilConv5, 4, 2, "op", &mut store, &mut r).unwrap();
    let run = || {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]);
        let xv = tape.constant(x.clone());
        let y = op.forward(&mut tape, &b, xv).unwrap();
        tape.value(y).clone()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
}
