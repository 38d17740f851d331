//! Helpers shared by the integration tests: seeded tensors, a central
//! finite-difference gradient checker, and brute-force benchmark classifiers.

#![allow(dead_code)]

use gnas::autodiff::{AutodiffError, Bindings, ParamGroup, ParamStore, Tape, Var};
use gnas::data::{Split, PATCH};
use gnas::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product::<usize>();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    uniform(shape, -1.0, 1.0, rng)
}

pub const ALL_GROUPS: [ParamGroup; 3] = [ParamGroup::Backbone, ParamGroup::Head, ParamGroup::Arch];

/// Graph under test: receives bound parameters and the extra inputs as leaves.
pub type Graph<'a> = dyn Fn(&mut Tape<f64>, &Bindings, &[Var]) -> Result<Var, AutodiffError> + 'a;

/// Reduces a non-scalar output to a scalar with fixed pseudo-random weights,
/// so every output entry contributes a distinct amount.
fn reduce(tape: &mut Tape<f64>, out: Var) -> Result<Var, AutodiffError> {
    if tape.value(out).is_scalar() {
        return Ok(out);
    }
    let shape = tape.shape(out).to_vec();
    let w = uniform(&shape, 0.5, 1.5, &mut rng(0x5eed));
    let weighted = tape.mul_const(out, w)?;
    Ok(tape.sum_all(weighted))
}

fn evaluate(store: &ParamStore<f64>, extra: &[Tensor<f64>], f: &Graph) -> f64 {
    let mut tape = Tape::new();
    let b = store.bind(&mut tape, &[]);
    let xs: Vec<Var> = extra.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &b, &xs).unwrap();
    let s = reduce(&mut tape, out).unwrap();
    tape.value(s).item()
}

/// Worst relative disagreement between analytic and central-difference
/// gradients, over every parameter and extra input. Errors are measured
/// against the largest gradient magnitude of the tensor being checked.
/// At most `max_entries` coordinates per tensor are probed, spread evenly.
pub fn gradient_error(store: &ParamStore<f64>, extra: &[Tensor<f64>], max_entries: usize, f: &Graph) -> f64 {
    let mut tape = Tape::new();
    let b = store.bind(&mut tape, &ALL_GROUPS);
    let xs: Vec<Var> = extra.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &b, &xs).unwrap();
    let s = reduce(&mut tape, out).unwrap();
    let grads = tape.backward(s).unwrap();
    let zero = |v: Var| Tensor::<f64>::zeros(tape.shape(v).to_vec());

    let mut worst = 0.0f64;
    let mut check = |analytic: &Tensor<f64>, eval: &mut dyn FnMut(usize, f64) -> f64| {
        let n = analytic.numel();
        let step = n.div_ceil(max_entries.max(1)).max(1);
        let scale = analytic.max_abs().max(1e-12);
        let mut err = 0.0f64;
        let mut numeric_max = 0.0f64;
        for j in (0..n).step_by(step) {
            let numeric = (eval(j, FD_STEP) - eval(j, -FD_STEP)) / (2.0 * FD_STEP);
            numeric_max = numeric_max.max(numeric.abs());
            err = err.max((analytic.data()[j] - numeric).abs());
        }
        worst = worst.max(err / scale.max(numeric_max));
    };

    for (name, var) in b.iter() {
        let analytic = grads.get(var).cloned().unwrap_or_else(|| zero(var));
        let mut eval = |j: usize, h: f64| {
            let mut s = store.clone();
            s.get_mut(name).unwrap().value.data_mut()[j] += h;
            evaluate(&s, extra, f)
        };
        check(&analytic, &mut eval);
    }
    for (i, &x) in xs.iter().enumerate() {
        let analytic = grads.get(x).cloned().unwrap_or_else(|| zero(x));
        let mut eval = |j: usize, h: f64| {
            let mut e = extra.to_vec();
            e[i].data_mut()[j] += h;
            evaluate(store, &e, f)
        };
        check(&analytic, &mut eval);
    }
    worst
}

/// [`gradient_error`] for graphs without parameters.
pub fn input_gradient_error(
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
) -> f64 {
    gradient_error(&ParamStore::new(), inputs, usize::MAX, &|t: &mut Tape<f64>, _: &Bindings, xs: &[Var]| f(t, xs))
}

pub fn plane(split: &Split, i: usize, c: usize) -> &[f64] {
    let s = split.image_size();
    &split.image(i)[c * s * s..(c + 1) * s * s]
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

/// Easy cue: bright background means `+1`.
pub fn background_accuracy(split: &Split) -> f64 {
    let hits = (0..split.len()).filter(|&i| (mean(plane(split, i, 1)) > 0.5) == (split.y1[i] > 0.0)).count();
    hits as f64 / split.len() as f64
}

/// Scans every patch position of channel 0 and returns the window with the
/// most stripe energy as `(row, col, diagonal sum - anti-diagonal sum)`.
pub fn strongest_stripe(split: &Split, i: usize) -> (usize, usize, f64) {
    let s = split.image_size();
    let ch = plane(split, i, 0);
    let mut best = (0, 0, 0.0, f64::NEG_INFINITY);
    for r in 0..=s - PATCH {
        for c in 0..=s - PATCH {
            let diag: f64 = (0..PATCH).map(|k| ch[(r + k) * s + c + k]).sum();
            let anti: f64 = (0..PATCH).map(|k| ch[(r + k) * s + c + PATCH - 1 - k]).sum();
            if diag.max(anti) > best.3 {
                best = (r, c, diag - anti, diag.max(anti));
            }
        }
    }
    (best.0, best.1, best.2)
}

/// Nearest-centroid classifier on the stripe statistic, fitted on `train`.
pub fn stripe_classifier(train: &Split) -> impl Fn(&Split) -> f64 {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for i in 0..train.len() {
        let f = strongest_stripe(train, i).2;
        if train.y1[i] > 0.0 { pos.push(f) } else { neg.push(f) }
    }
    let (cp, cn) = (mean(&pos), mean(&neg));
    move |split: &Split| {
        let hits = (0..split.len())
            .filter(|&i| {
                let f = strongest_stripe(split, i).2;
                ((f - cp).abs() < (f - cn).abs()) == (split.y1[i] > 0.0)
            })
            .count();
        hits as f64 / split.len() as f64
    }
}
