//! Training objectives: logistic classification, smooth-L1 regression, the
//! generalization loss, and their composite.
//!
//! Every term is averaged over the batch; regression terms sum over the two
//! output components first.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-term values of one composite loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub reg: f64,
    pub g: f64,
    pub total: f64,
    pub lambda_g: f64,
}

/// The composite loss node plus its breakdown.
#[derive(Clone, Copy, Debug)]
pub struct TrainLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    /// Regression residual components outside `[−1, 1]`.
    pub regime_violations: usize,
}

fn batch_of<T: Scalar>(tape: &Tape<T>, v: Var, width: usize, what: &str) -> Result<usize, AutodiffError> {
    let shape = tape.shape(v);
    let ok = match width {
        1 => shape.len() == 1 || (shape.len() == 2 && shape[1] == 1),
        w => shape.len() == 2 && shape[1] == w,
    };
    if !ok {
        return Err(AutodiffError::Contract(format!("{what} has shape {shape:?}, expected a batch of width {width}")));
    }
    Ok(shape[0])
}

/// `mean log(1 + exp(−y₁ŷ₁))`, with labels exactly ±1.
pub fn logistic_loss<T: Scalar>(tape: &mut Tape<T>, y_hat1: Var, y1: &[T]) -> Result<Var, AutodiffError> {
    let n = batch_of(tape, y_hat1, 1, "classification output")?;
    if y1.len() != n {
        return Err(AutodiffError::Contract(format!("{} labels for a batch of {n}", y1.len())));
    }
    if let Some(bad) = y1.iter().find(|&&y| y != T::one() && y != -T::one()) {
        return Err(AutodiffError::Contract(format!("class labels must be ±1, got {bad}")));
    }
    let neg = Tensor::from_vec(tape.shape(y_hat1).to_vec(), y1.iter().map(|&y| -y).collect())
        .map_err(|e| AutodiffError::Contract(e.to_string()))?;
    let margin = tape.mul_const(y_hat1, neg)?;
    let sp = tape.softplus(margin);
    Ok(tape.mean_all(sp))
}

/// Smooth-L1 residual penalty, summed over components and averaged over the batch.
pub fn smooth_l1_loss<T: Scalar>(tape: &mut Tape<T>, y_hat2: Var, y2: &[T]) -> Result<Var, AutodiffError> {
    let n = batch_of(tape, y_hat2, 2, "regression output")?;
    if y2.len() != 2 * n {
        return Err(AutodiffError::Contract(format!("{} regression targets for a batch of {n}", y2.len())));
    }
    let neg = Tensor::from_vec([n, 2], y2.iter().map(|&v| -v).collect()).expect("checked length");
    let residual = tape.add_const(y_hat2, &neg)?;
    let per = tape.smooth_l1(residual);
    let total = tape.sum_all(per);
    Ok(tape.scale(total, T::one() / T::lit(n as f64)))
}

/// `½·mean(ŷ₁²) − ½·mean(‖ŷ₂‖²)`.
pub fn g_loss<T: Scalar>(tape: &mut Tape<T>, y_hat1: Var, y_hat2: Var) -> Result<Var, AutodiffError> {
    let n = batch_of(tape, y_hat1, 1, "classification output")?;
    let m = batch_of(tape, y_hat2, 2, "regression output")?;
    if n != m {
        return Err(AutodiffError::Contract(format!("batch sizes differ: {n} vs {m}")));
    }
    let half_mean = T::lit(0.5) / T::lit(n as f64);
    let s1 = tape.square(y_hat1);
    let s1 = tape.sum_all(s1);
    let s2 = tape.square(y_hat2);
    let s2 = tape.sum_all(s2);
    let diff = tape.sub(s1, s2)?;
    Ok(tape.scale(diff, half_mean))
}

/// `cls + reg + λ_g·g`.
pub fn train_loss<T: Scalar>(
    tape: &mut Tape<T>,
    y_hat1: Var,
    y_hat2: Var,
    y1: &[T],
    y2: &[T],
    lambda_g: f64,
) -> Result<TrainLoss, AutodiffError> {
    if !(lambda_g >= 0.0) || !lambda_g.is_finite() {
        return Err(AutodiffError::Contract(format!("lambda_g must be finite and non-negative, got {lambda_g}")));
    }
    let cls = logistic_loss(tape, y_hat1, y1)?;
    let reg = smooth_l1_loss(tape, y_hat2, y2)?;
    let g = g_loss(tape, y_hat1, y_hat2)?;
    let weighted = tape.scale(g, T::lit(lambda_g));
    let total = tape.sum(&[cls, reg, weighted])?;
    let regime_violations = tape
        .value(y_hat2)
        .data()
        .iter()
        .zip(y2)
        .filter(|(&p, &t)| (p - t).abs() > T::one())
        .count();
    let breakdown = LossBreakdown {
        cls: tape.value(cls).item().as_f64(),
        reg: tape.value(reg).item().as_f64(),
        g: tape.value(g).item().as_f64(),
        total: tape.value(total).item().as_f64(),
        lambda_g,
    };
    Ok(TrainLoss { total, breakdown, regime_violations })
}
