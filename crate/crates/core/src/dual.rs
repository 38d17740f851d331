//! Primal-dual verification of the linearized training objective.
//!
//! In the linearized regime both heads are linear in one parameter vector Θ:
//! `ŷ₁ = ψΘw₁`, `ŷ₂ = ψΘw₂`. The primal objective is
//!
//! ```text
//! L(Θ) = Σ log(1 + exp(−y1ᵢ ŷ1ᵢ)) + ½‖ŷ₂ − y₂‖² + ½‖ŷ₁‖² − ½‖ŷ₂‖²
//! ```
//!
//! Replacing each logistic term by its variational form
//! `max_φ [Ent(φ) − φ·m]` gives the Lagrangian `H(Φ, Θ)`; minimizing over Θ in
//! closed form gives the dual `H(Φ)`, whose maximum matches `min L`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::linalg::{self, dot, lu_solve, norm_inf, LinalgError, Matrix};
use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum DualError {
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Problem data `(ψ, w₁, w₂, y₁, y₂)` with square `ψ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualInstance<T> {
    pub psi: Matrix<T>,
    pub w1: T,
    pub w2: T,
    pub y1: Vec<T>,
    pub y2: Vec<T>,
}

/// Largest condition number accepted by [`DualInstance::generate`].
pub const MAX_CONDITION: f64 = 100.0;

impl<T: Scalar> DualInstance<T> {
    pub fn new(psi: Matrix<T>, w1: T, w2: T, y1: Vec<T>, y2: Vec<T>) -> Result<Self, DualError> {
        let n = psi.rows();
        if psi.cols() != n || n == 0 {
            return Err(DualError::Invalid(format!("psi must be square and non-empty, got {}x{}", n, psi.cols())));
        }
        if y1.len() != n || y2.len() != n {
            return Err(DualError::Invalid(format!("labels must have length {n}")));
        }
        if w1 == T::zero() || !w1.is_finite() || !w2.is_finite() {
            return Err(DualError::Invalid("w1 must be finite and non-zero, w2 finite".into()));
        }
        if let Some(v) = y1.iter().find(|&&v| v != T::one() && v != -T::one()) {
            return Err(DualError::Invalid(format!("class labels must be ±1, got {v}")));
        }
        if y2.iter().any(|v| !v.is_finite()) || psi.data().iter().any(|v| !v.is_finite()) {
            return Err(DualError::Invalid("non-finite entries".into()));
        }
        Ok(Self { psi, w1, w2, y1, y2 })
    }

    /// The one-dimensional instance `ψ = 1, w₁ = 1, w₂ = 0, y₁ = 1, y₂ = 0`.
    pub fn scalar_example() -> Self {
        Self::new(Matrix::identity(1), T::one(), T::zero(), vec![T::one()], vec![T::zero()]).expect("valid")
    }

    /// Random instance: `ψ = I + 0.1·G` (resampled until its condition number
    /// is at most 100), `w₁ ~ U[0.5, 2]`, `w₂ ~ U[−1, 1]`, `y₁ ~ ±1`, `y₂ ~ U[−1, 1]`.
    pub fn generate<R: Rng>(n: usize, rng: &mut R) -> Result<Self, DualError> {
        if n == 0 {
            return Err(DualError::Invalid("instance size must be positive".into()));
        }
        let psi = loop {
            let mut m = Matrix::<T>::identity(n);
            for i in 0..n {
                for j in 0..n {
                    let g: f64 = StandardNormal.sample(rng);
                    m[(i, j)] = m[(i, j)] + T::lit(0.1 * g);
                }
            }
            if linalg::condition_number(&m)?.as_f64() <= MAX_CONDITION {
                break m;
            }
        };
        let w1 = T::lit(rng.random_range(0.5f64..=2.0));
        let w2 = T::lit(rng.random_range(-1.0f64..=1.0));
        let y1 = (0..n).map(|_| if rng.random_bool(0.5) { T::one() } else { -T::one() }).collect();
        let y2 = (0..n).map(|_| T::lit(rng.random_range(-1.0f64..=1.0))).collect();
        Self::new(psi, w1, w2, y1, y2)
    }

    pub fn n(&self) -> usize {
        self.y1.len()
    }

    /// `(ŷ₁, ŷ₂) = (ψΘw₁, ψΘw₂)`.
    pub fn predictions(&self, theta: &[T]) -> (Vec<T>, Vec<T>) {
        let u = self.psi.matvec(theta);
        (u.iter().map(|&v| v * self.w1).collect(), u.iter().map(|&v| v * self.w2).collect())
    }

    fn check_len(&self, v: &[T], what: &str) -> Result<(), DualError> {
        if v.len() != self.n() {
            return Err(DualError::Invalid(format!("{what} has length {}, expected {}", v.len(), self.n())));
        }
        Ok(())
    }

    fn check_phi(&self, phi: &[T]) -> Result<(), DualError> {
        self.check_len(phi, "phi")?;
        if phi.iter().any(|&p| !(p > T::zero() && p < T::one())) {
            return Err(DualError::Invalid("phi must lie strictly inside (0, 1)".into()));
        }
        Ok(())
    }
}

fn half<T: Scalar>() -> T {
    T::lit(0.5)
}

/// Binary entropy `−φ ln φ − (1−φ) ln(1−φ)`.
pub fn entropy<T: Scalar>(phi: T) -> T {
    -(phi * phi.ln()) - (T::one() - phi) * (-phi).ln_1p()
}

fn regression_and_g<T: Scalar>(inst: &DualInstance<T>, y1_hat: &[T], y2_hat: &[T]) -> T {
    let half = half::<T>();
    let reg: T = y2_hat.iter().zip(&inst.y2).map(|(&a, &b)| (a - b) * (a - b)).sum();
    half * reg + half * dot(y1_hat, y1_hat) - half * dot(y2_hat, y2_hat)
}

/// `L(Θ)`.
pub fn primal_loss<T: Scalar>(theta: &[T], inst: &DualInstance<T>) -> Result<T, DualError> {
    inst.check_len(theta, "theta")?;
    let (y1_hat, y2_hat) = inst.predictions(theta);
    let logistic: T = y1_hat.iter().zip(&inst.y1).map(|(&f, &y)| softplus(-(y * f))).sum();
    Ok(logistic + regression_and_g(inst, &y1_hat, &y2_hat))
}

/// `∇L(Θ) = ψᵀ d` with `d` the derivative with respect to `u = ψΘ`.
pub fn primal_gradient<T: Scalar>(theta: &[T], inst: &DualInstance<T>) -> Result<Vec<T>, DualError> {
    inst.check_len(theta, "theta")?;
    let (y1_hat, y2_hat) = inst.predictions(theta);
    let (w1, w2) = (inst.w1, inst.w2);
    let d: Vec<T> = (0..inst.n())
        .map(|i| {
            let y = inst.y1[i];
            let logistic = -(y * w1) * sigmoid(-(y * y1_hat[i]));
            logistic + w2 * (y2_hat[i] - inst.y2[i]) + w1 * y1_hat[i] - w2 * y2_hat[i]
        })
        .collect();
    Ok(inst.psi.tmatvec(&d))
}

/// Hessian of `L`: `ψᵀ diag(w₁²σ(m)σ(−m) + w₁²) ψ` with margins `m = y₁ŷ₁`.
pub fn primal_hessian<T: Scalar>(theta: &[T], inst: &DualInstance<T>) -> Result<Matrix<T>, DualError> {
    inst.check_len(theta, "theta")?;
    let (y1_hat, _) = inst.predictions(theta);
    let w1sq = inst.w1 * inst.w1;
    let diag: Vec<T> = y1_hat
        .iter()
        .zip(&inst.y1)
        .map(|(&f, &y)| {
            let m = y * f;
            w1sq * sigmoid(m) * sigmoid(-m) + w1sq
        })
        .collect();
    let scaled = Matrix::from_diag(&diag).matmul(&inst.psi)?;
    Ok(inst.psi.transpose().matmul(&scaled)?)
}

/// `H(Φ, Θ) = Σ Ent(φᵢ) − ΦᵀY₁ŷ₁ + ½‖ŷ₂ − y₂‖² + ½‖ŷ₁‖² − ½‖ŷ₂‖²`.
pub fn lagrangian<T: Scalar>(phi: &[T], theta: &[T], inst: &DualInstance<T>) -> Result<T, DualError> {
    inst.check_phi(phi)?;
    inst.check_len(theta, "theta")?;
    let (y1_hat, y2_hat) = inst.predictions(theta);
    let ent: T = phi.iter().map(|&p| entropy(p)).sum();
    let coupling: T = (0..inst.n()).map(|i| phi[i] * inst.y1[i] * y1_hat[i]).sum();
    Ok(ent - coupling + regression_and_g(inst, &y1_hat, &y2_hat))
}

/// `∂H(Φ, Θ)/∂Θ = ψᵀ(−w₁Y₁Φ − w₂y₂ + w₁²ψΘ)`.
pub fn lagrangian_theta_grad<T: Scalar>(phi: &[T], theta: &[T], inst: &DualInstance<T>) -> Result<Vec<T>, DualError> {
    inst.check_phi(phi)?;
    inst.check_len(theta, "theta")?;
    let u = inst.psi.matvec(theta);
    let (w1, w2) = (inst.w1, inst.w2);
    let d: Vec<T> = (0..inst.n()).map(|i| -(w1 * inst.y1[i] * phi[i]) - w2 * inst.y2[i] + w1 * w1 * u[i]).collect();
    Ok(inst.psi.tmatvec(&d))
}

/// Minimizer of `H(Φ, ·)`: solves `ψ x = (1/w₁)Y₁Φ + (w₂/w₁²)y₂`.
pub fn theta_star<T: Scalar>(phi: &[T], inst: &DualInstance<T>) -> Result<Vec<T>, DualError> {
    inst.check_phi(phi)?;
    let (w1, w2) = (inst.w1, inst.w2);
    let rhs: Vec<T> = (0..inst.n()).map(|i| inst.y1[i] * phi[i] / w1 + w2 / (w1 * w1) * inst.y2[i]).collect();
    Ok(lu_solve(&inst.psi, &rhs)?)
}

/// `H(Φ) = H(Φ, Θ*(Φ))`.
pub fn dual_objective<T: Scalar>(phi: &[T], inst: &DualInstance<T>) -> Result<T, DualError> {
    let theta = theta_star(phi, inst)?;
    lagrangian(phi, &theta, inst)
}

/// `∂H/∂Φ = log((1−Φ)/Φ) − Y₁Y₁ᵀΦ − (w₂/w₁)Y₁y₂`, evaluated literally.
pub fn dual_gradient<T: Scalar>(phi: &[T], inst: &DualInstance<T>) -> Result<Vec<T>, DualError> {
    inst.check_phi(phi)?;
    let n = inst.n();
    let y = Matrix::from_diag(&inst.y1);
    let yyt = y.matmul(&y.transpose())?;
    let coupling = yyt.matvec(phi);
    let ratio = inst.w2 / inst.w1;
    Ok((0..n).map(|i| ((T::one() - phi[i]) / phi[i]).ln() - coupling[i] - ratio * inst.y1[i] * inst.y2[i]).collect())
}

/// `∂H/∂Φ` via the envelope theorem, `log((1−Φ)/Φ) − Y₁ŷ₁(Θ*(Φ))`.
///
/// This route goes through the linear solve with `ψ`, so any cross-coupling
/// between examples would show up here; it cancels only through `ψψ⁻¹ = I`.
pub fn envelope_gradient<T: Scalar>(phi: &[T], inst: &DualInstance<T>) -> Result<Vec<T>, DualError> {
    let theta = theta_star(phi, inst)?;
    let (y1_hat, _) = inst.predictions(&theta);
    Ok((0..inst.n()).map(|i| ((T::one() - phi[i]) / phi[i]).ln() - inst.y1[i] * y1_hat[i]).collect())
}

/// Per-coordinate offset `cᵢ = (w₂/w₁)·y1ᵢ·y2ᵢ`; the dual optimum solves
/// `log((1−φ)/φ) = φ + cᵢ` in every coordinate.
fn coordinate_offsets<T: Scalar>(inst: &DualInstance<T>) -> Vec<T> {
    let ratio = inst.w2 / inst.w1;
    (0..inst.n()).map(|i| ratio * inst.y1[i] * inst.y2[i]).collect()
}

/// Dual maximizer by bisection on the logit `r` of each coordinate.
///
/// With `φ = σ(r)` the stationarity condition reads `−r − σ(r) − c = 0`, which
/// is strictly decreasing in `r` and changes sign on `[−c − 1, −c]`.
pub fn dual_argmax_bisection<T: Scalar>(inst: &DualInstance<T>) -> (Vec<T>, usize) {
    let mut iters = 0;
    let phi = coordinate_offsets(inst)
        .into_iter()
        .map(|c| {
            let f = |r: T| -r - sigmoid(r) - c;
            let (mut lo, mut hi) = (-c - T::one(), -c);
            loop {
                let mid = half::<T>() * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                iters += 1;
                if f(mid) > T::zero() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let r = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
            sigmoid(r)
        })
        .collect();
    (phi, iters)
}

#[derive(Clone, Debug)]
pub struct Solution<T> {
    pub point: Vec<T>,
    pub value: T,
    pub iterations: usize,
    pub grad_norm: T,
    pub converged: bool,
}

/// Gradient descent on `L` with Armijo backtracking, from `Θ = 0`.
pub fn minimize_primal<T: Scalar>(inst: &DualInstance<T>, grad_tol: T, max_iter: usize) -> Result<Solution<T>, DualError> {
    let mut theta = vec![T::zero(); inst.n()];
    let mut value = primal_loss(&theta, inst)?;
    let mut step = T::one();
    let mut grad = primal_gradient(&theta, inst)?;
    let mut iterations = 0;
    while norm_inf(&grad) >= grad_tol && iterations < max_iter {
        iterations += 1;
        let g2 = dot(&grad, &grad);
        let noise = T::lit(8.0) * T::epsilon() * (T::one() + value.abs());
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<T> = theta.iter().zip(&grad).map(|(&t, &g)| t - step * g).collect();
            let v = primal_loss(&trial, inst)?;
            let armijo = v <= value - T::lit(1e-4) * step * g2;
            // Near the optimum the decrease drops below rounding. The objective is
            // convex along the ray, so a step that has not passed the line
            // minimum (directional derivative still non-positive) cannot increase it.
            let next = if armijo || (v - value).abs() <= noise { Some(primal_gradient(&trial, inst)?) } else { None };
            if let Some(next) = next.filter(|n| armijo || dot(n, &grad) >= T::zero()) {
                theta = trial;
                value = v;
                grad = next;
                accepted = true;
                break;
            }
            step = step * half();
        }
        if !accepted {
            break;
        }
        step = step * T::lit(2.0);
    }
    let grad_norm = norm_inf(&grad);
    Ok(Solution { point: theta, value, iterations, grad_norm, converged: grad_norm < grad_tol })
}

/// Gradient ascent on `H(σ(ρ))` over the unconstrained logits `ρ`.
pub fn maximize_dual_ascent<T: Scalar>(inst: &DualInstance<T>, grad_tol: T, max_iter: usize) -> Result<Solution<T>, DualError> {
    let mut rho = vec![T::zero(); inst.n()];
    let to_phi = |r: &[T]| r.iter().map(|&x| sigmoid(x)).collect::<Vec<T>>();
    let rho_grad = |r: &[T]| -> Result<Vec<T>, DualError> {
        let phi = to_phi(r);
        let g = dual_gradient(&phi, inst)?;
        Ok(g.iter().zip(&phi).map(|(&g, &p)| g * p * (T::one() - p)).collect())
    };
    let mut value = dual_objective(&to_phi(&rho), inst)?;
    let mut grad = rho_grad(&rho)?;
    let mut step = T::lit(4.0);
    let mut iterations = 0;
    while norm_inf(&grad) >= grad_tol && iterations < max_iter {
        iterations += 1;
        let g2 = dot(&grad, &grad);
        let noise = T::lit(8.0) * T::epsilon() * (T::one() + value.abs());
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<T> = rho.iter().zip(&grad).map(|(&r, &g)| r + step * g).collect();
            let v = dual_objective(&to_phi(&trial), inst)?;
            let armijo = v >= value + T::lit(1e-4) * step * g2;
            let next = if armijo || (v - value).abs() <= noise { Some(rho_grad(&trial)?) } else { None };
            if let Some(next) = next.filter(|n| armijo || dot(n, &grad) >= T::zero()) {
                rho = trial;
                value = v;
                grad = next;
                accepted = true;
                break;
            }
            step = step * half();
        }
        if !accepted {
            break;
        }
        step = step * T::lit(2.0);
    }
    let grad_norm = norm_inf(&grad);
    Ok(Solution { point: to_phi(&rho), value, iterations, grad_norm, converged: grad_norm < grad_tol })
}

/// `|a − b| / max(|a|, |b|, 1)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Outcome of [`verify_instance`]. All quantities in `f64`.
#[derive(Clone, Debug, Serialize)]
pub struct DualityReport {
    pub n: usize,
    pub primal_min: f64,
    pub dual_max: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    /// `|H(Φ*)|` from bisection vs. from logit ascent.
    pub ascent_gap: f64,
    /// `‖∂H(Φ,Θ)/∂Θ‖∞` at `Θ*(Φ)`.
    pub stationarity: f64,
    /// Largest relative error of the analytic dual gradient vs. central differences.
    pub grad_err: f64,
    /// Largest change of gradient component `i` when `φⱼ`, `j ≠ i`, moves by `±1e-4`.
    pub offdiag: f64,
    /// `‖Φ* − σ(−Y₁ŷ₁*)‖∞` at the primal optimum.
    pub closure_err: f64,
    /// Smallest eigenvalue of the primal Hessian at the optimum.
    pub hessian_min_eig: f64,
    pub phi_star: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub primal_iters: usize,
    pub dual_iters: usize,
    pub ascent_iters: usize,
    pub primal_converged: bool,
    pub ascent_converged: bool,
    pub passed: bool,
}

/// Step used for the off-diagonal perturbation test.
pub const OFFDIAG_STEP: f64 = 1e-4;
/// Step used for central-difference gradient checks.
pub const FD_STEP: f64 = 1e-6;

/// Solves the primal and dual problems independently and checks every
/// identity that links them. `passed` requires convergence and `rel_gap < tol`.
pub fn verify_instance(inst: &DualInstance<f64>, tol: f64) -> Result<DualityReport, DualError> {
    let n = inst.n();
    let primal = minimize_primal(inst, 1e-10, 2_000_000)?;
    let (phi_star, dual_iters) = dual_argmax_bisection(inst);
    let dual_max = dual_objective(&phi_star, inst)?;
    let ascent = maximize_dual_ascent(inst, 1e-10, 200_000)?;
    let theta_at_phi = theta_star(&phi_star, inst)?;

    let mut probes: Vec<Vec<f64>> = vec![vec![0.5; n], phi_star.clone()];
    probes.push((0..n).map(|i| 0.2 + 0.6 * (i as f64 + 0.5) / n as f64).collect());
    probes.push((0..n).map(|i| if i % 2 == 0 { 0.15 } else { 0.85 }).collect());

    let mut stationarity = 0.0f64;
    let mut grad_err = 0.0f64;
    for phi in &probes {
        let th = theta_star(phi, inst)?;
        stationarity = stationarity.max(norm_inf(&lagrangian_theta_grad(phi, &th, inst)?));
        let g = dual_gradient(phi, inst)?;
        for i in 0..n {
            let fd = central_difference(phi, i, FD_STEP, |p| dual_objective(p, inst))?;
            grad_err = grad_err.max(rel_err(g[i], fd));
        }
    }

    let offdiag = offdiag_coupling(&phi_star, OFFDIAG_STEP, |p| envelope_gradient(p, inst))?;

    let (y1_hat, _) = inst.predictions(&primal.point);
    let closure_err =
        (0..n).map(|i| (phi_star[i] - sigmoid(-(inst.y1[i] * y1_hat[i]))).abs()).fold(0.0, f64::max);

    let (eigs, _) = linalg::symmetric_eigen(&primal_hessian(&primal.point, inst)?)?;

    let abs_gap = (primal.value - dual_max).abs();
    let rel_gap = abs_gap / (1.0 + primal.value.abs());
    let report = DualityReport {
        n,
        primal_min: primal.value,
        dual_max,
        abs_gap,
        rel_gap,
        ascent_gap: (ascent.value - dual_max).abs(),
        stationarity,
        grad_err,
        offdiag,
        closure_err,
        hessian_min_eig: eigs[0],
        phi_star: phi_star.clone(),
        theta_star: theta_at_phi,
        primal_iters: primal.iterations,
        dual_iters,
        ascent_iters: ascent.iterations,
        primal_converged: primal.converged,
        ascent_converged: ascent.converged,
        passed: primal.converged && ascent.converged && rel_gap < tol,
    };
    Ok(report)
}

/// Central difference of `f` along coordinate `i`.
pub fn central_difference<F>(x: &[f64], i: usize, h: f64, mut f: F) -> Result<f64, DualError>
where
    F: FnMut(&[f64]) -> Result<f64, DualError>,
{
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let up = f(&p)?;
    p[i] = x[i] - h;
    let down = f(&p)?;
    Ok((up - down) / (2.0 * h))
}

/// Largest `|gᵢ(x ± h eⱼ) − gᵢ(x)|` over `i ≠ j`.
pub fn offdiag_coupling<F>(x: &[f64], h: f64, mut grad: F) -> Result<f64, DualError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, DualError>,
{
    let base = grad(x)?;
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        for sign in [1.0, -1.0] {
            let mut p = x.to_vec();
            p[j] += sign * h;
            let g = grad(&p)?;
            for i in (0..x.len()).filter(|&i| i != j) {
                worst = worst.max((g[i] - base[i]).abs());
            }
        }
    }
    Ok(worst)
}

/// Verifies the scalar hand instance followed by `count − 1` generated ones.
/// Instance `k` is drawn from seed `seed + k` with size cycling through `2..=n_max`.
pub fn verify_family(count: usize, n_max: usize, tol: f64, seed: u64) -> Result<Vec<(u64, DualityReport)>, DualError> {
    if count == 0 || n_max < 2 {
        return Err(DualError::Invalid(format!("need at least one instance and n_max >= 2, got {count} and {n_max}")));
    }
    let mut out = vec![(seed, verify_instance(&DualInstance::scalar_example(), tol)?)];
    for k in 1..count {
        let s = seed + k as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let inst = DualInstance::<f64>::generate(2 + (k - 1) % (n_max - 1), &mut rng)?;
        out.push((s, verify_instance(&inst, tol)?));
    }
    Ok(out)
}

/// One CSV row of a verification batch.
#[derive(Clone, Debug, Serialize)]
pub struct ReportRow {
    pub n: usize,
    pub seed: u64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub grad_err: f64,
    pub offdiag_err: f64,
    pub stationarity: f64,
    pub iters: usize,
}

impl ReportRow {
    pub fn new(seed: u64, r: &DualityReport) -> Self {
        Self {
            n: r.n,
            seed,
            primal: r.primal_min,
            dual: r.dual_max,
            gap: r.rel_gap,
            grad_err: r.grad_err,
            offdiag_err: r.offdiag,
            stationarity: r.stationarity,
            iters: r.primal_iters,
        }
    }
}

/// Writes one row per instance followed by `#`-prefixed summary lines.
pub fn write_report_csv(path: &Path, rows: &[ReportRow], tol: f64) -> Result<bool, DualError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    drop(w);
    let max = |f: fn(&ReportRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let passed = rows.iter().all(|r| r.gap < tol);
    let mut file = std::fs::OpenOptions::new().append(true).open(path)?;
    writeln!(file, "# instances,{}", rows.len())?;
    writeln!(file, "# max_gap,{:e}", max(|r| r.gap))?;
    writeln!(file, "# max_grad_err,{:e}", max(|r| r.grad_err))?;
    writeln!(file, "# max_offdiag_err,{:e}", max(|r| r.offdiag_err))?;
    writeln!(file, "# max_stationarity,{:e}", max(|r| r.stationarity))?;
    writeln!(file, "# tol,{tol:e}")?;
    writeln!(file, "# status,{}", if passed { "pass" } else { "fail" })?;
    Ok(passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_point_value() {
        let inst = DualInstance::<f64>::new(Matrix::identity(2), 1.0, 0.5, vec![1.0, -1.0], vec![0.3, -0.4]).unwrap();
        let v = primal_loss(&[0.0, 0.0], &inst).unwrap();
        assert!((v - (2.0 * 2f64.ln() + 0.5 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn scalar_theta_star() {
        let inst = DualInstance::<f64>::new(Matrix::from_diag(&[2.0]), 1.0, 1.0, vec![1.0], vec![0.4]).unwrap();
        assert!((theta_star(&[0.5], &inst).unwrap()[0] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn symmetric_point_gradient() {
        let inst = DualInstance::<f64>::new(Matrix::identity(3), 1.3, 0.7, vec![1.0, -1.0, 1.0], vec![0.0; 3]).unwrap();
        for g in dual_gradient(&[0.5; 3], &inst).unwrap() {
            assert!((g + 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_labels_and_phi() {
        assert!(DualInstance::<f64>::new(Matrix::identity(1), 1.0, 0.0, vec![0.5], vec![0.0]).is_err());
        assert!(DualInstance::<f64>::new(Matrix::identity(1), 0.0, 0.0, vec![1.0], vec![0.0]).is_err());
        let inst = DualInstance::<f64>::scalar_example();
        assert!(dual_objective(&[1.0], &inst).is_err());
    }
}
