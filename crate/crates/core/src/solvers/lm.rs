//! A small dense Levenberg–Marquardt minimizer for `½‖r(x)‖²`.
//!
//! The step solves `(JᵀJ + λ·D) δ = −Jᵀr` with `D = diag(JᵀJ)`. `λ` starts
//! at [`LmConfig::initial_damping`], is divided by `damping_down` after an
//! accepted step and multiplied by `damping_up` after a rejected one (or a
//! failed factorization).
//!
//! Stopping tests, with `f = ½‖r‖²`:
//!
//! * scaled gradient `‖Jᵀr‖ · max(‖x‖, 1) / max(f, 1)` below its tolerance,
//!   checked before each step;
//! * relative improvement `(f_prev − f) / max(f_prev, f64::MIN_POSITIVE)` of an
//!   accepted step below its tolerance;
//! * scaled step `‖δ‖ / max(‖x‖, 1)` of an accepted step below its tolerance;
//! * the iteration cap.
//!
//! The first three count as converged.

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub scaled_gradient_tol: f64,
    pub relative_improvement_tol: f64,
    pub scaled_step_tol: f64,
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            scaled_gradient_tol: 1e-6,
            relative_improvement_tol: 1e-5,
            scaled_step_tol: 1e-3,
            max_iterations: 20,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 10.0,
        }
    }
}

impl LmConfig {
    pub fn is_valid(&self) -> bool {
        self.scaled_gradient_tol > 0.0
            && self.relative_improvement_tol > 0.0
            && self.scaled_step_tol > 0.0
            && self.initial_damping > 0.0
            && self.damping_up > 1.0
            && self.damping_down > 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ScaledGradient,
    RelativeImprovement,
    ScaledStep,
    MaxIterations,
    /// Damping grew without bound and no step reduced the cost.
    Stalled,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(
            self,
            Termination::ScaledGradient | Termination::RelativeImprovement | Termination::ScaledStep
        )
    }
}

/// A residual vector with an analytic Jacobian.
pub trait LeastSquares {
    fn residual_count(&self) -> usize;
    fn param_count(&self) -> usize;
    fn residuals(&self, x: &[f64], out: &mut [f64]);
    /// Fills the `residual_count × param_count` Jacobian.
    fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
}

const MAX_DAMPING: f64 = 1e16;

pub fn minimize<P: LeastSquares>(problem: &P, x0: &[f64], cfg: &LmConfig) -> LmReport {
    let m = problem.residual_count();
    let n = problem.param_count();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; m];
    problem.residuals(&x, &mut r);
    let mut f = half_sq(&r);
    let mut jac = DMatrix::zeros(m, n);
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut jtj = vec![0.0; n * n];
    let mut lhs = vec![0.0; n * n];
    let mut delta = vec![0.0; n];
    let mut lambda = cfg.initial_damping;

    let report = |x: Vec<f64>, f: f64, iterations, termination| LmReport {
        x,
        residual_norm: (2.0 * f).sqrt(),
        iterations,
        termination,
    };

    for iter in 0..cfg.max_iterations {
        problem.jacobian(&x, &mut jac);
        for a in 0..n {
            g[a] = jac.column(a).iter().zip(&r).map(|(j, r)| j * r).sum();
            for b in a..n {
                let v = jac.column(a).dot(&jac.column(b));
                jtj[a * n + b] = v;
                jtj[b * n + a] = v;
            }
        }
        let x_norm = norm(&x);
        if norm(&g) * x_norm.max(1.0) / f.max(1.0) < cfg.scaled_gradient_tol {
            return report(x, f, iter, Termination::ScaledGradient);
        }
        let diag_floor = 1e-12 * (0..n).map(|k| jtj[k * n + k]).fold(1.0, f64::max);

        loop {
            lhs.copy_from_slice(&jtj);
            for k in 0..n {
                lhs[k * n + k] += lambda * jtj[k * n + k].max(diag_floor);
            }
            let solved = cholesky_solve(&mut lhs, &g, &mut delta, n);
            if !solved {
                lambda *= cfg.damping_up;
                if lambda > MAX_DAMPING {
                    return report(x, f, iter + 1, Termination::Stalled);
                }
                continue;
            }
            for k in 0..n {
                trial[k] = x[k] - delta[k];
            }
            problem.residuals(&trial, &mut r_trial);
            let f_trial = half_sq(&r_trial);
            if f_trial < f {
                let improvement = (f - f_trial) / f.max(f64::MIN_POSITIVE);
                std::mem::swap(&mut x, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                f = f_trial;
                lambda = (lambda / cfg.damping_down).max(f64::MIN_POSITIVE);
                if improvement < cfg.relative_improvement_tol {
                    return report(x, f, iter + 1, Termination::RelativeImprovement);
                }
                if norm(&delta) / norm(&x).max(1.0) < cfg.scaled_step_tol {
                    return report(x, f, iter + 1, Termination::ScaledStep);
                }
                break;
            }
            lambda *= cfg.damping_up;
            if lambda > MAX_DAMPING {
                return report(x, f, iter + 1, Termination::Stalled);
            }
        }
    }
    report(x, f, cfg.max_iterations, Termination::MaxIterations)
}

/// Solves `A·out = rhs` for a symmetric positive definite row-major `A`,
/// factoring it in place. `false` when `A` is not numerically positive
/// definite or the result is not finite.
fn cholesky_solve(a: &mut [f64], rhs: &[f64], out: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let d = a[j * n + j] - (0..j).map(|k| a[j * n + k] * a[j * n + k]).sum::<f64>();
        if !(d > 0.0) {
            return false;
        }
        let l = d.sqrt();
        a[j * n + j] = l;
        for i in j + 1..n {
            let s = a[i * n + j] - (0..j).map(|k| a[i * n + k] * a[j * n + k]).sum::<f64>();
            a[i * n + j] = s / l;
        }
    }
    for i in 0..n {
        let s = rhs[i] - (0..i).map(|k| a[i * n + k] * out[k]).sum::<f64>();
        out[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let s = out[i] - (i + 1..n).map(|k| a[k * n + i] * out[k]).sum::<f64>();
        out[i] = s / a[i * n + i];
    }
    out.iter().all(|v| v.is_finite())
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
