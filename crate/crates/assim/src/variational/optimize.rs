//! The single descent engine behind every variational estimator.
//!
//! Gradient descent with Armijo backtracking. The trial step is the
//! Barzilai-Borwein step from the last two iterates when it is positive and
//! finite, otherwise twice the last accepted step. Backtracking halves until
//! the sufficient-decrease test passes. A trial value of `+∞` (a point outside
//! the support) counts as a failed test; `NaN` aborts.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    /// Stop when `|∇f| ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

/// Central differences with step `1e-6 (1 + |x_i|)`; one-sided where one
/// neighbour is not finite.
pub fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let fx = f(x);
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            (false, false) => f64::NAN,
        };
    }
    g
}

/// Minimizes `f` from `x0`. Without `grad` the gradient is differenced.
pub fn minimize(
    f: &dyn Fn(&DVector<f64>) -> f64,
    grad: Option<&dyn Fn(&DVector<f64>) -> DVector<f64>>,
    x0: &DVector<f64>,
    opts: &DescentOptions,
) -> Result<DescentResult> {
    let gradient = |x: &DVector<f64>| match grad {
        Some(g) => g(x),
        None => fd_gradient(f, x),
    };
    let mut x = x0.clone();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(Error::NonFinite(format!("objective is {fx} at the initial point")));
    }
    let mut g = gradient(&x);
    check_gradient(&g)?;
    let mut step = 1.0 / g.norm().max(1.0);
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;

    for it in 0..opts.max_iter {
        let gnorm = g.norm();
        if gnorm <= opts.tol {
            return Ok(done(x, fx, gnorm, it, true));
        }
        if let Some((dx, dg)) = prev.take() {
            let sy = dx.dot(&dg);
            let bb = dx.norm_squared() / sy;
            step = if sy > 0.0 && bb.is_finite() { bb } else { 2.0 * step };
        }
        let g2 = gnorm * gnorm;
        let mut alpha = step;
        let (x_new, f_new) = loop {
            let trial = &x - &g * alpha;
            let ft = f(&trial);
            if ft.is_nan() {
                return Err(Error::NonFinite(format!("objective is NaN at iteration {it}")));
            }
            if ft <= fx - ARMIJO_C * alpha * g2 {
                break (trial, ft);
            }
            alpha *= 0.5;
            if alpha < MIN_STEP {
                return Ok(done(x, fx, gnorm, it, false));
            }
        };
        let g_new = gradient(&x_new);
        check_gradient(&g_new)?;
        prev = Some((&x_new - &x, &g_new - &g));
        step = alpha;
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    let gnorm = g.norm();
    Ok(done(x, fx, gnorm, opts.max_iter, gnorm <= opts.tol))
}

fn check_gradient(g: &DVector<f64>) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("gradient has non-finite entries".into()))
    }
}

fn done(x: DVector<f64>, value: f64, grad_norm: f64, iterations: usize, converged: bool) -> DescentResult {
    DescentResult {
        x,
        value,
        grad_norm,
        iterations,
        converged,
    }
}
