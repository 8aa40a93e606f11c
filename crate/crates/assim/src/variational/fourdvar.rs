use nalgebra::{DMatrix, DVector};

use crate::base::row;
use crate::error::{Error, Result};

use super::optimize::{minimize, DescentOptions};
use super::NonlinearModel;

/// Output of [`w4dvar_minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct W4dvarResult {
    /// `(J+1) × d`, row `j` is `v*_j`.
    pub trajectory: DMatrix<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Output of [`strong_4dvar_minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Strong4dvarResult {
    pub v0: DVector<f64>,
    /// `Ψ` rolled forward from `v0`, `(J+1) × d`.
    pub trajectory: DMatrix<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

fn check_shapes(v: &DMatrix<f64>, model: &NonlinearModel, y: &DMatrix<f64>) -> Result<()> {
    if y.nrows() == 0 {
        return Err(Error::InvalidArgument("data must be nonempty".into()));
    }
    if y.ncols() != model.obs_dim() {
        return Err(Error::dim("4DVAR data columns", model.obs_dim(), y.ncols()));
    }
    if v.ncols() != model.state_dim() {
        return Err(Error::dim("4DVAR trajectory columns", model.state_dim(), v.ncols()));
    }
    if v.nrows() != y.nrows() + 1 {
        return Err(Error::dim("4DVAR trajectory rows", y.nrows() + 1, v.nrows()));
    }
    Ok(())
}

/// Row-major flattening, `x[j·d + i] = V[j, i]`.
fn flatten(v: &DMatrix<f64>) -> DVector<f64> {
    let d = v.ncols();
    DVector::from_fn(v.nrows() * d, |k, _| v[(k / d, k % d)])
}

fn unflatten(x: &DVector<f64>, rows: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, d, |j, i| x[j * d + i])
}

fn objective_unchecked(v: &DMatrix<f64>, model: &NonlinearModel, y: &DMatrix<f64>) -> Result<f64> {
    let mut total = 0.5 * model.init.cov().quad_form(&(row(v, 0) - model.init.mean()))?;
    for j in 0..y.nrows() {
        let vj = row(v, j);
        let vn = row(v, j + 1);
        total += 0.5 * model.sigma.quad_form(&(&vn - model.psi(&vj)))?;
        total += 0.5 * model.gamma.quad_form(&(row(y, j) - model.observe(&vn)))?;
    }
    Ok(total)
}

/// `½|v₀−m₀|²_{C₀} + ½Σ|v_{j+1}−Ψ(v_j)|²_Σ + ½Σ|y_{j+1}−h(v_{j+1})|²_Γ`.
pub fn w4dvar_objective(v: &DMatrix<f64>, model: &NonlinearModel, y: &DMatrix<f64>) -> Result<f64> {
    check_shapes(v, model, y)?;
    objective_unchecked(v, model, y)
}

/// Analytic gradient; requires Jacobians of `Ψ` and of the observation.
pub fn w4dvar_gradient(v: &DMatrix<f64>, model: &NonlinearModel, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_shapes(v, model, y)?;
    if !model.has_jacobian() {
        return Err(Error::InvalidArgument("analytic 4DVAR gradient needs the Jacobian of psi".into()));
    }
    let mut g = DMatrix::zeros(v.nrows(), v.ncols());
    let r0 = model.init.cov().solve_vec(&(row(v, 0) - model.init.mean()))?;
    g.row_mut(0).copy_from(&r0.transpose());
    for j in 0..y.nrows() {
        let vj = row(v, j);
        let vn = row(v, j + 1);
        let e = model.sigma.solve_vec(&(&vn - model.psi(&vj)))?;
        let dpsi = model.jacobian(&vj).expect("checked above");
        let hj = model
            .observation
            .jacobian(&vn)
            .ok_or_else(|| Error::InvalidArgument("analytic 4DVAR gradient needs the observation Jacobian".into()))?;
        let w = model.gamma.solve_vec(&(row(y, j) - model.observe(&vn)))?;
        let mut gj = g.row(j).transpose();
        gj -= dpsi.transpose() * &e;
        g.row_mut(j).copy_from(&gj.transpose());
        let gn = g.row(j + 1).transpose() + &e - hj.transpose() * w;
        g.row_mut(j + 1).copy_from(&gn.transpose());
    }
    Ok(g)
}

fn analytic_available(model: &NonlinearModel, v0: &DVector<f64>) -> bool {
    model.has_jacobian() && model.observation.jacobian(v0).is_some()
}

/// Minimizes the w4DVAR objective over whole trajectories.
pub fn w4dvar_minimize(
    model: &NonlinearModel,
    y: &DMatrix<f64>,
    init: &DMatrix<f64>,
    opts: &DescentOptions,
) -> Result<W4dvarResult> {
    check_shapes(init, model, y)?;
    let (rows, d) = (init.nrows(), init.ncols());
    let f = |x: &DVector<f64>| {
        objective_unchecked(&unflatten(x, rows, d), model, y).unwrap_or(f64::NAN)
    };
    let grad = |x: &DVector<f64>| match w4dvar_gradient(&unflatten(x, rows, d), model, y) {
        Ok(g) => flatten(&g),
        Err(_) => DVector::from_element(x.len(), f64::NAN),
    };
    let analytic = analytic_available(model, &row(init, 0));
    let g_ref: Option<&dyn Fn(&DVector<f64>) -> DVector<f64>> = if analytic { Some(&grad) } else { None };
    let r = minimize(&f, g_ref, &flatten(init), opts)?;
    Ok(W4dvarResult {
        trajectory: unflatten(&r.x, rows, d),
        objective: r.value,
        grad_norm: r.grad_norm,
        converged: r.converged,
    })
}

/// `v₀, Ψ(v₀), Ψ²(v₀), …` as the rows of a `(steps+1) × d` matrix.
pub fn roll_forward(model: &NonlinearModel, v0: &DVector<f64>, steps: usize) -> DMatrix<f64> {
    let mut traj = DMatrix::zeros(steps + 1, v0.len());
    let mut v = v0.clone();
    traj.row_mut(0).copy_from(&v.transpose());
    for j in 1..=steps {
        v = model.psi(&v);
        traj.row_mut(j).copy_from(&v.transpose());
    }
    traj
}

fn strong_objective(model: &NonlinearModel, y: &DMatrix<f64>, v0: &DVector<f64>) -> Result<f64> {
    let mut total = 0.5 * model.init.cov().quad_form(&(v0 - model.init.mean()))?;
    let mut v = v0.clone();
    for j in 0..y.nrows() {
        v = model.psi(&v);
        total += 0.5 * model.gamma.quad_form(&(row(y, j) - model.observe(&v)))?;
    }
    Ok(total)
}

/// Adjoint recursion through `DΨ` for the hard-constraint objective.
fn strong_gradient(model: &NonlinearModel, y: &DMatrix<f64>, v0: &DVector<f64>) -> Result<DVector<f64>> {
    let jn = y.nrows();
    let traj = roll_forward(model, v0, jn);
    let missing = || Error::InvalidArgument("adjoint gradient needs Jacobians".into());
    let mut lambda = DVector::zeros(v0.len());
    for j in (1..=jn).rev() {
        let vj = row(&traj, j);
        let hj = model.observation.jacobian(&vj).ok_or_else(missing)?;
        let w = model.gamma.solve_vec(&(row(y, j - 1) - model.observe(&vj)))?;
        lambda -= hj.transpose() * w;
        let dpsi = model.jacobian(&row(&traj, j - 1)).ok_or_else(missing)?;
        lambda = dpsi.transpose() * lambda;
    }
    Ok(model.init.cov().solve_vec(&(v0 - model.init.mean()))? + lambda)
}

/// Minimizes over `v₀` with `v_{j+1} = Ψ(v_j)` imposed.
pub fn strong_4dvar_minimize(
    model: &NonlinearModel,
    y: &DMatrix<f64>,
    init_v0: &DVector<f64>,
    opts: &DescentOptions,
) -> Result<Strong4dvarResult> {
    if y.nrows() == 0 {
        return Err(Error::InvalidArgument("data must be nonempty".into()));
    }
    if y.ncols() != model.obs_dim() {
        return Err(Error::dim("4DVAR data columns", model.obs_dim(), y.ncols()));
    }
    if init_v0.len() != model.state_dim() {
        return Err(Error::dim("strong 4DVAR initial state", model.state_dim(), init_v0.len()));
    }
    let f = |x: &DVector<f64>| strong_objective(model, y, x).unwrap_or(f64::NAN);
    let grad = |x: &DVector<f64>| {
        strong_gradient(model, y, x).unwrap_or_else(|_| DVector::from_element(x.len(), f64::NAN))
    };
    let g_ref: Option<&dyn Fn(&DVector<f64>) -> DVector<f64>> =
        if analytic_available(model, init_v0) { Some(&grad) } else { None };
    let r = minimize(&f, g_ref, init_v0, opts)?;
    Ok(Strong4dvarResult {
        trajectory: roll_forward(model, &r.x, y.nrows()),
        v0: r.x,
        objective: r.value,
        grad_norm: r.grad_norm,
        converged: r.converged,
    })
}

/// `max_j |v_{j+1} − Ψ(v_j)|` over a trajectory.
pub fn constraint_violation(model: &NonlinearModel, trajectory: &DMatrix<f64>) -> f64 {
    (0..trajectory.nrows().saturating_sub(1))
        .map(|j| (row(trajectory, j + 1) - model.psi(&row(trajectory, j))).norm())
        .fold(0.0, f64::max)
}
