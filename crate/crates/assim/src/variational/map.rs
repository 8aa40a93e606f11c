use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::base::{Gaussian, SpdMatrix};
use crate::error::{Error, Result};

use super::model::{MatFn, ScalarFn, VecFn};
use super::optimize::{minimize, DescentOptions};

/// Prior density `ρ`.
#[derive(Clone)]
pub enum Prior {
    Gaussian(Gaussian),
    /// Unnormalized log-density, `-∞` outside the support.
    Density {
        log_density: ScalarFn,
        gradient: Option<VecFn>,
        dim: usize,
    },
}

impl Prior {
    pub fn density(dim: usize, log_density: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Prior::Density {
            log_density: Arc::new(log_density),
            gradient: None,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::Gaussian(g) => g.dim(),
            Prior::Density { dim, .. } => *dim,
        }
    }

    /// `−log ρ(u)` up to an additive constant; `½|u − m|²_C` when Gaussian.
    pub fn regularizer(&self, u: &DVector<f64>) -> f64 {
        match self {
            Prior::Gaussian(g) => 0.5 * g.cov().quad_form(&(u - g.mean())).unwrap_or(f64::NAN),
            Prior::Density { log_density, .. } => -log_density(u),
        }
    }

    fn regularizer_gradient(&self, u: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Prior::Gaussian(g) => g.cov().solve_vec(&(u - g.mean())).ok(),
            Prior::Density { gradient, .. } => gradient.as_ref().map(|gr| -gr(u)),
        }
    }
}

impl fmt::Debug for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::Gaussian(g) => f.debug_tuple("Gaussian").field(g).finish(),
            Prior::Density { dim, .. } => f.debug_struct("Density").field("dim", dim).finish(),
        }
    }
}

/// `y = G(u) + η`, `η ∼ N(0, Γ)`, `u ∼ ρ`.
#[derive(Clone)]
pub struct InverseProblem {
    forward: VecFn,
    jacobian: Option<MatFn>,
    pub prior: Prior,
    pub noise_cov: SpdMatrix,
}

impl InverseProblem {
    pub fn new(
        forward: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        prior: Prior,
        noise_cov: SpdMatrix,
    ) -> Self {
        Self {
            forward: Arc::new(forward),
            jacobian: None,
            prior,
            noise_cov,
        }
    }

    /// `G(u) = A u` with a Gaussian prior.
    pub fn linear(a: DMatrix<f64>, prior: Gaussian, noise_cov: SpdMatrix) -> Result<Self> {
        if a.ncols() != prior.dim() {
            return Err(Error::dim("forward matrix columns", prior.dim(), a.ncols()));
        }
        if a.nrows() != noise_cov.dim() {
            return Err(Error::dim("noise covariance", a.nrows(), noise_cov.dim()));
        }
        let aj = a.clone();
        Ok(Self::new(move |u| &a * u, Prior::Gaussian(prior), noise_cov).with_jacobian(move |_| aj.clone()))
    }

    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn param_dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn data_dim(&self) -> usize {
        self.noise_cov.dim()
    }

    pub fn forward(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.forward)(u)
    }

    pub fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(u))
    }

    pub fn gaussian_prior(&self) -> Result<&Gaussian> {
        match &self.prior {
            Prior::Gaussian(g) => Ok(g),
            Prior::Density { .. } => Err(Error::InvalidArgument("method requires a Gaussian prior".into())),
        }
    }

    /// `L(u) = ½|y − G(u)|²_Γ`.
    pub fn misfit(&self, u: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let r = y - self.forward(u);
        Ok(0.5 * self.noise_cov.quad_form(&r)?)
    }

    /// `J(u) = L(u) + R(u)`.
    pub fn objective(&self, u: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let reg = self.prior.regularizer(u);
        if reg == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        Ok(self.misfit(u, y)? + reg)
    }

    fn objective_gradient(&self, u: &DVector<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
        let jac = self.jacobian(u)?;
        let w = self.noise_cov.solve_vec(&(y - self.forward(u))).ok()?;
        Some(self.prior.regularizer_gradient(u)? - jac.transpose() * w)
    }

    fn analytic_gradient(&self, u: &DVector<f64>, y: &DVector<f64>) -> bool {
        self.objective_gradient(u, y).is_some()
    }
}

impl fmt::Debug for InverseProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InverseProblem")
            .field("prior", &self.prior)
            .field("noise_cov", &self.noise_cov)
            .field("jacobian", &self.jacobian.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub u: DVector<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

/// `arg min_u ½|y − G(u)|²_Γ − log ρ(u)`.
pub fn map_estimate(
    problem: &InverseProblem,
    y: &DVector<f64>,
    init: &DVector<f64>,
    opts: &DescentOptions,
) -> Result<MapResult> {
    if init.len() != problem.param_dim() {
        return Err(Error::dim("MAP initial point", problem.param_dim(), init.len()));
    }
    if y.len() != problem.data_dim() {
        return Err(Error::dim("MAP data", problem.data_dim(), y.len()));
    }
    let f = |u: &DVector<f64>| problem.objective(u, y).unwrap_or(f64::NAN);
    let grad = |u: &DVector<f64>| {
        problem
            .objective_gradient(u, y)
            .unwrap_or_else(|| DVector::from_element(u.len(), f64::NAN))
    };
    let g_ref: Option<&dyn Fn(&DVector<f64>) -> DVector<f64>> =
        if problem.analytic_gradient(init, y) { Some(&grad) } else { None };
    let r = minimize(&f, g_ref, init, opts)?;
    Ok(MapResult {
        u: r.x,
        objective: r.value,
        grad_norm: r.grad_norm,
        converged: r.converged,
    })
}
