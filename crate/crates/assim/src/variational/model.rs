use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::base::{Gaussian, SpdMatrix};
use crate::error::{Error, Result};
use crate::kalman::LinearModel;

/// A vector-valued map shared between threads.
pub type VecFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// A matrix-valued map, typically a Jacobian.
pub type MatFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// A scalar-valued map.
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// The observation operator of a state-space model.
#[derive(Clone)]
pub enum Observation {
    Linear(DMatrix<f64>),
    Nonlinear {
        f: VecFn,
        jacobian: Option<MatFn>,
        dim: usize,
    },
}

impl Observation {
    pub fn dim(&self) -> usize {
        match self {
            Observation::Linear(h) => h.nrows(),
            Observation::Nonlinear { dim, .. } => *dim,
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Observation::Linear(h) => h * v,
            Observation::Nonlinear { f, .. } => f(v),
        }
    }

    pub fn jacobian(&self, v: &DVector<f64>) -> Option<DMatrix<f64>> {
        match self {
            Observation::Linear(h) => Some(h.clone()),
            Observation::Nonlinear { jacobian, .. } => jacobian.as_ref().map(|j| j(v)),
        }
    }

    /// The matrix `H` of a linear operator.
    pub fn matrix(&self) -> Result<&DMatrix<f64>> {
        match self {
            Observation::Linear(h) => Ok(h),
            Observation::Nonlinear { .. } => Err(Error::InvalidArgument(
                "method requires a linear observation operator".into(),
            )),
        }
    }
}

impl fmt::Debug for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observation::Linear(h) => f.debug_tuple("Linear").field(h).finish(),
            Observation::Nonlinear { dim, jacobian, .. } => f
                .debug_struct("Nonlinear")
                .field("dim", dim)
                .field("jacobian", &jacobian.is_some())
                .finish(),
        }
    }
}

/// `v_{j+1} = Ψ(v_j) + ξ_j`, `y_{j+1} = h(v_{j+1}) + η_{j+1}`.
#[derive(Clone)]
pub struct NonlinearModel {
    psi: VecFn,
    jacobian: Option<MatFn>,
    pub observation: Observation,
    pub sigma: SpdMatrix,
    pub gamma: SpdMatrix,
    pub init: Gaussian,
}

impl NonlinearModel {
    pub fn new(
        psi: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        observation: Observation,
        sigma: SpdMatrix,
        gamma: SpdMatrix,
        init: Gaussian,
    ) -> Result<Self> {
        let d = init.dim();
        if sigma.dim() != d {
            return Err(Error::dim("model noise Sigma", d, sigma.dim()));
        }
        if let Observation::Linear(h) = &observation {
            if h.ncols() != d {
                return Err(Error::dim("observation matrix H (columns)", d, h.ncols()));
            }
        }
        if gamma.dim() != observation.dim() {
            return Err(Error::dim("observation noise Gamma", observation.dim(), gamma.dim()));
        }
        Ok(Self {
            psi: Arc::new(psi),
            jacobian: None,
            observation,
            sigma,
            gamma,
            init,
        })
    }

    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn with_sigma(mut self, sigma: SpdMatrix) -> Result<Self> {
        if sigma.dim() != self.state_dim() {
            return Err(Error::dim("model noise Sigma", self.state_dim(), sigma.dim()));
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: SpdMatrix) -> Result<Self> {
        if gamma.dim() != self.obs_dim() {
            return Err(Error::dim("observation noise Gamma", self.obs_dim(), gamma.dim()));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.init.dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.dim()
    }

    pub fn psi(&self, v: &DVector<f64>) -> DVector<f64> {
        (self.psi)(v)
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn jacobian(&self, v: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(v))
    }

    pub fn observe(&self, v: &DVector<f64>) -> DVector<f64> {
        self.observation.apply(v)
    }

    /// `H` for linear observations, an error otherwise.
    pub fn h(&self) -> Result<&DMatrix<f64>> {
        self.observation.matrix()
    }
}

impl fmt::Debug for NonlinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearModel")
            .field("jacobian", &self.jacobian.is_some())
            .field("observation", &self.observation)
            .field("sigma", &self.sigma)
            .field("gamma", &self.gamma)
            .field("init", &self.init)
            .finish()
    }
}

impl From<&LinearModel> for NonlinearModel {
    fn from(lm: &LinearModel) -> Self {
        let m = lm.m.clone();
        let mj = lm.m.clone();
        Self {
            psi: Arc::new(move |v| &m * v),
            jacobian: Some(Arc::new(move |_| mj.clone())),
            observation: Observation::Linear(lm.h.clone()),
            sigma: lm.sigma.clone(),
            gamma: lm.gamma.clone(),
            init: lm.init.clone(),
        }
    }
}
