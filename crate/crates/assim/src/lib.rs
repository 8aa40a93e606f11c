//! Bayesian inversion and data assimilation.
//!
//! Exact linear-Gaussian inference (Kalman filter and smoother), variational
//! estimators (3DVAR, 4DVAR, MAP, best-Gaussian fits), Monte Carlo and
//! importance sampling, Metropolis-Hastings and pCN, ensemble Kalman and
//! particle filters, and ensemble Kalman inversion.
//!
//! Vectors and matrices are `nalgebra` dynamic types. Ensembles store one
//! particle per row of an `N × d` matrix.

pub mod base;
pub mod ensemble;
pub mod error;
pub mod inversion;
pub mod kalman;
pub mod mcmc;
pub mod metrics;
pub mod models;
pub mod particle;
pub mod sampling;
pub mod variational;

pub use base::{Gaussian, Phase, RngStream, SpdMatrix, Streams};
pub use error::{Error, Result};
pub use kalman::LinearModel;
pub use sampling::WeightedEnsemble;
pub use variational::{InverseProblem, NonlinearModel, Observation, Prior};

pub use nalgebra::{DMatrix, DVector};
