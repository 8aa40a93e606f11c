//! Optimization-based estimators: 3DVAR, weak- and strong-constraint 4DVAR,
//! MAP estimation and best-Gaussian fits.
//!
//! Every minimization goes through [`optimize::minimize`].

pub mod fourdvar;
pub mod gaussfit;
pub mod map;
pub mod model;
pub mod optimize;
pub mod threedvar;

pub use fourdvar::{
    constraint_violation, roll_forward, strong_4dvar_minimize, w4dvar_gradient, w4dvar_minimize,
    w4dvar_objective, Strong4dvarResult, W4dvarResult,
};
pub use gaussfit::{
    gaussian_fit_klpq, gaussian_fit_klpq_with_gradient, gaussian_fit_moment_match, GaussFitOptions, GaussianFit,
};
pub use map::{map_estimate, InverseProblem, MapResult, Prior};
pub use model::{MatFn, NonlinearModel, Observation, ScalarFn, VecFn};
pub use optimize::{fd_gradient, minimize, DescentOptions, DescentResult};
pub use threedvar::{gain_3dvar, run_3dvar, step_3dvar};
