//! Gaussian-approximation filters: the extended Kalman filter and the
//! ensemble Kalman filter with perturbed observations.
//!
//! Ensemble covariances use the `1/N` normalization throughout. Random draws
//! come from per-particle substreams, so results do not depend on the order
//! in which members are processed.

use nalgebra::{DMatrix, DVector};

use crate::base::{column_cov, column_mean, row, symmetrize, Gaussian, Phase, SpdMatrix, Streams};
use crate::error::{Error, Result};
use crate::kalman::kf_update_gain;
use crate::variational::NonlinearModel;

/// Equal-weight members, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.nrows() == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
        }
        Ok(Self { members })
    }

    /// `n` draws from `g`, member `i` from stream `(Init, 0, i)`.
    pub fn from_gaussian(g: &Gaussian, n: usize, streams: &Streams) -> Result<Self> {
        let mut members = DMatrix::zeros(n, g.dim());
        for i in 0..n {
            let x = g.draw(&mut streams.stream(Phase::Init, 0, i as u64));
            members.row_mut(i).copy_from(&x.transpose());
        }
        Self::new(members)
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn into_members(self) -> DMatrix<f64> {
        self.members
    }

    pub fn len(&self) -> usize {
        self.members.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.members.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.members.ncols()
    }

    pub fn member(&self, i: usize) -> DVector<f64> {
        row(&self.members, i)
    }

    /// Rows `v^{(n)} − m̂`.
    pub fn anomalies(&self) -> DMatrix<f64> {
        let mean = column_mean(&self.members);
        let mut a = self.members.clone();
        for mut r in a.row_iter_mut() {
            r -= mean.transpose();
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub mean: DVector<f64>,
    /// `1/N`-normalized, symmetric positive semidefinite.
    pub cov: DMatrix<f64>,
}

pub fn empirical_moments(ens: &Ensemble) -> EmpiricalMoments {
    EmpiricalMoments {
        mean: column_mean(&ens.members),
        cov: column_cov(&ens.members),
    }
}

/// `N(Ψ(m), DΨ(m) C DΨ(m)ᵀ + Σ)`.
pub fn exkf_predict(post: &Gaussian, model: &NonlinearModel) -> Result<Gaussian> {
    if post.dim() != model.state_dim() {
        return Err(Error::dim("ExKF state", model.state_dim(), post.dim()));
    }
    let jac = model
        .jacobian(post.mean())
        .ok_or_else(|| Error::InvalidArgument("ExKF requires the Jacobian of psi".into()))?;
    let cov = &jac * post.cov().matrix() * jac.transpose() + model.sigma.matrix();
    Gaussian::from_parts(model.psi(post.mean()), symmetrize(&cov))
}

/// Linearized prediction followed by the exact gain-form analysis.
pub fn exkf_step(post: &Gaussian, model: &NonlinearModel, y: &DVector<f64>) -> Result<Gaussian> {
    let pred = exkf_predict(post, model)?;
    Ok(kf_update_gain(&pred, model.h()?, &model.gamma, y)?.posterior)
}

/// `v̂^{(n)} = Ψ(v^{(n)}) + ξ^{(n)}`, noise from stream `(Propagate, step, n)`.
pub fn enkf_predict(ens: &Ensemble, model: &NonlinearModel, streams: &Streams, step: u64) -> Result<Ensemble> {
    if ens.dim() != model.state_dim() {
        return Err(Error::dim("EnKF ensemble", model.state_dim(), ens.dim()));
    }
    let d = ens.dim();
    let mut out = DMatrix::zeros(ens.len(), d);
    for n in 0..ens.len() {
        let z = streams.stream(Phase::Propagate, step, n as u64).standard_normal_vec(d);
        let v = model.psi(&ens.member(n)) + model.sigma.color(&z);
        out.row_mut(n).copy_from(&v.transpose());
    }
    Ensemble::new(out)
}

/// `y^{(n)} = y + s η^{(n)}`, `η^{(n)} ∼ N(0, Γ)` from stream `(Perturb, step, n)`.
/// Rows are members.
pub fn perturbed_observations(
    y: &DVector<f64>,
    gamma: &SpdMatrix,
    s: u8,
    members: usize,
    streams: &Streams,
    step: u64,
) -> Result<DMatrix<f64>> {
    if s > 1 {
        return Err(Error::InvalidArgument(format!("s must be 0 or 1, got {s}")));
    }
    if y.len() != gamma.dim() {
        return Err(Error::dim("observation", gamma.dim(), y.len()));
    }
    let k = y.len();
    let mut out = DMatrix::zeros(members, k);
    for n in 0..members {
        let mut yn = y.clone();
        if s == 1 {
            let z = streams.stream(Phase::Perturb, step, n as u64).standard_normal_vec(k);
            yn += gamma.color(&z);
        }
        out.row_mut(n).copy_from(&yn.transpose());
    }
    Ok(out)
}

fn check_analysis(ens: &Ensemble, h: &DMatrix<f64>, gamma: &SpdMatrix) -> Result<()> {
    if h.ncols() != ens.dim() {
        return Err(Error::dim("observation matrix columns", ens.dim(), h.ncols()));
    }
    if gamma.dim() != h.nrows() {
        return Err(Error::dim("observation noise", h.nrows(), gamma.dim()));
    }
    Ok(())
}

/// Gain-form analysis `v^{(n)} = v̂^{(n)} + K(y^{(n)} − H v̂^{(n)})` with
/// `K = ĈHᵀ(HĈHᵀ + Γ)⁻¹` from the ensemble covariance.
pub fn enkf_analysis(
    ens: &Ensemble,
    h: &DMatrix<f64>,
    gamma: &SpdMatrix,
    y: &DVector<f64>,
    s: u8,
    streams: &Streams,
    step: u64,
) -> Result<Ensemble> {
    check_analysis(ens, h, gamma)?;
    let ys = perturbed_observations(y, gamma, s, ens.len(), streams, step)?;
    let c_hat = column_cov(&ens.members);
    let hc = h * &c_hat;
    let s_mat = SpdMatrix::new(symmetrize(&(&hc * h.transpose() + gamma.matrix())))?;
    let gain = s_mat.solve(&hc)?.transpose();
    let mut out = ens.members.clone();
    for n in 0..ens.len() {
        let v = ens.member(n);
        let innov = row(&ys, n) - h * &v;
        out.row_mut(n).copy_from(&(v + &gain * innov).transpose());
    }
    Ensemble::new(out)
}

/// Subspace analysis: per member solve `(ZᵀΓ⁻¹Z/N + I) b = ZᵀΓ⁻¹ d_n` with
/// `Z = H Eᵀ` (anomalies `E`), then `v = v̂^{(n)} + Eᵀ b / N`.
pub fn enkf_analysis_subspace(
    ens: &Ensemble,
    h: &DMatrix<f64>,
    gamma: &SpdMatrix,
    y: &DVector<f64>,
    s: u8,
    streams: &Streams,
    step: u64,
) -> Result<Ensemble> {
    check_analysis(ens, h, gamma)?;
    let n_mem = ens.len();
    let nf = n_mem as f64;
    let ys = perturbed_observations(y, gamma, s, n_mem, streams, step)?;
    let e = ens.anomalies();
    let z = h * e.transpose();
    let gi_z = gamma.solve(&z)?;
    let system = SpdMatrix::new(symmetrize(&(z.transpose() * &gi_z / nf + DMatrix::identity(n_mem, n_mem))))?;
    let mut out = ens.members.clone();
    for n in 0..n_mem {
        let v = ens.member(n);
        let d = row(&ys, n) - h * &v;
        let b = system.solve_vec(&(gi_z.transpose() * d))?;
        out.row_mut(n).copy_from(&(v + e.transpose() * b / nf).transpose());
    }
    Ensemble::new(out)
}

/// Which analysis an EnKF run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisForm {
    Gain,
    Subspace,
}

/// Runs EnKF over `data`; returns analysis moments per step and the final
/// ensemble. Step `j` (1-based) uses streams keyed by `j`.
pub fn enkf_filter(
    model: &NonlinearModel,
    data: &[DVector<f64>],
    members: usize,
    s: u8,
    form: AnalysisForm,
    streams: &Streams,
) -> Result<(Vec<EmpiricalMoments>, Ensemble)> {
    let h = model.h()?.clone();
    let mut ens = Ensemble::from_gaussian(&model.init, members, streams)?;
    let mut out = Vec::with_capacity(data.len());
    for (j, y) in data.iter().enumerate() {
        let step = j as u64 + 1;
        let pred = enkf_predict(&ens, model, streams, step)?;
        ens = match form {
            AnalysisForm::Gain => enkf_analysis(&pred, &h, &model.gamma, y, s, streams, step)?,
            AnalysisForm::Subspace => enkf_analysis_subspace(&pred, &h, &model.gamma, y, s, streams, step)?,
        };
        out.push(empirical_moments(&ens));
    }
    Ok((out, ens))
}

/// Runs ExKF from the model's initial Gaussian.
pub fn exkf_filter(model: &NonlinearModel, data: &[DVector<f64>]) -> Result<Vec<Gaussian>> {
    let mut post = model.init.clone();
    let mut out = Vec::with_capacity(data.len());
    for y in data {
        post = exkf_step(&post, model, y)?;
        out.push(post.clone());
    }
    Ok(out)
}
