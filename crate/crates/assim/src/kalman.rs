//! Exact filtering and smoothing for linear-Gaussian state-space models.
//!
//! The filter is available in precision form (assemble the posterior
//! precision and solve) and in gain form (invert only in data space). The
//! smoother assembles the block-tridiagonal precision of the whole trajectory
//! and solves it by forward elimination and back-substitution.

use nalgebra::{DMatrix, DVector};

use crate::base::{symmetrize, Gaussian, SpdMatrix};
use crate::error::{Error, Result};

/// `v_{j+1} = M v_j + ξ_j`, `y_{j+1} = H v_{j+1} + η_{j+1}`,
/// `ξ ∼ N(0, Σ)`, `η ∼ N(0, Γ)`, `v_0 ∼ init`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub m: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub sigma: SpdMatrix,
    pub gamma: SpdMatrix,
    pub init: Gaussian,
}

impl LinearModel {
    pub fn new(
        m: DMatrix<f64>,
        h: DMatrix<f64>,
        sigma: SpdMatrix,
        gamma: SpdMatrix,
        init: Gaussian,
    ) -> Result<Self> {
        let d = init.dim();
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::dim("dynamics matrix M", d, m.nrows().max(m.ncols())));
        }
        if h.ncols() != d {
            return Err(Error::dim("observation matrix H (columns)", d, h.ncols()));
        }
        if sigma.dim() != d {
            return Err(Error::dim("model noise Sigma", d, sigma.dim()));
        }
        if gamma.dim() != h.nrows() {
            return Err(Error::dim("observation noise Gamma", h.nrows(), gamma.dim()));
        }
        Ok(Self { m, h, sigma, gamma, init })
    }

    pub fn state_dim(&self) -> usize {
        self.init.dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }
}

/// Per-step record of a Kalman filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub predicted: Vec<Gaussian>,
    pub updated: Vec<Gaussian>,
    pub gains: Vec<DMatrix<f64>>,
    pub innovations: Vec<DVector<f64>>,
}

impl FilterTrace {
    pub fn means(&self) -> Vec<DVector<f64>> {
        self.updated.iter().map(|g| g.mean().clone()).collect()
    }
}

/// `N(M m, M C Mᵀ + Σ)`.
pub fn kf_predict(post: &Gaussian, m: &DMatrix<f64>, sigma: &SpdMatrix) -> Result<Gaussian> {
    let d = post.dim();
    if m.nrows() != d || m.ncols() != d || sigma.dim() != d {
        return Err(Error::dim("kf_predict", d, m.nrows()));
    }
    let mean = m * post.mean();
    let cov = m * post.cov().matrix() * m.transpose() + sigma.matrix();
    Gaussian::from_parts(mean, symmetrize(&cov))
}

fn check_update_dims(pred: &Gaussian, h: &DMatrix<f64>, gamma: &SpdMatrix, y: &DVector<f64>) -> Result<()> {
    if h.ncols() != pred.dim() {
        return Err(Error::dim("observation matrix columns", pred.dim(), h.ncols()));
    }
    if gamma.dim() != h.nrows() {
        return Err(Error::dim("observation noise", h.nrows(), gamma.dim()));
    }
    if y.len() != h.nrows() {
        return Err(Error::dim("observation", h.nrows(), y.len()));
    }
    Ok(())
}

/// Precision-form analysis: `C⁻¹ = Ĉ⁻¹ + HᵀΓ⁻¹H`, `C⁻¹m = Ĉ⁻¹m̂ + HᵀΓ⁻¹y`.
pub fn kf_update_precision(
    pred: &Gaussian,
    h: &DMatrix<f64>,
    gamma: &SpdMatrix,
    y: &DVector<f64>,
) -> Result<Gaussian> {
    check_update_dims(pred, h, gamma, y)?;
    let d = pred.dim();
    let prior_prec = pred.cov().inverse();
    let gi_h = gamma.solve(h)?;
    let precision = SpdMatrix::new(symmetrize(&(&prior_prec + h.transpose() * &gi_h)))?;
    let rhs = &prior_prec * pred.mean() + h.transpose() * gamma.solve_vec(y)?;
    let mean = precision.solve_vec(&rhs)?;
    let cov = precision.solve(&DMatrix::identity(d, d))?;
    Gaussian::from_parts(mean, symmetrize(&cov))
}

/// Result of a gain-form analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct GainUpdate {
    pub posterior: Gaussian,
    pub gain: DMatrix<f64>,
    pub innovation: DVector<f64>,
}

/// Gain-form analysis: `S = HĈHᵀ + Γ`, `K = ĈHᵀS⁻¹`, `m = m̂ + K(y − Hm̂)`,
/// `C = (I − KH)Ĉ`.
pub fn kf_update_gain(
    pred: &Gaussian,
    h: &DMatrix<f64>,
    gamma: &SpdMatrix,
    y: &DVector<f64>,
) -> Result<GainUpdate> {
    check_update_dims(pred, h, gamma, y)?;
    let d = pred.dim();
    let c_hat = pred.cov().matrix();
    let innovation = y - h * pred.mean();
    let hc = h * c_hat;
    let s = SpdMatrix::new(symmetrize(&(&hc * h.transpose() + gamma.matrix())))?;
    let gain = s.solve(&hc)?.transpose();
    let mean = pred.mean() + &gain * &innovation;
    let cov = (DMatrix::identity(d, d) - &gain * h) * c_hat;
    let posterior = Gaussian::from_parts(mean, symmetrize(&cov))?;
    Ok(GainUpdate {
        posterior,
        gain,
        innovation,
    })
}

/// Posterior of `u ∼ prior` given `y = A u + η`, `η ∼ N(0, Γ)`.
pub fn linear_gaussian_posterior(
    prior: &Gaussian,
    a: &DMatrix<f64>,
    gamma: &SpdMatrix,
    y: &DVector<f64>,
) -> Result<Gaussian> {
    Ok(kf_update_gain(prior, a, gamma, y)?.posterior)
}

/// Alternating predict and gain-form update over `data = (y_1, …, y_J)`.
pub fn kalman_filter(model: &LinearModel, data: &[DVector<f64>]) -> Result<FilterTrace> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("data must be nonempty".into()));
    }
    let mut trace = FilterTrace {
        predicted: Vec::with_capacity(data.len()),
        updated: Vec::with_capacity(data.len()),
        gains: Vec::with_capacity(data.len()),
        innovations: Vec::with_capacity(data.len()),
    };
    let mut current = model.init.clone();
    for y in data {
        let pred = kf_predict(&current, &model.m, &model.sigma)?;
        let upd = kf_update_gain(&pred, &model.h, &model.gamma, y)?;
        current = upd.posterior.clone();
        trace.predicted.push(pred);
        trace.updated.push(upd.posterior);
        trace.gains.push(upd.gain);
        trace.innovations.push(upd.innovation);
    }
    Ok(trace)
}

/// The block-tridiagonal system `Ω m = r` for the smoothing mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherSystem {
    /// `Ω_{j,j}` for `j = 0..=J`.
    pub diag: Vec<DMatrix<f64>>,
    /// `Ω_{j,j+1}` for `j = 0..J`; `Ω_{j+1,j}` is its transpose.
    pub upper: Vec<DMatrix<f64>>,
    pub rhs: Vec<DVector<f64>>,
}

impl SmootherSystem {
    pub fn assemble(model: &LinearModel, data: &[DVector<f64>]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("data must be nonempty".into()));
        }
        let k = model.obs_dim();
        for y in data {
            if y.len() != k {
                return Err(Error::dim("observation", k, y.len()));
            }
        }
        let jn = data.len();
        let m = &model.m;
        let sigma_inv = model.sigma.inverse();
        let c0_inv = model.init.cov().inverse();
        let gi_h = model.gamma.solve(&model.h)?;
        let obs_prec = model.h.transpose() * &gi_h;
        let mt_si_m = m.transpose() * &sigma_inv * m;
        let upper_block = -(m.transpose() * &sigma_inv);

        let mut diag = Vec::with_capacity(jn + 1);
        diag.push(&c0_inv + &mt_si_m);
        for _ in 1..jn {
            diag.push(&sigma_inv + &mt_si_m + &obs_prec);
        }
        diag.push(&sigma_inv + &obs_prec);

        let mut rhs = Vec::with_capacity(jn + 1);
        rhs.push(&c0_inv * model.init.mean());
        for y in data {
            rhs.push(gi_h.transpose() * y);
        }
        Ok(Self {
            diag,
            upper: vec![upper_block; jn],
            rhs,
        })
    }

    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    /// Dense `(Ω, r)`.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.diag[0].nrows();
        let n = self.blocks();
        let mut omega = DMatrix::zeros(d * n, d * n);
        let mut r = DVector::zeros(d * n);
        for j in 0..n {
            omega.view_mut((j * d, j * d), (d, d)).copy_from(&self.diag[j]);
            r.rows_mut(j * d, d).copy_from(&self.rhs[j]);
            if j + 1 < n {
                omega.view_mut((j * d, (j + 1) * d), (d, d)).copy_from(&self.upper[j]);
                omega
                    .view_mut(((j + 1) * d, j * d), (d, d))
                    .copy_from(&self.upper[j].transpose());
            }
        }
        (omega, r)
    }
}

/// Smoothing means and the eliminated block precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherResult {
    /// Row `j` is the smoothing mean of `v_j`, `j = 0..=J`.
    pub means: DMatrix<f64>,
    /// Schur-complement pivots `Ω_j` from forward elimination.
    pub block_precisions: Vec<SpdMatrix>,
    pub system: SmootherSystem,
}

/// Kalman smoother mean by block elimination of `Ω m = r`.
pub fn kalman_smoother(model: &LinearModel, data: &[DVector<f64>]) -> Result<SmootherResult> {
    let system = SmootherSystem::assemble(model, data)?;
    let n = system.blocks();
    let d = model.state_dim();

    let mut pivots: Vec<SpdMatrix> = Vec::with_capacity(n);
    let mut z: Vec<DVector<f64>> = Vec::with_capacity(n);
    pivots.push(pivot(&system.diag[0], 0)?);
    z.push(system.rhs[0].clone());
    for j in 0..n - 1 {
        // lower block Ω_{j+1,j} = Ω_{j,j+1}ᵀ
        let lower = system.upper[j].transpose();
        let inv_upper = pivots[j].solve(&system.upper[j])?;
        let inv_z = pivots[j].solve_vec(&z[j])?;
        let schur = &system.diag[j + 1] - &lower * inv_upper;
        pivots.push(pivot(&symmetrize(&schur), j + 1)?);
        z.push(&system.rhs[j + 1] - &lower * inv_z);
    }

    let mut means = DMatrix::zeros(n, d);
    let mut next = pivots[n - 1].solve_vec(&z[n - 1])?;
    means.row_mut(n - 1).copy_from(&next.transpose());
    for j in (0..n - 1).rev() {
        let rhs = &z[j] - &system.upper[j] * &next;
        next = pivots[j].solve_vec(&rhs)?;
        means.row_mut(j).copy_from(&next.transpose());
    }
    Ok(SmootherResult {
        means,
        block_precisions: pivots,
        system,
    })
}

fn pivot(block: &DMatrix<f64>, j: usize) -> Result<SpdMatrix> {
    SpdMatrix::new(block.clone()).map_err(|e| Error::NotSpd(format!("smoother pivot {j}: {e}")))
}

/// Conditional mean-square error `E|v − z|²` under `N(m, C)`.
pub fn conditional_mse(post: &Gaussian, z: &DVector<f64>) -> f64 {
    post.cov().trace() + (post.mean() - z).norm_squared()
}
