//! Best Gaussian approximations in both KL directions.

use nalgebra::{DMatrix, DVector};

use crate::base::{row, symmetrize, Gaussian, Phase, RngStream, SpdMatrix};
use crate::error::{Error, Result};

use super::optimize::{minimize, DescentOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussFitOptions {
    pub dim: usize,
    pub seed: u64,
    /// Monte Carlo panel size; must be even.
    pub panel: usize,
    /// The panel is redrawn at every outer iteration.
    pub outer_iters: usize,
    pub starts: usize,
    pub descent: DescentOptions,
}

impl GaussFitOptions {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            panel: 256,
            outer_iters: 4,
            starts: 4,
            descent: DescentOptions {
                tol: 1e-8,
                max_iter: 2_000,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub gaussian: Gaussian,
    /// `I(μ, Σ)` on the final panel.
    pub objective: f64,
}

/// Antithetic standard-normal panel, whitened to zero mean and identity
/// second moment. Rows are draws.
fn whitened_panel(dim: usize, size: usize, rng: &mut RngStream) -> Result<DMatrix<f64>> {
    if size < 2 || size % 2 != 0 {
        return Err(Error::InvalidArgument(format!("panel size {size} must be even and at least 2")));
    }
    let half = size / 2;
    let mut xi = DMatrix::zeros(size, dim);
    for p in 0..half {
        let z = rng.standard_normal_vec(dim);
        xi.row_mut(2 * p).copy_from(&z.transpose());
        xi.row_mut(2 * p + 1).copy_from(&(-z).transpose());
    }
    let second = SpdMatrix::new(symmetrize(&(xi.transpose() * &xi / size as f64)))
        .map_err(|_| Error::Degenerate("panel too small to whiten; increase the panel size".into()))?;
    let l = second.factor();
    let white = l
        .solve_lower_triangular(&xi.transpose())
        .ok_or_else(|| Error::Degenerate("panel whitening failed".into()))?;
    Ok(white.transpose())
}

struct Layout {
    d: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.d + self.d * (self.d + 1) / 2
    }

    fn tri_index(&self, i: usize, j: usize) -> usize {
        self.d + i * (i + 1) / 2 + j
    }

    fn unpack(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.d;
        let mu = theta.rows(0, d).into_owned();
        let mut l = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                let v = theta[self.tri_index(i, j)];
                l[(i, j)] = if i == j { v.exp() } else { v };
            }
        }
        (mu, l)
    }

    fn pack(&self, mu: &DVector<f64>, l: &DMatrix<f64>) -> DVector<f64> {
        let mut theta = DVector::zeros(self.len());
        theta.rows_mut(0, self.d).copy_from(mu);
        for i in 0..self.d {
            for j in 0..=i {
                theta[self.tri_index(i, j)] = if i == j { l[(i, j)].ln() } else { l[(i, j)] };
            }
        }
        theta
    }
}

/// `I(μ, L) = mean_p L(μ + Lξ_p) + (λ/2)|μ|² + (λ/2)tr(LLᵀ) − ½ log det(LLᵀ)`.
fn objective(
    loss: &dyn Fn(&DVector<f64>) -> f64,
    lambda: f64,
    layout: &Layout,
    panel: &DMatrix<f64>,
    theta: &DVector<f64>,
) -> f64 {
    let (mu, l) = layout.unpack(theta);
    let p = panel.nrows();
    let mut total = 0.0;
    for k in 0..p {
        total += loss(&(&mu + &l * row(panel, k)));
    }
    let log_det_half: f64 = (0..layout.d).map(|i| theta[layout.tri_index(i, i)]).sum();
    total / p as f64 + 0.5 * lambda * (mu.norm_squared() + l.norm_squared()) - log_det_half
}

/// Reparameterization gradient of [`objective`].
fn objective_gradient(
    grad: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    lambda: f64,
    layout: &Layout,
    panel: &DMatrix<f64>,
    theta: &DVector<f64>,
) -> DVector<f64> {
    let d = layout.d;
    let (mu, l) = layout.unpack(theta);
    let p = panel.nrows() as f64;
    let mut g_mu = &mu * lambda;
    let mut g_l = &l * lambda;
    for k in 0..panel.nrows() {
        let xi = row(panel, k);
        let gl = grad(&(&mu + &l * &xi));
        g_mu += &gl / p;
        g_l += &gl * xi.transpose() / p;
    }
    let mut out = DVector::zeros(layout.len());
    out.rows_mut(0, d).copy_from(&g_mu);
    for i in 0..d {
        for j in 0..=i {
            out[layout.tri_index(i, j)] = if i == j {
                g_l[(i, i)] * l[(i, i)] - 1.0
            } else {
                g_l[(i, j)]
            };
        }
    }
    out
}

/// Minimizes `KL(p‖π)` over Gaussians `p` for `π ∝ exp(−L) N(0, λ⁻¹I)`.
///
/// A local minimizer; the best of `opts.starts` seeded starts is returned.
pub fn gaussian_fit_klpq(
    loss: &dyn Fn(&DVector<f64>) -> f64,
    lambda: f64,
    opts: &GaussFitOptions,
) -> Result<GaussianFit> {
    fit_klpq(loss, None, lambda, opts)
}

/// As [`gaussian_fit_klpq`] with the gradient of the loss supplied.
pub fn gaussian_fit_klpq_with_gradient(
    loss: &dyn Fn(&DVector<f64>) -> f64,
    loss_grad: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    lambda: f64,
    opts: &GaussFitOptions,
) -> Result<GaussianFit> {
    fit_klpq(loss, Some(loss_grad), lambda, opts)
}

fn fit_klpq(
    loss: &dyn Fn(&DVector<f64>) -> f64,
    loss_grad: Option<&dyn Fn(&DVector<f64>) -> DVector<f64>>,
    lambda: f64,
    opts: &GaussFitOptions,
) -> Result<GaussianFit> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if opts.dim == 0 || opts.starts == 0 || opts.outer_iters == 0 {
        return Err(Error::InvalidArgument("dim, starts and outer_iters must be positive".into()));
    }
    let d = opts.dim;
    let layout = Layout { d };
    let panels = (0..opts.outer_iters)
        .map(|o| whitened_panel(d, opts.panel, &mut RngStream::with(opts.seed, Phase::Panel, o as u64, 0)))
        .collect::<Result<Vec<_>>>()?;

    let prior_sd = lambda.powf(-0.5);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for s in 0..opts.starts {
        let mu0 = if s == 0 {
            DVector::zeros(d)
        } else {
            RngStream::with(opts.seed, Phase::Init, 0, s as u64).standard_normal_vec(d) * prior_sd
        };
        let mut theta = layout.pack(&mu0, &DMatrix::identity(d, d));
        for panel in &panels {
            let f = |t: &DVector<f64>| objective(loss, lambda, &layout, panel, t);
            let r = match loss_grad {
                Some(lg) => {
                    let g = |t: &DVector<f64>| objective_gradient(lg, lambda, &layout, panel, t);
                    minimize(&f, Some(&g), &theta, &opts.descent)?
                }
                None => minimize(&f, None, &theta, &opts.descent)?,
            };
            theta = r.x;
        }
        let value = objective(loss, lambda, &layout, panels.last().expect("nonempty"), &theta);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("fit objective is {value} at start {s}")));
        }
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, theta));
        }
    }
    let (value, theta) = best.expect("at least one start");
    let (mu, l) = layout.unpack(&theta);
    Ok(GaussianFit {
        gaussian: Gaussian::from_parts(mu, symmetrize(&(&l * l.transpose())))?,
        objective: value,
    })
}

/// Weighted sample mean and covariance, the minimizer of `KL(π‖p)`.
pub fn gaussian_fit_moment_match(samples: &DMatrix<f64>, weights: Option<&[f64]>) -> Result<Gaussian> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument("moment matching needs at least two samples".into()));
    }
    let w: Vec<f64> = match weights {
        None => vec![1.0 / n as f64; n],
        Some(w) => {
            if w.len() != n {
                return Err(Error::dim("moment-matching weights", n, w.len()));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::Degenerate("weights sum to zero".into()));
            }
            w.iter().map(|x| x / total).collect()
        }
    };
    let d = samples.ncols();
    let mut mean = DVector::zeros(d);
    for (i, wi) in w.iter().enumerate() {
        mean += row(samples, i) * *wi;
    }
    let mut cov = DMatrix::zeros(d, d);
    for (i, wi) in w.iter().enumerate() {
        let c = row(samples, i) - &mean;
        cov += &c * c.transpose() * *wi;
    }
    let cov = SpdMatrix::new(symmetrize(&cov))
        .map_err(|_| Error::Degenerate("sample covariance is singular".into()))?;
    Gaussian::new(mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panel_is_exactly_white() {
        let p = whitened_panel(3, 256, &mut RngStream::with(1, Phase::Panel, 0, 0)).unwrap();
        let mean = crate::base::column_mean(&p);
        assert!(mean.amax() < 1e-14);
        let m2 = p.transpose() * &p / 256.0;
        assert!((m2 - DMatrix::identity(3, 3)).amax() < 1e-12);
        assert!(whitened_panel(1, 3, &mut RngStream::with(1, Phase::Panel, 0, 0)).is_err());
    }

    #[test]
    fn zero_loss_returns_prior() {
        let lambda = 2.5;
        let fit = gaussian_fit_klpq(&|_| 0.0, lambda, &GaussFitOptions::new(2, 3)).unwrap();
        assert!(fit.gaussian.mean().amax() < 1e-6);
        assert!((fit.gaussian.cov().matrix() - DMatrix::identity(2, 2) / lambda).amax() < 1e-6);
    }

    #[test]
    fn gradient_matches_differences() {
        let layout = Layout { d: 2 };
        let panel = whitened_panel(2, 16, &mut RngStream::with(4, Phase::Panel, 0, 0)).unwrap();
        let loss = |u: &DVector<f64>| u[0].powi(4) + (u[0] * u[1]).sin();
        let grad = |u: &DVector<f64>| {
            DVector::from_vec(vec![
                4.0 * u[0].powi(3) + u[1] * (u[0] * u[1]).cos(),
                u[0] * (u[0] * u[1]).cos(),
            ])
        };
        let theta = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.4, -0.3]);
        let an = objective_gradient(&grad, 0.7, &layout, &panel, &theta);
        let fd = super::super::optimize::fd_gradient(&|t| objective(&loss, 0.7, &layout, &panel, t), &theta);
        assert!((an - fd).amax() < 1e-6);
    }

    #[test]
    fn moment_match_examples() {
        let s = DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]);
        let g = gaussian_fit_moment_match(&s, None).unwrap();
        assert_eq!(g.mean()[0], 0.0);
        assert_eq!(g.cov().matrix()[(0, 0)], 1.0);
        let same = DMatrix::from_element(5, 2, 0.7);
        assert!(matches!(gaussian_fit_moment_match(&same, None), Err(Error::Degenerate(_))));
        assert!(gaussian_fit_moment_match(&DMatrix::zeros(1, 1), None).is_err());
    }
}
