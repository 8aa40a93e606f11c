//! Monte Carlo and importance-sampling estimators and the resampling step
//! shared by every particle method.

use nalgebra::{DMatrix, DVector};

use crate::base::{row, RngStream};
use crate::error::{Error, Result};

/// Particles (rows of an `N × d` matrix) with normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    particles: DMatrix<f64>,
    weights: DVector<f64>,
}

impl WeightedEnsemble {
    pub fn new(particles: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        let n = particles.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one particle".into()));
        }
        if weights.len() != n {
            return Err(Error::dim("ensemble weights", n, weights.len()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let total = neumaier_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { particles, weights })
    }

    pub fn uniform(particles: DMatrix<f64>) -> Result<Self> {
        let n = particles.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one particle".into()));
        }
        Ok(Self {
            particles,
            weights: DVector::from_element(n, 1.0 / n as f64),
        })
    }

    /// Normalizes unnormalized log-weights with log-sum-exp.
    pub fn from_log_weights(particles: DMatrix<f64>, log_weights: &[f64]) -> Result<Self> {
        let weights = normalize_log_weights(log_weights, "ensemble")?;
        Self::new(particles, weights)
    }

    pub fn len(&self) -> usize {
        self.particles.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.particles.ncols()
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn particle(&self, i: usize) -> DVector<f64> {
        row(&self.particles, i)
    }

    pub fn into_particles(self) -> DMatrix<f64> {
        self.particles
    }

    pub fn mean(&self) -> DVector<f64> {
        self.particles.transpose() * &self.weights
    }

    /// Weighted covariance `Σ wᵢ (xᵢ − m)(xᵢ − m)ᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let mut c = DMatrix::zeros(self.dim(), self.dim());
        for i in 0..self.len() {
            let r = self.particle(i) - &m;
            c += &r * r.transpose() * self.weights[i];
        }
        crate::base::symmetrize(&c)
    }

    pub fn ess(&self) -> f64 {
        effective_sample_size(self.weights.as_slice())
    }

    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|x| (x - w).abs() <= 1e-15)
    }
}

/// Compensated summation, left to right.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Log-sum-exp normalization of log-weights.
///
/// Fails with [`Error::WeightCollapse`] when every weight vanishes.
pub fn normalize_log_weights(log_weights: &[f64], context: &str) -> Result<DVector<f64>> {
    if log_weights.is_empty() {
        return Err(Error::InvalidArgument("no weights to normalize".into()));
    }
    if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
        return Err(Error::NonFinite(format!("log-weight in {context}")));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::WeightCollapse {
            context: context.to_string(),
            max_log_weight: max,
        });
    }
    let shifted: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total = neumaier_sum(shifted.iter().copied());
    Ok(DVector::from_iterator(
        shifted.len(),
        shifted.into_iter().map(|w| w / total),
    ))
}

/// `1 / Σ wᵢ²` for normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// `(1/N) Σ f(uᵢ)` over the rows of `samples`.
pub fn monte_carlo_estimate(f: impl Fn(&DVector<f64>) -> f64, samples: &DMatrix<f64>) -> Result<f64> {
    let n = samples.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    let total: f64 = (0..n).map(|i| f(&row(samples, i))).sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceEstimate {
    pub estimate: f64,
    pub weights: DVector<f64>,
    /// Self-normalized plug-in `N Σ gᵢ² / (Σ gᵢ)²` of `ρ(g²)/ρ(g)²`;
    /// biased at order `1/N`.
    pub zeta_hat: f64,
}

/// Self-normalized importance sampling with unnormalized weight function `g`
/// evaluated at draws from the proposal.
pub fn importance_estimate(
    f: impl Fn(&DVector<f64>) -> f64,
    samples: &DMatrix<f64>,
    g: impl Fn(&DVector<f64>) -> f64,
) -> Result<ImportanceEstimate> {
    let n = samples.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    let rows: Vec<DVector<f64>> = (0..n).map(|i| row(samples, i)).collect();
    let gs: Vec<f64> = rows.iter().map(&g).collect();
    if gs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(
            "importance weights must be finite and nonnegative".into(),
        ));
    }
    let total = neumaier_sum(gs.iter().copied());
    if !(total > 0.0) {
        return Err(Error::Degenerate("degenerate proposal: all weights zero".into()));
    }
    let weights = DVector::from_iterator(n, gs.iter().map(|v| v / total));
    let estimate = rows.iter().zip(weights.iter()).map(|(u, w)| w * f(u)).sum();
    let sq: f64 = gs.iter().map(|v| (v / total).powi(2)).sum();
    Ok(ImportanceEstimate {
        estimate,
        weights,
        zeta_hat: n as f64 * sq,
    })
}

/// Cumulative weights `α⁽ᵐ⁾`, with the last entry forced to exactly 1.
pub fn cumulative_weights(weights: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(weights.len());
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &w in weights {
        let y = w - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        out.push(sum.min(1.0));
    }
    // trailing zero weights keep empty intervals
    if let Some(last_pos) = weights.iter().rposition(|w| *w > 0.0) {
        out[last_pos..].iter_mut().for_each(|a| *a = 1.0);
    } else if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

/// For each uniform `r`, the index `m` with `α⁽ᵐ⁻¹⁾ ≤ r < α⁽ᵐ⁾`.
pub fn resample_indices(weights: &[f64], uniforms: &[f64]) -> Result<Vec<usize>> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("no weights to resample".into()));
    }
    let alpha = cumulative_weights(weights);
    uniforms
        .iter()
        .map(|&r| {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("uniform {r} outside [0, 1)")));
            }
            let idx = alpha.partition_point(|&a| a <= r);
            Ok(idx.min(weights.len() - 1))
        })
        .collect()
}

/// Replaces the weighted ensemble by an equal-weight one picked through the
/// cumulative-weight intervals.
pub fn resample(ensemble: &WeightedEnsemble, uniforms: &[f64]) -> Result<WeightedEnsemble> {
    if uniforms.is_empty() {
        return Err(Error::InvalidArgument("need at least one uniform".into()));
    }
    let idx = resample_indices(ensemble.weights.as_slice(), uniforms)?;
    let d = ensemble.dim();
    let particles = DMatrix::from_fn(idx.len(), d, |i, j| ensemble.particles[(idx[i], j)]);
    WeightedEnsemble::uniform(particles)
}

/// `n` independent uniforms: multinomial resampling.
pub fn multinomial_uniforms(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform()).collect()
}

/// `(i + uᵢ) / n`: stratified resampling.
pub fn stratified_uniforms(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| ((i as f64 + rng.uniform()) / n as f64).min(1.0 - f64::EPSILON))
        .collect()
}
