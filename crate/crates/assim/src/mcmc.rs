//! Metropolis-Hastings, the pCN kernel, chain running and exact
//! finite-state checks.
//!
//! Acceptance probabilities are evaluated in log space. A uniform is drawn on
//! every step, including certain accepts, so that streams stay aligned when
//! the acceptance rule changes.

use nalgebra::{DMatrix, DVector};

use crate::base::{RngStream, SpdMatrix};
use crate::error::{Error, Result};
use crate::metrics::{tv_distance, DiscreteDist};

type LogDensityFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type SamplerFn = Box<dyn Fn(&DVector<f64>, &mut RngStream) -> DVector<f64> + Send + Sync>;
type TransitionLogFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;

/// Unnormalized log target; `-∞` outside the support.
pub struct TargetDensity {
    log_unnormalized: LogDensityFn,
}

impl TargetDensity {
    pub fn new(f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            log_unnormalized: Box::new(f),
        }
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        (self.log_unnormalized)(x)
    }
}

/// A proposal `q(u, ·)`. Symmetric kernels carry no transition density.
pub struct ProposalKernel {
    sampler: SamplerFn,
    log_density: Option<TransitionLogFn>,
}

impl ProposalKernel {
    pub fn symmetric(
        sampler: impl Fn(&DVector<f64>, &mut RngStream) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            sampler: Box::new(sampler),
            log_density: None,
        }
    }

    /// `log_density(from, to)` is `log q(from, to)` up to a constant.
    pub fn asymmetric(
        sampler: impl Fn(&DVector<f64>, &mut RngStream) -> DVector<f64> + Send + Sync + 'static,
        log_density: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            sampler: Box::new(sampler),
            log_density: Some(Box::new(log_density)),
        }
    }

    /// Gaussian random walk `v = u + L z` with `L Lᵀ = step_cov`.
    pub fn random_walk(step_cov: SpdMatrix) -> Self {
        Self::symmetric(move |u, rng| {
            let z = rng.standard_normal_vec(u.len());
            u + step_cov.color(&z)
        })
    }

    pub fn is_symmetric(&self) -> bool {
        self.log_density.is_none()
    }

    pub fn propose(&self, u: &DVector<f64>, rng: &mut RngStream) -> DVector<f64> {
        (self.sampler)(u, rng)
    }
}

/// Accept with probability `min(1, exp(log_ratio))`; `log_ratio ≥ 0` always
/// accepts. The uniform is consumed either way.
fn accept(log_ratio: f64, rng: &mut RngStream) -> bool {
    let u = rng.uniform();
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio.is_nan() || log_ratio == f64::NEG_INFINITY {
        return false;
    }
    u.ln() < log_ratio
}

/// One Metropolis-Hastings transition.
pub fn mh_step(
    state: &DVector<f64>,
    target: &TargetDensity,
    proposal: &ProposalKernel,
    rng: &mut RngStream,
) -> Result<(DVector<f64>, bool)> {
    let lp_u = target.log_density(state);
    if !lp_u.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "invalid chain state: log target is {lp_u}"
        )));
    }
    let candidate = proposal.propose(state, rng);
    let lp_v = target.log_density(&candidate);
    let log_ratio = if lp_v == f64::NEG_INFINITY || lp_v.is_nan() {
        f64::NEG_INFINITY
    } else {
        let mut r = lp_v - lp_u;
        if let Some(q) = &proposal.log_density {
            r += q(&candidate, state) - q(state, &candidate);
        }
        r
    };
    if accept(log_ratio, rng) {
        Ok((candidate, true))
    } else {
        Ok((state.clone(), false))
    }
}

/// A pCN kernel for targets with density `g · 1_B` relative to `N(0, Ĉ)`.
pub struct PcnKernel {
    prior_cov: SpdMatrix,
    beta: f64,
    log_g: LogDensityFn,
    support: Box<dyn Fn(&DVector<f64>) -> bool + Send + Sync>,
}

impl PcnKernel {
    pub fn new(
        prior_cov: SpdMatrix,
        beta: f64,
        log_g: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        support: impl Fn(&DVector<f64>) -> bool + Send + Sync + 'static,
    ) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self {
            prior_cov,
            beta,
            log_g: Box::new(log_g),
            support: Box::new(support),
        })
    }

    /// Kernel with `B` the whole space.
    pub fn unrestricted(
        prior_cov: SpdMatrix,
        beta: f64,
        log_g: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(prior_cov, beta, log_g, |_| true)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn step(&self, state: &DVector<f64>, rng: &mut RngStream) -> Result<(DVector<f64>, bool)> {
        pcn_step(
            state,
            &self.prior_cov,
            self.beta,
            &*self.log_g,
            &*self.support,
            rng,
        )
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!("pCN beta {beta} outside (0, 1]")));
    }
    Ok(())
}

/// `(1 − β²)^{1/2} u + β ξ` with `ξ ∼ N(0, Ĉ)`.
pub fn pcn_propose(
    state: &DVector<f64>,
    prior_cov: &SpdMatrix,
    beta: f64,
    rng: &mut RngStream,
) -> DVector<f64> {
    let z = rng.standard_normal_vec(state.len());
    state * (1.0 - beta * beta).sqrt() + prior_cov.color(&z) * beta
}

/// One pCN transition: accept with `min(1, g(v)/g(u) · 1_B(v))`.
///
/// The support indicator is checked before `log_g` is evaluated at the
/// candidate.
pub fn pcn_step(
    state: &DVector<f64>,
    prior_cov: &SpdMatrix,
    beta: f64,
    log_g: &dyn Fn(&DVector<f64>) -> f64,
    support: &dyn Fn(&DVector<f64>) -> bool,
    rng: &mut RngStream,
) -> Result<(DVector<f64>, bool)> {
    check_beta(beta)?;
    if state.len() != prior_cov.dim() {
        return Err(Error::dim("pCN state", prior_cov.dim(), state.len()));
    }
    if !support(state) {
        return Err(Error::InvalidArgument("pCN state outside the support".into()));
    }
    let candidate = pcn_propose(state, prior_cov, beta, rng);
    let log_ratio = if support(&candidate) {
        let lu = log_g(state);
        if !lu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid chain state: log g is {lu}"
            )));
        }
        log_g(&candidate) - lu
    } else {
        f64::NEG_INFINITY
    };
    if accept(log_ratio, rng) {
        Ok((candidate, true))
    } else {
        Ok((state.clone(), false))
    }
}

/// Output of [`run_chain`].
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// One row per step.
    pub samples: DMatrix<f64>,
    pub acceptance_rate: f64,
}

impl Chain {
    /// Samples from step `offset` on; burn-in is the caller's choice.
    pub fn after_burn_in(&self, offset: usize) -> DMatrix<f64> {
        let offset = offset.min(self.samples.nrows());
        self.samples
            .rows(offset, self.samples.nrows() - offset)
            .into_owned()
    }
}

/// Iterates `step_fn` `n_steps` times from `init`, recording every state.
pub fn run_chain<F>(init: &DVector<f64>, mut step_fn: F, n_steps: usize, rng: &mut RngStream) -> Result<Chain>
where
    F: FnMut(&DVector<f64>, &mut RngStream) -> Result<(DVector<f64>, bool)>,
{
    if n_steps == 0 {
        return Err(Error::InvalidArgument("chain needs at least one step".into()));
    }
    let d = init.len();
    let mut samples = DMatrix::zeros(n_steps, d);
    let mut state = init.clone();
    let mut accepted = 0usize;
    for i in 0..n_steps {
        let (next, acc) = step_fn(&state, rng)?;
        if acc {
            accepted += 1;
        }
        state = next;
        samples.row_mut(i).copy_from(&state.transpose());
    }
    Ok(Chain {
        samples,
        acceptance_rate: accepted as f64 / n_steps as f64,
    })
}

/// A Markov kernel on `{0, …, S−1}` given as a row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChain {
    kernel: DMatrix<f64>,
}

impl FiniteChain {
    pub fn new(kernel: DMatrix<f64>) -> Result<Self> {
        let s = kernel.nrows();
        if s == 0 || kernel.ncols() != s {
            return Err(Error::dim("finite kernel (square)", s, kernel.ncols()));
        }
        if kernel.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument("kernel entries must be nonnegative".into()));
        }
        for (i, r) in kernel.row_iter().enumerate() {
            let total: f64 = r.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("kernel row {i} sums to {total}")));
            }
        }
        Ok(Self { kernel })
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn states(&self) -> usize {
        self.kernel.nrows()
    }

    /// `πᵀ P`.
    pub fn push_forward(&self, pi: &[f64]) -> Vec<f64> {
        let s = self.states();
        (0..s)
            .map(|j| (0..s).map(|i| pi[i] * self.kernel[(i, j)]).sum())
            .collect()
    }

    /// `min_{i,j} p(i, j)`.
    pub fn epsilon(&self) -> f64 {
        self.kernel.min()
    }
}

/// Finite-state Metropolis-Hastings kernel from a proposal matrix and target.
pub fn mh_kernel_matrix(proposal: &FiniteChain, target: &DiscreteDist) -> Result<FiniteChain> {
    let s = proposal.states();
    if target.len() != s {
        return Err(Error::dim("MH target", s, target.len()));
    }
    let q = proposal.kernel();
    let pi = target.probs();
    let mut p = DMatrix::zeros(s, s);
    for u in 0..s {
        let mut off = 0.0;
        for v in 0..s {
            if u == v || q[(u, v)] == 0.0 {
                continue;
            }
            let num = pi[v] * q[(v, u)];
            let den = pi[u] * q[(u, v)];
            let a = if den == 0.0 { 1.0 } else { (num / den).min(1.0) };
            p[(u, v)] = q[(u, v)] * a;
            off += p[(u, v)];
        }
        p[(u, u)] = 1.0 - off;
    }
    FiniteChain::new(p)
}

/// Output of [`finite_tv_decay`].
#[derive(Debug, Clone, PartialEq)]
pub struct TvDecay {
    /// Entry `k − 1` is `d_TV(π₀ Pᵏ, π)` for `k = 1, …, n`.
    pub tv_seq: Vec<f64>,
    pub epsilon: f64,
    pub invariant: DiscreteDist,
}

pub const POWER_ITERATION_TOL: f64 = 1e-12;
pub const POWER_ITERATION_MAX: usize = 100_000;

/// Unique invariant distribution by power iteration from every point mass.
///
/// Fails when some start does not settle within [`POWER_ITERATION_MAX`]
/// iterations (periodic chain) or the starts settle on different limits
/// (reducible chain).
pub fn invariant_distribution(chain: &FiniteChain) -> Result<DiscreteDist> {
    let s = chain.states();
    let p = chain.kernel();
    let mut q = DMatrix::<f64>::identity(s, s);
    for _ in 0..POWER_ITERATION_MAX {
        let next = &q * p;
        let residual = (&next - &q).amax();
        q = next;
        if residual <= POWER_ITERATION_TOL {
            let first = q.row(0).into_owned();
            let spread = q
                .row_iter()
                .map(|r| (r - &first).amax())
                .fold(0.0, f64::max);
            if spread > 1e-10 {
                return Err(Error::NonConvergent(
                    "power iteration settled on several invariant distributions (reducible chain)"
                        .into(),
                ));
            }
            return DiscreteDist::from_masses(first.as_slice());
        }
    }
    Err(Error::NonConvergent(format!(
        "power iteration did not converge in {POWER_ITERATION_MAX} iterations (periodic or reducible chain)"
    )))
}

/// Total-variation distance to equilibrium along `π₀ Pᵏ`.
pub fn finite_tv_decay(chain: &FiniteChain, pi0: &DiscreteDist, n: usize) -> Result<TvDecay> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    if pi0.len() != chain.states() {
        return Err(Error::dim("initial distribution", chain.states(), pi0.len()));
    }
    let invariant = invariant_distribution(chain)?;
    let mut current = pi0.probs().to_vec();
    let mut tv_seq = Vec::with_capacity(n);
    for _ in 0..n {
        current = chain.push_forward(&current);
        let dist = DiscreteDist::from_masses(&current)?;
        tv_seq.push(tv_distance(&dist, &invariant)?);
    }
    Ok(TvDecay {
        tv_seq,
        epsilon: chain.epsilon(),
        invariant,
    })
}
