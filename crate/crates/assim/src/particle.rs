//! Particle filters: bootstrap, optimal (linear observations) and
//! Gaussianized optimal.
//!
//! Each step returns both the weighted ensemble before resampling and the
//! equal-weight ensemble after it. Weights are normalized in log space;
//! a step fails only when every log-weight is `-∞`.

use nalgebra::{DMatrix, DVector};

use crate::base::{symmetrize, Phase, SpdMatrix, Streams};
use crate::error::{Error, Result};
use crate::sampling::{multinomial_uniforms, normalize_log_weights, resample, WeightedEnsemble};
use crate::variational::NonlinearModel;

pub use crate::sampling::effective_sample_size;

/// Output of one particle-filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleStep {
    /// The weighted estimate before resampling. For GOPF, whose resampling
    /// precedes propagation, this is the propagated equal-weight ensemble.
    pub weighted: WeightedEnsemble,
    pub resampled: WeightedEnsemble,
}

impl ParticleStep {
    pub fn ess(&self) -> f64 {
        self.weighted.ess()
    }
}

fn check_uniform(ens: &WeightedEnsemble, model: &NonlinearModel) -> Result<()> {
    if !ens.is_uniform() {
        return Err(Error::InvalidArgument("particle step expects an equal-weight ensemble".into()));
    }
    if ens.dim() != model.state_dim() {
        return Err(Error::dim("particle ensemble", model.state_dim(), ens.dim()));
    }
    Ok(())
}

fn resample_step(weighted: &WeightedEnsemble, streams: &Streams, step: u64) -> Result<WeightedEnsemble> {
    let u = multinomial_uniforms(&mut streams.stream(Phase::Resample, step, 0), weighted.len());
    resample(weighted, &u)
}

/// Propagate with `Ψ + ξ`, weight by `exp(−½|y − h(v̂)|²_Γ)`, resample.
pub fn bpf_step(
    ens: &WeightedEnsemble,
    model: &NonlinearModel,
    y: &DVector<f64>,
    streams: &Streams,
    step: u64,
) -> Result<ParticleStep> {
    check_uniform(ens, model)?;
    if y.len() != model.obs_dim() {
        return Err(Error::dim("observation", model.obs_dim(), y.len()));
    }
    let d = ens.dim();
    let mut propagated = DMatrix::zeros(ens.len(), d);
    let mut log_w = Vec::with_capacity(ens.len());
    for n in 0..ens.len() {
        let z = streams.stream(Phase::Propagate, step, n as u64).standard_normal_vec(d);
        let v = model.psi(&ens.particle(n)) + model.sigma.color(&z);
        log_w.push(-0.5 * model.gamma.quad_form(&(y - model.observe(&v)))?);
        propagated.row_mut(n).copy_from(&v.transpose());
    }
    let weights = normalize_log_weights(&log_w, &format!("BPF step {step}"))?;
    let weighted = WeightedEnsemble::new(propagated, weights)?;
    let resampled = resample_step(&weighted, streams, step)?;
    Ok(ParticleStep { weighted, resampled })
}

/// `K = ΣHᵀS⁻¹`, `C = (I − KH)Σ`, `S = HΣHᵀ + Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpfKernel {
    pub k: DMatrix<f64>,
    pub c: SpdMatrix,
    pub s: SpdMatrix,
    h: DMatrix<f64>,
}

impl OpfKernel {
    /// Builds the kernel and checks `C` against `(HᵀΓ⁻¹H + Σ⁻¹)⁻¹`.
    pub fn new(sigma: &SpdMatrix, h: &DMatrix<f64>, gamma: &SpdMatrix) -> Result<Self> {
        let d = sigma.dim();
        if h.ncols() != d {
            return Err(Error::dim("observation matrix columns", d, h.ncols()));
        }
        if gamma.dim() != h.nrows() {
            return Err(Error::dim("observation noise", h.nrows(), gamma.dim()));
        }
        let hs = h * sigma.matrix();
        let s = SpdMatrix::new(symmetrize(&(&hs * h.transpose() + gamma.matrix())))?;
        let k = s.solve(&hs)?.transpose();
        let c_mat = symmetrize(&((DMatrix::identity(d, d) - &k * h) * sigma.matrix()));
        let precision = SpdMatrix::new(symmetrize(&(h.transpose() * gamma.solve(h)? + sigma.inverse())))?;
        let c_prec = precision.inverse();
        let scale = c_mat.amax().max(f64::MIN_POSITIVE);
        if (&c_mat - &c_prec).amax() > 1e-10 * scale {
            return Err(Error::Degenerate(
                "gain and precision forms of the OPF covariance disagree".into(),
            ));
        }
        Ok(Self {
            k,
            c: SpdMatrix::new(c_mat)?,
            s,
            h: h.clone(),
        })
    }

    /// `log w̄ = −½|y − HΨ(v)|²_S`, a function of `v` alone.
    pub fn log_weight(&self, model: &NonlinearModel, v: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok(-0.5 * self.s.quad_form(&(y - &self.h * model.psi(v)))?)
    }

    /// `(I − KH)Ψ(v) + Ky + ζ`, `ζ ∼ N(0, C)` from stream `(Propagate, step, slot)`.
    pub fn propagate(
        &self,
        model: &NonlinearModel,
        v: &DVector<f64>,
        y: &DVector<f64>,
        streams: &Streams,
        step: u64,
        slot: u64,
    ) -> DVector<f64> {
        let f = model.psi(v);
        let z = streams.stream(Phase::Propagate, step, slot).standard_normal_vec(v.len());
        &f + &self.k * (y - &self.h * &f) + self.c.color(&z)
    }
}

/// `opf_kernel(Σ, H, Γ)`.
pub fn opf_kernel(sigma: &SpdMatrix, h: &DMatrix<f64>, gamma: &SpdMatrix) -> Result<OpfKernel> {
    OpfKernel::new(sigma, h, gamma)
}

/// Unnormalized OPF log-weights of the current particles.
pub fn opf_log_weights(
    ens: &WeightedEnsemble,
    model: &NonlinearModel,
    y: &DVector<f64>,
    kernel: &OpfKernel,
) -> Result<Vec<f64>> {
    (0..ens.len()).map(|n| kernel.log_weight(model, &ens.particle(n), y)).collect()
}

fn check_opf(ens: &WeightedEnsemble, model: &NonlinearModel, y: &DVector<f64>, kernel: &OpfKernel) -> Result<()> {
    check_uniform(ens, model)?;
    model.h()?;
    if kernel.k.nrows() != model.state_dim() {
        return Err(Error::dim("OPF kernel", model.state_dim(), kernel.k.nrows()));
    }
    if y.len() != kernel.s.dim() {
        return Err(Error::dim("observation", kernel.s.dim(), y.len()));
    }
    Ok(())
}

/// Weights on `v_j` first, then propagation with data, then resampling of
/// the propagated particles.
pub fn opf_step(
    ens: &WeightedEnsemble,
    model: &NonlinearModel,
    y: &DVector<f64>,
    kernel: &OpfKernel,
    streams: &Streams,
    step: u64,
) -> Result<ParticleStep> {
    check_opf(ens, model, y, kernel)?;
    let log_w = opf_log_weights(ens, model, y, kernel)?;
    let weights = normalize_log_weights(&log_w, &format!("OPF step {step}"))?;
    let mut propagated = DMatrix::zeros(ens.len(), ens.dim());
    for n in 0..ens.len() {
        let v = kernel.propagate(model, &ens.particle(n), y, streams, step, n as u64);
        propagated.row_mut(n).copy_from(&v.transpose());
    }
    let weighted = WeightedEnsemble::new(propagated, weights)?;
    let resampled = resample_step(&weighted, streams, step)?;
    Ok(ParticleStep { weighted, resampled })
}

/// Weights on `v_j`, resampling of `v_j`, then propagation with data.
pub fn gopf_step(
    ens: &WeightedEnsemble,
    model: &NonlinearModel,
    y: &DVector<f64>,
    kernel: &OpfKernel,
    streams: &Streams,
    step: u64,
) -> Result<ParticleStep> {
    check_opf(ens, model, y, kernel)?;
    let log_w = opf_log_weights(ens, model, y, kernel)?;
    let weights = normalize_log_weights(&log_w, &format!("GOPF step {step}"))?;
    let current = WeightedEnsemble::new(ens.particles().clone(), weights)?;
    let picked = resample_step(&current, streams, step)?;
    let mut propagated = DMatrix::zeros(ens.len(), ens.dim());
    for n in 0..ens.len() {
        let v = kernel.propagate(model, &picked.particle(n), y, streams, step, n as u64);
        propagated.row_mut(n).copy_from(&v.transpose());
    }
    let out = WeightedEnsemble::uniform(propagated)?;
    Ok(ParticleStep {
        weighted: out.clone(),
        resampled: out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticleMethod {
    Bootstrap,
    Optimal,
    GaussianizedOptimal,
}

/// Per-step summary of a particle filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSummary {
    /// Mean of the pre-resampling weighted ensemble.
    pub mean: DVector<f64>,
    pub cov_trace: f64,
    pub ess: f64,
}

/// Runs a particle filter from `N` draws of the initial Gaussian.
pub fn particle_filter(
    method: ParticleMethod,
    model: &NonlinearModel,
    data: &[DVector<f64>],
    n: usize,
    streams: &Streams,
) -> Result<Vec<ParticleSummary>> {
    let init = crate::ensemble::Ensemble::from_gaussian(&model.init, n, streams)?;
    let mut ens = WeightedEnsemble::uniform(init.into_members())?;
    let kernel = match method {
        ParticleMethod::Bootstrap => None,
        _ => Some(OpfKernel::new(&model.sigma, model.h()?, &model.gamma)?),
    };
    let mut out = Vec::with_capacity(data.len());
    for (j, y) in data.iter().enumerate() {
        let step = j as u64 + 1;
        let res = match (method, &kernel) {
            (ParticleMethod::Bootstrap, _) => bpf_step(&ens, model, y, streams, step)?,
            (ParticleMethod::Optimal, Some(k)) => opf_step(&ens, model, y, k, streams, step)?,
            (ParticleMethod::GaussianizedOptimal, Some(k)) => gopf_step(&ens, model, y, k, streams, step)?,
            _ => unreachable!("kernel built for optimal methods"),
        };
        out.push(ParticleSummary {
            mean: res.weighted.mean(),
            cov_trace: res.weighted.covariance().trace(),
            ess: res.ess(),
        });
        ens = res.resampled;
    }
    Ok(out)
}
