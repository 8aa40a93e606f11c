//! Filtering methods for static inverse problems: SMC tempering from prior to
//! posterior and ensemble Kalman inversion, discrete and continuous in time.

use nalgebra::{DMatrix, DVector};

use crate::base::{column_cov, column_mean, row, Phase, SpdMatrix, Streams};
use crate::error::{Error, Result};
use crate::mcmc::pcn_step;
use crate::sampling::{multinomial_uniforms, normalize_log_weights, resample, WeightedEnsemble};
use crate::variational::InverseProblem;

/// `J` steps of size `h = 1/J`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperingSchedule {
    steps: usize,
    h: f64,
}

impl TemperingSchedule {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("tempering needs at least one step".into()));
        }
        Ok(Self {
            steps,
            h: 1.0 / steps as f64,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        self.h
    }
}

/// EKI parameter particles, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EkiState {
    pub members: DMatrix<f64>,
    pub step: usize,
}

impl EkiState {
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.nrows() == 0 {
            return Err(Error::InvalidArgument("EKI needs at least one member".into()));
        }
        Ok(Self { members, step: 0 })
    }

    pub fn len(&self) -> usize {
        self.members.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.members.nrows() == 0
    }

    pub fn mean(&self) -> DVector<f64> {
        column_mean(&self.members)
    }
}

/// `G(u^{(n)})` as rows.
fn forward_all(members: &DMatrix<f64>, g: &dyn Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let outs: Vec<DVector<f64>> = (0..members.nrows()).map(|n| g(&row(members, n))).collect();
    crate::base::stack_rows(&outs)
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_mean(m);
    let mut c = m.clone();
    for mut r in c.row_iter_mut() {
        r -= mean.transpose();
    }
    c
}

/// `u^{(n)} ← u^{(n)} + C^{uw}(C^{ww} + Γ)⁻¹(y^{(n)} − G(u^{(n)}))`.
///
/// With `perturb`, `y^{(n)} = y + η^{(n)}` from stream `(Perturb, step+1, n)`.
pub fn eki_step(
    state: &EkiState,
    g: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    gamma: &SpdMatrix,
    y: &DVector<f64>,
    perturb: bool,
    streams: &Streams,
) -> Result<EkiState> {
    if y.len() != gamma.dim() {
        return Err(Error::dim("EKI data", gamma.dim(), y.len()));
    }
    let n = state.len();
    let nf = n as f64;
    let step = state.step as u64 + 1;
    let w = forward_all(&state.members, g);
    if w.ncols() != y.len() {
        return Err(Error::dim("forward map output", y.len(), w.ncols()));
    }
    let du = centered(&state.members);
    let dw = centered(&w);
    let c_uw = du.transpose() * &dw / nf;
    let c_ww = dw.transpose() * &dw / nf;
    let system = SpdMatrix::new(crate::base::symmetrize(&(c_ww + gamma.matrix())))?;
    let mut resid = DMatrix::zeros(y.len(), n);
    for i in 0..n {
        let mut yi = y.clone();
        if perturb {
            let z = streams.stream(Phase::Perturb, step, i as u64).standard_normal_vec(y.len());
            yi += gamma.color(&z);
        }
        resid.set_column(i, &(yi - row(&w, i)));
    }
    let update = c_uw * system.solve(&resid)?;
    let members = &state.members + update.transpose();
    if members.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("EKI state at step {step}")));
    }
    Ok(EkiState {
        members,
        step: state.step + 1,
    })
}

/// Misfit statistics recorded after each EKI step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkiMisfit {
    /// Mean over members of `½|y − G(u^{(n)})|²_Γ`.
    pub mean_loss: f64,
    /// `|y − G(ū)|`.
    pub mean_residual: f64,
    /// Trace of the parameter covariance.
    pub spread: f64,
}

fn eki_misfit(
    state: &EkiState,
    g: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    gamma: &SpdMatrix,
    y: &DVector<f64>,
) -> Result<EkiMisfit> {
    let mut total = 0.0;
    for n in 0..state.len() {
        total += 0.5 * gamma.quad_form(&(y - g(&row(&state.members, n))))?;
    }
    Ok(EkiMisfit {
        mean_loss: total / state.len() as f64,
        mean_residual: (y - g(&state.mean())).norm(),
        spread: column_cov(&state.members).trace(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkiTrajectory {
    /// Initial state followed by one state per step.
    pub states: Vec<EkiState>,
    /// One entry per step.
    pub misfits: Vec<EkiMisfit>,
}

pub fn eki_run(
    init: &EkiState,
    g: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    gamma: &SpdMatrix,
    y: &DVector<f64>,
    steps: usize,
    perturb: bool,
    streams: &Streams,
) -> Result<EkiTrajectory> {
    if steps == 0 {
        return Err(Error::InvalidArgument("EKI needs at least one step".into()));
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut misfits = Vec::with_capacity(steps);
    states.push(init.clone());
    for _ in 0..steps {
        let next = eki_step(states.last().expect("nonempty"), g, gamma, y, perturb, streams)?;
        misfits.push(eki_misfit(&next, g, gamma, y)?);
        states.push(next);
    }
    Ok(EkiTrajectory { states, misfits })
}

/// `du^{(n)}/dt = −(1/N) Σ_m D_{mn} u^{(m)}` with
/// `D_{mn} = ⟨G(u^{(n)}) − y, G(u^{(m)}) − Ḡ⟩_{Γ₀}`.
pub fn eki_ode_rhs(
    members: &DMatrix<f64>,
    g: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    y: &DVector<f64>,
    gamma0: &SpdMatrix,
) -> Result<DMatrix<f64>> {
    let n = members.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("EKI needs at least one member".into()));
    }
    let w = forward_all(members, g);
    if w.ncols() != y.len() || gamma0.dim() != y.len() {
        return Err(Error::dim("EKI data", gamma0.dim(), y.len()));
    }
    let dw = centered(&w);
    let mut misfit = w.clone();
    for mut r in misfit.row_iter_mut() {
        r -= y.transpose();
    }
    // d[(n, m)] = D_{mn}
    let d = &misfit * gamma0.solve(&dw.transpose())?;
    Ok(-(d * members) / n as f64)
}

/// Explicit Euler trajectory of the EKI ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DMatrix<f64>>,
    /// `losses[t][n] = ½|y − G(u^{(n)}(t))|²_{Γ₀}`.
    pub losses: Vec<Vec<f64>>,
}

/// Fixed-step explicit Euler on `[0, T]` with `round(T/h)` steps.
pub fn eki_ode_integrate(
    init: &DMatrix<f64>,
    g: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    y: &DVector<f64>,
    gamma0: &SpdMatrix,
    step_h: f64,
    t_end: f64,
) -> Result<OdeTrajectory> {
    if !(step_h > 0.0 && step_h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step {step_h} must be positive")));
    }
    if !(t_end >= step_h) {
        return Err(Error::InvalidArgument(format!("horizon {t_end} shorter than step {step_h}")));
    }
    let steps = (t_end / step_h).round() as usize;
    let losses_of = |m: &DMatrix<f64>| -> Result<Vec<f64>> {
        (0..m.nrows())
            .map(|n| Ok(0.5 * gamma0.quad_form(&(y - g(&row(m, n))))?))
            .collect()
    };
    let mut traj = OdeTrajectory {
        times: vec![0.0],
        states: vec![init.clone()],
        losses: vec![losses_of(init)?],
    };
    let mut u = init.clone();
    for i in 1..=steps {
        u += eki_ode_rhs(&u, g, y, gamma0)? * step_h;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("EKI ODE state at step {i}: step too large")));
        }
        traj.times.push(i as f64 * step_h);
        traj.losses.push(losses_of(&u)?);
        traj.states.push(u.clone());
    }
    Ok(traj)
}

/// `−2 C AᵀΓ₀⁻¹A C`, the covariance rhs for linear `G = A`.
pub fn covariance_ode_rhs(c: &DMatrix<f64>, a: &DMatrix<f64>, gamma0: &SpdMatrix) -> Result<DMatrix<f64>> {
    let ca = c * a.transpose();
    Ok(-2.0 * &ca * gamma0.solve(&ca.transpose())?)
}

/// `−C(u) AᵀΓ₀⁻¹(A u^{(n)} − y)` per member: the linear-case gradient flow.
pub fn linear_gradient_flow(
    members: &DMatrix<f64>,
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma0: &SpdMatrix,
) -> Result<DMatrix<f64>> {
    let c = column_cov(members);
    let mut out = DMatrix::zeros(members.nrows(), members.ncols());
    for n in 0..members.nrows() {
        let grad = a.transpose() * gamma0.solve_vec(&(a * row(members, n) - y))?;
        out.row_mut(n).copy_from(&(-(&c * grad)).transpose());
    }
    Ok(out)
}

/// Output of [`smc_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct SmcResult {
    /// Equal-weight ensemble after the final resample and mutation.
    pub ensemble: WeightedEnsemble,
    /// Weighted ensemble at the last temperature, before resampling.
    pub last_weighted: WeightedEnsemble,
    /// ESS after reweighting, one per temperature.
    pub ess: Vec<f64>,
    /// pCN acceptance rate per temperature (`NaN` without mutation).
    pub acceptance: Vec<f64>,
}

/// Tempered SMC from the Gaussian prior to the posterior
/// `π ∝ exp(−L₀) ρ`, with `L₀(u) = ½|y − G(u)|²_{Γ₀}`.
///
/// Per temperature: reweight by `exp(−h L₀)`, resample, then apply
/// `mutation_steps` pCN steps that leave `π_j` invariant.
pub fn smc_sample(
    problem: &InverseProblem,
    y: &DVector<f64>,
    schedule: &TemperingSchedule,
    n: usize,
    mutation_steps: usize,
    beta: f64,
    streams: &Streams,
) -> Result<SmcResult> {
    let prior = problem.gaussian_prior()?.clone();
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!("pCN beta {beta} outside (0, 1]")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("SMC needs at least one particle".into()));
    }
    let d = prior.dim();
    let h = schedule.h();
    let loss = |u: &DVector<f64>| problem.misfit(u, y);

    let mut particles = DMatrix::zeros(n, d);
    for i in 0..n {
        let u = prior.draw(&mut streams.stream(Phase::Init, 0, i as u64));
        particles.row_mut(i).copy_from(&u.transpose());
    }
    let mut ess = Vec::with_capacity(schedule.steps());
    let mut acceptance = Vec::with_capacity(schedule.steps());
    let mut last_weighted = None;
    let mut current = WeightedEnsemble::uniform(particles)?;
    for j in 1..=schedule.steps() {
        let log_w = (0..n)
            .map(|i| loss(&current.particle(i)).map(|l| -h * l))
            .collect::<Result<Vec<_>>>()?;
        let weights = normalize_log_weights(&log_w, &format!("SMC temperature {j}"))?;
        let weighted = WeightedEnsemble::new(current.particles().clone(), weights)?;
        ess.push(weighted.ess());
        let u = multinomial_uniforms(&mut streams.stream(Phase::Resample, j as u64, 0), n);
        let picked = resample(&weighted, &u)?;
        last_weighted = Some(weighted);

        let temp = j as f64 * h;
        let m0 = prior.mean().clone();
        let log_g = |w: &DVector<f64>| -temp * loss(&(w + &m0)).unwrap_or(f64::NAN);
        let everywhere = |_: &DVector<f64>| true;
        let mut mutated = picked.particles().clone();
        let mut accepted = 0usize;
        for i in 0..n {
            let mut rng = streams.stream(Phase::Mutate, j as u64, i as u64);
            let mut w = picked.particle(i) - prior.mean();
            for _ in 0..mutation_steps {
                let (next, acc) = pcn_step(&w, prior.cov(), beta, &log_g, &everywhere, &mut rng)?;
                accepted += usize::from(acc);
                w = next;
            }
            mutated.row_mut(i).copy_from(&(w + prior.mean()).transpose());
        }
        acceptance.push(if mutation_steps == 0 {
            f64::NAN
        } else {
            accepted as f64 / (n * mutation_steps) as f64
        });
        current = WeightedEnsemble::uniform(mutated)?;
    }
    Ok(SmcResult {
        ensemble: current,
        last_weighted: last_weighted.expect("at least one temperature"),
        ess,
        acceptance,
    })
}

/// Normalized log-weights from composing the `J` tempered increments
/// `−h L₀` without resampling or mutation.
pub fn telescoped_log_weights(
    problem: &InverseProblem,
    y: &DVector<f64>,
    samples: &DMatrix<f64>,
    schedule: &TemperingSchedule,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; samples.nrows()];
    for _ in 0..schedule.steps() {
        for (i, a) in acc.iter_mut().enumerate() {
            *a += -schedule.h() * problem.misfit(&row(samples, i), y)?;
        }
    }
    Ok(normalize_in_log(&acc))
}

/// Normalized log-weights `−L₀(u) − log Σ exp(−L₀)`.
pub fn single_shot_log_weights(problem: &InverseProblem, y: &DVector<f64>, samples: &DMatrix<f64>) -> Result<Vec<f64>> {
    let raw = (0..samples.nrows())
        .map(|i| problem.misfit(&row(samples, i), y).map(|l| -l))
        .collect::<Result<Vec<_>>>()?;
    Ok(normalize_in_log(&raw))
}

fn normalize_in_log(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + log_w.iter().map(|w| (w - max).exp()).sum::<f64>().ln();
    log_w.iter().map(|w| w - lse).collect()
}
