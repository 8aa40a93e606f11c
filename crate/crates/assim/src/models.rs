//! Named test problems and synthetic data.
//!
//! Benchmark coefficients are fixed so that results are reproducible:
//!
//! | name                | dynamics                               | observation        | noise                         |
//! |---------------------|----------------------------------------|--------------------|-------------------------------|
//! | `scalar-lg`         | `v ↦ v`                                | `H = 1`            | `Σ = Γ = C₀ = 1`, `m₀ = 0`    |
//! | `vector-lg-d4k2`    | two 2×2 damped rotations (0.9/0.1, 0.8/0.2) | components 1, 3 | `Σ = 0.1I`, `Γ = 0.25I`, `C₀ = I` |
//! | `contractive-3dvar` | `v ↦ 0.9 sin v`, gain `K = 0.5`        | `H = 1`            | `Σ = 0.01`, `Γ = 0.01`, `C₀ = 1` |
//! | `logistic-nl`       | `v ↦ 3.7 v(1−v)` clamped to `[0, 1]`   | `H = 1`            | `Σ = 1e-4`, `Γ = 0.01`, `C₀ = 0.01`, `m₀ = 0.3` |
//! | `ode-inverse`       | `dx/dt = −x + u`, `x(0) = 0`, `L = 32` | `G(u) = X_L`       | `Γ₀ = 0.01I`, prior `N(0, I)`, `u† = (0.5, −1)` |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::base::{row, Gaussian, Phase, SpdMatrix, Streams};
use crate::error::{Error, Result};
use crate::kalman::LinearModel;
use crate::variational::{InverseProblem, NonlinearModel, Observation, Prior};

type RhsFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// `dx/dt = F(x; u)`, `x(0) = 0`, discretized by `L` Euler steps on `[0, 1]`.
#[derive(Clone)]
pub struct OdeForwardModel {
    rhs: RhsFn,
    pub steps: usize,
    pub dim_x: usize,
    pub dim_u: usize,
}

impl OdeForwardModel {
    pub fn new(
        rhs: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        steps: usize,
        dim_x: usize,
        dim_u: usize,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("Euler step count must be at least 1".into()));
        }
        Ok(Self {
            rhs: Arc::new(rhs),
            steps,
            dim_x,
            dim_u,
        })
    }

    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.rhs)(x, u)
    }
}

impl fmt::Debug for OdeForwardModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeForwardModel")
            .field("steps", &self.steps)
            .field("dim_x", &self.dim_x)
            .field("dim_u", &self.dim_u)
            .finish()
    }
}

/// `X_L` from `X_{ℓ+1} = X_ℓ + δ F(X_ℓ; u)`, `X_0 = 0`, `δ = 1/L`.
pub fn euler_forward(model: &OdeForwardModel, u: &DVector<f64>, steps: Option<usize>) -> Result<DVector<f64>> {
    let l = steps.unwrap_or(model.steps);
    if l == 0 {
        return Err(Error::InvalidArgument("Euler step count must be at least 1".into()));
    }
    if u.len() != model.dim_u {
        return Err(Error::dim("ODE parameter", model.dim_u, u.len()));
    }
    let delta = 1.0 / l as f64;
    let mut x = DVector::zeros(model.dim_x);
    for i in 0..l {
        x += model.rhs(&x, u) * delta;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Euler state at step {}", i + 1)));
        }
    }
    Ok(x)
}

/// A truth trajectory and the data observed from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRun {
    /// `(J+1) × d`, row `j` is `v†_j`.
    pub truth: DMatrix<f64>,
    /// `J × k`, row `j−1` is `y_j`.
    pub data: DMatrix<f64>,
    pub seed: u64,
}

impl SyntheticRun {
    pub fn observations(&self) -> Vec<DVector<f64>> {
        crate::base::rows(&self.data)
    }

    pub fn steps(&self) -> usize {
        self.data.nrows()
    }
}

/// Rolls the truth from a draw of the initial Gaussian and observes it.
///
/// Streams: initial state `(Simulate, 0, 0)`, model noise `(Simulate, j, 0)`,
/// observation noise `(Observe, j, 0)`.
pub fn simulate(model: &NonlinearModel, steps: usize, seed: u64, noise_free_dynamics: bool) -> Result<SyntheticRun> {
    if steps == 0 {
        return Err(Error::InvalidArgument("simulation needs J ≥ 1".into()));
    }
    let streams = Streams::new(seed);
    let d = model.state_dim();
    let k = model.obs_dim();
    let mut truth = DMatrix::zeros(steps + 1, d);
    let mut data = DMatrix::zeros(steps, k);
    let mut v = model.init.draw(&mut streams.stream(Phase::Simulate, 0, 0));
    truth.row_mut(0).copy_from(&v.transpose());
    for j in 1..=steps {
        v = model.psi(&v);
        if !noise_free_dynamics {
            let z = streams.stream(Phase::Simulate, j as u64, 0).standard_normal_vec(d);
            v += model.sigma.color(&z);
        }
        let z = streams.stream(Phase::Observe, j as u64, 0).standard_normal_vec(k);
        let y = model.observe(&v) + model.gamma.color(&z);
        if v.iter().chain(y.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("simulated trajectory at step {j}")));
        }
        truth.row_mut(j).copy_from(&v.transpose());
        data.row_mut(j - 1).copy_from(&y.transpose());
    }
    Ok(SyntheticRun { truth, data, seed })
}

/// The initial-condition inverse problem of a state-space model: recover
/// `u = v₀` from `J` observations of the noise-free trajectory
/// `Ψʲ(u)`, with the model's initial Gaussian as prior.
pub fn initial_condition_problem(model: &NonlinearModel, steps: usize) -> Result<InverseProblem> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one observation time".into()));
    }
    let k = model.obs_dim();
    let mut noise = DMatrix::zeros(k * steps, k * steps);
    for j in 0..steps {
        noise.view_mut((j * k, j * k), (k, k)).copy_from(model.gamma.matrix());
    }
    let fwd = model.clone();
    let forward = move |u: &DVector<f64>| {
        let mut out = DVector::zeros(k * steps);
        let mut v = u.clone();
        for j in 0..steps {
            v = fwd.psi(&v);
            out.rows_mut(j * k, k).copy_from(&fwd.observe(&v));
        }
        out
    };
    let problem = InverseProblem::new(forward, Prior::Gaussian(model.init.clone()), SpdMatrix::new(noise)?);
    if !model.has_jacobian() || model.observation.jacobian(model.init.mean()).is_none() {
        return Ok(problem);
    }
    let jac_model = model.clone();
    Ok(problem.with_jacobian(move |u| {
        let d = u.len();
        let mut out = DMatrix::zeros(k * steps, d);
        let mut v = u.clone();
        let mut sens = DMatrix::identity(d, d);
        for j in 0..steps {
            sens = jac_model.jacobian(&v).expect("checked") * sens;
            v = jac_model.psi(&v);
            let hj = jac_model.observation.jacobian(&v).expect("checked");
            out.view_mut((j * k, 0), (k, d)).copy_from(&(hj * &sens));
        }
        out
    }))
}

/// Stacks `J` observations into one data vector, matching
/// [`initial_condition_problem`].
pub fn stack_observations(data: &DMatrix<f64>) -> DVector<f64> {
    let k = data.ncols();
    DVector::from_fn(data.nrows() * k, |i, _| data[(i / k, i % k)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Benchmark {
    ScalarLg,
    VectorLgD4k2,
    Contractive3dvar,
    LogisticNl,
    OdeInverse,
}

impl Benchmark {
    pub const ALL: [Benchmark; 5] = [
        Benchmark::ScalarLg,
        Benchmark::VectorLgD4k2,
        Benchmark::Contractive3dvar,
        Benchmark::LogisticNl,
        Benchmark::OdeInverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::ScalarLg => "scalar-lg",
            Benchmark::VectorLgD4k2 => "vector-lg-d4k2",
            Benchmark::Contractive3dvar => "contractive-3dvar",
            Benchmark::LogisticNl => "logistic-nl",
            Benchmark::OdeInverse => "ode-inverse",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|b| b.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::UnknownBenchmark {
                name: s.to_string(),
                valid: Self::valid_names(),
            })
    }
}

/// The static inverse problem behind `ode-inverse`.
#[derive(Debug, Clone)]
pub struct OdeInverseBenchmark {
    pub ode: OdeForwardModel,
    pub problem: InverseProblem,
    pub truth: DVector<f64>,
}

impl OdeInverseBenchmark {
    /// `y = G_δ(u†) + η`, `η` from stream `(Observe, 0, 0)`.
    pub fn synthetic_data(&self, seed: u64) -> Result<DVector<f64>> {
        let clean = euler_forward(&self.ode, &self.truth, None)?;
        let z = Streams::new(seed)
            .stream(Phase::Observe, 0, 0)
            .standard_normal_vec(clean.len());
        Ok(clean + self.problem.noise_cov.color(&z))
    }

    /// `G(u) = u(1 − e⁻¹)`, the exact solution at `t = 1`.
    pub fn exact_forward(u: &DVector<f64>) -> DVector<f64> {
        u * (1.0 - (-1.0f64).exp())
    }
}

#[derive(Debug, Clone)]
pub enum BenchmarkModel {
    Linear(LinearModel),
    Nonlinear {
        model: NonlinearModel,
        /// Fixed 3DVAR gain where the benchmark defines one.
        gain: Option<DMatrix<f64>>,
    },
    Inverse(OdeInverseBenchmark),
}

impl BenchmarkModel {
    /// The state-space form, when the benchmark is one.
    pub fn state_space(&self) -> Option<NonlinearModel> {
        match self {
            BenchmarkModel::Linear(lm) => Some(NonlinearModel::from(lm)),
            BenchmarkModel::Nonlinear { model, .. } => Some(model.clone()),
            BenchmarkModel::Inverse(_) => None,
        }
    }

    pub fn linear(&self) -> Option<&LinearModel> {
        match self {
            BenchmarkModel::Linear(lm) => Some(lm),
            _ => None,
        }
    }
}

pub fn make_benchmark(name: &str) -> Result<BenchmarkModel> {
    Ok(match name.parse::<Benchmark>()? {
        Benchmark::ScalarLg => BenchmarkModel::Linear(scalar_lg()),
        Benchmark::VectorLgD4k2 => BenchmarkModel::Linear(vector_lg_d4k2()),
        Benchmark::Contractive3dvar => {
            let (model, gain) = contractive_3dvar(0.1)?;
            BenchmarkModel::Nonlinear {
                model,
                gain: Some(gain),
            }
        }
        Benchmark::LogisticNl => BenchmarkModel::Nonlinear {
            model: logistic_nl(),
            gain: None,
        },
        Benchmark::OdeInverse => BenchmarkModel::Inverse(ode_inverse()?),
    })
}

fn scalar(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

fn spd_scalar(x: f64) -> SpdMatrix {
    SpdMatrix::new(scalar(x)).expect("positive constant")
}

pub fn scalar_lg() -> LinearModel {
    LinearModel::new(
        scalar(1.0),
        scalar(1.0),
        SpdMatrix::identity(1),
        SpdMatrix::identity(1),
        Gaussian::standard(1),
    )
    .expect("consistent constants")
}

pub fn vector_lg_d4k2() -> LinearModel {
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        0.9, 0.1, 0.0, 0.0,
        -0.1, 0.9, 0.0, 0.0,
        0.0, 0.0, 0.8, 0.2,
        0.0, 0.0, -0.2, 0.8,
    ]);
    #[rustfmt::skip]
    let h = DMatrix::from_row_slice(2, 4, &[
        1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    ]);
    LinearModel::new(
        m,
        h,
        SpdMatrix::scaled_identity(4, 0.1).expect("positive"),
        SpdMatrix::scaled_identity(2, 0.25).expect("positive"),
        Gaussian::standard(4),
    )
    .expect("consistent constants")
}

/// Fixed gain of `contractive-3dvar`; `|(1 − K)·0.9| = 0.45`.
pub const CONTRACTIVE_GAIN: f64 = 0.5;

/// `Ψ(v) = 0.9 sin v`, `H = 1`, `Σ = 0.01`, `Γ = γ²`, `C₀ = 1`, and the
/// 3DVAR gain `K = 0.5`.
pub fn contractive_3dvar(gamma: f64) -> Result<(NonlinearModel, DMatrix<f64>)> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("observation noise level {gamma} must be positive")));
    }
    let model = NonlinearModel::new(
        |v| v.map(|x| 0.9 * x.sin()),
        Observation::Linear(scalar(1.0)),
        spd_scalar(0.01),
        spd_scalar(gamma * gamma),
        Gaussian::standard(1),
    )?
    .with_jacobian(|v| scalar(0.9 * v[0].cos()));
    Ok((model, scalar(CONTRACTIVE_GAIN)))
}

pub fn logistic_nl() -> NonlinearModel {
    NonlinearModel::new(
        |v| v.map(|x| (3.7 * x * (1.0 - x)).clamp(0.0, 1.0)),
        Observation::Linear(scalar(1.0)),
        spd_scalar(1e-4),
        spd_scalar(0.01),
        Gaussian::scalar(0.3, 0.01).expect("positive"),
    )
    .expect("consistent constants")
    .with_jacobian(|v| {
        let x = v[0];
        let raw = 3.7 * x * (1.0 - x);
        let slope = if (0.0..=1.0).contains(&raw) { 3.7 * (1.0 - 2.0 * x) } else { 0.0 };
        scalar(slope)
    })
}

pub fn ode_inverse() -> Result<OdeInverseBenchmark> {
    let ode = OdeForwardModel::new(|x, u| u - x, 32, 2, 2)?;
    let fwd = ode.clone();
    let factor = 1.0 - (1.0 - 1.0 / ode.steps as f64).powi(ode.steps as i32);
    let problem = InverseProblem::new(
        move |u| euler_forward(&fwd, u, None).unwrap_or_else(|_| DVector::from_element(2, f64::NAN)),
        Prior::Gaussian(Gaussian::standard(2)),
        SpdMatrix::scaled_identity(2, 0.01)?,
    )
    .with_jacobian(move |_| DMatrix::identity(2, 2) * factor);
    Ok(OdeInverseBenchmark {
        ode,
        problem,
        truth: DVector::from_vec(vec![0.5, -1.0]),
    })
}

/// `|m_j − v†_j|` for estimates `m_1, m_2, …`.
pub fn trajectory_error(truth: &DMatrix<f64>, estimates: &[DVector<f64>]) -> Vec<f64> {
    estimates
        .iter()
        .enumerate()
        .map(|(j, m)| (m - row(truth, j + 1)).norm())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euler_examples() {
        let c = DVector::from_vec(vec![0.3, -2.0]);
        let cc = c.clone();
        let constant = OdeForwardModel::new(move |_, _| cc.clone(), 7, 2, 1).unwrap();
        let u = DVector::from_element(1, 0.0);
        for l in [1, 5, 64] {
            let x = euler_forward(&constant, &u, Some(l)).unwrap();
            assert!((x - &c).amax() < 1e-14);
        }
        let ident = OdeForwardModel::new(|_, u| u.clone(), 10, 2, 2).unwrap();
        let u = DVector::from_vec(vec![1.5, -0.5]);
        assert!((euler_forward(&ident, &u, None).unwrap() - &u).amax() < 1e-14);
        assert!(euler_forward(&ident, &u, Some(0)).is_err());
        assert!(OdeForwardModel::new(|_, u| u.clone(), 0, 1, 1).is_err());
    }

    #[test]
    fn clamped_rhs_respects_bound() {
        let fmax = 0.7;
        let ode = OdeForwardModel::new(move |x, u| (u - x * 3.0).map(|v| v.clamp(-fmax, fmax)), 16, 1, 1).unwrap();
        for i in 0..50 {
            let u = DVector::from_element(1, -20.0 + i as f64 * 0.8);
            assert!(euler_forward(&ode, &u, None).unwrap()[0].abs() <= fmax);
        }
    }

    #[test]
    fn simulate_examples() {
        let quiet = NonlinearModel::new(
            |v| v.clone(),
            Observation::Linear(DMatrix::identity(2, 2)),
            SpdMatrix::identity(2),
            SpdMatrix::scaled_identity(2, 1e-20).unwrap(),
            Gaussian::standard(2),
        )
        .unwrap();
        let run = simulate(&quiet, 6, 4, false).unwrap();
        assert!((run.truth.rows(1, 6) - &run.data).amax() < 1e-9);
        let still = simulate(&quiet, 6, 4, true).unwrap();
        for j in 1..=6 {
            assert_eq!(still.truth.row(j), still.truth.row(0));
        }
        assert_eq!(simulate(&quiet, 6, 4, true).unwrap(), still);
        assert!(simulate(&quiet, 0, 4, true).is_err());
    }

    #[test]
    fn benchmarks_construct() {
        for b in Benchmark::ALL {
            let m = make_benchmark(b.name()).unwrap();
            if let Some(ss) = m.state_space() {
                simulate(&ss, 3, 1, false).unwrap();
            }
        }
        match make_benchmark("nope") {
            Err(Error::UnknownBenchmark { valid, .. }) => assert!(valid.contains("scalar-lg")),
            other => panic!("unexpected {other:?}"),
        }
        let lm = scalar_lg();
        assert_eq!(lm.m[(0, 0)], 1.0);
        assert_eq!(lm.init.mean()[0], 0.0);
    }

    #[test]
    fn contractive_constant_on_grid() {
        let (model, k) = contractive_3dvar(0.1).unwrap();
        let h = model.h().unwrap()[(0, 0)];
        let worst = (0..=2000)
            .map(|i| -10.0 + i as f64 * 0.01)
            .map(|v| ((1.0 - k[(0, 0)] * h) * model.jacobian(&DVector::from_element(1, v)).unwrap()[(0, 0)]).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1.0);
    }

    #[test]
    fn initial_condition_jacobian_matches_differences() {
        let (model, _) = contractive_3dvar(0.1).unwrap();
        let p = initial_condition_problem(&model, 4).unwrap();
        let u = DVector::from_element(1, 0.4);
        let an = p.jacobian(&u).unwrap();
        let h = 1e-6;
        let fd = (p.forward(&(&u.add_scalar(h))) - p.forward(&u.add_scalar(-h))) / (2.0 * h);
        assert!((an.column(0) - fd).amax() < 1e-8);
    }
}
