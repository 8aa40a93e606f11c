//! Experiment orchestration: resolve the model, simulate or load data,
//! dispatch to an estimator and tabulate per-step summaries.

use std::path::Path;

use assim::base::{rows, row};
use assim::ensemble::{enkf_filter, exkf_filter, AnalysisForm};
use assim::inversion::{eki_run, smc_sample, EkiState, TemperingSchedule};
use assim::kalman::{kalman_filter, kalman_smoother};
use assim::mcmc::{mh_step, pcn_step, ProposalKernel, TargetDensity};
use assim::models::{initial_condition_problem, make_benchmark, simulate, stack_observations, BenchmarkModel};
use assim::particle::{particle_filter, ParticleMethod};
use assim::variational::{
    gain_3dvar, gaussian_fit_klpq, map_estimate, roll_forward, run_3dvar, strong_4dvar_minimize, w4dvar_minimize,
    DescentOptions, GaussFitOptions,
};
use assim::{DMatrix, DVector, Gaussian, InverseProblem, LinearModel, NonlinearModel, Phase, SpdMatrix, Streams};
use rayon::prelude::*;

use crate::config::{Analysis, ExperimentConfig, InlineLinear, Method};
use crate::data::read_table;
use crate::error::{CliError, Context};
use crate::report::Report;

/// Observations (`J × k`, row `j−1` is `y_j`) and, when known, the truth
/// (`(J+1) × d` for state-space models, `1 × d` for inverse problems).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: DMatrix<f64>,
    pub truth: Option<DMatrix<f64>>,
}

/// A resolved model together with its data.
#[derive(Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub model: BenchmarkModel,
    pub data: Dataset,
}

fn matrix(key: &str, rows_in: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let r = rows_in.len();
    let c = rows_in.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows_in.iter().any(|x| x.len() != c) {
        return Err(CliError::config(key, "matrix must be a nonempty list of equal-length rows"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows_in[i][j]))
}

fn inline_model(spec: &InlineLinear) -> Result<LinearModel, CliError> {
    let key = |k: &str| format!("model.linear.{k}");
    let m = matrix(&key("m"), &spec.m)?;
    let h = matrix(&key("h"), &spec.h)?;
    let sigma = SpdMatrix::new(matrix(&key("sigma"), &spec.sigma)?).context("model.linear.sigma")?;
    let gamma = SpdMatrix::new(matrix(&key("gamma"), &spec.gamma)?).context("model.linear.gamma")?;
    let cov0 = SpdMatrix::new(matrix(&key("cov0"), &spec.cov0)?).context("model.linear.cov0")?;
    let init = Gaussian::new(DVector::from_vec(spec.mean0.clone()), cov0).context("model.linear.mean0")?;
    LinearModel::new(m, h, sigma, gamma, init).context("model.linear")
}

pub fn resolve_model(cfg: &ExperimentConfig) -> Result<BenchmarkModel, CliError> {
    match (&cfg.model.benchmark, &cfg.model.linear) {
        (Some(name), _) => make_benchmark(name).context("model.benchmark"),
        (None, Some(spec)) => Ok(BenchmarkModel::Linear(inline_model(spec)?)),
        (None, None) => Err(CliError::config("model", "no model given")),
    }
}

/// Simulates data from the config's seed.
pub fn simulate_data(cfg: &ExperimentConfig, model: &BenchmarkModel) -> Result<Dataset, CliError> {
    match model {
        BenchmarkModel::Inverse(bench) => {
            let y = bench.synthetic_data(cfg.seed).context("simulate")?;
            Ok(Dataset {
                observations: DMatrix::from_row_slice(1, y.len(), y.as_slice()),
                truth: Some(DMatrix::from_row_slice(1, bench.truth.len(), bench.truth.as_slice())),
            })
        }
        _ => {
            let ss = model.state_space().expect("state-space benchmark");
            let run = simulate(&ss, cfg.j(), cfg.seed, cfg.params.noise_free.unwrap_or(false)).context("simulate")?;
            Ok(Dataset {
                observations: run.data,
                truth: Some(run.truth),
            })
        }
    }
}

fn load_data(cfg: &ExperimentConfig, obs_path: &str) -> Result<Dataset, CliError> {
    let (_, observations) = read_table(Path::new(obs_path), "y")?;
    let truth = match &cfg.data.truth {
        Some(p) => Some(read_table(Path::new(p), "v")?.1),
        None => None,
    };
    Ok(Dataset { observations, truth })
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    let model = resolve_model(cfg)?;
    let data = match &cfg.data.observations {
        Some(p) => load_data(cfg, p)?,
        None => simulate_data(cfg, &model)?,
    };
    let k = match &model {
        BenchmarkModel::Inverse(b) => b.problem.data_dim(),
        _ => model.state_space().expect("state space").obs_dim(),
    };
    if data.observations.ncols() != k {
        return Err(CliError::Data {
            path: cfg.data.observations.clone().unwrap_or_else(|| "<simulated>".into()),
            message: format!("observations have {} columns, model expects {k}", data.observations.ncols()),
        });
    }
    if data.observations.nrows() == 0 {
        return Err(CliError::Data {
            path: cfg.data.observations.clone().unwrap_or_default(),
            message: "no observations".into(),
        });
    }
    Ok(Prepared {
        config: cfg.clone(),
        model,
        data,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    run_prepared(&prepare(cfg)?, cfg.method, cfg.seed)
}

/// Runs `method` on prepared data with estimator randomness from `seed`.
pub fn run_prepared(p: &Prepared, method: Method, seed: u64) -> Result<Report, CliError> {
    let mut cfg = p.config.clone();
    cfg.method = method;
    cfg.seed = seed;
    cfg.validate()?;
    let streams = Streams::new(seed);
    if method.is_filter_or_smoother() {
        run_state_space(p, &cfg, &streams)
    } else {
        run_inverse(p, &cfg, &streams)
    }
}

struct Estimate {
    mean: DVector<f64>,
    cov_trace: Option<f64>,
    ess: Option<f64>,
}

impl Estimate {
    fn mean(mean: DVector<f64>) -> Self {
        Self {
            mean,
            cov_trace: None,
            ess: None,
        }
    }

    fn gaussian(g: &Gaussian) -> Self {
        Self {
            mean: g.mean().clone(),
            cov_trace: Some(g.cov().trace()),
            ess: None,
        }
    }
}

fn descent(cfg: &ExperimentConfig) -> DescentOptions {
    DescentOptions {
        tol: cfg.params.tol.unwrap_or(1e-8),
        max_iter: cfg.params.max_iter.unwrap_or(10_000),
    }
}

fn run_state_space(p: &Prepared, cfg: &ExperimentConfig, streams: &Streams) -> Result<Report, CliError> {
    let method = cfg.method;
    let ctx = method.name();
    let ss = p.model.state_space().ok_or_else(|| {
        CliError::config("model.benchmark", format!("method `{ctx}` needs a state-space model"))
    })?;
    let obs = rows(&p.data.observations);
    let linear = p.model.linear();
    if matches!(method, Method::Kf | Method::Ks) && linear.is_none() {
        return Err(CliError::config("model", format!("method `{ctx}` needs a linear-Gaussian model")));
    }
    let n = || cfg.params.n.expect("validated");
    let mut summary = Vec::new();

    // (first step, estimates)
    let (first, estimates): (u64, Vec<Estimate>) = match method {
        Method::Kf => {
            let trace = kalman_filter(linear.expect("checked"), &obs).context(ctx)?;
            (1, trace.updated.iter().map(Estimate::gaussian).collect())
        }
        Method::Ks => {
            let res = kalman_smoother(linear.expect("checked"), &obs).context(ctx)?;
            (0, rows(&res.means).into_iter().map(Estimate::mean).collect())
        }
        Method::ThreeDVar => {
            let gain = match &p.model {
                BenchmarkModel::Nonlinear { gain: Some(k), .. } => k.clone(),
                _ => gain_3dvar(ss.init.cov(), ss.h().context(ctx)?, &ss.gamma).context(ctx)?.0,
            };
            let est = run_3dvar(&ss, &obs, &gain, ss.init.mean()).context(ctx)?;
            (1, est.into_iter().map(Estimate::mean).collect())
        }
        Method::FourDVar => {
            let res = strong_4dvar_minimize(&ss, &p.data.observations, ss.init.mean(), &descent(cfg)).context(ctx)?;
            summary.extend([
                ("objective", res.objective),
                ("grad_norm", res.grad_norm),
                ("converged", f64::from(u8::from(res.converged))),
            ]);
            (0, rows(&res.trajectory).into_iter().map(Estimate::mean).collect())
        }
        Method::W4dVar => {
            let start = roll_forward(&ss, ss.init.mean(), obs.len());
            let res = w4dvar_minimize(&ss, &p.data.observations, &start, &descent(cfg)).context(ctx)?;
            summary.extend([
                ("objective", res.objective),
                ("grad_norm", res.grad_norm),
                ("converged", f64::from(u8::from(res.converged))),
            ]);
            (0, rows(&res.trajectory).into_iter().map(Estimate::mean).collect())
        }
        Method::Exkf => {
            let post = exkf_filter(&ss, &obs).context(ctx)?;
            (1, post.iter().map(Estimate::gaussian).collect())
        }
        Method::Enkf => {
            let form = match cfg.params.analysis.unwrap_or(Analysis::Gain) {
                Analysis::Gain => AnalysisForm::Gain,
                Analysis::Subspace => AnalysisForm::Subspace,
            };
            let s = cfg.params.s.unwrap_or(1);
            let (moments, _) = enkf_filter(&ss, &obs, n(), s, form, streams).context(ctx)?;
            let est = moments
                .into_iter()
                .map(|m| Estimate {
                    cov_trace: Some(m.cov.trace()),
                    mean: m.mean,
                    ess: None,
                })
                .collect();
            (1, est)
        }
        Method::Bpf | Method::Opf | Method::Gopf => {
            let pm = match method {
                Method::Bpf => ParticleMethod::Bootstrap,
                Method::Opf => ParticleMethod::Optimal,
                _ => ParticleMethod::GaussianizedOptimal,
            };
            let run = particle_filter(pm, &ss, &obs, n(), streams).context(ctx)?;
            let est = run
                .into_iter()
                .map(|s| Estimate {
                    mean: s.mean,
                    cov_trace: Some(s.cov_trace),
                    ess: Some(s.ess),
                })
                .collect();
            (1, est)
        }
        _ => unreachable!("inverse methods dispatched elsewhere"),
    };

    // oracles for the gap columns
    let kf_means = match (linear, first, method) {
        (Some(lm), 1, m) if m != Method::Kf => Some(kalman_filter(lm, &obs).context("kf oracle")?.means()),
        _ => None,
    };
    let ks_means = match (linear, first) {
        (Some(lm), 0) if method != Method::Ks => Some(rows(&kalman_smoother(lm, &obs).context("ks oracle")?.means)),
        _ => None,
    };
    let truth = p
        .data
        .truth
        .as_ref()
        .filter(|t| t.nrows() == obs.len() + 1 && t.ncols() == ss.state_dim());

    let d = ss.state_dim();
    let mut columns: Vec<String> = (1..=d).map(|i| format!("mean_{i}")).collect();
    let has_cov = estimates.iter().all(|e| e.cov_trace.is_some());
    let has_ess = estimates.iter().all(|e| e.ess.is_some());
    if has_cov {
        columns.push("cov_trace".into());
    }
    if has_ess {
        columns.push("ess".into());
    }
    if truth.is_some() {
        columns.push("err".into());
    }
    if kf_means.is_some() {
        columns.push("kf_gap".into());
    }
    if ks_means.is_some() {
        columns.push("ks_gap".into());
    }
    let mut report = Report::new(cfg.clone(), "step", columns);
    let (mut err_sum, mut gap_sum) = (0.0, 0.0);
    for (i, e) in estimates.iter().enumerate() {
        let step = first + i as u64;
        let mut values: Vec<f64> = e.mean.iter().copied().collect();
        if has_cov {
            values.push(e.cov_trace.expect("checked"));
        }
        if has_ess {
            values.push(e.ess.expect("checked"));
        }
        if let Some(t) = truth {
            let err = (&e.mean - row(t, step as usize)).norm();
            err_sum += err;
            values.push(err);
        }
        if let Some(kf) = &kf_means {
            let gap = (&e.mean - &kf[i]).norm();
            gap_sum += gap;
            values.push(gap);
        }
        if let Some(ks) = &ks_means {
            let gap = (&e.mean - &ks[i]).norm();
            gap_sum += gap;
            values.push(gap);
        }
        report.push(step, values);
    }
    let count = estimates.len() as f64;
    if let Some(last) = estimates.last() {
        for (i, v) in last.mean.iter().enumerate() {
            report.summary.insert(format!("final_mean_{}", i + 1), *v);
        }
    }
    if truth.is_some() {
        report.summary.insert("mean_err".into(), err_sum / count);
    }
    if kf_means.is_some() {
        report.summary.insert("mean_kf_gap".into(), gap_sum / count);
    }
    if ks_means.is_some() {
        report.summary.insert("mean_ks_gap".into(), gap_sum / count);
    }
    if has_ess {
        let mean_ess = estimates.iter().map(|e| e.ess.expect("checked")).sum::<f64>() / count;
        report.summary.insert("mean_ess".into(), mean_ess);
    }
    for (k, v) in summary {
        report.summary.insert(k.into(), v);
    }
    Ok(report)
}

struct InverseSetup {
    problem: InverseProblem,
    y: DVector<f64>,
    truth: Option<DVector<f64>>,
    start: DVector<f64>,
}

fn inverse_setup(p: &Prepared, method: Method) -> Result<InverseSetup, CliError> {
    let (problem, y, truth) = match &p.model {
        BenchmarkModel::Inverse(bench) => {
            if p.data.observations.nrows() != 1 {
                return Err(CliError::Data {
                    path: p.config.data.observations.clone().unwrap_or_default(),
                    message: format!("inverse problem expects one observation row, got {}", p.data.observations.nrows()),
                });
            }
            let truth = p.data.truth.as_ref().filter(|t| t.nrows() == 1).map(|t| row(t, 0));
            (bench.problem.clone(), row(&p.data.observations, 0), truth)
        }
        _ => {
            let ss: NonlinearModel = p.model.state_space().expect("state space");
            let j = p.data.observations.nrows();
            let problem = initial_condition_problem(&ss, j).context(method.name())?;
            let truth = p.data.truth.as_ref().filter(|t| t.nrows() == j + 1).map(|t| row(t, 0));
            (problem, stack_observations(&p.data.observations), truth)
        }
    };
    let start = match problem.gaussian_prior() {
        Ok(g) => g.mean().clone(),
        Err(_) => DVector::zeros(problem.param_dim()),
    };
    Ok(InverseSetup {
        problem,
        y,
        truth,
        start,
    })
}

fn mean_columns(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

fn put_estimate(report: &mut Report, prefix: &str, est: &DVector<f64>, truth: Option<&DVector<f64>>) {
    for (i, v) in est.iter().enumerate() {
        report.summary.insert(format!("{prefix}_{}", i + 1), *v);
    }
    if let Some(t) = truth {
        report.summary.insert("err".into(), (est - t).norm());
    }
}

/// Chain rows: one per segment, holding the segment mean and acceptance.
fn chain_report(
    cfg: &ExperimentConfig,
    setup: &InverseSetup,
    mut step: impl FnMut(&DVector<f64>) -> assim::Result<(DVector<f64>, bool)>,
) -> Result<Report, CliError> {
    let ctx = cfg.method.name();
    let d = setup.problem.param_dim();
    let steps = cfg.params.steps.expect("validated");
    let segment = cfg.params.segment.unwrap_or(100);
    let burn_in = cfg.params.burn_in.unwrap_or(0);
    let mut columns = mean_columns("mean", d);
    columns.push("acceptance".into());
    let mut report = Report::new(cfg.clone(), "step", columns);

    let mut state = setup.start.clone();
    let (mut seg_sum, mut seg_acc, mut seg_len) = (DVector::zeros(d), 0usize, 0usize);
    let (mut post_sum, mut post_len, mut accepted) = (DVector::zeros(d), 0usize, 0usize);
    for i in 1..=steps {
        let (next, acc) = step(&state).context(ctx)?;
        state = next;
        accepted += usize::from(acc);
        seg_acc += usize::from(acc);
        seg_sum += &state;
        seg_len += 1;
        if i > burn_in {
            post_sum += &state;
            post_len += 1;
        }
        if seg_len == segment || i == steps {
            let mut values: Vec<f64> = (&seg_sum / seg_len as f64).iter().copied().collect();
            values.push(seg_acc as f64 / seg_len as f64);
            report.push(i as u64, values);
            seg_sum.fill(0.0);
            seg_acc = 0;
            seg_len = 0;
        }
    }
    report.summary.insert("acceptance".into(), accepted as f64 / steps as f64);
    if post_len > 0 {
        put_estimate(&mut report, "mean", &(post_sum / post_len as f64), setup.truth.as_ref());
    }
    Ok(report)
}

fn run_inverse(p: &Prepared, cfg: &ExperimentConfig, streams: &Streams) -> Result<Report, CliError> {
    let method = cfg.method;
    let ctx = method.name();
    let setup = inverse_setup(p, method)?;
    let problem = &setup.problem;
    let y = &setup.y;
    let d = problem.param_dim();
    match method {
        Method::Mh => {
            let (pr, yy) = (problem.clone(), y.clone());
            let target = TargetDensity::new(move |u| -pr.objective(u, &yy).unwrap_or(f64::NAN));
            let h = cfg.params.step_size.unwrap_or(0.5);
            let proposal = ProposalKernel::random_walk(SpdMatrix::scaled_identity(d, h * h).context(ctx)?);
            let mut rng = streams.stream(Phase::Proposal, 0, 0);
            chain_report(cfg, &setup, |u| mh_step(u, &target, &proposal, &mut rng))
        }
        Method::Pcn => {
            let prior = problem.gaussian_prior().context(ctx)?.clone();
            let beta = cfg.params.beta.expect("validated");
            let m0 = prior.mean().clone();
            let log_g = |w: &DVector<f64>| -problem.misfit(&(w + &m0), y).unwrap_or(f64::NAN);
            let everywhere = |_: &DVector<f64>| true;
            let mut rng = streams.stream(Phase::Proposal, 0, 0);
            chain_report(cfg, &setup, |u| {
                let (w, acc) = pcn_step(&(u - &m0), prior.cov(), beta, &log_g, &everywhere, &mut rng)?;
                Ok((w + &m0, acc))
            })
        }
        Method::Eki => {
            let prior = problem.gaussian_prior().context(ctx)?;
            let n = cfg.params.n.expect("validated");
            let mut init = DMatrix::zeros(n, d);
            for i in 0..n {
                init.row_mut(i).copy_from(&prior.draw(&mut streams.stream(Phase::Init, 0, i as u64)).transpose());
            }
            let g = |u: &DVector<f64>| problem.forward(u);
            let traj = eki_run(
                &EkiState::new(init).context(ctx)?,
                &g,
                &problem.noise_cov,
                y,
                cfg.params.steps.expect("validated"),
                cfg.params.perturb.unwrap_or(false),
                streams,
            )
            .context(ctx)?;
            let mut columns = mean_columns("mean", d);
            columns.extend(["mean_loss", "mean_residual", "spread"].map(String::from));
            if setup.truth.is_some() {
                columns.push("err".into());
            }
            let mut report = Report::new(cfg.clone(), "step", columns);
            for (j, (state, mis)) in traj.states.iter().skip(1).zip(&traj.misfits).enumerate() {
                let mean = state.mean();
                let mut values: Vec<f64> = mean.iter().copied().collect();
                values.extend([mis.mean_loss, mis.mean_residual, mis.spread]);
                if let Some(t) = &setup.truth {
                    values.push((&mean - t).norm());
                }
                report.push(j as u64 + 1, values);
            }
            let last = traj.states.last().expect("nonempty").mean();
            put_estimate(&mut report, "mean", &last, setup.truth.as_ref());
            Ok(report)
        }
        Method::Smc => {
            let schedule = TemperingSchedule::new(cfg.j()).context(ctx)?;
            let res = smc_sample(
                problem,
                y,
                &schedule,
                cfg.params.n.expect("validated"),
                cfg.params.mutation_steps.unwrap_or(5),
                cfg.params.beta.expect("validated"),
                streams,
            )
            .context(ctx)?;
            let mut report = Report::new(cfg.clone(), "step", vec!["ess".into(), "acceptance".into()]);
            for (j, (ess, acc)) in res.ess.iter().zip(&res.acceptance).enumerate() {
                report.push(j as u64 + 1, vec![*ess, *acc]);
            }
            put_estimate(&mut report, "mean", &res.last_weighted.mean(), setup.truth.as_ref());
            report.summary.insert("cov_trace".into(), res.last_weighted.covariance().trace());
            Ok(report)
        }
        Method::Map => {
            let res = map_estimate(problem, y, &setup.start, &descent(cfg)).context(ctx)?;
            let mut columns = mean_columns("u", d);
            columns.extend(["objective", "grad_norm", "converged"].map(String::from));
            let mut report = Report::new(cfg.clone(), "step", columns);
            let mut values: Vec<f64> = res.u.iter().copied().collect();
            values.extend([res.objective, res.grad_norm, f64::from(u8::from(res.converged))]);
            report.push(1, values);
            put_estimate(&mut report, "u", &res.u, setup.truth.as_ref());
            Ok(report)
        }
        Method::GaussFit => {
            // exp(−loss) N(0, λ⁻¹I) is the posterior whatever λ is
            let lambda = cfg.params.lambda.unwrap_or(1.0);
            let loss = |u: &DVector<f64>| {
                problem.misfit(u, y).unwrap_or(f64::NAN) + problem.prior.regularizer(u) - 0.5 * lambda * u.norm_squared()
            };
            let mut opts = GaussFitOptions::new(d, cfg.seed);
            opts.descent.tol = cfg.params.tol.unwrap_or(opts.descent.tol);
            let fit = gaussian_fit_klpq(&loss, lambda, &opts).context(ctx)?;
            let mut columns = mean_columns("mean", d);
            columns.extend(["cov_trace", "objective"].map(String::from));
            let mut report = Report::new(cfg.clone(), "step", columns);
            let mut values: Vec<f64> = fit.gaussian.mean().iter().copied().collect();
            values.extend([fit.gaussian.cov().trace(), fit.objective]);
            report.push(1, values);
            put_estimate(&mut report, "mean", fit.gaussian.mean(), setup.truth.as_ref());
            Ok(report)
        }
        _ => unreachable!("state-space methods dispatched elsewhere"),
    }
}

/// Runs several state-space methods on shared data and tabulates their
/// truth errors and Kalman gaps per step.
pub fn compare(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Report, CliError> {
    if methods.len() < 2 {
        return Err(CliError::Usage("compare needs at least two methods".into()));
    }
    if let Some(m) = methods.iter().find(|m| !m.is_filter_or_smoother()) {
        return Err(CliError::Usage(format!("compare supports filters and smoothers only, got `{m}`")));
    }
    let p = prepare(cfg)?;
    let reports = methods
        .iter()
        .map(|&m| run_prepared(&p, m, cfg.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let steps = p.data.observations.nrows() as u64;
    let mut columns = Vec::new();
    let mut series = Vec::new();
    for (m, r) in methods.iter().zip(&reports) {
        for col in ["err", "kf_gap"] {
            if let Some(values) = r.column(col) {
                let keys = r.column("step").expect("key column");
                let by_step: Vec<f64> = (1..=steps)
                    .map(|s| keys.iter().position(|k| *k as u64 == s).map_or(f64::NAN, |i| values[i]))
                    .collect();
                columns.push(format!("{m}_{col}"));
                series.push(by_step);
            }
        }
    }
    let mut report = Report::new(cfg.clone(), "step", columns.clone());
    for s in 0..steps as usize {
        report.push(s as u64 + 1, series.iter().map(|v| v[s]).collect());
    }
    for (name, v) in columns.iter().zip(&series) {
        let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
        if !finite.is_empty() {
            report.summary.insert(format!("mean_{name}"), finite.iter().sum::<f64>() / finite.len() as f64);
        }
    }
    Ok(report)
}

/// Rate study: for each ensemble size, the root mean square over seeds of
/// the per-run RMS gap to the Kalman filter (or to the truth when the model
/// is nonlinear), with a log-log slope fit over `ns`.
pub fn bench(cfg: &ExperimentConfig, ns: &[usize], seeds: u64, threads: usize) -> Result<Report, CliError> {
    if !matches!(cfg.method, Method::Enkf | Method::Bpf | Method::Opf | Method::Gopf) {
        return Err(CliError::Usage(format!("bench supports enkf, bpf, opf and gopf, got `{}`", cfg.method)));
    }
    if ns.is_empty() || seeds == 0 {
        return Err(CliError::Usage("bench needs at least one N and one seed".into()));
    }
    let p = prepare(cfg)?;
    let column = if p.model.linear().is_some() { "kf_gap" } else { "err" };
    let cells: Vec<(usize, u64)> = ns.iter().flat_map(|&n| (0..seeds).map(move |r| (n, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let metrics: Vec<Result<f64, CliError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(n, r)| {
                let mut cell = p.clone();
                cell.config.params.n = Some(n);
                let report = run_prepared(&cell, cfg.method, cfg.seed.wrapping_add(r + 1))?;
                let gaps = report
                    .column(column)
                    .ok_or_else(|| CliError::Usage(format!("bench needs a `{column}` column")))?;
                Ok((gaps.iter().map(|g| g * g).sum::<f64>() / gaps.len() as f64).sqrt())
            })
            .collect()
    });
    let metrics = metrics.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut report = Report::new(cfg.clone(), "N", vec![format!("rms_{column}"), "se".into()]);
    let mut logs = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        let cell = &metrics[i * seeds as usize..(i + 1) * seeds as usize];
        let rms = (cell.iter().map(|m| m * m).sum::<f64>() / cell.len() as f64).sqrt();
        let mean = cell.iter().sum::<f64>() / cell.len() as f64;
        let se = if cell.len() > 1 {
            (cell.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (cell.len() - 1) as f64 / cell.len() as f64).sqrt()
        } else {
            f64::NAN
        };
        report.push(n as u64, vec![rms, se]);
        logs.push(((n as f64).ln(), rms.ln()));
    }
    if logs.len() >= 2 {
        report.summary.insert("slope".into(), slope(&logs));
    }
    report.summary.insert("seeds".into(), seeds as f64);
    Ok(report)
}

/// Least-squares slope of `y` on `x`.
pub fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    num / den
}
