mod common;

use assim::kalman::{kalman_smoother, linear_gaussian_posterior};
use assim::models::{contractive_3dvar, simulate};
use assim::variational::{
    constraint_violation, fd_gradient, gaussian_fit_klpq, gaussian_fit_klpq_with_gradient, gaussian_fit_moment_match,
    map_estimate, strong_4dvar_minimize, w4dvar_gradient, w4dvar_minimize, w4dvar_objective, DescentOptions,
    GaussFitOptions, InverseProblem, NonlinearModel, Observation,
};
use assim::{DMatrix, DVector, Gaussian, SpdMatrix};
use common::*;

fn flatten(v: &DMatrix<f64>) -> DVector<f64> {
    let d = v.ncols();
    DVector::from_fn(v.nrows() * d, |k, _| v[(k / d, k % d)])
}

fn unflatten(x: &DVector<f64>, rows: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, d, |j, i| x[j * d + i])
}

fn sine_model() -> NonlinearModel {
    NonlinearModel::new(
        |v: &DVector<f64>| DVector::from_vec(vec![0.9 * v[0].sin() + 0.2 * v[1], 0.5 * v[0] * v[1].cos()]),
        Observation::Linear(DMatrix::from_row_slice(1, 2, &[1.0, 0.3])),
        SpdMatrix::scaled_identity(2, 0.2).unwrap(),
        SpdMatrix::scaled_identity(1, 0.1).unwrap(),
        Gaussian::standard(2),
    )
    .unwrap()
    .with_jacobian(|v| {
        DMatrix::from_row_slice(2, 2, &[0.9 * v[0].cos(), 0.2, 0.5 * v[1].cos(), -0.5 * v[0] * v[1].sin()])
    })
}

#[test]
fn w4dvar_gradient_matches_differences() {
    let model = sine_model();
    let mut r = rng(20);
    let y = normal_matrix(&mut r, 4, 1);
    for _ in 0..10 {
        let v = normal_matrix(&mut r, 5, 2);
        let an = flatten(&w4dvar_gradient(&v, &model, &y).unwrap());
        let fd = fd_gradient(&|x: &DVector<f64>| w4dvar_objective(&unflatten(x, 5, 2), &model, &y).unwrap(), &flatten(&v));
        assert!((&an - &fd).norm() <= 1e-5 * an.norm().max(1.0));
    }
}

#[test]
fn w4dvar_paths_agree() {
    let with_jac = sine_model();
    let without = NonlinearModel::new(
        |v: &DVector<f64>| DVector::from_vec(vec![0.9 * v[0].sin() + 0.2 * v[1], 0.5 * v[0] * v[1].cos()]),
        with_jac.observation.clone(),
        with_jac.sigma.clone(),
        with_jac.gamma.clone(),
        with_jac.init.clone(),
    )
    .unwrap();
    let run = simulate(&with_jac, 4, 21, false).unwrap();
    let init = DMatrix::zeros(5, 2);
    let opts = DescentOptions { tol: 1e-7, max_iter: 20_000 };
    let a = w4dvar_minimize(&with_jac, &run.data, &init, &opts).unwrap();
    let b = w4dvar_minimize(&without, &run.data, &init, &opts).unwrap();
    assert!(a.objective <= w4dvar_objective(&init, &with_jac, &run.data).unwrap());
    assert!((a.trajectory - b.trajectory).amax() < 1e-5);
}

#[test]
fn w4dvar_on_linear_models_is_the_smoother() {
    let mut r = rng(22);
    for _ in 0..5 {
        let lm = random_linear_model(&mut r, 3, 2);
        let data = random_data(&mut r, 2, 6);
        let y = DMatrix::from_fn(6, 2, |j, i| data[j][i]);
        let ks = kalman_smoother(&lm, &data).unwrap();
        let res = w4dvar_minimize(&NonlinearModel::from(&lm), &y, &DMatrix::zeros(7, 3), &DescentOptions::default())
            .unwrap();
        assert!((res.trajectory - &ks.means).amax() < 1e-6);
    }
    assert!(w4dvar_minimize(
        &NonlinearModel::from(&random_linear_model(&mut r, 2, 1)),
        &DMatrix::zeros(0, 1),
        &DMatrix::zeros(1, 2),
        &DescentOptions::default()
    )
    .is_err());
}

#[test]
fn strong_4dvar_recovers_the_initial_state() {
    let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.3, -0.3, 0.9]);
    let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let lm = assim::LinearModel::new(
        m.clone(),
        h.clone(),
        SpdMatrix::identity(2),
        SpdMatrix::scaled_identity(1, 0.01).unwrap(),
        Gaussian::from_parts(DVector::zeros(2), DMatrix::identity(2, 2) * 1e8).unwrap(),
    )
    .unwrap();
    let model = NonlinearModel::from(&lm);
    let truth = DVector::from_vec(vec![0.7, -1.2]);
    let traj = assim::variational::roll_forward(&model, &truth, 8);
    let y = DMatrix::from_fn(8, 1, |j, _| (&h * traj.row(j + 1).transpose())[0]);
    let res = strong_4dvar_minimize(&model, &y, &DVector::zeros(2), &DescentOptions::default()).unwrap();
    assert!((res.v0 - truth).amax() < 1e-4);
}

#[test]
fn weak_constraint_approaches_the_hard_constraint() {
    let (base, _) = contractive_3dvar(0.1).unwrap();
    let run = simulate(&base, 10, 23, false).unwrap();
    let opts = DescentOptions { tol: 1e-10, max_iter: 50_000 };
    // the limit needs the model penalty 1/σ² to dominate the data weight 1/γ²
    let violations: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|s: &f64| {
            let model = base.clone().with_sigma(SpdMatrix::scaled_identity(1, s * s).unwrap()).unwrap();
            let res = w4dvar_minimize(&model, &run.data, &DMatrix::zeros(11, 1), &opts).unwrap();
            constraint_violation(&model, &res.trajectory)
        })
        .collect();
    for w in violations.windows(2) {
        assert!(w[0] / w[1] >= 2.0, "{violations:?}");
    }
}

#[test]
fn map_is_the_posterior_mean_for_linear_gaussian_problems() {
    let mut r = rng(24);
    for _ in 0..5 {
        let a = normal_matrix(&mut r, 3, 2);
        let prior = random_gaussian(&mut r, 2);
        let gamma = random_spd(&mut r, 3);
        let y = r.standard_normal_vec(3);
        let p = InverseProblem::linear(a.clone(), prior.clone(), gamma.clone()).unwrap();
        let map = map_estimate(&p, &y, &DVector::zeros(2), &DescentOptions::default()).unwrap();
        let post = linear_gaussian_posterior(&prior, &a, &gamma, &y).unwrap();
        assert!((map.u - post.mean()).amax() < 1e-6);
    }
}

#[test]
fn klpq_fit_is_exact_for_gaussian_targets() {
    // π ∝ exp(−½|y − Au|²_Γ) N(0, λ⁻¹I)
    let lambda = 0.5;
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.0, 1.5]);
    let gamma = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3])).unwrap();
    let y = DVector::from_vec(vec![0.8, -0.6]);
    let loss = |u: &DVector<f64>| 0.5 * gamma.quad_form(&(&y - &a * u)).unwrap();
    let grad = |u: &DVector<f64>| -(a.transpose() * gamma.solve_vec(&(&y - &a * u)).unwrap());
    let prior = Gaussian::from_parts(DVector::zeros(2), DMatrix::identity(2, 2) / lambda).unwrap();
    let exact = linear_gaussian_posterior(&prior, &a, &gamma, &y).unwrap();
    let opts = GaussFitOptions::new(2, 25);
    for fit in [
        gaussian_fit_klpq(&loss, lambda, &opts).unwrap(),
        gaussian_fit_klpq_with_gradient(&loss, &grad, lambda, &opts).unwrap(),
    ] {
        let g = fit.gaussian;
        assert!((g.mean() - exact.mean()).norm() <= 0.02 * exact.mean().norm());
        let rel = (g.cov().matrix() - exact.cov().matrix()).norm() / exact.cov().matrix().norm();
        assert!(rel <= 0.02, "relative covariance error {rel}");
    }
}

#[test]
fn klpq_fit_is_mode_seeking() {
    let lambda = 0.01;
    // log of ½N(−3, ¼) + ½N(3, ¼) up to a constant, kept finite in the tails
    let log_mix = |x: f64| {
        let a = -(x + 3.0).powi(2) / 0.5;
        let b = -(x - 3.0).powi(2) / 0.5;
        let top = a.max(b);
        top + ((a - top).exp() + (b - top).exp()).ln()
    };
    let loss = move |u: &DVector<f64>| -log_mix(u[0]) - 0.5 * lambda * u[0] * u[0];
    let fit = gaussian_fit_klpq(&loss, lambda, &GaussFitOptions::new(1, 26)).unwrap();
    let mean = fit.gaussian.mean()[0];
    let sd = fit.gaussian.cov().matrix()[(0, 0)].sqrt();
    assert!((mean.abs() - 3.0).abs() <= sd, "mean {mean} sd {sd}");
    assert!(mean.abs() > sd);
}

#[test]
fn moment_matching_recovers_gaussian_moments() {
    let g = Gaussian::from_parts(
        DVector::from_vec(vec![1.0, -2.0]),
        DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
    )
    .unwrap();
    let s = g.sample(&mut rng(27), 100_000).unwrap();
    let fit = gaussian_fit_moment_match(&s, None).unwrap();
    assert!((fit.mean() - g.mean()).norm() <= 0.05 * g.mean().norm());
    assert!((fit.cov().matrix() - g.cov().matrix()).norm() <= 0.05 * g.cov().matrix().norm());
}

#[test]
fn moment_matching_minimizes_cross_entropy() {
    // KL(π‖p) = −H(π) − Σ πᵢ log p(xᵢ); the entropy term does not depend on p
    let mut r = rng(28);
    let atoms = normal_matrix(&mut r, 5, 2) * 2.0;
    let w: Vec<f64> = (0..5).map(|_| 0.1 + r.uniform()).collect();
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|x| x / total).collect();
    let fit = gaussian_fit_moment_match(&atoms, Some(&w)).unwrap();
    let cross = |p: &Gaussian| -> f64 {
        (0..5).map(|i| -w[i] * p.logpdf(&atoms.row(i).transpose()).unwrap()).sum()
    };
    let best = cross(&fit);
    for _ in 0..100 {
        let dm = r.standard_normal_vec(2) * 0.3;
        let e = normal_matrix(&mut r, 2, 2) * 0.2;
        let c = fit.cov().matrix() + &e * e.transpose() - fit.cov().matrix() * 0.1 * r.uniform();
        let Ok(p) = Gaussian::from_parts(fit.mean() + dm, assim::base::symmetrize(&c)) else {
            continue;
        };
        assert!(best <= cross(&p) + 1e-12);
    }
}

#[test]
fn small_noise_limits() {
    // overdetermined: trace C scales like γ²
    let a = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.5, 1.5, 1.0, -1.0]);
    let prior = Gaussian::standard(2);
    let y = DVector::from_vec(vec![0.3, 1.0, -0.4]);
    let tr = |g2: f64| {
        linear_gaussian_posterior(&prior, &a, &SpdMatrix::scaled_identity(3, g2).unwrap(), &y)
            .unwrap()
            .cov()
            .trace()
    };
    let ratio = tr(1e-2) / tr(1e-4);
    assert!((90.0..=110.0).contains(&ratio), "{ratio}");

    // underdetermined: limit is Q₂(Q₂ᵀĈ⁻¹Q₂)⁻¹Q₂ᵀ
    let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]);
    let c_hat = SpdMatrix::new(DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, 0.3, 0.0, 0.3, 1.5])).unwrap();
    let prior = Gaussian::new(DVector::zeros(3), c_hat.clone()).unwrap();
    let ata: DMatrix<f64> = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let null: Vec<usize> = (0..3).filter(|&i| eig.eigenvalues[i].abs() < 1e-10).collect();
    assert_eq!(null.len(), 2);
    let q2 = DMatrix::from_fn(3, 2, |r, c| eig.eigenvectors[(r, null[c])]);
    let inner: DMatrix<f64> = q2.transpose() * c_hat.inverse() * &q2;
    let c_plus = &q2 * inner.try_inverse().unwrap() * q2.transpose();
    let post = linear_gaussian_posterior(
        &prior,
        &a,
        &SpdMatrix::scaled_identity(1, 1e-8).unwrap(),
        &DVector::from_element(1, 0.5),
    )
    .unwrap();
    assert!((post.cov().matrix() - &c_plus).amax() < 1e-6);
    let ev: DVector<f64> = post.cov().matrix().clone().symmetric_eigen().eigenvalues;
    assert_eq!(ev.iter().filter(|e: &&f64| **e < 1e-6).count(), 1);
    assert_eq!(ev.iter().filter(|e: &&f64| **e > 1e-2).count(), 2);
}
