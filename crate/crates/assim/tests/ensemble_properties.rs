mod common;

use assim::ensemble::{
    empirical_moments, enkf_analysis, enkf_analysis_subspace, exkf_filter, Ensemble,
};
use assim::kalman::{kalman_filter, kf_update_gain};
use assim::variational::NonlinearModel;
use assim::{DMatrix, DVector, Gaussian, Streams};
use common::*;

fn random_ensemble(r: &mut assim::RngStream, n: usize, d: usize) -> Ensemble {
    let shift = r.standard_normal_vec(d);
    let mut m = normal_matrix(r, n, d);
    for mut row in m.row_iter_mut() {
        row += shift.transpose();
    }
    Ensemble::new(m).unwrap()
}

/// Distance of `x − base` to the column space of `basis`. The basis is made
/// orthonormal by Gram-Schmidt applied twice; nalgebra's SVD is not reliable
/// on the rank-deficient anomaly matrices used here.
fn distance_to_span(basis: &DMatrix<f64>, base: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let scale = basis.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut q: Vec<DVector<f64>> = Vec::new();
    for c in basis.column_iter() {
        let mut v = c.into_owned();
        for _ in 0..2 {
            for e in &q {
                v -= e * e.dot(&v);
            }
        }
        let norm = v.norm();
        if norm > 1e-10 * scale {
            q.push(v / norm);
        }
    }
    let mut r = x - base;
    for _ in 0..2 {
        for e in &q {
            r -= e * e.dot(&r);
        }
    }
    r.norm()
}

#[test]
fn subspace_and_gain_forms_agree() {
    let mut r = rng(40);
    for &(n, d, k) in &[(3, 6, 2), (5, 5, 3), (20, 4, 2), (50, 3, 1)] {
        for trial in 0..5u64 {
            let ens = random_ensemble(&mut r, n, d);
            let h = normal_matrix(&mut r, k, d);
            let gamma = random_spd(&mut r, k);
            let y = r.standard_normal_vec(k);
            let streams = Streams::new(100 + trial);
            for s in [0u8, 1] {
                let a = enkf_analysis(&ens, &h, &gamma, &y, s, &streams, 1).unwrap();
                let b = enkf_analysis_subspace(&ens, &h, &gamma, &y, s, &streams, 1).unwrap();
                let gap = (a.members() - b.members()).amax();
                assert!(gap <= 1e-8, "N={n} d={d} s={s}: {gap}");
            }
        }
    }
}

#[test]
fn analysis_stays_in_the_prediction_span() {
    let mut r = rng(41);
    for &(n, d) in &[(3, 7), (4, 10), (6, 6)] {
        let ens = random_ensemble(&mut r, n, d);
        let h = normal_matrix(&mut r, 3, d);
        let gamma = random_spd(&mut r, 3);
        let y = r.standard_normal_vec(3);
        let mean = empirical_moments(&ens).mean;
        let basis = ens.anomalies().transpose();
        for analysis in [
            enkf_analysis(&ens, &h, &gamma, &y, 1, &Streams::new(7), 2).unwrap(),
            enkf_analysis_subspace(&ens, &h, &gamma, &y, 1, &Streams::new(7), 2).unwrap(),
        ] {
            for i in 0..n {
                let dist = distance_to_span(&basis, &mean, &analysis.member(i));
                assert!(dist <= 1e-8, "member {i}: {dist}");
            }
        }
    }
}

#[test]
fn unperturbed_analysis_maps_anomalies_linearly() {
    let mut r = rng(42);
    for _ in 0..10 {
        let ens = random_ensemble(&mut r, 8, 4);
        let h = normal_matrix(&mut r, 2, 4);
        let gamma = random_spd(&mut r, 2);
        let y = r.standard_normal_vec(2);
        let c_hat = empirical_moments(&ens).cov;
        let s = &h * &c_hat * h.transpose() + gamma.matrix();
        let k = &c_hat * h.transpose() * s.try_inverse().unwrap();
        let a = DMatrix::identity(4, 4) - &k * &h;
        let expected = &a * &c_hat * a.transpose();
        let out = enkf_analysis(&ens, &h, &gamma, &y, 0, &Streams::new(1), 1).unwrap();
        assert!((empirical_moments(&out).cov - expected).amax() <= 1e-8);
    }
}

#[test]
fn exkf_is_the_kalman_filter_for_linear_models() {
    let mut r = rng(43);
    for _ in 0..10 {
        let lm = random_linear_model(&mut r, 3, 2);
        let data = random_data(&mut r, 2, 6);
        let kf = kalman_filter(&lm, &data).unwrap();
        let ex = exkf_filter(&NonlinearModel::from(&lm), &data).unwrap();
        for (a, b) in kf.updated.iter().zip(&ex) {
            assert!((a.mean() - b.mean()).amax() <= 1e-12);
            assert!((a.cov().matrix() - b.cov().matrix()).amax() <= 1e-12);
        }
    }
}

fn analysis_problem() -> (Gaussian, DMatrix<f64>, assim::SpdMatrix, DVector<f64>) {
    let mut r = rng(44);
    let prior = Gaussian::new(DVector::from_vec(vec![1.0, -2.0, 0.5]), random_spd(&mut r, 3)).unwrap();
    let h = normal_matrix(&mut r, 2, 3);
    let gamma = random_spd(&mut r, 2);
    let y = DVector::from_vec(vec![0.4, -1.1]);
    (prior, h, gamma, y)
}

#[test]
fn large_ensembles_match_the_kalman_posterior() {
    let (prior, h, gamma, y) = analysis_problem();
    let exact = kf_update_gain(&prior, &h, &gamma, &y).unwrap().posterior;
    let streams = Streams::new(9);
    let ens = Ensemble::from_gaussian(&prior, 10_000, &streams).unwrap();
    let out = empirical_moments(&enkf_analysis(&ens, &h, &gamma, &y, 1, &streams, 1).unwrap());
    let mean_rel = (&out.mean - exact.mean()).norm() / exact.mean().norm();
    let cov_rel = (&out.cov - exact.cov().matrix()).norm() / exact.cov().matrix().norm();
    assert!(mean_rel <= 0.05, "mean {mean_rel}");
    assert!(cov_rel <= 0.05, "cov {cov_rel}");
}

#[test]
fn ensemble_mean_error_decays_like_inverse_root_n() {
    let (prior, h, gamma, y) = analysis_problem();
    let exact = kf_update_gain(&prior, &h, &gamma, &y).unwrap().posterior;
    let sizes = [100usize, 1_000, 10_000];
    let rms: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let mse: f64 = (0..20u64)
                .map(|seed| {
                    let streams = Streams::new(1000 + seed);
                    let ens = Ensemble::from_gaussian(&prior, n, &streams).unwrap();
                    let out = enkf_analysis(&ens, &h, &gamma, &y, 1, &streams, 1).unwrap();
                    (empirical_moments(&out).mean - exact.mean()).norm_squared()
                })
                .sum::<f64>()
                / 20.0;
            mse.sqrt()
        })
        .collect();
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = rms.iter().map(|e| e.ln()).collect();
    let slope = least_squares_slope(&xs, &ys);
    assert!((-0.7..=-0.3).contains(&slope), "slope {slope}, rms {rms:?}");
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}
