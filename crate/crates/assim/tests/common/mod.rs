#![allow(dead_code)]

use assim::base::symmetrize;
use assim::{DMatrix, DVector, Gaussian, LinearModel, Phase, RngStream, SpdMatrix};

pub fn rng(seed: u64) -> RngStream {
    RngStream::with(seed, Phase::Custom(77), 0, 0)
}

pub fn normal_matrix(rng: &mut RngStream, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.standard_normal())
}

/// `B Bᵀ / d + 0.5 I`, comfortably SPD.
pub fn random_spd(rng: &mut RngStream, d: usize) -> SpdMatrix {
    let b = normal_matrix(rng, d, d);
    let m = &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
    SpdMatrix::new(symmetrize(&m)).unwrap()
}

pub fn random_gaussian(rng: &mut RngStream, d: usize) -> Gaussian {
    Gaussian::new(rng.standard_normal_vec(d), random_spd(rng, d)).unwrap()
}

pub fn random_linear_model(rng: &mut RngStream, d: usize, k: usize) -> LinearModel {
    let m = normal_matrix(rng, d, d) * (0.8 / (d as f64).sqrt());
    let h = normal_matrix(rng, k, d);
    let sigma = random_spd(rng, d);
    let gamma = random_spd(rng, k);
    let init = random_gaussian(rng, d);
    LinearModel::new(m, h, sigma, gamma, init).unwrap()
}

pub fn random_data(rng: &mut RngStream, k: usize, steps: usize) -> Vec<DVector<f64>> {
    (0..steps).map(|_| rng.standard_normal_vec(k) * 2.0).collect()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}
