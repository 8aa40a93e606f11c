//! Linear-algebra and probability primitives shared by every estimator.

pub mod gaussian;
pub mod rng;
pub mod spd;

use nalgebra::{DMatrix, DVector};

pub use gaussian::{gaussian_logpdf, sample_gaussian, Gaussian};
pub use rng::{Phase, RngStream, StreamId, Streams};
pub use spd::{spd_solve, symmetrize, weighted_sq_norm, SpdMatrix};

/// Row `i` of `m` as a column vector.
pub fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// Stacks vectors as the rows of a matrix.
pub fn stack_rows(rows: &[DVector<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, d, |i, j| rows[i][j])
}

/// Splits a matrix into its rows.
pub fn rows(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..m.nrows()).map(|i| row(m, i)).collect()
}

/// Column means of an `N × d` matrix.
pub fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_fn(m.ncols(), |j, _| m.column(j).iter().sum::<f64>() / n)
}

/// `1/N`-normalized covariance of the rows of `m`.
pub fn column_cov(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_mean(m);
    let n = m.nrows() as f64;
    let mut centered = m.clone();
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    symmetrize(&(centered.transpose() * &centered / n))
}
