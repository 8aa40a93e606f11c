use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::rng::RngStream;
use super::spd::SpdMatrix;
use crate::error::{Error, Result};

/// A multivariate normal distribution `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: SpdMatrix,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::dim("Gaussian mean vs covariance", cov.dim(), mean.len()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian mean".into()));
        }
        Ok(Self { mean, cov })
    }

    /// `N(mean, cov)` from a raw covariance matrix.
    pub fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(mean, SpdMatrix::new(cov)?)
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: SpdMatrix::identity(d),
        }
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), SpdMatrix::from_diagonal(&[var])?)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dim("Gaussian logpdf argument", self.dim(), x.len()));
        }
        let r = x - &self.mean;
        let q = self.cov.quad_form(&r)?;
        let d = self.dim() as f64;
        Ok(-0.5 * q - 0.5 * d * (2.0 * PI).ln() - 0.5 * self.cov.log_det())
    }

    /// One draw `m + L z`.
    pub fn draw(&self, rng: &mut RngStream) -> DVector<f64> {
        let z = rng.standard_normal_vec(self.dim());
        &self.mean + self.cov.color(&z)
    }

    /// `n` i.i.d. draws as the rows of an `n × d` matrix.
    pub fn sample(&self, rng: &mut RngStream, n: usize) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        for i in 0..n {
            let x = self.draw(rng);
            out.row_mut(i).copy_from(&x.transpose());
        }
        Ok(out)
    }
}

pub fn gaussian_logpdf(g: &Gaussian, x: &DVector<f64>) -> Result<f64> {
    g.logpdf(x)
}

pub fn sample_gaussian(g: &Gaussian, rng: &mut RngStream, n: usize) -> Result<DMatrix<f64>> {
    g.sample(rng, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::rng::Phase;
    use approx::assert_relative_eq;

    #[test]
    fn logpdf_examples() {
        let g = Gaussian::scalar(0.0, 1.0).unwrap();
        let x = DVector::from_element(1, 0.0);
        assert_relative_eq!(g.logpdf(&x).unwrap(), -0.5 * (2.0 * PI).ln(), epsilon = 1e-15);
        assert_relative_eq!(g.logpdf(&x).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);

        let g = Gaussian::scalar(0.0, 4.0).unwrap();
        let x = DVector::from_element(1, 2.0);
        assert_relative_eq!(
            g.logpdf(&x).unwrap(),
            -0.5 - 0.5 * (8.0 * PI).ln(),
            epsilon = 1e-14
        );

        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = DVector::from_vec(vec![1.0, -3.0]);
        let g = Gaussian::from_parts(m.clone(), c.clone()).unwrap();
        let expected = -(2.0 * PI).ln() - 0.5 * c.determinant().ln();
        assert_relative_eq!(g.logpdf(&m).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn logpdf_dimension_mismatch() {
        let g = Gaussian::standard(2);
        assert!(g.logpdf(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn logpdf_integrates_to_one() {
        // trapezoid over ±10σ
        let sigma = 1.7;
        let g = Gaussian::scalar(0.4, sigma * sigma).unwrap();
        let n = 200_001;
        let (lo, hi) = (0.4 - 10.0 * sigma, 0.4 + 10.0 * sigma);
        let h = (hi - lo) / (n - 1) as f64;
        let mut s = 0.0;
        for i in 0..n {
            let x = lo + h * i as f64;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            s += w * g.logpdf(&DVector::from_element(1, x)).unwrap().exp();
        }
        assert!((s * h - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampling_is_deterministic_and_requires_rows() {
        let g = Gaussian::from_parts(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
        )
        .unwrap();
        let a = g.sample(&mut RngStream::with(3, Phase::Init, 0, 0), 50).unwrap();
        let b = g.sample(&mut RngStream::with(3, Phase::Init, 0, 0), 50).unwrap();
        assert_eq!(a, b);
        assert!(g.sample(&mut RngStream::with(3, Phase::Init, 0, 0), 0).is_err());
    }
}
