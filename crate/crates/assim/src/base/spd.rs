//! Symmetric positive-definite matrices backed by a Cholesky factor.
//!
//! Every solve in the crate goes through [`SpdMatrix`]; explicit inverses are
//! only formed where a block of an inverse is itself the quantity of interest.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated before symmetrization.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest accepted pivot relative to the largest diagonal entry.
pub const PIVOT_TOL: f64 = 1e-12;

/// A symmetric positive-definite matrix together with its Cholesky factor.
#[derive(Clone)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl std::fmt::Debug for SpdMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdMatrix").field("mat", &self.mat).finish()
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.mat == other.mat
    }
}

impl SpdMatrix {
    /// Validates, symmetrizes and factors `mat`.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        let n = mat.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("SPD matrix must be non-empty".into()));
        }
        if mat.ncols() != n {
            return Err(Error::dim("SPD matrix (square)", n, mat.ncols()));
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SPD matrix has non-finite entries".into()));
        }
        let scale = mat.amax();
        let mut asym = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                asym = asym.max((mat[(i, j)] - mat[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSpd(format!(
                "asymmetry {asym:e} exceeds {SYMMETRY_TOL:e} relative to {scale:e}"
            )));
        }
        let mat = symmetrize(&mat);
        let max_diag = mat.diagonal().max();
        if max_diag <= 0.0 {
            return Err(Error::NotSpd("non-positive diagonal".into()));
        }
        let chol = mat
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotSpd("Cholesky factorization failed".into()))?;
        let l = chol.l_dirty();
        for i in 0..n {
            let pivot = l[(i, i)] * l[(i, i)];
            if !(pivot >= PIVOT_TOL * max_diag) {
                return Err(Error::NotSpd(format!(
                    "pivot {i} is {pivot:e}, below {PIVOT_TOL:e} x largest diagonal {max_diag:e}"
                )));
            }
        }
        Ok(Self { mat, chol })
    }

    pub fn identity(d: usize) -> Self {
        Self::scaled_identity(d, 1.0).expect("identity is SPD")
    }

    pub fn scaled_identity(d: usize, s: f64) -> Result<Self> {
        Self::new(DMatrix::identity(d, d) * s)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    /// Lower-triangular `L` with `L Lᵀ = A`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.dim() {
            return Err(Error::dim("SPD solve (rhs length)", self.dim(), b.len()));
        }
        Ok(self.chol.solve(b))
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.dim() {
            return Err(Error::dim("SPD solve (rhs rows)", self.dim(), b.nrows()));
        }
        Ok(self.chol.solve(b))
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace()
    }

    /// `vᵀ A⁻¹ v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> Result<f64> {
        let x = self.solve_vec(v)?;
        Ok(v.dot(&x).max(0.0))
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        Self::new(&self.mat * s)
    }

    /// `L z`, mapping a standard normal draw to `N(0, A)`.
    pub fn color(&self, z: &DVector<f64>) -> DVector<f64> {
        self.chol.l_dirty().lower_triangle() * z
    }
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// The weighted squared norm `|v|²_A = vᵀ A⁻¹ v`.
pub fn weighted_sq_norm(a: &SpdMatrix, v: &DVector<f64>) -> Result<f64> {
    a.quad_form(v)
}

/// Solves `A X = B` through the Cholesky factor of `A`.
pub fn spd_solve(a: &SpdMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.solve(b)
}
