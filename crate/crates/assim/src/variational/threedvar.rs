use nalgebra::{DMatrix, DVector};

use crate::base::{symmetrize, SpdMatrix};
use crate::error::{Error, Result};

use super::NonlinearModel;

/// `S = HĈHᵀ + Γ` and `K = ĈHᵀS⁻¹`, computed once and reused.
pub fn gain_3dvar(c_hat: &SpdMatrix, h: &DMatrix<f64>, gamma: &SpdMatrix) -> Result<(DMatrix<f64>, SpdMatrix)> {
    if h.ncols() != c_hat.dim() {
        return Err(Error::dim("3DVAR observation matrix columns", c_hat.dim(), h.ncols()));
    }
    if gamma.dim() != h.nrows() {
        return Err(Error::dim("3DVAR observation noise", h.nrows(), gamma.dim()));
    }
    let hc = h * c_hat.matrix();
    let s = SpdMatrix::new(symmetrize(&(&hc * h.transpose() + gamma.matrix())))?;
    let k = s.solve(&hc)?.transpose();
    Ok((k, s))
}

/// `m_{j+1} = (I − KH)Ψ(m_j) + K y_{j+1}`.
pub fn step_3dvar(
    m: &DVector<f64>,
    y: &DVector<f64>,
    model: &NonlinearModel,
    k: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let h = model.h()?;
    if y.len() != h.nrows() {
        return Err(Error::dim("3DVAR observation", h.nrows(), y.len()));
    }
    let forecast = model.psi(m);
    Ok(&forecast + k * (y - h * &forecast))
}

/// Runs 3DVAR from `m0`; returns `m_1, …, m_J`.
pub fn run_3dvar(
    model: &NonlinearModel,
    data: &[DVector<f64>],
    k: &DMatrix<f64>,
    m0: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let mut m = m0.clone();
    let mut out = Vec::with_capacity(data.len());
    for y in data {
        m = step_3dvar(&m, y, model, k)?;
        out.push(m.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::Gaussian;
    use crate::variational::Observation;

    fn sm(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn gain_examples() {
        let (k, s) = gain_3dvar(&SpdMatrix::identity(1), &sm(1.0), &SpdMatrix::identity(1)).unwrap();
        assert_eq!(s.matrix()[(0, 0)], 2.0);
        assert!((k[(0, 0)] - 0.5).abs() < 1e-15);

        let (k, _) = gain_3dvar(&SpdMatrix::identity(2), &DMatrix::zeros(1, 2), &SpdMatrix::identity(1)).unwrap();
        assert_eq!(k, DMatrix::zeros(2, 1));

        let tiny = SpdMatrix::scaled_identity(2, 1e-10).unwrap();
        let (k, _) = gain_3dvar(&SpdMatrix::identity(2), &DMatrix::identity(2, 2), &tiny).unwrap();
        assert!((k - DMatrix::identity(2, 2)).amax() < 1e-6);
    }

    #[test]
    fn step_examples() {
        let model = NonlinearModel::new(
            |v| v * 0.5,
            Observation::Linear(sm(1.0)),
            SpdMatrix::identity(1),
            SpdMatrix::identity(1),
            Gaussian::standard(1),
        )
        .unwrap();
        let one = DVector::from_element(1, 1.0);
        assert_eq!(step_3dvar(&one, &one, &model, &sm(0.5)).unwrap()[0], 0.75);
        assert_eq!(step_3dvar(&one, &one, &model, &sm(0.0)).unwrap()[0], 0.5);
        let confirm = DVector::from_element(1, 0.5);
        assert_eq!(step_3dvar(&one, &confirm, &model, &sm(0.3)).unwrap()[0], 0.5);
    }
}
