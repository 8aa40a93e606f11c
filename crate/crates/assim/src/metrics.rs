//! Distances and divergences between probability densities.
//!
//! Discrete distributions are compared by exact sums, one-dimensional grid
//! densities by the trapezoid rule on a shared uniform grid.

use nalgebra::DVector;

use crate::base::{Gaussian, Phase, RngStream};
use crate::error::{Error, Result};

/// Minimum number of points in a [`GridDensity1D`].
pub const MIN_GRID_POINTS: usize = 2048;
/// Below this, `q` counts as zero in KL and chi-square.
pub const SUPPORT_Q_FLOOR: f64 = 1e-300;
/// Above this, `p` counts as carrying mass.
pub const SUPPORT_P_FLOOR: f64 = 1e-12;
/// Sign dictionaries are exhaustive up to this many atoms.
pub const MAX_EXHAUSTIVE_ATOMS: usize = 12;
pub const RANDOM_DICTIONARY_SIZE: usize = 256;

/// A probability vector on a finite state space.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    /// Entries must be nonnegative and sum to one within `1e-12`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative masses.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0 && total.is_finite()) || masses.iter().any(|m| *m < 0.0) {
            return Err(Error::InvalidArgument(
                "masses must be nonnegative with positive finite total".into(),
            ));
        }
        Self::new(masses.iter().map(|m| m / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn point_mass(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return Err(Error::InvalidArgument(format!("atom {at} outside 0..{n}")));
        }
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `E f` for `f` given by its values on the atoms.
    pub fn expect(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.len() {
            return Err(Error::dim("test function on atoms", self.len(), f.len()));
        }
        Ok(self.probs.iter().zip(f).map(|(p, v)| p * v).sum())
    }
}

/// A density on `[lo, hi]` sampled on a uniform grid, normalized to unit
/// trapezoid mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity1D {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

impl GridDensity1D {
    pub fn new(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid interval [{lo}, {hi}]")));
        }
        if values.len() < MIN_GRID_POINTS {
            return Err(Error::InvalidArgument(format!(
                "grid has {} points, need at least {MIN_GRID_POINTS}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "density values must be finite and nonnegative".into(),
            ));
        }
        let mut g = Self { lo, hi, values };
        let mass = g.trapezoid(|i| g.values[i]);
        if !(mass > 0.0) {
            return Err(Error::Degenerate("density has zero mass".into()));
        }
        g.values.iter_mut().for_each(|v| *v /= mass);
        Ok(g)
    }

    /// Samples `f` at `n` equally spaced points of `[lo, hi]`.
    pub fn from_fn(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("grid needs at least two points".into()));
        }
        let h = (hi - lo) / (n - 1) as f64;
        Self::new(lo, hi, (0..n).map(|i| f(lo + h * i as f64)).collect())
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.values.len() - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.values.len()).map(|i| self.lo + h * i as f64).collect()
    }

    fn trapezoid(&self, f: impl Fn(usize) -> f64) -> f64 {
        let n = self.values.len();
        let inner: f64 = (1..n - 1).map(&f).sum();
        (inner + 0.5 * (f(0) + f(n - 1))) * self.spacing()
    }

    /// `∫ f p` by the trapezoid rule, `f` given on the grid.
    pub fn expect(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.values.len() {
            return Err(Error::dim("test function on grid", self.values.len(), f.len()));
        }
        Ok(self.trapezoid(|i| f[i] * self.values[i]))
    }
}

/// A pair of densities that can be integrated against each other.
pub trait Density: Sized {
    /// Integral of `f(p(x), q(x))` over the shared support.
    fn integrate_pair(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<f64>;
}

impl Density for DiscreteDist {
    fn integrate_pair(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::dim("discrete supports", self.len(), other.len()));
        }
        Ok(self.probs.iter().zip(&other.probs).map(|(&p, &q)| f(p, q)).sum())
    }
}

impl Density for GridDensity1D {
    fn integrate_pair(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
        if self.values.len() != other.values.len() || self.lo != other.lo || self.hi != other.hi {
            return Err(Error::InvalidArgument("grid densities on mismatched grids".into()));
        }
        Ok(self.trapezoid(|i| f(self.values[i], other.values[i])))
    }
}

/// `½ ∫ |p − q|`.
pub fn tv_distance<D: Density>(p: &D, q: &D) -> Result<f64> {
    let v = 0.5 * p.integrate_pair(q, |a, b| (a - b).abs())?;
    Ok(v.clamp(0.0, 1.0))
}

/// `(½ ∫ (√p − √q)²)^{1/2}`.
pub fn hellinger_distance<D: Density>(p: &D, q: &D) -> Result<f64> {
    let v = 0.5 * p.integrate_pair(q, |a, b| (a.sqrt() - b.sqrt()).powi(2))?;
    Ok(v.clamp(0.0, 1.0).sqrt())
}

fn check_support<D: Density>(p: &D, q: &D, what: &str) -> Result<()> {
    let violations = p.integrate_pair(q, |a, b| {
        if b < SUPPORT_Q_FLOOR && a > SUPPORT_P_FLOOR {
            1.0
        } else {
            0.0
        }
    })?;
    if violations > 0.0 {
        return Err(Error::SupportViolation(format!(
            "{what}: q vanishes where p has mass"
        )));
    }
    Ok(())
}

/// `∫ p log(p / q)`.
pub fn kl_divergence<D: Density>(p: &D, q: &D) -> Result<f64> {
    check_support(p, q, "KL divergence")?;
    let v = p.integrate_pair(q, |a, b| {
        if a <= 0.0 || b < SUPPORT_Q_FLOOR {
            0.0
        } else {
            a * (a / b).ln()
        }
    })?;
    Ok(v.max(0.0))
}

/// `∫ (p/q − 1)² q`.
pub fn chi2_divergence<D: Density>(p: &D, q: &D) -> Result<f64> {
    check_support(p, q, "chi-square divergence")?;
    let v = p.integrate_pair(q, |a, b| {
        if b < SUPPORT_Q_FLOOR {
            0.0
        } else {
            (a - b).powi(2) / b
        }
    })?;
    Ok(v.max(0.0))
}

/// Closed-form `KL(p ‖ q)` between Gaussians.
pub fn kl_gaussian(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::dim("kl_gaussian", p.dim(), q.dim()));
    }
    let d = p.dim() as f64;
    let trace = q.cov().solve(p.cov().matrix())?.trace();
    let dm = q.mean() - p.mean();
    let maha = q.cov().quad_form(&dm)?;
    let v = 0.5 * (trace + maha - d + q.cov().log_det() - p.cov().log_det());
    Ok(v.max(0.0))
}

/// All `2^n` sign vectors for small `n`, else [`RANDOM_DICTIONARY_SIZE`]
/// seeded random sign vectors.
pub fn sign_dictionary(atoms: usize, seed: u64) -> Vec<Vec<f64>> {
    if atoms <= MAX_EXHAUSTIVE_ATOMS {
        (0..(1u64 << atoms))
            .map(|mask| {
                (0..atoms)
                    .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect()
    } else {
        let mut rng = RngStream::with(seed, Phase::Dictionary, 0, 0);
        (0..RANDOM_DICTIONARY_SIZE)
            .map(|_| {
                (0..atoms)
                    .map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
                    .collect()
            })
            .collect()
    }
}

/// Dictionary estimate of the random-measure metric
/// `sup_f (E[(π(f) − π′(f))²])^{1/2}` over `|f| ≤ 1`.
///
/// Replicate `r` of `reps_p` is paired with replicate `r` of `reps_q`; the
/// expectation is the replicate average. The supremum is taken over
/// `dictionary` only, so the result is a lower bound of the true metric.
/// With one deterministic replicate and the full sign dictionary it equals
/// `2 d_TV` exactly.
pub fn random_measure_distance(
    reps_p: &[DiscreteDist],
    reps_q: &[DiscreteDist],
    dictionary: &[Vec<f64>],
) -> Result<f64> {
    if dictionary.is_empty() {
        return Err(Error::InvalidArgument("empty test-function dictionary".into()));
    }
    if reps_p.is_empty() || reps_p.len() != reps_q.len() {
        return Err(Error::dim("replicate lists", reps_p.len(), reps_q.len()));
    }
    let atoms = reps_p[0].len();
    for f in dictionary {
        if f.len() != atoms {
            return Err(Error::dim("dictionary function", atoms, f.len()));
        }
        if f.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(Error::InvalidArgument("dictionary functions must satisfy |f| <= 1".into()));
        }
    }
    let mut best = 0.0f64;
    for f in dictionary {
        let mut ms = 0.0;
        for (p, q) in reps_p.iter().zip(reps_q) {
            let gap = p.expect(f)? - q.expect(f)?;
            ms += gap * gap;
        }
        best = best.max((ms / reps_p.len() as f64).sqrt());
    }
    Ok(best)
}

/// `E^p f − E^q f` for `f` given on the atoms or grid.
pub fn expectation_gap(p: &DiscreteDist, q: &DiscreteDist, f: &DVector<f64>) -> Result<f64> {
    Ok(p.expect(f.as_slice())? - q.expect(f.as_slice())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn d(v: &[f64]) -> DiscreteDist {
        DiscreteDist::new(v.to_vec()).unwrap()
    }

    fn normal_grid(mu: f64) -> GridDensity1D {
        GridDensity1D::from_fn(-12.0, 13.0, 8193, |x| (-0.5 * (x - mu).powi(2)).exp()).unwrap()
    }

    #[test]
    fn tv_examples() {
        let p = d(&[0.2, 0.3, 0.5]);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_relative_eq!(tv_distance(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap(), 1.0);
        assert_relative_eq!(tv_distance(&d(&[1.0, 0.0]), &d(&[0.5, 0.5])).unwrap(), 0.5);
    }

    #[test]
    fn hellinger_examples() {
        let p = d(&[0.2, 0.3, 0.5]);
        assert_eq!(hellinger_distance(&p, &p).unwrap(), 0.0);
        assert_relative_eq!(
            hellinger_distance(&d(&[0.5, 0.5, 0.0]), &d(&[0.0, 0.0, 1.0])).unwrap(),
            1.0
        );
        let exact = (1.0 - (-1.0f64 / 8.0).exp()).sqrt();
        let h = hellinger_distance(&normal_grid(0.0), &normal_grid(1.0)).unwrap();
        assert!((h - exact).abs() < 1e-3, "{h} vs {exact}");
        assert!((h - 0.34256).abs() < 1e-3);
    }

    #[test]
    fn kl_examples() {
        let p = d(&[0.2, 0.3, 0.5]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert_relative_eq!(
            kl_divergence(&d(&[1.0, 0.0]), &d(&[0.5, 0.5])).unwrap(),
            2.0f64.ln(),
            epsilon = 1e-15
        );
        let err = kl_divergence(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::SupportViolation(_)));
        let grid_kl = kl_divergence(&normal_grid(1.0), &normal_grid(0.0)).unwrap();
        assert!((grid_kl - 0.5).abs() < 1e-6);
    }

    #[test]
    fn kl_gaussian_examples() {
        let n01 = Gaussian::scalar(0.0, 1.0).unwrap();
        assert_eq!(kl_gaussian(&n01, &n01).unwrap(), 0.0);
        assert_relative_eq!(
            kl_gaussian(&Gaussian::scalar(1.0, 1.0).unwrap(), &n01).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        let v = kl_gaussian(&Gaussian::scalar(0.0, 2.0).unwrap(), &n01).unwrap();
        assert_relative_eq!(v, 0.5 * (2.0 - 1.0 - 2.0f64.ln()), epsilon = 1e-15);
        assert_relative_eq!(v, 0.15343, epsilon = 1e-5);
        assert!(kl_gaussian(&n01, &Gaussian::standard(2)).is_err());
    }

    #[test]
    fn chi2_examples() {
        let p = d(&[0.2, 0.3, 0.5]);
        assert_eq!(chi2_divergence(&p, &p).unwrap(), 0.0);
        assert_relative_eq!(
            chi2_divergence(&d(&[1.0, 0.0]), &d(&[0.5, 0.5])).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(chi2_divergence(&d(&[0.5, 0.5]), &d(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn mismatched_supports_are_errors() {
        assert!(tv_distance(&d(&[1.0]), &d(&[0.5, 0.5])).is_err());
        let a = normal_grid(0.0);
        let b = GridDensity1D::from_fn(-12.0, 12.0, 8193, |x| (-0.5 * x * x).exp()).unwrap();
        assert!(hellinger_distance(&a, &b).is_err());
    }

    #[test]
    fn grid_requires_enough_points() {
        assert!(GridDensity1D::from_fn(0.0, 1.0, 100, |_| 1.0).is_err());
        assert!(GridDensity1D::from_fn(1.0, 0.0, 4096, |_| 1.0).is_err());
    }

    #[test]
    fn random_measure_distance_examples() {
        let p = d(&[0.7, 0.3]);
        let q = d(&[0.2, 0.8]);
        let dict = sign_dictionary(2, 0);
        let same = random_measure_distance(&[p.clone()], &[p.clone()], &dict).unwrap();
        assert_eq!(same, 0.0);
        let dist = random_measure_distance(&[p.clone()], &[q.clone()], &dict).unwrap();
        assert_relative_eq!(dist, 2.0 * tv_distance(&p, &q).unwrap(), epsilon = 1e-15);
        let ones = vec![vec![1.0, 1.0]];
        assert!(random_measure_distance(&[p.clone()], &[q.clone()], &ones).unwrap() < 1e-15);
        assert!(random_measure_distance(&[p.clone()], &[q.clone()], &[]).is_err());
    }

    #[test]
    fn large_dictionaries_are_random_signs() {
        let dict = sign_dictionary(20, 3);
        assert_eq!(dict.len(), RANDOM_DICTIONARY_SIZE);
        assert!(dict.iter().flatten().all(|v| v.abs() == 1.0));
        assert_eq!(dict, sign_dictionary(20, 3));
        assert_eq!(sign_dictionary(3, 0).len(), 8);
    }
}
