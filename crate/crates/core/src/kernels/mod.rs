//! Univariate Matérn correlation functions.
//!
//! The Matérn correlation of order `nu` at scaled distance `r` is
//!
//! ```text
//! M(r | nu) = 2^(1-nu) / Gamma(nu) * (sqrt(2 nu) r)^nu * K_nu(sqrt(2 nu) r)
//! ```
//!
//! where `r` is already divided by the correlation length (isotropic case) or
//! is the Mahalanobis norm `sqrt(r^T D^-1 r)` (anisotropic case).

pub mod bessel;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Orders above this are replaced by the squared-exponential limit.
pub const MAX_NU: f64 = 50.0;

/// Shape of a Matérn correlation: smoothness, correlation length and an
/// optional anisotropy matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MaternShape {
    nu: f64,
    lambda: f64,
    aniso: Option<DMatrix<f64>>,
}

impl MaternShape {
    pub fn isotropic(nu: f64, lambda: f64) -> Result<Self> {
        check_order(nu)?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("correlation length must be positive, got {lambda}")));
        }
        Ok(Self { nu, lambda, aniso: None })
    }

    /// Anisotropic shape with a symmetric positive-definite matrix `d`
    /// (squared-length units). The isotropic shape with length `lambda` is
    /// `d = lambda^2 I`.
    pub fn anisotropic(nu: f64, d: DMatrix<f64>) -> Result<Self> {
        check_order(nu)?;
        check_spd(&d)?;
        let lambda = (d.trace() / d.nrows() as f64).sqrt();
        Ok(Self { nu, lambda, aniso: Some(d) })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Scaled distance between two points.
    pub fn scaled_distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::Domain(format!("point dimensions differ: {} vs {}", x.len(), y.len())));
        }
        let r: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        match &self.aniso {
            Some(d) => mahalanobis(&r, d),
            None => Ok(euclidean(&r) / self.lambda),
        }
    }

    /// Correlation between two points.
    pub fn correlation(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        matern(self.scaled_distance(x, y)?, self.nu)
    }
}

fn check_order(nu: f64) -> Result<()> {
    if !(nu > 0.0) || nu.is_infinite() {
        return Err(Error::Domain(format!("Matérn order must be positive and finite, got {nu}")));
    }
    Ok(())
}

fn check_spd(d: &DMatrix<f64>) -> Result<()> {
    let n = d.nrows();
    if n != d.ncols() || !(1..=3).contains(&n) {
        return Err(Error::Domain(format!(
            "anisotropy matrix must be square with dimension 1..=3, got {}x{}",
            d.nrows(),
            d.ncols()
        )));
    }
    let scale = d.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (d[(i, j)] - d[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Domain(format!("anisotropy matrix is not symmetric: {d}")));
            }
        }
    }
    let eig = d.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Domain(format!("anisotropy matrix is not positive definite: {d}")));
    }
    Ok(())
}

pub(crate) fn euclidean(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mahalanobis norm `sqrt(r^T D^-1 r)`.
pub fn mahalanobis(r: &[f64], d: &DMatrix<f64>) -> Result<f64> {
    check_spd(d)?;
    if r.len() != d.nrows() {
        return Err(Error::Domain(format!(
            "lag has dimension {} but anisotropy matrix is {}x{}",
            r.len(),
            d.nrows(),
            d.ncols()
        )));
    }
    let rv = DVector::from_column_slice(r);
    let chol = d
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain(format!("anisotropy matrix is not positive definite: {d}")))?;
    let w = chol.l().solve_lower_triangular(&rv).expect("triangular factor is invertible");
    Ok(w.norm())
}

/// Matérn correlation at scaled distance `r >= 0` and order `nu > 0`.
pub fn matern(r: f64, nu: f64) -> Result<f64> {
    if r.is_nan() || nu.is_nan() {
        return Err(Error::Domain("NaN argument to Matérn correlation".into()));
    }
    if r < 0.0 {
        return Err(Error::Domain(format!("scaled distance must be non-negative, got {r}")));
    }
    check_order(nu)?;
    Ok(matern_unchecked(r, nu))
}

/// Matérn correlation without argument validation. `r >= 0`, `nu > 0`.
#[inline]
pub fn matern_unchecked(r: f64, nu: f64) -> f64 {
    MaternOrder::new(nu).eval(r)
}

#[derive(Debug, Clone, Copy)]
enum OrderKind {
    Gaussian,
    HalfInteger(u32),
    General { ln_pref: f64, bessel: bessel::BesselOrder },
}

/// Matérn correlation of a fixed order, with the order-dependent constants
/// computed once. Gives the same values as [`matern_unchecked`].
#[derive(Debug, Clone, Copy)]
pub struct MaternOrder {
    nu: f64,
    sqrt_2nu: f64,
    kind: OrderKind,
}

impl MaternOrder {
    /// `nu > 0` is assumed.
    pub fn new(nu: f64) -> Self {
        let kind = if nu > MAX_NU {
            OrderKind::Gaussian
        } else if let Some(p) = half_integer(nu) {
            OrderKind::HalfInteger(p)
        } else {
            OrderKind::General {
                ln_pref: (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu),
                bessel: bessel::BesselOrder::new(nu),
            }
        };
        Self { nu, sqrt_2nu: (2.0 * nu).sqrt(), kind }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Correlation at scaled distance `r >= 0`.
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        if r == 0.0 {
            return 1.0;
        }
        match self.kind {
            OrderKind::Gaussian => (-0.5 * r * r).exp(),
            OrderKind::HalfInteger(p) => matern_half_integer(r, p),
            OrderKind::General { ln_pref, bessel } => {
                let z = self.sqrt_2nu * r;
                if z.is_infinite() {
                    return 0.0;
                }
                let ln_m = ln_pref + self.nu * z.ln() + bessel.ln_k(z);
                // The log form can exceed 0 by a few ulps for tiny z.
                ln_m.exp().min(1.0)
            }
        }
    }
}

/// Returns `p` when `nu = p + 1/2` for small integer `p`.
#[inline]
fn half_integer(nu: f64) -> Option<u32> {
    let p = nu - 0.5;
    if p >= 0.0 && p <= 10.0 && p.fract() == 0.0 {
        Some(p as u32)
    } else {
        None
    }
}

/// Closed form for `nu = p + 1/2`:
/// `exp(-z) p!/(2p)! sum_{i=0}^{p} (p+i)! / (i! (p-i)!) (2z)^(p-i)`.
fn matern_half_integer(r: f64, p: u32) -> f64 {
    let nu = p as f64 + 0.5;
    let z = (2.0 * nu).sqrt() * r;
    match p {
        0 => (-z).exp(),
        1 => (1.0 + z) * (-z).exp(),
        2 => (1.0 + z + z * z / 3.0) * (-z).exp(),
        _ => {
            let fact = |n: u32| (1..=n).fold(1.0f64, |acc, k| acc * k as f64);
            let pref = fact(p) / fact(2 * p);
            let mut sum = 0.0;
            for i in 0..=p {
                sum += fact(p + i) / (fact(i) * fact(p - i)) * (2.0 * z).powi((p - i) as i32);
            }
            // exp(-z) underflows before the polynomial overflows for p <= 10
            pref * sum * (-z).exp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mahalanobis_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(mahalanobis(&[0.0, 0.0], &id).unwrap(), 0.0);
        assert!((mahalanobis(&[3.0, 4.0], &id).unwrap() - 5.0).abs() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        assert!((mahalanobis(&[1.0, 0.0], &d).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mahalanobis_rejects_non_spd() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = mahalanobis(&[1.0, 0.0], &bad).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(mahalanobis(&[1.0, 0.0], &asym).is_err());
    }

    #[test]
    fn matern_examples() {
        for &nu in &[0.1, 0.5, 1.0, 2.3, 49.0, 80.0] {
            assert_eq!(matern(0.0, nu).unwrap(), 1.0);
        }
        assert!((matern(1.0, 0.5).unwrap() - (-1f64).exp()).abs() < 1e-15);
        let s3 = 3f64.sqrt();
        assert!((matern(1.0, 1.5).unwrap() - (1.0 + s3) * (-s3).exp()).abs() < 1e-15);
        assert!((matern(1.0, 1.5).unwrap() - 0.483_357_724_5).abs() < 1e-10);
    }

    #[test]
    fn matern_rejects_bad_arguments() {
        assert!(matern(-1.0, 1.0).is_err());
        assert!(matern(1.0, 0.0).is_err());
        assert!(matern(1.0, -2.0).is_err());
        assert!(matern(f64::NAN, 1.0).is_err());
        assert!(matern(1.0, f64::NAN).is_err());
    }

    #[test]
    fn matern_underflows_cleanly() {
        assert_eq!(matern(1e6, 1.3).unwrap(), 0.0);
        assert_eq!(matern(1e6, 0.5).unwrap(), 0.0);
        assert_eq!(matern(f64::INFINITY, 2.2).unwrap(), 0.0);
    }

    #[test]
    fn anisotropic_shape_reduces_to_isotropic() {
        let lam = 0.3;
        let iso = MaternShape::isotropic(1.3, lam).unwrap();
        let an = MaternShape::anisotropic(1.3, DMatrix::identity(2, 2) * (lam * lam)).unwrap();
        let (x, y) = ([0.1, 0.2], [0.4, -0.1]);
        let a = iso.correlation(&x, &y).unwrap();
        let b = an.correlation(&x, &y).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn general_half_integer_matches_bessel_route() {
        // nu = 3.5 via closed form versus nu = 3.5 + tiny via Bessel K
        for &r in &[0.05, 0.7, 2.0, 6.0] {
            let a = matern_unchecked(r, 3.5);
            let b = matern_unchecked(r, 3.5 + 1e-12);
            assert!((a - b).abs() < 1e-10, "r={r} {a} {b}");
        }
    }
}
