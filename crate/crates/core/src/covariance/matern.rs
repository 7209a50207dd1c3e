use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{MultiscaleCovariance, Scale};
use crate::error::{Error, Result};
use crate::kernels::{euclidean, matern_unchecked};

/// Default tolerance for internal validity checks.
pub const VALIDITY_TOL: f64 = 1e-9;

/// Hyperparameters of the full bivariate Matérn model.
///
/// The cross-block smoothness is always the average `(nu_c + nu_f) / 2` and
/// is derived rather than stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateMaternParams {
    pub lambda_c: f64,
    pub lambda_f: f64,
    pub lambda_cf: f64,
    pub nu_c: f64,
    pub nu_f: f64,
    pub sigma_c: f64,
    pub sigma_f: f64,
    pub rho: f64,
    pub sigma_nc: f64,
    pub sigma_nf: f64,
}

/// Result of [`check_validity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub feasible: bool,
    /// `a_cf^2 - (a_c^2 + a_f^2) / 2`.
    pub margin_a: f64,
    /// `rho_bound - |rho|`.
    pub margin_rho: f64,
}

impl BivariateMaternParams {
    pub fn nu_cf(&self) -> f64 {
        0.5 * (self.nu_c + self.nu_f)
    }

    pub fn a_c(&self) -> f64 {
        (2.0 * self.nu_c).sqrt() / self.lambda_c
    }

    pub fn a_f(&self) -> f64 {
        (2.0 * self.nu_f).sqrt() / self.lambda_f
    }

    pub fn a_cf(&self) -> f64 {
        (2.0 * self.nu_cf()).sqrt() / self.lambda_cf
    }

    /// Largest cross length-scale allowed by the `a` condition.
    pub fn max_lambda_cf(&self) -> f64 {
        let a2 = 0.5 * (self.a_c().powi(2) + self.a_f().powi(2));
        (2.0 * self.nu_cf()).sqrt() / a2.sqrt()
    }

    pub fn sigma(&self, scale: Scale) -> f64 {
        match scale {
            Scale::Coarse => self.sigma_c,
            Scale::Fine => self.sigma_f,
        }
    }

    pub fn nu(&self, scale: Scale) -> f64 {
        match scale {
            Scale::Coarse => self.nu_c,
            Scale::Fine => self.nu_f,
        }
    }

    pub fn lambda(&self, scale: Scale) -> f64 {
        match scale {
            Scale::Coarse => self.lambda_c,
            Scale::Fine => self.lambda_f,
        }
    }

    pub fn nugget(&self, scale: Scale) -> f64 {
        match scale {
            Scale::Coarse => self.sigma_nc,
            Scale::Fine => self.sigma_nf,
        }
    }

    /// Checks the open-domain ranges of every field.
    pub fn check_ranges(&self) -> Result<()> {
        let positive = [
            ("lambda_c", self.lambda_c),
            ("lambda_f", self.lambda_f),
            ("lambda_cf", self.lambda_cf),
            ("nu_c", self.nu_c),
            ("nu_f", self.nu_f),
            ("sigma_c", self.sigma_c),
            ("sigma_f", self.sigma_f),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("sigma_nc", self.sigma_nc), ("sigma_nf", self.sigma_nf)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Domain(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        Ok(())
    }

    /// Latent block covariance at Euclidean distance `d`.
    #[inline]
    pub fn block_cov_at(&self, d: f64, sx: Scale, sy: Scale) -> f64 {
        match (sx, sy) {
            (Scale::Coarse, Scale::Coarse) => {
                self.sigma_c * self.sigma_c * matern_unchecked(d / self.lambda_c, self.nu_c)
            }
            (Scale::Fine, Scale::Fine) => {
                self.sigma_f * self.sigma_f * matern_unchecked(d / self.lambda_f, self.nu_f)
            }
            _ => self.rho * self.sigma_c * self.sigma_f * matern_unchecked(d / self.lambda_cf, self.nu_cf()),
        }
    }
}

/// Right-hand side of the collocated-correlation bound, evaluated in log space.
pub fn rho_bound(p: &BivariateMaternParams) -> f64 {
    let nu_cf = p.nu_cf();
    let ln = p.nu_c * p.a_c().ln() + p.nu_f * p.a_f().ln() - 2.0 * nu_cf * p.a_cf().ln() + ln_gamma(nu_cf)
        - 0.5 * ln_gamma(p.nu_c)
        - 0.5 * ln_gamma(p.nu_f);
    ln.exp()
}

/// Sufficient validity conditions of the full bivariate Matérn model with
/// `nu_cf = (nu_c + nu_f) / 2`:
///
/// * `a_cf^2 >= (a_c^2 + a_f^2) / 2` with `a_s = sqrt(2 nu_s) / lambda_s`,
///   accepted when the margin is at least `-tol * a_cf^2`;
/// * `|rho| <= rho_bound(params)`, accepted when the margin is at least `-tol`.
pub fn check_validity(p: &BivariateMaternParams, tol: f64) -> ValidityReport {
    let a_cf2 = p.a_cf().powi(2);
    let margin_a = a_cf2 - 0.5 * (p.a_c().powi(2) + p.a_f().powi(2));
    let margin_rho = rho_bound(p) - p.rho.abs();
    let feasible = margin_a >= -tol * a_cf2 && margin_rho >= -tol;
    ValidityReport { feasible, margin_a, margin_rho }
}

/// One entry of the full bivariate Matérn covariance, nugget included on the
/// diagonal blocks at zero lag.
pub fn cov_full_matern(
    x: &[f64],
    sx: Scale,
    y: &[f64],
    sy: Scale,
    params: &BivariateMaternParams,
) -> Result<f64> {
    params.check_ranges()?;
    let report = check_validity(params, VALIDITY_TOL);
    if !report.feasible {
        return Err(Error::ConstraintViolation { margin_a: report.margin_a, margin_rho: report.margin_rho });
    }
    if x.len() != y.len() {
        return Err(Error::Domain(format!("point dimensions differ: {} vs {}", x.len(), y.len())));
    }
    Ok(params.cov(x, sx, y, sy))
}

impl MultiscaleCovariance for BivariateMaternParams {
    #[inline]
    fn latent_cov(&self, x: &[f64], sx: Scale, y: &[f64], sy: Scale) -> f64 {
        let d = match (x, y) {
            ([x0, x1], [y0, y1]) => ((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt(),
            _ => {
                let r: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                euclidean(&r)
            }
        };
        self.block_cov_at(d, sx, sy)
    }

    fn nugget_variance(&self, scale: Scale) -> f64 {
        self.nugget(scale).powi(2)
    }

    fn is_valid(&self) -> bool {
        self.check_ranges().is_ok() && check_validity(self, VALIDITY_TOL).feasible
    }
}
