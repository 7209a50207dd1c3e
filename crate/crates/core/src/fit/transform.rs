//! Unconstrained coordinates for the bivariate Matérn hyperparameters.

use serde::{Deserialize, Serialize};

use crate::covariance::BivariateMaternParams;
use crate::error::{Error, Result};

/// Number of hyperparameters.
pub const N_PARAMS: usize = 10;

/// Coordinate names in storage order.
pub const NAMES: [&str; N_PARAMS] = [
    "lambda_c", "lambda_f", "lambda_cf", "nu_c", "nu_f", "sigma_c", "sigma_f", "rho", "sigma_nc", "sigma_nf",
];

pub(crate) const LAMBDA_C: usize = 0;
pub(crate) const LAMBDA_F: usize = 1;
pub(crate) const LAMBDA_CF: usize = 2;
pub(crate) const NU_C: usize = 3;
pub(crate) const NU_F: usize = 4;
pub(crate) const SIGMA_C: usize = 5;
pub(crate) const SIGMA_F: usize = 6;
pub(crate) const XI: usize = 7;
pub(crate) const SIGMA_NC: usize = 8;
pub(crate) const SIGMA_NF: usize = 9;

/// Nugget standard deviations below this are stored as this value.
pub const NUGGET_FLOOR: f64 = 1e-12;

/// `(log lambda_c, log lambda_f, log lambda_cf, log nu_c, log nu_f,
/// log sigma_c, log sigma_f, xi, log sigma_nc, log sigma_nf)` with
/// `xi = log((1 + rho) / (1 - rho))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformedParams(pub [f64; N_PARAMS]);

pub fn transform(p: &BivariateMaternParams) -> Result<TransformedParams> {
    if p.rho.abs() >= 1.0 || p.rho.is_nan() {
        return Err(Error::Domain(format!("rho must lie strictly inside (-1, 1), got {}", p.rho)));
    }
    for (name, v) in [
        ("lambda_c", p.lambda_c),
        ("lambda_f", p.lambda_f),
        ("lambda_cf", p.lambda_cf),
        ("nu_c", p.nu_c),
        ("nu_f", p.nu_f),
        ("sigma_c", p.sigma_c),
        ("sigma_f", p.sigma_f),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    for (name, v) in [("sigma_nc", p.sigma_nc), ("sigma_nf", p.sigma_nf)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} must be non-negative, got {v}")));
        }
    }
    Ok(TransformedParams([
        p.lambda_c.ln(),
        p.lambda_f.ln(),
        p.lambda_cf.ln(),
        p.nu_c.ln(),
        p.nu_f.ln(),
        p.sigma_c.ln(),
        p.sigma_f.ln(),
        ((1.0 + p.rho) / (1.0 - p.rho)).ln(),
        p.sigma_nc.max(NUGGET_FLOOR).ln(),
        p.sigma_nf.max(NUGGET_FLOOR).ln(),
    ]))
}

pub fn untransform(z: &TransformedParams) -> BivariateMaternParams {
    let z = &z.0;
    BivariateMaternParams {
        lambda_c: z[LAMBDA_C].exp(),
        lambda_f: z[LAMBDA_F].exp(),
        lambda_cf: z[LAMBDA_CF].exp(),
        nu_c: z[NU_C].exp(),
        nu_f: z[NU_F].exp(),
        sigma_c: z[SIGMA_C].exp(),
        sigma_f: z[SIGMA_F].exp(),
        rho: (0.5 * z[XI]).tanh(),
        sigma_nc: z[SIGMA_NC].exp(),
        sigma_nf: z[SIGMA_NF].exp(),
    }
}
