//! Multiscale (bivariate) covariance models.
//!
//! Two models share the [`MultiscaleCovariance`] interface:
//!
//! * [`BivariateMaternParams`]: the full bivariate Matérn model, with separate
//!   smoothness, correlation length and variance per scale and a collocated
//!   correlation coefficient for the cross block.
//! * [`BlockAvgModel`]: a fine-scale Matérn field whose coarse component is its
//!   moving block average, with coarse and cross covariances evaluated by
//!   quadrature.

mod block_average;
mod matern;
pub(crate) mod quadrature;

pub use block_average::{cov_block_avg, BlockAvgModel};
pub use matern::{check_validity, cov_full_matern, rho_bound, BivariateMaternParams, ValidityReport, VALIDITY_TOL};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Support scale of a value. `Coarse` sorts before `Fine`, matching the
/// stacked observation order `[coarse; fine]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Coarse,
    Fine,
}

impl Scale {
    /// Both scales, coarse first.
    pub const ALL: [Scale; 2] = [Scale::Coarse, Scale::Fine];

    pub fn name(self) -> &'static str {
        match self {
            Scale::Coarse => "coarse",
            Scale::Fine => "fine",
        }
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" | "c" => Ok(Scale::Coarse),
            "fine" | "f" => Ok(Scale::Fine),
            _ => Err(Error::Parse(format!("unknown scale `{s}` (expected coarse|fine)"))),
        }
    }
}

/// Axis-aligned rectangle `[lo_0, hi_0] x [lo_1, hi_1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        if !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return Err(Error::Config(format!("empty rectangle {lo:?}..{hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == 2 && (0..2).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }

    /// The box of half-width `half` around `center`, clipped to `self`.
    pub fn clipped_box(&self, center: &[f64], half: f64) -> Rect {
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for i in 0..2 {
            lo[i] = (center[i] - half).max(self.lo[i]);
            hi[i] = (center[i] + half).min(self.hi[i]);
        }
        Rect { lo, hi }
    }
}

/// A bivariate covariance over `(point, scale)` pairs.
///
/// `latent_cov` is the covariance of the noise-free field; nugget
/// (measurement-noise) variance is added separately by [`Self::cov`] and only
/// at exactly zero lag within the same scale.
pub trait MultiscaleCovariance: Sync {
    fn latent_cov(&self, x: &[f64], sx: Scale, y: &[f64], sy: Scale) -> f64;

    /// Nugget variance `sigma_n^2` of a scale.
    fn nugget_variance(&self, scale: Scale) -> f64;

    /// Whether the model defines a valid (positive-definite) covariance.
    fn is_valid(&self) -> bool {
        true
    }

    /// Region on which the model is defined, when bounded.
    fn domain(&self) -> Option<Rect> {
        None
    }

    /// Covariance including the nugget on the diagonal blocks at zero lag.
    fn cov(&self, x: &[f64], sx: Scale, y: &[f64], sy: Scale) -> f64 {
        let c = self.latent_cov(x, sx, y, sy);
        if sx == sy && x == y {
            c + self.nugget_variance(sx)
        } else {
            c
        }
    }
}

impl<T: MultiscaleCovariance + ?Sized> MultiscaleCovariance for &T {
    fn latent_cov(&self, x: &[f64], sx: Scale, y: &[f64], sy: Scale) -> f64 {
        (**self).latent_cov(x, sx, y, sy)
    }
    fn nugget_variance(&self, scale: Scale) -> f64 {
        (**self).nugget_variance(scale)
    }
    fn is_valid(&self) -> bool {
        (**self).is_valid()
    }
    fn domain(&self) -> Option<Rect> {
        (**self).domain()
    }
}

/// Pseudo-isotropic variogram `C(x, x) - C(x, x + r e_1)` of one block.
///
/// `scales.0` is the scale of the anchor point and `scales.1` the scale of the
/// displaced point; nuggets are excluded.
pub fn pseudo_isotropic_variogram(
    model: &dyn MultiscaleCovariance,
    scales: (Scale, Scale),
    x: &[f64],
    r_values: &[f64],
) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Domain("anchor point has no coordinates".into()));
    }
    let shifted = |r: f64| {
        let mut y = x.to_vec();
        y[0] += r;
        y
    };
    if let Some(dom) = model.domain() {
        if !dom.contains(x) {
            return Err(Error::Domain(format!("anchor point {x:?} lies outside the domain")));
        }
        let bad: Vec<f64> = r_values.iter().copied().filter(|&r| !dom.contains(&shifted(r))).collect();
        if !bad.is_empty() {
            return Err(Error::Domain(format!("displaced points leave the domain for r = {bad:?}")));
        }
    }
    let c0 = model.latent_cov(x, scales.0, x, scales.1);
    Ok(r_values
        .iter()
        .map(|&r| if r == 0.0 { 0.0 } else { c0 - model.latent_cov(x, scales.0, &shifted(r), scales.1) })
        .collect())
}

/// Either covariance model, selected at run time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovarianceModel {
    #[serde(rename = "bimatern")]
    BiMatern(BivariateMaternParams),
    #[serde(rename = "blockavg")]
    BlockAvg(BlockAvgModel),
}

impl CovarianceModel {
    pub fn as_dyn(&self) -> &dyn MultiscaleCovariance {
        match self {
            CovarianceModel::BiMatern(p) => p,
            CovarianceModel::BlockAvg(m) => m,
        }
    }
}

impl MultiscaleCovariance for CovarianceModel {
    fn latent_cov(&self, x: &[f64], sx: Scale, y: &[f64], sy: Scale) -> f64 {
        self.as_dyn().latent_cov(x, sx, y, sy)
    }
    fn nugget_variance(&self, scale: Scale) -> f64 {
        self.as_dyn().nugget_variance(scale)
    }
    fn is_valid(&self) -> bool {
        self.as_dyn().is_valid()
    }
    fn domain(&self) -> Option<Rect> {
        self.as_dyn().domain()
    }
}
