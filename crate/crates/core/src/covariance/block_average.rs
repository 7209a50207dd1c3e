use std::borrow::Cow;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::quadrature::{panels, GaussLegendre};
use super::{MultiscaleCovariance, Rect, Scale};
use crate::error::{Error, Result};
use crate::kernels::matern_unchecked;

pub const DEFAULT_QUADRATURE_ORDER: usize = 16;

/// Fine-scale Matérn field whose coarse component is the moving average of
/// the fine field over a square window of side `eta_c`, clipped to the domain
/// and renormalized by the clipped area.
///
/// Because of the clipping the coarse field is stationary only away from the
/// domain boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockAvgModel {
    pub fine_sigma: f64,
    pub fine_lambda: f64,
    pub fine_nu: f64,
    pub eta_c: f64,
    pub domain: Rect,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    /// Nugget standard deviation of fine observations.
    #[serde(default)]
    pub nugget_fine: f64,
    /// Nugget standard deviation of coarse observations.
    #[serde(default)]
    pub nugget_coarse: f64,
    #[serde(skip)]
    rule: OnceLock<GaussLegendre>,
}

fn default_order() -> usize {
    DEFAULT_QUADRATURE_ORDER
}

impl BlockAvgModel {
    pub fn new(fine_sigma: f64, fine_lambda: f64, fine_nu: f64, eta_c: f64, domain: Rect) -> Result<Self> {
        let m = Self {
            fine_sigma,
            fine_lambda,
            fine_nu,
            eta_c,
            domain,
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
            nugget_fine: 0.0,
            nugget_coarse: 0.0,
            rule: OnceLock::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_nuggets(mut self, fine: f64, coarse: f64) -> Self {
        self.nugget_fine = fine;
        self.nugget_coarse = coarse;
        self
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.quadrature_order = order;
        self.rule = OnceLock::new();
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fine_sigma", self.fine_sigma),
            ("fine_lambda", self.fine_lambda),
            ("fine_nu", self.fine_nu),
            ("eta_c", self.eta_c),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("nugget_fine", self.nugget_fine), ("nugget_coarse", self.nugget_coarse)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.quadrature_order < 2 {
            return Err(Error::Config(format!(
                "quadrature order must be at least 2, got {}",
                self.quadrature_order
            )));
        }
        Rect::new(self.domain.lo, self.domain.hi).map(|_| ())
    }

    fn rule(&self) -> Cow<'_, GaussLegendre> {
        let r = self.rule.get_or_init(|| GaussLegendre::new(self.quadrature_order));
        if r.order() == self.quadrature_order {
            Cow::Borrowed(r)
        } else {
            Cow::Owned(GaussLegendre::new(self.quadrature_order))
        }
    }

    /// Averaging support `H(z) ∩ Ω`.
    pub fn support(&self, z: &[f64]) -> Rect {
        self.domain.clipped_box(z, 0.5 * self.eta_c)
    }

    #[inline]
    fn fine_cov(&self, d: f64) -> f64 {
        self.fine_sigma * self.fine_sigma * matern_unchecked(d / self.fine_lambda, self.fine_nu)
    }

    /// Mean of the fine covariance between `A` and the point `y`.
    fn box_point(&self, a: &Rect, y: &[f64]) -> f64 {
        let gl = self.rule();
        let p0 = panels(a.lo[0], a.hi[0], &[], Some(y[0]));
        let p1 = panels(a.lo[1], a.hi[1], &[], Some(y[1]));
        let mut total = 0.0;
        for &(a0, b0) in &p0 {
            for (u0, w0) in gl.mapped(a0, b0) {
                let d0 = (u0 - y[0]).powi(2);
                let mut inner = 0.0;
                for &(a1, b1) in &p1 {
                    for (u1, w1) in gl.mapped(a1, b1) {
                        inner += w1 * self.fine_cov((d0 + (u1 - y[1]).powi(2)).sqrt());
                    }
                }
                total += w0 * inner;
            }
        }
        total / a.area()
    }

    /// Mean of the fine covariance over `A x B`, reduced to an integral over
    /// the lag `u = a - b` weighted by the overlap lengths.
    fn box_box(&self, a: &Rect, b: &Rect) -> f64 {
        let gl = self.rule();
        let axis = |i: usize| {
            let (alo, ahi, blo, bhi) = (a.lo[i], a.hi[i], b.lo[i], b.hi[i]);
            let lo = alo - bhi;
            let hi = ahi - blo;
            let pieces = panels(lo, hi, &[alo - blo, ahi - bhi], Some(0.0));
            let mut nodes = Vec::with_capacity(pieces.len() * gl.order());
            for (p, q) in pieces {
                for (u, w) in gl.mapped(p, q) {
                    let g = (ahi.min(bhi + u) - alo.max(blo + u)).max(0.0);
                    if g > 0.0 {
                        nodes.push((u, w * g));
                    }
                }
            }
            nodes
        };
        let n0 = axis(0);
        let n1 = axis(1);
        let mut total = 0.0;
        for &(u0, w0) in &n0 {
            let d0 = u0 * u0;
            let mut inner = 0.0;
            for &(u1, w1) in &n1 {
                inner += w1 * self.fine_cov((d0 + u1 * u1).sqrt());
            }
            total += w0 * inner;
        }
        total / (a.area() * b.area())
    }
}

/// One entry of the block-average multiscale covariance, nugget included on
/// the diagonal blocks at zero lag.
pub fn cov_block_avg(x: &[f64], sx: Scale, y: &[f64], sy: Scale, model: &BlockAvgModel) -> Result<f64> {
    model.validate()?;
    for p in [x, y] {
        if !model.domain.contains(p) {
            return Err(Error::Domain(format!("point {p:?} lies outside the domain")));
        }
    }
    Ok(model.cov(x, sx, y, sy))
}

impl MultiscaleCovariance for BlockAvgModel {
    fn latent_cov(&self, x: &[f64], sx: Scale, y: &[f64], sy: Scale) -> f64 {
        match (sx, sy) {
            (Scale::Fine, Scale::Fine) => {
                self.fine_cov(((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt())
            }
            (Scale::Coarse, Scale::Fine) => self.box_point(&self.support(x), y),
            (Scale::Fine, Scale::Coarse) => self.box_point(&self.support(y), x),
            (Scale::Coarse, Scale::Coarse) => self.box_box(&self.support(x), &self.support(y)),
        }
    }

    fn nugget_variance(&self, scale: Scale) -> f64 {
        match scale {
            Scale::Coarse => self.nugget_coarse.powi(2),
            Scale::Fine => self.nugget_fine.powi(2),
        }
    }

    fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    fn domain(&self) -> Option<Rect> {
        Some(self.domain)
    }
}
