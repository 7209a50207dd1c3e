//! Rank-M covariance approximation from quadrature nodes.
//!
//! With nodes `X~`, `C~ = C(X~, X~) = L~ L~^T` and any node sets `Y`, `Z`,
//!
//! ```text
//! C(Y, Z) ~= C(Y, X~) C~^-1 C(X~, Z) = L_Y L_Z^T,   L_Y^T = L~^-1 C(X~, Y).
//! ```
//!
//! Realizations are `L_Y xi` with `xi ~ N(0, I_M)`. Conditioning on data
//! replaces the identity by `P = I - B C_s^-1 B^T`, `B = L~^-1 C(X~, X_s)`,
//! so conditional draws are `mean + L_Y chol(P) xi`. Targets are processed
//! in chunks so the `N x M` factor is never held in memory.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::field::FieldRealization;
use super::grid::StructuredGrid;
use crate::covariance::{MultiscaleCovariance, Scale};
use crate::error::{Error, Result};
use crate::gp::{assemble_cov, assemble_sym, factorize, Posterior, PosteriorSummary, TaggedPoints};
use crate::linalg::{solve_lower_in_place, solve_upper_t_in_place};

const CHUNK: usize = 1024;

/// Quadrature nodes, uniform weight and the Cholesky factor of the node
/// covariance.
pub struct NystromFactor<'a> {
    model: &'a dyn MultiscaleCovariance,
    pub quad_nodes: TaggedPoints,
    pub weight: f64,
    pub chol_lower: DMatrix<f64>,
    pub rank: usize,
    /// Absolute jitter added to `C~` before factoring.
    pub jitter: f64,
}

/// Factor on the centroids of `quad_grid` at `scale` (midpoint rule,
/// `w = |Omega| / M`).
pub fn nystrom_factor<'a>(
    model: &'a dyn MultiscaleCovariance,
    scale: Scale,
    quad_grid: &StructuredGrid,
) -> Result<NystromFactor<'a>> {
    let w = quad_grid.domain().area() / quad_grid.len() as f64;
    nystrom_factor_at(model, quad_grid.centroids(scale), w)
}

/// Factor on arbitrary single-scale nodes.
pub fn nystrom_factor_at(model: &dyn MultiscaleCovariance, nodes: TaggedPoints, weight: f64) -> Result<NystromFactor<'_>> {
    if nodes.is_empty() {
        return Err(Error::Config("Nyström factor needs at least one quadrature node".into()));
    }
    let s = nodes.tag(0);
    if nodes.tags().iter().any(|&t| t != s) {
        return Err(Error::Config("quadrature nodes must share one scale".into()));
    }
    let c = assemble_sym(&nodes, model, false)?;
    let f = factorize(&c)?;
    let jitter = f.jitter();
    let rank = nodes.len();
    Ok(NystromFactor { model, quad_nodes: nodes, weight, chol_lower: f.into_l(), rank, jitter })
}

fn check_scale(targets: &TaggedPoints, scale: Scale) -> Result<()> {
    if let Some(i) = targets.tags().iter().position(|&t| t != scale) {
        return Err(Error::Domain(format!("target {i} is not at the {scale} scale of the quadrature nodes")));
    }
    Ok(())
}

fn chunks(targets: &TaggedPoints) -> Vec<TaggedPoints> {
    let idx: Vec<usize> = (0..targets.len()).collect();
    idx.chunks(CHUNK).map(|c| targets.select(c)).collect()
}

impl<'a> NystromFactor<'a> {
    pub fn scale(&self) -> Scale {
        self.quad_nodes.tag(0)
    }

    pub fn model(&self) -> &'a dyn MultiscaleCovariance {
        self.model
    }

    /// `L_Y^T = L~^-1 C(X~, Y)`, an `M x |Y|` matrix.
    pub fn rectangular(&self, targets: &TaggedPoints) -> Result<DMatrix<f64>> {
        let mut v = assemble_cov(&self.quad_nodes, targets, self.model, false)?;
        solve_lower_in_place(&self.chol_lower, &mut v);
        Ok(v)
    }

    /// Rank-M approximation of `C(a, b)`.
    pub fn approx_cov(&self, a: &TaggedPoints, b: &TaggedPoints) -> Result<DMatrix<f64>> {
        let la = self.rectangular(a)?;
        let lb = self.rectangular(b)?;
        Ok(la.tr_mul(&lb))
    }

    fn is_nodes(&self, targets: &TaggedPoints) -> bool {
        targets == &self.quad_nodes
    }

    /// Unconditional sampler.
    pub fn sampler(&self) -> FieldSampler<'_, 'a> {
        FieldSampler { factor: self, inner: None, w_mean: None, jitter: 0.0 }
    }

    /// Sampler of the field conditioned on the data held by `posterior`.
    pub fn conditional(&self, posterior: &Posterior<'_>) -> Result<FieldSampler<'_, 'a>> {
        let a = assemble_cov(&self.quad_nodes, posterior.points(), self.model, false)?;
        let mut b = a;
        solve_lower_in_place(&self.chol_lower, &mut b);
        let w = {
            let mut v = DMatrix::from_column_slice(self.rank, 1, (&b * posterior.alpha()).as_slice());
            solve_upper_t_in_place(&self.chol_lower, &mut v);
            DVector::from_column_slice(v.as_slice())
        };
        let u = posterior.factor().half_solve(&b.transpose());
        let mut p = DMatrix::identity(self.rank, self.rank);
        p.gemm_tr(-1.0, &u, &u, 1.0);
        p = (&p + p.transpose()) * 0.5;
        let f = factorize(&p)?;
        let jitter = f.jitter();
        Ok(FieldSampler { factor: self, inner: Some(f.into_l()), w_mean: Some(w), jitter })
    }
}

/// Draws and moments of an unconditional or conditional field in the
/// rank-M representation.
pub struct FieldSampler<'f, 'a> {
    factor: &'f NystromFactor<'a>,
    /// `chol(P)` when conditioned.
    inner: Option<DMatrix<f64>>,
    /// `C~^-1 C(X~, X_s) C_s^-1 y` when conditioned.
    w_mean: Option<DVector<f64>>,
    jitter: f64,
}

impl FieldSampler<'_, '_> {
    pub fn is_conditional(&self) -> bool {
        self.inner.is_some()
    }

    /// Absolute jitter added to `P` when it was factored.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Mean and variance at `targets`.
    pub fn predict(&self, targets: &TaggedPoints) -> Result<PosteriorSummary> {
        let f = self.factor;
        check_scale(targets, f.scale())?;
        let parts: Vec<(Vec<f64>, Vec<f64>)> = chunks(targets)
            .par_iter()
            .map(|chunk| -> Result<(Vec<f64>, Vec<f64>)> {
                let mut v = assemble_cov(&f.quad_nodes, chunk, f.model, false)?;
                let mean = match &self.w_mean {
                    Some(w) => v.tr_mul(w).as_slice().to_vec(),
                    None => vec![0.0; chunk.len()],
                };
                solve_lower_in_place(&f.chol_lower, &mut v);
                let v = match &self.inner {
                    Some(r) => r.tr_mul(&v),
                    None => v,
                };
                Ok((mean, v.column_iter().map(|c| c.norm_squared()).collect()))
            })
            .collect::<Result<_>>()?;
        let mut mean = Vec::with_capacity(targets.len());
        let mut variance = Vec::with_capacity(targets.len());
        for (m, v) in parts {
            mean.extend(m);
            variance.extend(v);
        }
        Ok(PosteriorSummary { targets: targets.clone(), mean, variance, covariance: None, clamped: 0 })
    }

    /// `n_real` draws at `targets`; draw `k` uses stream `k` of the
    /// ChaCha12 generator seeded with `seed`.
    pub fn sample(&self, targets: &TaggedPoints, n_real: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let f = self.factor;
        check_scale(targets, f.scale())?;
        if n_real == 0 {
            return Ok(vec![]);
        }
        let m = f.rank;
        let cols: Vec<Vec<f64>> = (0..n_real)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                (0..m).map(|_| StandardNormal.sample(&mut rng)).collect()
            })
            .collect();
        let xi = DMatrix::from_fn(m, n_real, |i, k| cols[k][i]);
        let z = match &self.inner {
            Some(r) => r * xi,
            None => xi,
        };
        let mean = match &self.w_mean {
            Some(_) => self.predict_mean(targets)?,
            None => vec![0.0; targets.len()],
        };
        let y = if f.is_nodes(targets) {
            &f.chol_lower * z
        } else {
            let mut w = z;
            solve_upper_t_in_place(&f.chol_lower, &mut w);
            let blocks: Vec<DMatrix<f64>> = chunks(targets)
                .par_iter()
                .map(|chunk| assemble_cov(chunk, &f.quad_nodes, f.model, false).map(|c| c * &w))
                .collect::<Result<_>>()?;
            let mut y = DMatrix::zeros(targets.len(), n_real);
            let mut row = 0;
            for b in blocks {
                y.rows_mut(row, b.nrows()).copy_from(&b);
                row += b.nrows();
            }
            y
        };
        Ok((0..n_real).map(|k| y.column(k).iter().zip(&mean).map(|(v, m)| v + m).collect()).collect())
    }

    fn predict_mean(&self, targets: &TaggedPoints) -> Result<Vec<f64>> {
        let f = self.factor;
        let Some(w) = &self.w_mean else {
            return Ok(vec![0.0; targets.len()]);
        };
        let parts: Vec<Vec<f64>> = chunks(targets)
            .par_iter()
            .map(|chunk| assemble_cov(chunk, &f.quad_nodes, f.model, false).map(|c| (c * w).as_slice().to_vec()))
            .collect::<Result<_>>()?;
        Ok(parts.concat())
    }

    /// Draws on the centroids of `grid`, tagged with the factor's scale.
    pub fn simulate_grid(&self, grid: &StructuredGrid, n_real: usize, seed: u64) -> Result<Vec<FieldRealization>> {
        let scale = self.factor.scale();
        self.sample(&grid.centroids(scale), n_real, seed)?
            .into_iter()
            .map(|v| FieldRealization::new(*grid, v, scale, seed))
            .collect()
    }
}

/// Unconditional realizations on the centroids of `grid`; `seed` is recorded
/// on every realization and realization `k` comes from stream `k`.
pub fn simulate(factor: &NystromFactor<'_>, grid: &StructuredGrid, n_real: usize, seed: u64) -> Result<Vec<FieldRealization>> {
    factor.sampler().simulate_grid(grid, n_real, seed)
}
