//! Steady saturated flow `div(K grad h) = 0` on a rectangle with fixed heads
//! on the left and right edges and no flow through the top and bottom, and
//! Monte Carlo propagation of log-conductivity uncertainty to the heads.
//!
//! Cell-centred finite volumes on square cells: interior faces carry the
//! harmonic mean of the two cell conductivities, Dirichlet faces carry `2 K`
//! (half-cell distance). Unknowns are ordered with `x2` running fastest so
//! the matrix is banded with bandwidth `n2`, and the system is solved by a
//! banded Cholesky factorization.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{sample_cells, FieldRealization, FieldSampler, StructuredGrid};
use crate::gp::factorize;

/// Relative residual the linear solve must reach.
pub const RESIDUAL_TOL: f64 = 1e-10;

const REFINEMENT_STEPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarcyProblem {
    pub grid: StructuredGrid,
    /// Geometric-mean conductivity; `K = k_g exp(Y)`.
    pub k_g: f64,
    pub h_left: f64,
    pub h_right: f64,
}

impl DarcyProblem {
    pub fn new(grid: StructuredGrid, k_g: f64, h_left: f64, h_right: f64) -> Result<Self> {
        let p = Self { grid, k_g, h_left, h_right };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.k_g > 0.0 && self.k_g.is_finite()) {
            return Err(Error::Config(format!("k_g must be positive, got {}", self.k_g)));
        }
        if !self.h_left.is_finite() || !self.h_right.is_finite() {
            return Err(Error::Config("boundary heads must be finite".into()));
        }
        Ok(())
    }

    /// `(h - h_R) / (h_L - h_R)`.
    pub fn normalize(&self, h: f64) -> Result<f64> {
        let d = self.h_left - self.h_right;
        if d == 0.0 {
            return Err(Error::Config("normalized heads need h_left != h_right".into()));
        }
        Ok((h - self.h_right) / d)
    }
}

/// Head field on the cell centroids (cell order of the grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarcySolution {
    pub heads: Vec<f64>,
    /// Flow entering through `x1 = 0`, per unit depth.
    pub inflow: f64,
    /// Flow leaving through `x1 = 2L`.
    pub outflow: f64,
    /// Relative residual after each solve or refinement step.
    pub residuals: Vec<f64>,
}

impl DarcySolution {
    pub fn residual(&self) -> f64 {
        *self.residuals.last().unwrap_or(&0.0)
    }
}

/// Lower band of an SPD matrix; row `i` keeps columns `i - b ..= i`.
struct Band {
    n: usize,
    b: usize,
    data: Vec<f64>,
}

impl Band {
    fn new(n: usize, b: usize) -> Self {
        Self { n, b, data: vec![0.0; n * (b + 1)] }
    }

    fn at(&self, i: usize, j: usize) -> usize {
        i * (self.b + 1) + (j + self.b - i)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.at(i, j);
        self.data[k] += v;
    }

    fn factor(&mut self) -> Result<()> {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        for i in 0..n {
            let j0 = i.saturating_sub(b);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(b));
                let (ri, rj) = (i * w + b - i, j * w + b - j);
                let mut s = self.data[ri + j];
                for k in k0..j {
                    s -= self.data[ri + k] * self.data[rj + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Numerical(format!("flow matrix lost definiteness at row {i} (pivot {s:e})")));
                    }
                    self.data[ri + i] = s.sqrt();
                } else {
                    self.data[ri + j] = s / self.data[rj + j];
                }
            }
        }
        Ok(())
    }

    fn solve(&self, rhs: &mut [f64]) {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        for i in 0..n {
            let ri = i * w + b - i;
            let mut s = rhs[i];
            for k in i.saturating_sub(b)..i {
                s -= self.data[ri + k] * rhs[k];
            }
            rhs[i] = s / self.data[ri + i];
        }
        for i in (0..n).rev() {
            let ri = i * w + b - i;
            let v = rhs[i] / self.data[ri + i];
            rhs[i] = v;
            for k in i.saturating_sub(b)..i {
                rhs[k] -= self.data[ri + k] * v;
            }
        }
    }
}

/// Face transmissibilities of one conductivity field.
struct Stencil {
    n1: usize,
    n2: usize,
    /// Between `(i1, i2)` and `(i1 + 1, i2)`, indexed `i1 * n2 + i2`.
    east: Vec<f64>,
    /// Between `(i1, i2)` and `(i1, i2 + 1)`, indexed `i1 * n2 + i2`.
    north: Vec<f64>,
    /// Dirichlet faces, indexed by `i2`.
    left: Vec<f64>,
    right: Vec<f64>,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

impl Stencil {
    fn new(grid: &StructuredGrid, k: &[f64]) -> Self {
        let [n1, n2] = grid.shape;
        let at = |i1: usize, i2: usize| k[grid.index(i1, i2)];
        let mut east = vec![0.0; n1 * n2];
        let mut north = vec![0.0; n1 * n2];
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                if i1 + 1 < n1 {
                    east[i1 * n2 + i2] = harmonic(at(i1, i2), at(i1 + 1, i2));
                }
                if i2 + 1 < n2 {
                    north[i1 * n2 + i2] = harmonic(at(i1, i2), at(i1, i2 + 1));
                }
            }
        }
        let left = (0..n2).map(|i2| 2.0 * at(0, i2)).collect();
        let right = (0..n2).map(|i2| 2.0 * at(n1 - 1, i2)).collect();
        Self { n1, n2, east, north, left, right }
    }

    /// `A h` in unknown order (`i1 * n2 + i2`).
    fn apply(&self, h: &[f64]) -> Vec<f64> {
        let (n1, n2) = (self.n1, self.n2);
        let mut out = vec![0.0; h.len()];
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                let p = i1 * n2 + i2;
                let mut v = 0.0;
                if i1 + 1 < n1 {
                    v += self.east[p] * (h[p] - h[p + n2]);
                }
                if i1 > 0 {
                    v += self.east[p - n2] * (h[p] - h[p - n2]);
                }
                if i2 + 1 < n2 {
                    v += self.north[p] * (h[p] - h[p + 1]);
                }
                if i2 > 0 {
                    v += self.north[p - 1] * (h[p] - h[p - 1]);
                }
                if i1 == 0 {
                    v += self.left[i2] * h[p];
                }
                if i1 + 1 == n1 {
                    v += self.right[i2] * h[p];
                }
                out[p] = v;
            }
        }
        out
    }

    fn matrix(&self) -> Band {
        let (n1, n2) = (self.n1, self.n2);
        let mut a = Band::new(n1 * n2, n2);
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                let p = i1 * n2 + i2;
                if i1 + 1 < n1 {
                    let t = self.east[p];
                    a.add(p, p, t);
                    a.add(p + n2, p + n2, t);
                    a.add(p + n2, p, -t);
                }
                if i2 + 1 < n2 {
                    let t = self.north[p];
                    a.add(p, p, t);
                    a.add(p + 1, p + 1, t);
                    a.add(p + 1, p, -t);
                }
                if i1 == 0 {
                    a.add(p, p, self.left[i2]);
                }
                if i1 + 1 == n1 {
                    a.add(p, p, self.right[i2]);
                }
            }
        }
        a
    }

    fn rhs(&self, h_left: f64, h_right: f64) -> Vec<f64> {
        let (n1, n2) = (self.n1, self.n2);
        let mut b = vec![0.0; n1 * n2];
        for i2 in 0..n2 {
            b[i2] += self.left[i2] * h_left;
            b[(n1 - 1) * n2 + i2] += self.right[i2] * h_right;
        }
        b
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Heads for the log-conductivity field `y` (`K = k_g exp(y)`).
pub fn solve_darcy(problem: &DarcyProblem, y: &FieldRealization) -> Result<DarcySolution> {
    problem.validate()?;
    if !y.grid.same_as(&problem.grid) {
        return Err(Error::Domain("log-conductivity field lives on a different grid".into()));
    }
    solve_values(problem, &y.values)
}

fn solve_values(problem: &DarcyProblem, y: &[f64]) -> Result<DarcySolution> {
    let grid = &problem.grid;
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite log-conductivity at cell {i}")));
    }
    let k: Vec<f64> = y.iter().map(|v| problem.k_g * v.exp()).collect();
    if let Some(i) = k.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Numerical(format!("conductivity {} at cell {i} is not positive and finite", k[i])));
    }
    let st = Stencil::new(grid, &k);
    let mut a = st.matrix();
    a.factor()?;
    let b = st.rhs(problem.h_left, problem.h_right);
    let scale = norm(&b).max(f64::MIN_POSITIVE);
    let mut h = b.clone();
    a.solve(&mut h);
    let mut residuals = Vec::new();
    for step in 0..=REFINEMENT_STEPS {
        let r: Vec<f64> = b.iter().zip(st.apply(&h)).map(|(bi, ai)| bi - ai).collect();
        let rel = norm(&r) / scale;
        residuals.push(rel);
        if rel <= RESIDUAL_TOL || norm(&b) == 0.0 {
            break;
        }
        if step == REFINEMENT_STEPS {
            return Err(Error::Numerical(format!("flow solve did not reach residual {RESIDUAL_TOL:e}: history {residuals:?}")));
        }
        let mut d = r;
        a.solve(&mut d);
        h.iter_mut().zip(&d).for_each(|(hi, di)| *hi += di);
    }
    let [n1, n2] = grid.shape;
    let mut heads = vec![0.0; n1 * n2];
    for i1 in 0..n1 {
        for i2 in 0..n2 {
            heads[grid.index(i1, i2)] = h[i1 * n2 + i2];
        }
    }
    let inflow = (0..n2).map(|i2| st.left[i2] * (problem.h_left - h[i2])).sum();
    let outflow = (0..n2).map(|i2| st.right[i2] * (h[(n1 - 1) * n2 + i2] - problem.h_right)).sum();
    Ok(DarcySolution { heads, inflow, outflow, residuals })
}

/// Ensemble mean and covariance of the heads at `nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEnsembleStats {
    pub nodes: Vec<usize>,
    pub mean: Vec<f64>,
    /// Row-major `|nodes| x |nodes|`.
    pub covariance: Vec<f64>,
    pub n_real: usize,
    pub seed: u64,
}

impl HeadEnsembleStats {
    /// Moments of the rows of `samples` (one realization per row).
    pub fn from_samples(nodes: Vec<usize>, samples: &[Vec<f64>], seed: u64) -> Result<Self> {
        let n_real = samples.len();
        if n_real < 2 {
            return Err(Error::Config(format!("ensemble statistics need at least 2 realizations, got {n_real}")));
        }
        let m = nodes.len();
        let mut mean = vec![0.0; m];
        for s in samples {
            mean.iter_mut().zip(s).for_each(|(a, v)| *a += v);
        }
        mean.iter_mut().for_each(|a| *a /= n_real as f64);
        let dev = DMatrix::from_fn(n_real, m, |k, i| samples[k][i] - mean[i]);
        let mut cov = dev.tr_mul(&dev) / (n_real - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        let covariance = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).collect();
        Ok(Self { nodes, mean, covariance, n_real, seed })
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let m = self.nodes.len();
        DMatrix::from_row_slice(m, m, &self.covariance)
    }

    pub fn variance(&self) -> Vec<f64> {
        let m = self.nodes.len();
        (0..m).map(|i| self.covariance[i * m + i]).collect()
    }

    fn position(&self, node: usize) -> Option<usize> {
        self.nodes.iter().position(|&n| n == node)
    }

    /// Statistics restricted to `nodes` (which must all be tracked).
    pub fn restrict(&self, nodes: &[usize]) -> Result<Self> {
        let pos: Vec<usize> = nodes
            .iter()
            .map(|&n| self.position(n).ok_or_else(|| Error::Domain(format!("node {n} is not tracked by the ensemble"))))
            .collect::<Result<_>>()?;
        let m = self.nodes.len();
        Ok(Self {
            nodes: nodes.to_vec(),
            mean: pos.iter().map(|&p| self.mean[p]).collect(),
            covariance: pos.iter().flat_map(|&a| pos.iter().map(move |&b| (a, b))).map(|(a, b)| self.covariance[a * m + b]).collect(),
            n_real: self.n_real,
            seed: self.seed,
        })
    }
}

/// Head observations `h_s = H h + e` at distinct nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadObservationSet {
    /// The node selected by each row of `H`.
    pub nodes: Vec<usize>,
    pub h_obs: Vec<f64>,
    pub sigma_eh: f64,
}

impl HeadObservationSet {
    pub fn new(nodes: Vec<usize>, h_obs: Vec<f64>, sigma_eh: f64) -> Result<Self> {
        if nodes.len() != h_obs.len() {
            return Err(Error::Domain(format!("{} nodes but {} observed heads", nodes.len(), h_obs.len())));
        }
        let mut sorted = nodes.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("head observations must select distinct nodes".into()));
        }
        if !(sigma_eh > 0.0 && sigma_eh.is_finite()) {
            return Err(Error::Config(format!("head noise standard deviation must be positive, got {sigma_eh}")));
        }
        Ok(Self { nodes, h_obs, sigma_eh })
    }

    /// `n` distinct random cells of `heads` with `N(0, sigma_eh^2)` noise.
    pub fn sample(heads: &[f64], n: usize, sigma_eh: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let nodes = sample_cells(heads.len(), n, &mut rng)?;
        let noise = Normal::new(0.0, sigma_eh).map_err(|e| Error::Config(e.to_string()))?;
        let h_obs = nodes.iter().map(|&c| heads[c] + noise.sample(&mut rng)).collect();
        Self::new(nodes, h_obs, sigma_eh)
    }

    /// Dense `N_hs x n_nodes` selection matrix.
    pub fn selection_matrix(&self, n_nodes: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.nodes.len(), n_nodes);
        for (r, &c) in self.nodes.iter().enumerate() {
            h[(r, c)] = 1.0;
        }
        h
    }
}

/// Predictive mean and covariance at the ensemble's nodes after a head update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmseEstimate {
    pub nodes: Vec<usize>,
    pub h_hat: Vec<f64>,
    /// Row-major.
    pub c_hat: Vec<f64>,
}

impl MmseEstimate {
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let m = self.nodes.len();
        DMatrix::from_row_slice(m, m, &self.c_hat)
    }

    pub fn variance(&self) -> Vec<f64> {
        let m = self.nodes.len();
        (0..m).map(|i| self.c_hat[i * m + i]).collect()
    }
}

/// `h^ = h + C H^T S^-1 (h_s - H h)`, `C^ = C - C H^T S^-1 H C` with
/// `S = H C H^T + sigma^2 I`; observed nodes must be tracked by `stats`.
pub fn mmse_update(stats: &HeadEnsembleStats, obs: &HeadObservationSet) -> Result<MmseEstimate> {
    let m = stats.nodes.len();
    if stats.mean.len() != m || stats.covariance.len() != m * m {
        return Err(Error::Domain("ensemble moments do not match their node list".into()));
    }
    if obs.nodes.len() != obs.h_obs.len() {
        return Err(Error::Domain(format!("{} nodes but {} observed heads", obs.nodes.len(), obs.h_obs.len())));
    }
    let pos: Vec<usize> = obs
        .nodes
        .iter()
        .map(|&n| stats.position(n).ok_or_else(|| Error::Domain(format!("observed node {n} is not tracked by the ensemble"))))
        .collect::<Result<_>>()?;
    let c = stats.cov_matrix();
    if pos.is_empty() {
        return Ok(MmseEstimate { nodes: stats.nodes.clone(), h_hat: stats.mean.clone(), c_hat: stats.covariance.clone() });
    }
    let k = pos.len();
    let ch = DMatrix::from_fn(m, k, |i, r| c[(i, pos[r])]);
    let mut s = DMatrix::from_fn(k, k, |a, b| c[(pos[a], pos[b])]);
    for i in 0..k {
        s[(i, i)] += obs.sigma_eh * obs.sigma_eh;
    }
    let f = factorize(&s)?;
    let innov = nalgebra::DVector::from_iterator(k, (0..k).map(|r| obs.h_obs[r] - stats.mean[pos[r]]));
    let gain_t = f.solve_mat(&ch.transpose());
    let h_hat: Vec<f64> = (0..m).map(|i| stats.mean[i] + (0..k).map(|r| gain_t[(r, i)] * innov[r]).sum::<f64>()).collect();
    let mut c_hat = &c - &ch * &gain_t;
    c_hat = (&c_hat + c_hat.transpose()) * 0.5;
    for i in 0..m {
        if c_hat[(i, i)] < 0.0 {
            c_hat[(i, i)] = 0.0;
        }
    }
    Ok(MmseEstimate { nodes: stats.nodes.clone(), h_hat, c_hat: c_hat.transpose().as_slice().to_vec() })
}

/// `(sum_i var_i^2 dx)^(1/2)` along a profile of cell width `dx`.
pub fn profile_variance_norm(variance: &[f64], dx: f64) -> f64 {
    (variance.iter().map(|v| v * v).sum::<f64>() * dx).sqrt()
}

/// Draws `n_real` log-conductivity fields from `sampler` on the problem grid,
/// solves each, and returns the moments of the (optionally normalized) heads
/// at `nodes`. Realization `k` uses stream `k` of `seed`.
pub fn mc_propagate(
    problem: &DarcyProblem,
    sampler: &FieldSampler<'_, '_>,
    n_real: usize,
    seed: u64,
    nodes: &[usize],
    normalized: bool,
) -> Result<HeadEnsembleStats> {
    if n_real < 2 {
        return Err(Error::Config(format!("Monte Carlo propagation needs at least 2 realizations, got {n_real}")));
    }
    let grid = &problem.grid;
    if let Some(&n) = nodes.iter().find(|&&n| n >= grid.len()) {
        return Err(Error::Domain(format!("node {n} is outside the {}-cell grid", grid.len())));
    }
    let targets = grid.centroids(crate::covariance::Scale::Fine);
    let fields = sampler.sample(&targets, n_real, seed)?;
    let samples: Vec<Vec<f64>> = fields
        .par_iter()
        .enumerate()
        .map(|(k, y)| -> Result<Vec<f64>> {
            let sol = solve_values(problem, y).map_err(|e| Error::Numerical(format!("realization {k}: {e}")))?;
            nodes
                .iter()
                .map(|&n| if normalized { problem.normalize(sol.heads[n]) } else { Ok(sol.heads[n]) })
                .collect()
        })
        .collect::<Result<_>>()?;
    HeadEnsembleStats::from_samples(nodes.to_vec(), &samples, seed)
}
