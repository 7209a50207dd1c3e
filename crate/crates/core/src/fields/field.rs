//! Gridded realizations and the synthetic-experiment operations on them.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::grid::StructuredGrid;
use super::variogram::ObservationSet;
use crate::covariance::Scale;
use crate::error::{Error, Result};
use crate::gp::PosteriorSummary;

/// A field sampled at the centroids of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRealization {
    pub grid: StructuredGrid,
    /// One value per cell, in cell order.
    pub values: Vec<f64>,
    pub scale: Scale,
    pub seed: u64,
}

impl FieldRealization {
    pub fn new(grid: StructuredGrid, values: Vec<f64>, scale: Scale, seed: u64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Domain(format!("{} values for a grid of {} cells", values.len(), grid.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite field value at cell {i}")));
        }
        Ok(Self { grid, values, scale, seed })
    }

    pub fn value(&self, i1: usize, i2: usize) -> f64 {
        self.values[self.grid.index(i1, i2)]
    }

    /// Sample mean and (population) variance over all cells.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }
}

/// Moving-window sums along one axis of a `n1 x n2` array; the window holds
/// the cells within `half` of the centre cell, truncated at the edges.
fn window_sums(values: &[f64], n1: usize, n2: usize, half: usize, along_first: bool) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    let (len, lines) = if along_first { (n1, n2) } else { (n2, n1) };
    let at = |line: usize, k: usize| if along_first { line * n1 + k } else { k * n1 + line };
    for line in 0..lines {
        for k in 0..len {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(len - 1);
            out[at(line, k)] = (lo..=hi).map(|q| values[at(line, q)]).sum();
        }
    }
    out
}

fn window_counts(len: usize, half: usize) -> Vec<f64> {
    (0..len).map(|k| ((k + half).min(len - 1) - k.saturating_sub(half) + 1) as f64).collect()
}

/// Coarse field from a fine field: at each centroid, the mean of the fine
/// values whose centroids lie in the window of side `m * dx` centred there
/// and inside the domain. Centroid offsets `k dx` with `2|k| <= m` are
/// inside, so even `m` gives `m + 1` cells per axis and odd `m` gives `m`.
pub fn block_average_grid(fine: &FieldRealization, m: usize) -> Result<FieldRealization> {
    let [n1, n2] = fine.grid.shape;
    if m == 0 {
        return Err(Error::Config("block size m must be at least 1".into()));
    }
    if m > n1 || m > n2 {
        return Err(Error::Config(format!("block size m = {m} exceeds the {n1}x{n2} grid")));
    }
    let half = m / 2;
    let rows = window_sums(&fine.values, n1, n2, half, true);
    let sums = window_sums(&rows, n1, n2, half, false);
    let (c1, c2) = (window_counts(n1, half), window_counts(n2, half));
    let values = sums
        .iter()
        .enumerate()
        .map(|(idx, s)| {
            let (i1, i2) = fine.grid.cell(idx);
            s / (c1[i1] * c2[i2])
        })
        .collect();
    Ok(FieldRealization { grid: fine.grid, values, scale: Scale::Coarse, seed: fine.seed })
}

/// Cell indices of `n` distinct centroids drawn uniformly without replacement.
pub fn sample_cells(n_cells: usize, n: usize, rng: &mut ChaCha12Rng) -> Result<Vec<usize>> {
    if n > n_cells {
        return Err(Error::Config(format!("cannot draw {n} distinct cells from {n_cells}")));
    }
    Ok(sample(rng, n_cells, n).into_vec())
}

/// `n` distinct centroids of `field`, each value perturbed by independent
/// `N(0, noise_sigma^2)` noise.
pub fn sample_observations(field: &FieldRealization, n: usize, noise_sigma: f64, seed: u64) -> Result<ObservationSet> {
    sample_observations_with_cells(field, n, noise_sigma, seed).map(|(o, _)| o)
}

/// As [`sample_observations`], also returning the sampled cell indices.
pub fn sample_observations_with_cells(
    field: &FieldRealization,
    n: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<(ObservationSet, Vec<usize>)> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::Config(format!("noise standard deviation must be non-negative, got {noise_sigma}")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let cells = sample_cells(field.grid.len(), n, &mut rng)?;
    let noise = Normal::new(0.0, noise_sigma).expect("valid standard deviation");
    let mut coords = Vec::with_capacity(2 * n);
    let mut values = Vec::with_capacity(n);
    for &c in &cells {
        coords.extend_from_slice(&field.grid.centroid(c));
        let e = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        values.push(field.values[c] + e);
    }
    Ok((ObservationSet { dim: 2, coords, values, scale: field.scale }, cells))
}

/// `(1/L^2) sum_cells [(y_ref - mean)^2 + variance] * cell_area` with
/// `L = min(Lx, Ly)`.
pub fn mse(posterior: &PosteriorSummary, reference: &FieldRealization) -> Result<f64> {
    let grid = &reference.grid;
    let t = &posterior.targets;
    if t.len() != grid.len() || posterior.mean.len() != grid.len() || posterior.variance.len() != grid.len() {
        return Err(Error::Domain(format!("posterior has {} targets but the grid has {} cells", t.len(), grid.len())));
    }
    let tol = 1e-9 * grid.dx();
    for i in 0..grid.len() {
        let c = grid.centroid(i);
        let p = t.point(i);
        if t.tag(i) != reference.scale {
            return Err(Error::Domain(format!("target {i} is at the {} scale, reference is {}", t.tag(i), reference.scale)));
        }
        if (p[0] - c[0]).abs() > tol || (p[1] - c[1]).abs() > tol {
            return Err(Error::Domain(format!("target {i} at {p:?} is not the centroid {c:?}")));
        }
    }
    let sum: f64 = reference
        .values
        .iter()
        .zip(posterior.mean.iter().zip(&posterior.variance))
        .map(|(r, (m, v))| (r - m).powi(2) + v)
        .sum();
    let l = grid.length_scale();
    Ok(sum * grid.cell_area() / (l * l))
}
