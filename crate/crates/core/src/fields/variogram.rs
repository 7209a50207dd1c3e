//! Method-of-moments variogram estimators.

use serde::{Deserialize, Serialize};

use crate::covariance::Scale;
use crate::error::{Error, Result};
use crate::gp::MultiscaleDataset;

/// Observations at a single scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub dim: usize,
    /// Row-major locations.
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
    pub scale: Scale,
}

impl ObservationSet {
    pub fn from_dataset(data: &MultiscaleDataset, scale: Scale) -> Self {
        let (coords, values) = match scale {
            Scale::Coarse => (data.x_c.clone(), data.y_c.clone()),
            Scale::Fine => (data.x_f.clone(), data.y_f.clone()),
        };
        Self { dim: data.dim, coords, values, scale }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }
}

/// One lag bin. `value` is `None` when no pair fell in the bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    /// Mean pair distance in the bin, or the bin centre when empty.
    pub lag: f64,
    pub value: Option<f64>,
    pub count: usize,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn binned<F>(n_bins: usize, max_lag: f64, mut pairs: F) -> Result<Vec<VariogramBin>>
where
    F: FnMut(&mut dyn FnMut(f64, f64)),
{
    if !(max_lag > 0.0) || !max_lag.is_finite() {
        return Err(Error::Config(format!("max_lag must be positive, got {max_lag}")));
    }
    if n_bins == 0 {
        return Err(Error::Config("n_bins must be at least 1".into()));
    }
    let width = max_lag / n_bins as f64;
    let mut sum = vec![0.0; n_bins];
    let mut lag = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    pairs(&mut |d, v| {
        if d > max_lag {
            return;
        }
        let b = ((d / width) as usize).min(n_bins - 1);
        sum[b] += v;
        lag[b] += d;
        count[b] += 1;
    });
    Ok((0..n_bins)
        .map(|b| {
            if count[b] == 0 {
                VariogramBin { lag: (b as f64 + 0.5) * width, value: None, count: 0 }
            } else {
                let n = count[b] as f64;
                VariogramBin { lag: lag[b] / n, value: Some(sum[b] / n), count: count[b] }
            }
        })
        .collect())
}

/// Empirical semivariogram `sum (y_i - y_j)^2 / (2 |P_b|)` over lag bins of
/// equal width on `[0, max_lag]`.
///
/// With `other`, the pseudo cross-variogram between the two sets is
/// estimated from every cross pair `(i in a, j in other)` binned by lag, so
/// no collocated observations are required. Its model counterpart is
/// `(C_a(0) + C_b(0)) / 2 - C_ab(r)`, nuggets included in `C(0)`.
pub fn empirical_variogram(
    a: &ObservationSet,
    other: Option<&ObservationSet>,
    n_bins: usize,
    max_lag: f64,
) -> Result<Vec<VariogramBin>> {
    match other {
        None => {
            if a.len() < 2 {
                return Err(Error::Config(format!("variogram needs at least 2 {} observations", a.scale)));
            }
            binned(n_bins, max_lag, |add| {
                for i in 0..a.len() {
                    for j in i + 1..a.len() {
                        let d = dist(a.point(i), a.point(j));
                        add(d, 0.5 * (a.values[i] - a.values[j]).powi(2));
                    }
                }
            })
        }
        Some(b) => {
            if a.len() < 2 || b.len() < 2 {
                return Err(Error::Config("cross-variogram needs at least 2 observations per scale".into()));
            }
            binned(n_bins, max_lag, |add| {
                for i in 0..a.len() {
                    for j in 0..b.len() {
                        let d = dist(a.point(i), b.point(j));
                        add(d, 0.5 * (a.values[i] - b.values[j]).powi(2));
                    }
                }
            })
        }
    }
}

/// Empirical cross-covariance `mean y_i z_j` of a zero-mean pair of sets,
/// binned by lag.
pub fn empirical_cross_covariance(
    a: &ObservationSet,
    b: &ObservationSet,
    n_bins: usize,
    max_lag: f64,
) -> Result<Vec<VariogramBin>> {
    binned(n_bins, max_lag, |add| {
        for i in 0..a.len() {
            for j in 0..b.len() {
                add(dist(a.point(i), b.point(j)), a.values[i] * b.values[j]);
            }
        }
    })
}

/// Half the diagonal of the bounding box of the given sets.
pub fn default_max_lag(sets: &[&ObservationSet]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for s in sets {
        for i in 0..s.len() {
            for (k, &c) in s.point(i).iter().enumerate().take(3) {
                lo[k] = lo[k].min(c);
                hi[k] = hi[k].max(c);
            }
        }
    }
    let d2: f64 = (0..3).filter(|&k| hi[k] >= lo[k]).map(|k| (hi[k] - lo[k]).powi(2)).sum();
    0.5 * d2.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(coords: Vec<f64>, values: Vec<f64>) -> ObservationSet {
        ObservationSet { dim: 2, coords, values, scale: Scale::Fine }
    }

    #[test]
    fn two_points_single_bin() {
        let s = set(vec![0.0, 0.0, 0.3, 0.4], vec![1.0, -2.0]);
        let v = empirical_variogram(&s, None, 4, 1.0).unwrap();
        let filled: Vec<_> = v.iter().filter(|b| b.count > 0).collect();
        assert_eq!(filled.len(), 1);
        assert_eq!(filled[0].value, Some(4.5));
        assert!((filled[0].lag - 0.5).abs() < 1e-15);
        assert!(v.iter().filter(|b| b.count == 0).all(|b| b.value.is_none()));
    }

    #[test]
    fn constant_field_is_flat() {
        let coords: Vec<f64> = (0..20).flat_map(|i| [i as f64 * 0.05, (i % 3) as f64 * 0.1]).collect();
        let s = set(coords, vec![3.0; 20]);
        for b in empirical_variogram(&s, None, 5, 1.0).unwrap() {
            assert!(b.value.is_none_or(|v| v == 0.0));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let s = set(vec![0.0, 0.0, 1.0, 1.0], vec![0.0, 1.0]);
        assert!(matches!(empirical_variogram(&s, None, 4, 0.0), Err(Error::Config(_))));
        let one = set(vec![0.0, 0.0], vec![0.0]);
        assert!(empirical_variogram(&one, None, 4, 1.0).is_err());
    }

    #[test]
    fn cross_pairs_use_every_combination() {
        let a = set(vec![0.0, 0.0, 1.0, 0.0], vec![1.0, 2.0]);
        let b = ObservationSet { scale: Scale::Coarse, ..set(vec![0.0, 0.0, 0.0, 1.0], vec![0.0, 1.0]) };
        let v = empirical_variogram(&a, Some(&b), 1, 2.0).unwrap();
        assert_eq!(v[0].count, 4);
        let expected = 0.5 * (1.0 + 0.0 + 4.0 + 1.0) / 4.0;
        assert!((v[0].value.unwrap() - expected).abs() < 1e-15);
    }
}
