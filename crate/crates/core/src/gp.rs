//! Dense Gaussian-process engine over tagged multiscale location sets.
//!
//! Observations are stacked coarse first, then fine. Nuggets (measurement
//! noise) enter only the observation covariance; every prediction targets the
//! noise-free latent field.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{MultiscaleCovariance, Rect, Scale};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_in_place, solve_lower_in_place, solve_upper_t_in_place, CholOutcome};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative jitter levels tried after a failed factorization.
pub const JITTER_LEVELS: [f64; 3] = [1e-12, 1e-10, 1e-8];

/// Points of a common dimension, each tagged with its support scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaggedPoints {
    dim: usize,
    coords: Vec<f64>,
    tags: Vec<Scale>,
}

impl TaggedPoints {
    pub fn new(dim: usize) -> Self {
        Self { dim, coords: Vec::new(), tags: Vec::new() }
    }

    /// Builds from row-major coordinates.
    pub fn from_parts(dim: usize, coords: Vec<f64>, tags: Vec<Scale>) -> Result<Self> {
        if dim == 0 || coords.len() != dim * tags.len() {
            return Err(Error::Domain(format!(
                "{} coordinates do not form {} points of dimension {dim}",
                coords.len(),
                tags.len()
            )));
        }
        Ok(Self { dim, coords, tags })
    }

    /// All points at one scale.
    pub fn uniform(dim: usize, coords: Vec<f64>, scale: Scale) -> Result<Self> {
        let n = if dim == 0 { 0 } else { coords.len() / dim };
        Self::from_parts(dim, coords, vec![scale; n])
    }

    pub fn push(&mut self, p: &[f64], tag: Scale) {
        assert_eq!(p.len(), self.dim, "point dimension mismatch");
        self.coords.extend_from_slice(p);
        self.tags.push(tag);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tag(&self, i: usize) -> Scale {
        self.tags[i]
    }

    pub fn tags(&self) -> &[Scale] {
        &self.tags
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], Scale)> + '_ {
        self.coords.chunks_exact(self.dim.max(1)).zip(self.tags.iter().copied())
    }

    /// The same locations retagged with `scale`.
    pub fn with_scale(&self, scale: Scale) -> Self {
        Self { dim: self.dim, coords: self.coords.clone(), tags: vec![scale; self.len()] }
    }

    /// Subset of the given indices, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut out = Self::new(self.dim);
        for &i in idx {
            out.push(self.point(i), self.tag(i));
        }
        out
    }

    pub fn extend(&mut self, other: &TaggedPoints) {
        assert_eq!(self.dim, other.dim);
        self.coords.extend_from_slice(&other.coords);
        self.tags.extend_from_slice(&other.tags);
    }
}

/// Observations at the two support scales.
///
/// `noise_f` / `noise_c`, when present, replace the model's nugget standard
/// deviation in the observation covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleDataset {
    pub dim: usize,
    /// Row-major `N_f x dim` fine locations.
    pub x_f: Vec<f64>,
    pub y_f: Vec<f64>,
    /// Row-major `N_c x dim` coarse locations.
    pub x_c: Vec<f64>,
    pub y_c: Vec<f64>,
    #[serde(default)]
    pub noise_f: Option<f64>,
    #[serde(default)]
    pub noise_c: Option<f64>,
}

impl MultiscaleDataset {
    pub fn new(dim: usize) -> Self {
        Self { dim, x_f: vec![], y_f: vec![], x_c: vec![], y_c: vec![], noise_f: None, noise_c: None }
    }

    pub fn n_f(&self) -> usize {
        self.y_f.len()
    }

    pub fn n_c(&self) -> usize {
        self.y_c.len()
    }

    pub fn n(&self) -> usize {
        self.n_f() + self.n_c()
    }

    pub fn push(&mut self, p: &[f64], scale: Scale, value: f64) {
        assert_eq!(p.len(), self.dim);
        match scale {
            Scale::Coarse => {
                self.x_c.extend_from_slice(p);
                self.y_c.push(value);
            }
            Scale::Fine => {
                self.x_f.extend_from_slice(p);
                self.y_f.push(value);
            }
        }
    }

    /// Stacked locations `[coarse; fine]`.
    pub fn points(&self) -> TaggedPoints {
        let mut coords = self.x_c.clone();
        coords.extend_from_slice(&self.x_f);
        let mut tags = vec![Scale::Coarse; self.n_c()];
        tags.extend(std::iter::repeat_n(Scale::Fine, self.n_f()));
        TaggedPoints { dim: self.dim, coords, tags }
    }

    /// Stacked values `[y_c; y_f]`.
    pub fn values(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.y_c.iter().chain(&self.y_f).copied())
    }

    /// Only the observations at one scale.
    pub fn single_scale(&self, scale: Scale) -> Self {
        let mut out = self.clone();
        match scale {
            Scale::Coarse => {
                out.x_f.clear();
                out.y_f.clear();
            }
            Scale::Fine => {
                out.x_c.clear();
                out.y_c.clear();
            }
        }
        out
    }

    /// Leaves out stacked observation `i`.
    pub fn without(&self, i: usize) -> Self {
        let mut out = self.clone();
        let d = self.dim;
        if i < self.n_c() {
            out.x_c.drain(i * d..(i + 1) * d);
            out.y_c.remove(i);
        } else {
            let j = i - self.n_c();
            out.x_f.drain(j * d..(j + 1) * d);
            out.y_f.remove(j);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Domain("dataset dimension must be positive".into()));
        }
        if self.x_f.len() != self.dim * self.n_f() || self.x_c.len() != self.dim * self.n_c() {
            return Err(Error::Domain("location and value counts disagree".into()));
        }
        if self.n() == 0 {
            return Err(Error::Domain("dataset holds no observations".into()));
        }
        if let Some(v) = self.y_f.iter().chain(&self.y_c).find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite observation {v}")));
        }
        for (name, s) in [("noise_f", self.noise_f), ("noise_c", self.noise_c)] {
            if let Some(s) = s {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(Error::Domain(format!("{name} must be non-negative, got {s}")));
                }
            }
        }
        Ok(())
    }

    pub fn check_domain(&self, domain: &Rect) -> Result<()> {
        let pts = self.points();
        if let Some((p, _)) = pts.iter().find(|(p, _)| !domain.contains(p)) {
            return Err(Error::Domain(format!("observation location {p:?} lies outside the domain")));
        }
        Ok(())
    }
}

/// Covariance of observations: the model with dataset noise overriding the
/// model nuggets where given.
pub struct ObservationModel<'a> {
    model: &'a dyn MultiscaleCovariance,
    noise: [Option<f64>; 2],
}

impl<'a> ObservationModel<'a> {
    pub fn new(model: &'a dyn MultiscaleCovariance, data: &MultiscaleDataset) -> Self {
        Self { model, noise: [data.noise_c, data.noise_f] }
    }
}

impl MultiscaleCovariance for ObservationModel<'_> {
    fn latent_cov(&self, x: &[f64], sx: Scale, y: &[f64], sy: Scale) -> f64 {
        self.model.latent_cov(x, sx, y, sy)
    }
    fn nugget_variance(&self, scale: Scale) -> f64 {
        let k = match scale {
            Scale::Coarse => 0,
            Scale::Fine => 1,
        };
        match self.noise[k] {
            Some(s) => s * s,
            None => self.model.nugget_variance(scale),
        }
    }
    fn is_valid(&self) -> bool {
        self.model.is_valid()
    }
    fn domain(&self) -> Option<Rect> {
        self.model.domain()
    }
}

fn check_points_in_domain(model: &dyn MultiscaleCovariance, pts: &TaggedPoints) -> Result<()> {
    if let Some(dom) = model.domain() {
        if let Some((p, _)) = pts.iter().find(|(p, _)| !dom.contains(p)) {
            return Err(Error::Domain(format!("location {p:?} lies outside the model domain")));
        }
    }
    Ok(())
}

/// `|A| x |B|` covariance matrix. With `nugget`, the nugget variance is added
/// wherever two points coincide in location and scale.
pub fn assemble_cov(
    a: &TaggedPoints,
    b: &TaggedPoints,
    model: &dyn MultiscaleCovariance,
    nugget: bool,
) -> Result<DMatrix<f64>> {
    if a.dim() != b.dim() && !a.is_empty() && !b.is_empty() {
        return Err(Error::Domain(format!("point dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    check_points_in_domain(model, a)?;
    check_points_in_domain(model, b)?;
    let (m, n) = (a.len(), b.len());
    let mut out = DMatrix::zeros(m, n);
    if m == 0 || n == 0 {
        return Ok(out);
    }
    out.as_mut_slice().par_chunks_mut(m).enumerate().for_each(|(j, col)| {
        let (y, sy) = (b.point(j), b.tag(j));
        for (i, c) in col.iter_mut().enumerate() {
            let (x, sx) = (a.point(i), a.tag(i));
            *c = if nugget { model.cov(x, sx, y, sy) } else { model.latent_cov(x, sx, y, sy) };
        }
    });
    Ok(out)
}

/// Symmetric covariance matrix of one point set; only the lower triangle is
/// evaluated.
pub fn assemble_sym(pts: &TaggedPoints, model: &dyn MultiscaleCovariance, nugget: bool) -> Result<DMatrix<f64>> {
    check_points_in_domain(model, pts)?;
    let n = pts.len();
    let mut out = DMatrix::zeros(n, n);
    out.as_mut_slice().par_chunks_mut(n.max(1)).enumerate().for_each(|(j, col)| {
        let (y, sy) = (pts.point(j), pts.tag(j));
        for (i, c) in col.iter_mut().enumerate().skip(j) {
            let (x, sx) = (pts.point(i), pts.tag(i));
            *c = if nugget { model.cov(x, sx, y, sy) } else { model.latent_cov(x, sx, y, sy) };
        }
    });
    for j in 0..n {
        for i in 0..j {
            out[(i, j)] = out[(j, i)];
        }
    }
    Ok(out)
}

/// Cholesky factor `C + jitter I = L L^T`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
    jitter: f64,
    jitter_rel: f64,
}

/// Lower Cholesky factor with the retry-with-jitter policy: on failure the
/// diagonal is loaded with `delta * trace / N` for each `delta` in
/// [`JITTER_LEVELS`] in turn.
pub fn factorize(c: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let n = c.nrows();
    if n != c.ncols() {
        return Err(Error::Domain(format!("matrix is {}x{}, not square", n, c.ncols())));
    }
    if n == 0 {
        return Ok(CholeskyFactor { l: DMatrix::zeros(0, 0), jitter: 0.0, jitter_rel: 0.0 });
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("covariance matrix has non-finite entries".into()));
    }
    let scale = c.amax();
    for j in 0..n {
        for i in j + 1..n {
            if (c[(i, j)] - c[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Domain(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let max_diag = c.diagonal().max();
    let mean_diag = c.trace() / n as f64;
    let floor = n as f64 * f64::EPSILON * max_diag.max(0.0);
    let mut min_pivot = f64::INFINITY;
    let mut last_jitter = 0.0;
    for delta in std::iter::once(0.0).chain(JITTER_LEVELS) {
        let jitter = delta * mean_diag;
        let mut l = c.clone();
        for i in 0..n {
            l[(i, i)] += jitter;
        }
        match cholesky_in_place(&mut l, floor) {
            CholOutcome::Ok => return Ok(CholeskyFactor { l, jitter, jitter_rel: delta }),
            CholOutcome::Failed { pivot, .. } => {
                min_pivot = pivot;
                last_jitter = jitter;
            }
        }
    }
    Err(Error::NotPositiveDefinite { min_pivot, jitter: last_jitter })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn into_l(self) -> DMatrix<f64> {
        self.l
    }

    /// Absolute diagonal jitter that was added.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Jitter level `delta` relative to the mean diagonal.
    pub fn jitter_rel(&self) -> f64 {
        self.jitter_rel
    }

    pub fn jittered(&self) -> bool {
        self.jitter > 0.0
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L^-1 B` in place.
    pub fn half_solve_in_place(&self, b: &mut DMatrix<f64>) {
        solve_lower_in_place(&self.l, b);
    }

    pub fn half_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.half_solve_in_place(&mut x);
        x
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        solve_lower_in_place(&self.l, &mut x);
        solve_upper_t_in_place(&self.l, &mut x);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        solve_lower_in_place(&self.l, &mut x);
        solve_upper_t_in_place(&self.l, &mut x);
        DVector::from_column_slice(x.as_slice())
    }

    /// Diagonal of the inverse, `[C^-1]_ii = sum_k [L^-1]_ki^2`.
    pub fn inverse_diagonal(&self) -> DVector<f64> {
        let n = self.dim();
        let l = self.l.as_slice();
        let mut out = DVector::zeros(n);
        let mut x = vec![0.0; n];
        // column j of L^-1 is supported on rows j..n
        for j in 0..n {
            x[j..].iter_mut().for_each(|v| *v = 0.0);
            x[j] = 1.0;
            for k in j..n {
                let col = &l[k * n + k..(k + 1) * n];
                let xk = x[k] / col[0];
                x[k] = xk;
                if xk != 0.0 {
                    for (xi, lik) in x[k + 1..].iter_mut().zip(&col[1..]) {
                        *xi -= xk * lik;
                    }
                }
            }
            out[j] = x[j..].iter().map(|v| v * v).sum();
        }
        out
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_mat(&DMatrix::identity(self.dim(), self.dim()))
    }
}

/// Conditional mean and variance of the latent field at tagged targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub targets: TaggedPoints,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    #[serde(skip)]
    pub covariance: Option<DMatrix<f64>>,
    /// Number of slightly negative variances clamped to zero.
    pub clamped: usize,
}

/// A dataset conditioned under a model, reusable for many target sets.
pub struct Posterior<'a> {
    model: &'a dyn MultiscaleCovariance,
    points: TaggedPoints,
    factor: CholeskyFactor,
    alpha: DVector<f64>,
}

impl<'a> Posterior<'a> {
    pub fn new(data: &MultiscaleDataset, model: &'a dyn MultiscaleCovariance) -> Result<Self> {
        data.validate()?;
        let points = data.points();
        let obs = ObservationModel::new(model, data);
        check_duplicates(&points, &obs)?;
        let c = assemble_sym(&points, &obs, true)?;
        let factor = factorize(&c)?;
        let alpha = factor.solve_vec(&data.values());
        Ok(Self { model, points, factor, alpha })
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn points(&self) -> &TaggedPoints {
        &self.points
    }

    pub fn model(&self) -> &dyn MultiscaleCovariance {
        self.model
    }

    /// `C_s^-1 y`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Posterior mean at `targets`.
    pub fn mean(&self, targets: &TaggedPoints) -> Result<DVector<f64>> {
        let k = assemble_cov(targets, &self.points, self.model, false)?;
        Ok(&k * &self.alpha)
    }

    /// `L^-1 C(X_s, targets)`, the data contribution to posterior covariances.
    pub fn reduction(&self, targets: &TaggedPoints) -> Result<DMatrix<f64>> {
        let mut v = assemble_cov(&self.points, targets, self.model, false)?;
        self.factor.half_solve_in_place(&mut v);
        Ok(v)
    }

    /// Posterior covariance between two target sets.
    pub fn cov_between(&self, a: &TaggedPoints, b: &TaggedPoints) -> Result<DMatrix<f64>> {
        let va = self.reduction(a)?;
        let vb = self.reduction(b)?;
        let prior = assemble_cov(a, b, self.model, false)?;
        let mut out = prior;
        out.gemm_tr(-1.0, &va, &vb, 1.0);
        Ok(out)
    }

    pub fn predict(&self, targets: &TaggedPoints, want_cov: bool) -> Result<PosteriorSummary> {
        if targets.is_empty() {
            return Ok(PosteriorSummary {
                targets: targets.clone(),
                mean: vec![],
                variance: vec![],
                covariance: want_cov.then(|| DMatrix::zeros(0, 0)),
                clamped: 0,
            });
        }
        let mut v = assemble_cov(&self.points, targets, self.model, false)?;
        let mean = v.tr_mul(&self.alpha);
        self.factor.half_solve_in_place(&mut v);
        let prior_var: Vec<f64> = targets.iter().map(|(x, s)| self.model.latent_cov(x, s, x, s)).collect();
        let mut clamped = 0;
        let mut variance: Vec<f64> = prior_var
            .iter()
            .zip(v.column_iter())
            .map(|(p, col)| {
                let s = p - col.norm_squared();
                if s < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    s
                }
            })
            .collect();
        let covariance = if want_cov {
            let mut c = assemble_sym(targets, self.model, false)?;
            c.gemm_tr(-1.0, &v, &v, 1.0);
            for (i, var) in variance.iter_mut().enumerate() {
                if c[(i, i)] < 0.0 {
                    c[(i, i)] = 0.0;
                }
                *var = c[(i, i)];
            }
            Some(c)
        } else {
            None
        };
        Ok(PosteriorSummary { targets: targets.clone(), mean: mean.as_slice().to_vec(), variance, covariance, clamped })
    }
}

/// Conditional mean and variance (optionally covariance) of the latent field
/// at `targets` given `data`.
pub fn condition(
    data: &MultiscaleDataset,
    model: &dyn MultiscaleCovariance,
    targets: &TaggedPoints,
    want_cov: bool,
) -> Result<PosteriorSummary> {
    Posterior::new(data, model)?.predict(targets, want_cov)
}

/// Factor of the observation covariance and the stacked values.
fn observation_factor(data: &MultiscaleDataset, model: &dyn MultiscaleCovariance) -> Result<(CholeskyFactor, DVector<f64>)> {
    data.validate()?;
    let obs = ObservationModel::new(model, data);
    let points = data.points();
    check_duplicates(&points, &obs)?;
    let c = assemble_sym(&points, &obs, true)?;
    Ok((factorize(&c)?, data.values()))
}

/// Repeated (location, scale) pairs are only allowed with positive noise.
fn check_duplicates(points: &TaggedPoints, obs: &ObservationModel<'_>) -> Result<()> {
    for scale in Scale::ALL {
        if obs.nugget_variance(scale) > 0.0 {
            continue;
        }
        let mut locs: Vec<&[f64]> = points.iter().filter(|(_, s)| *s == scale).map(|(p, _)| p).collect();
        locs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        if let Some(w) = locs.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Domain(format!(
                "repeated {scale} observation at {:?} requires positive noise",
                w[0]
            )));
        }
    }
    Ok(())
}

/// Log marginal likelihood `-y^T C^-1 y / 2 - log|C| / 2 - N log(2 pi) / 2`.
///
/// Returns `-inf` for models that do not define a valid covariance.
pub fn log_marginal_likelihood(data: &MultiscaleDataset, model: &dyn MultiscaleCovariance) -> Result<f64> {
    if !model.is_valid() {
        return Ok(f64::NEG_INFINITY);
    }
    let (f, y) = observation_factor(data, model)?;
    Ok(ml_from_factor(&f, &y))
}

pub(crate) fn ml_from_factor(f: &CholeskyFactor, y: &DVector<f64>) -> f64 {
    let mut z = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    f.half_solve_in_place(&mut z);
    -0.5 * z.norm_squared() - 0.5 * f.log_det() - 0.5 * y.len() as f64 * LN_2PI
}

/// Leave-one-out log predictive density, summed over observations, from a
/// single factorization.
///
/// Returns `-inf` for models that do not define a valid covariance.
pub fn loo_cv_pseudolikelihood(data: &MultiscaleDataset, model: &dyn MultiscaleCovariance) -> Result<f64> {
    if !model.is_valid() {
        return Ok(f64::NEG_INFINITY);
    }
    let (f, y) = observation_factor(data, model)?;
    loo_from_factor(&f, &y)
}

pub(crate) fn loo_from_factor(f: &CholeskyFactor, y: &DVector<f64>) -> Result<f64> {
    let alpha = f.solve_vec(y);
    let dinv = f.inverse_diagonal();
    let mut total = 0.0;
    for i in 0..y.len() {
        let d = dinv[i];
        if !(d > 0.0) {
            return Err(Error::Numerical(format!("non-positive inverse diagonal {d:e} at observation {i}")));
        }
        let var = 1.0 / d;
        let resid = alpha[i] / d;
        total += -0.5 * var.ln() - 0.5 * resid * resid / var - 0.5 * LN_2PI;
    }
    Ok(total)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn locations(n_c: usize, n_f: usize, rng: &mut ChaCha12Rng) -> MultiscaleDataset {
        let mut d = MultiscaleDataset::new(2);
        for (n, s) in [(n_c, Scale::Coarse), (n_f, Scale::Fine)] {
            for _ in 0..n {
                let p = [rng.random::<f64>(), rng.random::<f64>()];
                d.push(&p, s, 0.0);
            }
        }
        d
    }

    /// Uniform random locations in the unit square with uniform random values.
    pub(crate) fn random_dataset(n_c: usize, n_f: usize, seed: u64) -> MultiscaleDataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut d = locations(n_c, n_f, &mut rng);
        for v in d.y_c.iter_mut().chain(d.y_f.iter_mut()) {
            *v = rng.random_range(-2.0..2.0);
        }
        d
    }

    /// Exact draw of observations from `model` at uniform random locations.
    pub(crate) fn simulated_from(model: &dyn MultiscaleCovariance, n_c: usize, n_f: usize, seed: u64) -> MultiscaleDataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut d = locations(n_c, n_f, &mut rng);
        let c = assemble_sym(&d.points(), model, true).unwrap();
        let l = factorize(&c).unwrap().into_l();
        let xi = DVector::from_iterator(d.n(), (0..d.n()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let y = l * xi;
        let nc = d.n_c();
        d.y_c.copy_from_slice(&y.as_slice()[..nc]);
        d.y_f.copy_from_slice(&y.as_slice()[nc..]);
        d
    }

    pub(crate) fn simulated_dataset(p: &crate::covariance::BivariateMaternParams, n_c: usize, n_f: usize, seed: u64) -> MultiscaleDataset {
        simulated_from(p, n_c, n_f, seed)
    }
}
