//! Hyperparameter estimation by constrained maximization of the marginal
//! likelihood or the leave-one-out pseudo-likelihood.
//!
//! The search runs in log coordinates. The cross length-scale is carried as
//! its log-offset below the largest value allowed by the length-scale
//! condition, and the correlation as a signed fraction of its current bound,
//! so both validity conditions reduce to box bounds.

mod assembler;
mod bfgs;
mod block;
mod init;
mod transform;

pub use bfgs::{FD_STEP, LARGE};
pub use block::{fit_block_average, BlockAvgFitResult};
pub use init::{init_from_empirical, init_single_scale};
pub use transform::{transform, untransform, TransformedParams, NAMES, NUGGET_FLOOR, N_PARAMS};

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{check_validity, rho_bound, BivariateMaternParams, MultiscaleCovariance, ValidityReport};
use crate::error::{Error, Result};
use crate::gp::{factorize, loo_from_factor, ml_from_factor, MultiscaleDataset, ObservationModel};

use bfgs::{minimize, Limits, Problem};
use transform::*;

/// Smoothness search box.
pub const NU_MIN: f64 = 0.05;
pub const NU_MAX: f64 = 30.0;

/// Scale of the quadratic constraint-violation penalty.
pub const PENALTY_SCALE: f64 = 1e6;

/// Model-selection criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Ml,
    Loo,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Ml => "ml",
            Criterion::Loo => "loo",
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml" => Ok(Criterion::Ml),
            "loo" | "loo-cv" | "loocv" => Ok(Criterion::Loo),
            _ => Err(Error::Parse(format!("unknown criterion `{s}` (expected ml|loo)"))),
        }
    }
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub n_starts: usize,
    /// Objective evaluations allowed per start.
    pub max_evals: usize,
    pub max_iter: usize,
    /// Tolerance on the projected-gradient step in transformed coordinates.
    pub tol: f64,
    /// Standard deviation of the restart perturbation.
    pub restart_sd: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { n_starts: 5, max_evals: 4000, max_iter: 200, tol: 1e-4, restart_sd: 0.25, seed: 0 }
    }
}

/// Per-start diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub index: usize,
    pub initial_value: f64,
    pub final_value: f64,
    pub n_evals: usize,
    pub iterations: usize,
    pub converged: bool,
    pub reason: String,
    pub jitter_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_star: BivariateMaternParams,
    /// Negative criterion value at `theta_star`.
    pub objective_value: f64,
    pub criterion: Criterion,
    pub n_evals: usize,
    pub converged: bool,
    pub active_constraints: Vec<String>,
    pub jitter_events: usize,
    pub start_index: usize,
    pub validity: ValidityReport,
    pub starts: Vec<StartReport>,
    pub options: FitOptions,
}

/// Outcome of one criterion evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Value to minimize.
    pub value: f64,
    pub feasible: bool,
    pub factorization_failed: bool,
    pub jittered: bool,
}

/// Criterion value (to maximize) of any covariance model.
pub fn criterion_value(data: &MultiscaleDataset, model: &dyn MultiscaleCovariance, criterion: Criterion) -> Result<(f64, bool)> {
    let obs = ObservationModel::new(model, data);
    let pts = data.points();
    let c = crate::gp::assemble_sym(&pts, &obs, true)?;
    let f = factorize(&c)?;
    let y = data.values();
    let v = match criterion {
        Criterion::Ml => ml_from_factor(&f, &y),
        Criterion::Loo => loo_from_factor(&f, &y)?,
    };
    Ok((v, f.jittered()))
}

fn violation_penalty(r: &ValidityReport, p: &BivariateMaternParams) -> f64 {
    let va = (-r.margin_a / p.a_cf().powi(2)).max(0.0);
    let vr = (-r.margin_rho).max(0.0);
    PENALTY_SCALE * (va * va + vr * vr)
}

/// Detailed objective: `-L` at feasible parameters, `LARGE` plus a quadratic
/// penalty on the constraint violations otherwise, and `LARGE` when the
/// covariance cannot be factored.
pub fn evaluate(data: &MultiscaleDataset, z: &TransformedParams, criterion: Criterion) -> Evaluation {
    evaluate_by(z, |p| criterion_value(data, p, criterion))
}

fn evaluate_by(z: &TransformedParams, value: impl FnOnce(&BivariateMaternParams) -> Result<(f64, bool)>) -> Evaluation {
    let p = untransform(z);
    let r = check_validity(&p, crate::covariance::VALIDITY_TOL);
    if !r.feasible || p.check_ranges().is_err() {
        return Evaluation { value: LARGE + violation_penalty(&r, &p), feasible: false, factorization_failed: false, jittered: false };
    }
    match value(&p) {
        Ok((v, jittered)) if v.is_finite() => Evaluation { value: -v, feasible: true, factorization_failed: false, jittered },
        _ => Evaluation { value: LARGE, feasible: true, factorization_failed: true, jittered: false },
    }
}

fn cached_value(asm: &assembler::Assembler, y: &nalgebra::DVector<f64>, p: &BivariateMaternParams, criterion: Criterion) -> Result<(f64, bool)> {
    let f = factorize(&asm.covariance(p))?;
    let v = match criterion {
        Criterion::Ml => ml_from_factor(&f, y),
        Criterion::Loo => loo_from_factor(&f, y)?,
    };
    Ok((v, f.jittered()))
}

/// Objective to minimize at transformed coordinates `z`.
pub fn objective(data: &MultiscaleDataset, z: &TransformedParams, criterion: Criterion) -> f64 {
    evaluate(data, z, criterion).value
}

/// Search bounds in internal coordinates, scaled to the data.
struct Bounds {
    lo: [f64; N_PARAMS],
    hi: [f64; N_PARAMS],
}

impl Bounds {
    fn new(data: &MultiscaleDataset) -> Self {
        let pts = data.points();
        let mut extent: f64 = 0.0;
        for k in 0..data.dim {
            let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
            for (p, _) in pts.iter() {
                a = a.min(p[k]);
                b = b.max(p[k]);
            }
            extent = extent.max(b - a);
        }
        if !(extent > 0.0) {
            extent = 1.0;
        }
        let y = data.values();
        let sd = (y.norm_squared() / y.len().max(1) as f64).sqrt().max(1e-12);
        let (llo, lhi) = ((1e-4 * extent).ln(), (10.0 * extent).ln());
        let (slo, shi) = ((1e-4 * sd).ln(), (10.0 * sd).ln());
        let (nlo, nhi) = ((1e-8 * sd).max(NUGGET_FLOOR).ln(), (2.0 * sd).ln());
        let mut lo = [0.0; N_PARAMS];
        let mut hi = [0.0; N_PARAMS];
        for i in [LAMBDA_C, LAMBDA_F] {
            lo[i] = llo;
            hi[i] = lhi;
        }
        // offset below the largest admissible cross length
        lo[LAMBDA_CF] = -10.0;
        hi[LAMBDA_CF] = -1e-12;
        for i in [NU_C, NU_F] {
            lo[i] = NU_MIN.ln();
            hi[i] = NU_MAX.ln();
        }
        for i in [SIGMA_C, SIGMA_F] {
            lo[i] = slo;
            hi[i] = shi;
        }
        lo[XI] = -1.0;
        hi[XI] = 1.0;
        for i in [SIGMA_NC, SIGMA_NF] {
            lo[i] = nlo;
            hi[i] = nhi;
        }
        Self { lo, hi }
    }
}

fn ln_max_lambda_cf(z: &[f64]) -> f64 {
    let p = untransform(&TransformedParams(z.try_into().expect("length")));
    p.max_lambda_cf().ln()
}

/// Largest admissible `|rho|`, capped below one.
fn rho_cap(p: &BivariateMaternParams) -> f64 {
    rho_bound(p).min(1.0 - 1e-12)
}

/// Internal coordinates: the cross length-scale as its log-offset below the
/// admissible maximum and `rho = cap * u` with `|u| <= 1`, so both validity
/// conditions become bounds.
fn to_internal(z: &TransformedParams) -> [f64; N_PARAMS] {
    let mut u = z.0;
    u[LAMBDA_CF] = z.0[LAMBDA_CF] - ln_max_lambda_cf(&z.0);
    let p = untransform(z);
    u[XI] = (p.rho / rho_cap(&p)).clamp(-1.0, 1.0);
    u
}

fn to_transformed(u: &[f64]) -> TransformedParams {
    let mut z: [f64; N_PARAMS] = u.try_into().expect("length");
    z[LAMBDA_CF] = u[LAMBDA_CF] + ln_max_lambda_cf(&z);
    let p = untransform(&TransformedParams(z));
    let rho = rho_cap(&p) * u[XI].clamp(-1.0, 1.0);
    z[XI] = ((1.0 + rho) / (1.0 - rho)).ln();
    TransformedParams(z)
}

/// Which coordinates a dataset can inform.
fn active_mask(data: &MultiscaleDataset) -> [bool; N_PARAMS] {
    let mut m = [true; N_PARAMS];
    let (has_c, has_f) = (data.n_c() > 0, data.n_f() > 0);
    if !has_c || !has_f {
        m[LAMBDA_CF] = false;
        m[XI] = false;
    }
    if !has_c {
        for i in [LAMBDA_C, NU_C, SIGMA_C, SIGMA_NC] {
            m[i] = false;
        }
    }
    if !has_f {
        for i in [LAMBDA_F, NU_F, SIGMA_F, SIGMA_NF] {
            m[i] = false;
        }
    }
    m
}

/// Fills the parameters a single-scale dataset cannot inform so that the
/// full parameter set stays valid.
fn complete_single_scale(p: &BivariateMaternParams, data: &MultiscaleDataset) -> BivariateMaternParams {
    let mut q = *p;
    if data.n_c() == 0 {
        q.lambda_c = q.lambda_f;
        q.nu_c = q.nu_f;
        q.sigma_c = q.sigma_f;
        q.sigma_nc = q.sigma_nf;
    }
    if data.n_f() == 0 {
        q.lambda_f = q.lambda_c;
        q.nu_f = q.nu_c;
        q.sigma_f = q.sigma_c;
        q.sigma_nf = q.sigma_nc;
    }
    if data.n_c() == 0 || data.n_f() == 0 {
        q.rho = 0.0;
        q.lambda_cf = q.max_lambda_cf() * 0.99;
    }
    q
}

fn active_constraints(p: &BivariateMaternParams, u: &[f64], b: &Bounds) -> Vec<String> {
    let r = check_validity(p, 0.0);
    let mut out = Vec::new();
    if r.margin_a.abs() <= 1e-6 * p.a_cf().powi(2) {
        out.push("length_scale_condition".to_string());
    }
    if r.margin_rho <= 1e-6 {
        out.push("correlation_bound".to_string());
    }
    for i in 0..N_PARAMS {
        if i == LAMBDA_CF {
            continue;
        }
        if u[i] <= b.lo[i] {
            out.push(format!("{}_lower", NAMES[i]));
        } else if u[i] >= b.hi[i] {
            out.push(format!("{}_upper", NAMES[i]));
        }
    }
    out
}

/// Restart points: `x0` itself, then `x0` perturbed on active coordinates by
/// independent normals drawn from substream `k` of the seeded generator.
pub(crate) fn start_points(x0: &[f64], active: &[bool], options: &FitOptions) -> Result<Vec<Vec<f64>>> {
    let normal = Normal::new(0.0, options.restart_sd)
        .map_err(|e| Error::Config(format!("invalid restart_sd {}: {e}", options.restart_sd)))?;
    Ok((0..options.n_starts)
        .map(|k| {
            let mut x = x0.to_vec();
            if k > 0 {
                let mut rng = ChaCha12Rng::seed_from_u64(options.seed);
                rng.set_stream(k as u64);
                for (xi, &a) in x.iter_mut().zip(active) {
                    let e = normal.sample(&mut rng);
                    if a {
                        *xi += e;
                    }
                }
            }
            x
        })
        .collect())
}

/// Best start by value, ties broken by the lower index.
pub(crate) fn best_start(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|b| *v < values[b].unwrap()) {
                best = Some(i);
            }
        }
    }
    best
}

/// Fits the full bivariate Matérn model. Without `init`, parameters are
/// initialized from empirical variograms.
pub fn fit(
    data: &MultiscaleDataset,
    criterion: Criterion,
    init: Option<&BivariateMaternParams>,
    options: &FitOptions,
) -> Result<FitResult> {
    data.validate()?;
    if options.n_starts == 0 {
        return Err(Error::Config("n_starts must be at least 1".into()));
    }
    let init = match init {
        Some(p) => *p,
        None if data.n_c() == 0 => init_single_scale(data, crate::covariance::Scale::Fine)?,
        None if data.n_f() == 0 => init_single_scale(data, crate::covariance::Scale::Coarse)?,
        None => init_from_empirical(data)?,
    };
    let init = complete_single_scale(&init, data);
    let z0 = transform(&init)?;
    let bounds = Bounds::new(data);
    let mask = active_mask(data);
    let u0 = to_internal(&z0);
    let starts = start_points(&u0, &mask, options)?;
    let limits = Limits { max_evals: options.max_evals, max_iter: options.max_iter, tol: options.tol };

    let runs: Vec<Option<(bfgs::Outcome, usize)>> = starts
        .par_iter()
        .map(|x0| {
            let jitters = Cell::new(0usize);
            let asm = assembler::Assembler::new(data);
            let y = data.values();
            let f = |u: &[f64]| {
                let e = evaluate_by(&to_transformed(u), |p| cached_value(&asm, &y, p, criterion));
                if e.jittered {
                    jitters.set(jitters.get() + 1);
                }
                e.value
            };
            let problem = Problem {
                f: &f,
                fix: &|_| {},
                lo: bounds.lo.to_vec(),
                hi: bounds.hi.to_vec(),
                active: mask.to_vec(),
            };
            let out = minimize(&problem, x0, limits);
            (out.value < LARGE).then_some((out, jitters.get()))
        })
        .collect();

    let reports: Vec<StartReport> = runs
        .iter()
        .enumerate()
        .map(|(index, r)| match r {
            Some((o, j)) => StartReport {
                index,
                initial_value: o.initial_value,
                final_value: o.value,
                n_evals: o.n_evals,
                iterations: o.iterations,
                converged: o.converged,
                reason: o.reason.to_string(),
                jitter_events: *j,
            },
            None => StartReport {
                index,
                initial_value: f64::NAN,
                final_value: f64::NAN,
                n_evals: 0,
                iterations: 0,
                converged: false,
                reason: "no feasible factorizable point reached".into(),
                jitter_events: 0,
            },
        })
        .collect();
    let values: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().map(|(o, _)| o.value)).collect();
    let Some(best) = best_start(&values) else {
        let detail: Vec<String> = reports.iter().map(|r| format!("start {}: {}", r.index, r.reason)).collect();
        return Err(Error::Optimization(format!("all starts failed ({})", detail.join("; "))));
    };
    let (out, _) = runs[best].as_ref().unwrap();
    let z = to_transformed(&out.x);
    let theta = untransform(&z);
    let validity = check_validity(&theta, crate::covariance::VALIDITY_TOL);
    let recheck = evaluate(data, &z, criterion);
    if !validity.feasible || !recheck.feasible || recheck.factorization_failed {
        return Err(Error::Optimization("best start ended at an infeasible point".into()));
    }
    Ok(FitResult {
        theta_star: theta,
        objective_value: recheck.value,
        criterion,
        n_evals: reports.iter().map(|r| r.n_evals).sum(),
        converged: out.converged,
        active_constraints: active_constraints(&theta, &out.x, &bounds),
        jitter_events: reports.iter().map(|r| r.jitter_events).sum(),
        start_index: best,
        validity,
        starts: reports,
        options: *options,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Scale;

    pub(crate) fn truth() -> BivariateMaternParams {
        BivariateMaternParams {
            lambda_c: 0.3,
            lambda_f: 0.2,
            lambda_cf: 0.22,
            nu_c: 1.5,
            nu_f: 0.5,
            sigma_c: 0.8,
            sigma_f: 1.0,
            rho: 0.55,
            sigma_nc: 0.05,
            sigma_nf: 0.05,
        }
    }

    #[test]
    fn objective_penalizes_violations() {
        let data = crate::gp::tests_support::random_dataset(5, 5, 3);
        let p = truth();
        let feasible = objective(&data, &transform(&p).unwrap(), Criterion::Ml);
        let l = crate::gp::log_marginal_likelihood(&data, &p).unwrap();
        assert_eq!(feasible, -l);
        let b = rho_bound(&p);
        let bad = BivariateMaternParams { rho: (b + 0.1).min(0.999), ..p };
        let v = objective(&data, &transform(&bad).unwrap(), Criterion::Ml);
        assert!(v > LARGE && v > feasible);
    }

    #[test]
    fn internal_coordinates_round_trip() {
        let z = transform(&truth()).unwrap();
        let back = to_transformed(&to_internal(&z));
        for i in 0..N_PARAMS {
            assert!((back.0[i] - z.0[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn restarts_are_reproducible() {
        let o = FitOptions { n_starts: 3, seed: 9, ..Default::default() };
        let a = start_points(&[0.0; 4], &[true, false, true, true], &o).unwrap();
        let b = start_points(&[0.0; 4], &[true, false, true, true], &o).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], vec![0.0; 4]);
        assert_eq!(a[1][1], 0.0);
        assert_ne!(a[1], a[2]);
    }

    #[test]
    fn ties_go_to_the_lower_index() {
        assert_eq!(best_start(&[None, Some(2.0), Some(1.0), Some(1.0)]), Some(2));
        assert_eq!(best_start(&[None, None]), None);
    }

    #[test]
    fn fit_descends_and_is_feasible() {
        let data = crate::gp::tests_support::simulated_dataset(&truth(), 30, 30, 21);
        let init = init_from_empirical(&data).unwrap();
        let opts = FitOptions { n_starts: 2, max_evals: 600, ..Default::default() };
        let r = fit(&data, Criterion::Ml, Some(&init), &opts).unwrap();
        assert!(r.validity.feasible);
        assert!(r.objective_value <= objective(&data, &transform(&init).unwrap(), Criterion::Ml));
        assert_eq!(r.objective_value, objective(&data, &transform(&r.theta_star).unwrap(), Criterion::Ml));
        let again = fit(&data, Criterion::Ml, Some(&init), &opts).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn single_scale_fit_keeps_model_valid() {
        let data = crate::gp::tests_support::simulated_dataset(&truth(), 0, 40, 5).single_scale(Scale::Fine);
        let opts = FitOptions { n_starts: 1, max_evals: 300, ..Default::default() };
        let r = fit(&data, Criterion::Loo, None, &opts).unwrap();
        assert!(r.validity.feasible);
        assert_eq!(r.theta_star.rho, 0.0);
    }
}
