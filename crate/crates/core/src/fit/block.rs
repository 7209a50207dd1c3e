//! Estimation of the block-average model's reduced parameter set.

use std::cell::Cell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bfgs::{minimize, Limits, Problem, LARGE};
use super::{best_start, criterion_value, start_points, Criterion, FitOptions, StartReport, NU_MAX, NU_MIN};
use crate::covariance::BlockAvgModel;
use crate::error::{Error, Result};
use crate::gp::MultiscaleDataset;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockAvgFitResult {
    pub model: BlockAvgModel,
    pub objective_value: f64,
    pub criterion: Criterion,
    pub estimate_eta: bool,
    pub n_evals: usize,
    pub converged: bool,
    pub jitter_events: usize,
    pub start_index: usize,
    pub starts: Vec<StartReport>,
    pub options: FitOptions,
}

// coordinates: log sigma_f, log lambda_f, log nu_f, log nugget_f, log nugget_c, log eta_c
const N: usize = 6;

fn to_model(template: &BlockAvgModel, u: &[f64]) -> BlockAvgModel {
    let mut m = template.clone();
    m.fine_sigma = u[0].exp();
    m.fine_lambda = u[1].exp();
    m.fine_nu = u[2].exp();
    m.nugget_fine = u[3].exp();
    m.nugget_coarse = u[4].exp();
    m.eta_c = u[5].exp();
    m
}

/// Fits `(sigma_f, lambda_f, nu_f, nuggets)` and optionally `eta_c` of the
/// block-average model, starting from `template`.
pub fn fit_block_average(
    data: &MultiscaleDataset,
    template: &BlockAvgModel,
    criterion: Criterion,
    estimate_eta: bool,
    options: &FitOptions,
) -> Result<BlockAvgFitResult> {
    data.validate()?;
    template.validate()?;
    data.check_domain(&template.domain)?;
    if options.n_starts == 0 {
        return Err(Error::Config("n_starts must be at least 1".into()));
    }
    let floor = super::NUGGET_FLOOR;
    let u0 = [
        template.fine_sigma.ln(),
        template.fine_lambda.ln(),
        template.fine_nu.ln(),
        template.nugget_fine.max(floor).ln(),
        template.nugget_coarse.max(floor).ln(),
        template.eta_c.ln(),
    ];
    let extent = (template.domain.hi[0] - template.domain.lo[0]).max(template.domain.hi[1] - template.domain.lo[1]);
    let sd = {
        let y = data.values();
        (y.norm_squared() / y.len() as f64).sqrt().max(1e-12)
    };
    let lo = vec![
        (1e-4 * sd).ln(),
        (1e-4 * extent).ln(),
        NU_MIN.ln(),
        (1e-8 * sd).max(floor).ln(),
        (1e-8 * sd).max(floor).ln(),
        (1e-4 * extent).ln(),
    ];
    let hi = vec![(1e2 * sd).ln(), (1e2 * extent).ln(), NU_MAX.ln(), (2.0 * sd).ln(), (2.0 * sd).ln(), extent.ln()];
    let mut active = vec![true; N];
    active[5] = estimate_eta;
    if data.n_c() == 0 {
        active[4] = false;
        active[5] = false;
    }
    if data.n_f() == 0 {
        active[3] = false;
    }
    let starts = start_points(&u0, &active, options)?;
    let limits = Limits { max_evals: options.max_evals, max_iter: options.max_iter, tol: options.tol };
    let runs: Vec<Option<(super::bfgs::Outcome, usize)>> = starts
        .par_iter()
        .map(|x0| {
            let jitters = Cell::new(0usize);
            let f = |u: &[f64]| match criterion_value(data, &to_model(template, u), criterion) {
                Ok((v, j)) if v.is_finite() => {
                    if j {
                        jitters.set(jitters.get() + 1);
                    }
                    -v
                }
                _ => LARGE,
            };
            let problem = Problem { f: &f, fix: &|_| {}, lo: lo.clone(), hi: hi.clone(), active: active.clone() };
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
                reason: "no factorizable point reached".into(),
                jitter_events: 0,
            },
        })
        .collect();
    let values: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().map(|(o, _)| o.value)).collect();
    let Some(best) = best_start(&values) else {
        return Err(Error::Optimization("all block-average starts failed".into()));
    };
    let (out, _) = runs[best].as_ref().unwrap();
    Ok(BlockAvgFitResult {
        model: to_model(template, &out.x),
        objective_value: out.value,
        criterion,
        estimate_eta,
        n_evals: reports.iter().map(|r| r.n_evals).sum(),
        converged: out.converged,
        jitter_events: reports.iter().map(|r| r.jitter_events).sum(),
        start_index: best,
        starts: reports,
        options: *options,
    })
}
