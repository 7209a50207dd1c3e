//! The six batch commands. Each reads the run directory left by earlier
//! commands and writes its own files plus a `manifest_<command>.json`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{DataSubset, ModelKind, PredictMethod, RunConfig};
use super::output::{empirical_rows, num, read_field, read_json, sha256_hex, variogram_csv, OutputRecord, Outputs};
use crate::covariance::{check_validity, BivariateMaternParams, BlockAvgModel, CovarianceModel, MultiscaleCovariance, Scale};
use crate::darcy::{mc_propagate, mmse_update, profile_variance_norm, solve_darcy, DarcyProblem, HeadObservationSet};
use crate::error::{Error, Result};
use crate::fields::{
    block_average_grid, default_max_lag, empirical_variogram, mse, nystrom_factor, sample_observations_with_cells,
    ObservationSet, StructuredGrid,
};
use crate::fit::{fit, fit_block_average, init_from_empirical, init_single_scale, BlockAvgFitResult, Criterion, FitResult};
use crate::gp::{MultiscaleDataset, Posterior, PosteriorSummary};

/// Generator family used for every random draw.
pub const RNG_NAME: &str = "ChaCha12 (rand_chacha), one stream per realization or stage";

const STAGE_FIELD: u64 = 1;
const STAGE_OBS_FINE: u64 = 2;
const STAGE_OBS_COARSE: u64 = 3;
const STAGE_FIT: u64 = 4;
const STAGE_SIMULATE: u64 = 5;
const STAGE_DARCY_MC: u64 = 6;
const STAGE_HEAD_OBS: u64 = 7;

/// Seed of draw `index` in `stage`, derived from the run seed.
pub fn derive_seed(base: u64, stage: u64, index: u64) -> u64 {
    let mut rng = ChaCha12Rng::seed_from_u64(base);
    rng.set_stream(stage);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Options resolved from the command line on top of the config.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub criterion: Criterion,
    pub model: ModelKind,
    pub data: DataSubset,
}

impl Context {
    pub fn new(config: RunConfig) -> Self {
        let (criterion, model, data) = (config.fit.criterion, config.fit.model, config.fit.data);
        Self { config, criterion, model, data }
    }

    fn tag(&self, data: DataSubset) -> String {
        format!("{}_{}_{}", self.criterion, self.model.name(), data.name())
    }
}

/// Per-stage parameters recorded in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: String,
    pub config_sha256: String,
    pub config: RunConfig,
    pub criterion: Criterion,
    pub model: ModelKind,
    pub data: DataSubset,
    pub rng: String,
    pub seeds: BTreeMap<String, u64>,
    /// `SOURCE_DATE_EPOCH` when set, so reruns stay byte-identical.
    pub timestamp: Option<u64>,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<OutputRecord>,
}

/// Book-keeping shared by the commands.
pub struct Run {
    pub outputs: Outputs,
    seeds: BTreeMap<String, u64>,
    stages: Vec<StageRecord>,
    keep: Vec<String>,
}

impl Run {
    pub fn new(dir: &Path) -> Result<Self> {
        Ok(Self { outputs: Outputs::new(dir)?, seeds: BTreeMap::new(), stages: Vec::new(), keep: Vec::new() })
    }

    fn seed(&mut self, name: String, value: u64) -> u64 {
        self.seeds.insert(name, value);
        value
    }

    fn stage(&mut self, name: &str, params: Value) {
        self.stages.push(StageRecord { name: name.into(), params });
    }

    /// Writes the manifest; on failure only diagnostics marked with
    /// [`Run::keep_on_failure`] survive, next to a failed manifest.
    pub fn finish(mut self, ctx: &Context, command: &str, result: Result<()>) -> Result<()> {
        let status = if result.is_ok() { "ok" } else { "failed" };
        if result.is_err() {
            let keep = std::mem::take(&mut self.keep);
            self.outputs.discard_except(&keep);
            if keep.is_empty() {
                return result;
            }
        }
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            status: status.into(),
            config_sha256: sha256_hex(ctx.config.to_json().as_bytes()),
            config: ctx.config.clone(),
            criterion: ctx.criterion,
            model: ctx.model,
            data: ctx.data,
            rng: RNG_NAME.into(),
            seeds: self.seeds,
            timestamp: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()),
            stages: self.stages,
            outputs: self.outputs.records().to_vec(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.outputs.path(&format!("manifest_{command}.json")), text)?;
        result
    }

    fn keep_on_failure(&mut self, rel: &str) {
        self.keep.push(rel.into());
    }
}

fn rep_dir(config: &RunConfig, k: usize) -> String {
    if config.replicates == 1 {
        String::new()
    } else {
        format!("replicate_{k:03}/")
    }
}

/// A generated dataset and where its observations came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub replicate: usize,
    pub field_seed: u64,
    pub obs_seeds: [u64; 2],
    /// Grid cells of the fine and coarse observations.
    pub cells_f: Vec<usize>,
    pub cells_c: Vec<usize>,
    pub data: MultiscaleDataset,
}

fn truth_params(c: &RunConfig) -> BivariateMaternParams {
    let t = c.truth;
    BivariateMaternParams {
        lambda_c: t.lambda_f,
        lambda_f: t.lambda_f,
        lambda_cf: t.lambda_f,
        nu_c: t.nu_f,
        nu_f: t.nu_f,
        sigma_c: t.sigma_f,
        sigma_f: t.sigma_f,
        rho: 0.0,
        sigma_nc: 0.0,
        sigma_nf: 0.0,
    }
}

/// The block-average model implied by the reference-field settings.
pub fn truth_block_model(c: &RunConfig) -> Result<BlockAvgModel> {
    let t = c.truth;
    Ok(BlockAvgModel::new(t.sigma_f, t.lambda_f, t.nu_f, c.eta_c()?, c.domain)?
        .with_nuggets(c.observations.noise_f, c.observations.noise_c))
}

fn with_progress<T>(what: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| match e {
        Error::Numerical(m) => Error::Numerical(format!("{what}: {m}")),
        Error::Optimization(m) => Error::Optimization(format!("{what}: {m}")),
        Error::Domain(m) => Error::Domain(format!("{what}: {m}")),
        other => other,
    })
}

/// Reference fields, their coarsening and the noisy observations of every
/// replicate.
pub fn cmd_generate(ctx: &Context, run: &mut Run) -> Result<()> {
    let c = &ctx.config;
    let grid = c.sim_grid()?;
    let quad = match c.simulation.quad_grid {
        Some(q) => c.grid_of(q)?,
        None => grid,
    };
    let truth = truth_params(c);
    let factor = with_progress("reference covariance", || nystrom_factor(&truth, Scale::Fine, &quad))?;
    run.stage(
        "simulate_reference",
        json!({"quad_grid": quad.shape, "rank": factor.rank, "weight": factor.weight, "jitter": factor.jitter, "exact": quad.same_as(&grid)}),
    );
    let field_seed = run.seed("field".into(), derive_seed(c.seed, STAGE_FIELD, 0));
    let fields = factor.sampler().simulate_grid(&grid, c.replicates, field_seed)?;
    let csv = c.replicates == 1;
    for (k, fine) in fields.into_iter().enumerate() {
        let dir = rep_dir(c, k);
        let coarse = block_average_grid(&fine, c.block_size)?;
        let o = &c.observations;
        let sf = derive_seed(c.seed, STAGE_OBS_FINE, k as u64);
        let sc = derive_seed(c.seed, STAGE_OBS_COARSE, k as u64);
        if k == 0 {
            run.seed("observations_fine[0]".into(), sf);
            run.seed("observations_coarse[0]".into(), sc);
        }
        let (obs_f, cells_f) = sample_observations_with_cells(&fine, o.n_f, o.noise_f, sf)?;
        let (obs_c, cells_c) = sample_observations_with_cells(&coarse, o.n_c, o.noise_c, sc)?;
        let mut data = MultiscaleDataset::new(2);
        for i in 0..obs_c.len() {
            data.push(obs_c.point(i), Scale::Coarse, obs_c.values[i]);
        }
        for i in 0..obs_f.len() {
            data.push(obs_f.point(i), Scale::Fine, obs_f.values[i]);
        }
        let file = DatasetFile { replicate: k, field_seed, obs_seeds: [sf, sc], cells_f, cells_c, data };
        run.outputs.write_json(&format!("{dir}dataset.json"), &file)?;
        for (stem, f) in [("fine_field", &fine), ("coarse_field", &coarse)] {
            if csv {
                run.outputs.write_field(&format!("{dir}{stem}"), f, "log-conductivity")?;
            } else {
                let bytes = super::output::encode_grid(&f.grid, &f.values, "log-conductivity", Some(f.scale), Some(f.seed));
                run.outputs.write(&format!("{dir}{stem}.msgpgrid"), &bytes)?;
            }
        }
    }
    run.stage("coarsen", json!({"block_size": c.block_size, "eta_c": c.eta_c()?}));
    Ok(())
}

fn load_dataset(run: &Run, c: &RunConfig, k: usize) -> Result<DatasetFile> {
    let path = run.outputs.path(&format!("{}dataset.json", rep_dir(c, k)));
    if !path.exists() {
        return Err(Error::Config(format!("`{}` not found; run `generate` first", path.display())));
    }
    read_json(&path)
}

fn subset(data: &MultiscaleDataset, s: DataSubset) -> MultiscaleDataset {
    match s {
        DataSubset::Multi => data.clone(),
        DataSubset::Fine => data.single_scale(Scale::Fine),
        DataSubset::Coarse => data.single_scale(Scale::Coarse),
    }
}

fn scales_of(s: DataSubset) -> &'static [Scale] {
    match s {
        DataSubset::Multi => &Scale::ALL,
        DataSubset::Fine => &[Scale::Fine],
        DataSubset::Coarse => &[Scale::Coarse],
    }
}

/// One fitted model with its diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub replicate: usize,
    pub criterion: Criterion,
    pub model_kind: ModelKind,
    pub data: DataSubset,
    pub n_f: usize,
    pub n_c: usize,
    pub status: String,
    pub error: Option<String>,
    pub seed: u64,
    pub covariance: Option<CovarianceModel>,
    /// `lambda_f, sigma_f, nu_f, lambda_c, sigma_c, nu_c, lambda_cf, rho,
    /// sigma_nf, sigma_nc` of the fitted full bivariate model.
    pub table_row: Option<BTreeMap<String, f64>>,
    pub bimatern: Option<FitResult>,
    pub blockavg: Option<BlockAvgFitResult>,
}

const TABLE_COLUMNS: [&str; 10] =
    ["lambda_f", "sigma_f", "nu_f", "lambda_c", "sigma_c", "nu_c", "lambda_cf", "rho", "sigma_nf", "sigma_nc"];

fn table_row(p: &BivariateMaternParams) -> BTreeMap<String, f64> {
    let v = [p.lambda_f, p.sigma_f, p.nu_f, p.lambda_c, p.sigma_c, p.nu_c, p.lambda_cf, p.rho, p.sigma_nf, p.sigma_nc];
    let v = v.into_iter();
    let mut row: BTreeMap<String, f64> = TABLE_COLUMNS.iter().map(|s| s.to_string()).zip(v).collect();
    let r = check_validity(p, crate::covariance::VALIDITY_TOL);
    row.insert("margin_a".into(), r.margin_a);
    row.insert("margin_rho".into(), r.margin_rho);
    row
}

/// Fits the configured model to one dataset subset.
pub fn fit_one(ctx: &Context, data: &MultiscaleDataset, subset_kind: DataSubset, replicate: usize, seed: u64) -> FitReport {
    let c = &ctx.config;
    let mut options = c.fit.options;
    options.seed = seed;
    let mut report = FitReport {
        replicate,
        criterion: ctx.criterion,
        model_kind: ctx.model,
        data: subset_kind,
        n_f: data.n_f(),
        n_c: data.n_c(),
        status: "ok".into(),
        error: None,
        seed,
        covariance: None,
        table_row: None,
        bimatern: None,
        blockavg: None,
    };
    let outcome: Result<()> = (|| {
        match ctx.model {
            ModelKind::Bimatern => {
                let r = fit(data, ctx.criterion, None, &options)?;
                report.covariance = Some(CovarianceModel::BiMatern(r.theta_star));
                report.table_row = Some(table_row(&r.theta_star));
                report.bimatern = Some(r);
            }
            ModelKind::Blockavg => {
                let init = match subset_kind {
                    DataSubset::Multi => init_from_empirical(data)?,
                    DataSubset::Fine => init_single_scale(data, Scale::Fine)?,
                    DataSubset::Coarse => init_single_scale(data, Scale::Coarse)?,
                };
                let template = BlockAvgModel::new(init.sigma_f, init.lambda_f, init.nu_f, c.eta_c()?, c.domain)?
                    .with_nuggets(init.sigma_nf, init.sigma_nc);
                let r = fit_block_average(data, &template, ctx.criterion, c.fit.estimate_eta, &options)?;
                report.covariance = Some(CovarianceModel::BlockAvg(r.model.clone()));
                report.blockavg = Some(r);
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        report.status = "failed".into();
        report.error = Some(e.to_string());
    }
    report
}

fn fit_error(report: &FitReport) -> Error {
    Error::Optimization(format!(
        "replicate {}: {}",
        report.replicate,
        report.error.clone().unwrap_or_else(|| "fit failed".into())
    ))
}

fn summary_csv(reports: &[FitReport]) -> String {
    let mut s = format!("replicate,status,objective,{},margin_a,margin_rho\n", TABLE_COLUMNS.join(","));
    for r in reports {
        let obj = r
            .bimatern
            .as_ref()
            .map(|f| f.objective_value)
            .or(r.blockavg.as_ref().map(|f| f.objective_value));
        let mut cols = vec![r.replicate.to_string(), r.status.clone(), obj.map(num).unwrap_or_default()];
        for k in TABLE_COLUMNS.iter().copied().chain(["margin_a", "margin_rho"]) {
            cols.push(r.table_row.as_ref().and_then(|t| t.get(k)).map(|v| num(*v)).unwrap_or_default());
        }
        s.push_str(&cols.join(","));
        s.push('\n');
    }
    s
}

/// Model selection on every replicate.
pub fn cmd_fit(ctx: &Context, run: &mut Run) -> Result<()> {
    let c = &ctx.config;
    let datasets: Vec<DatasetFile> = (0..c.replicates).map(|k| load_dataset(run, c, k)).collect::<Result<_>>()?;
    let seeds: Vec<u64> = (0..c.replicates).map(|k| derive_seed(c.seed, STAGE_FIT, k as u64)).collect();
    run.seed("fit[0]".into(), seeds[0]);
    let reports: Vec<FitReport> = datasets
        .par_iter()
        .zip(&seeds)
        .map(|(d, &s)| fit_one(ctx, &subset(&d.data, ctx.data), ctx.data, d.replicate, s))
        .collect();
    let tag = ctx.tag(ctx.data);
    let mut failed = None;
    for r in &reports {
        let rel = format!("{}fit_{tag}.json", rep_dir(c, r.replicate));
        run.outputs.write_json(&rel, r)?;
        if r.status != "ok" {
            run.keep_on_failure(&rel);
            failed.get_or_insert_with(|| fit_error(r));
        }
    }
    run.outputs.write(&format!("fits_{tag}.csv"), summary_csv(&reports).as_bytes())?;
    let evals: usize = reports.iter().map(|r| r.bimatern.as_ref().map_or(0, |f| f.n_evals) + r.blockavg.as_ref().map_or(0, |f| f.n_evals)).sum();
    let jitters: usize = reports
        .iter()
        .map(|r| r.bimatern.as_ref().map_or(0, |f| f.jitter_events) + r.blockavg.as_ref().map_or(0, |f| f.jitter_events))
        .sum();
    run.stage("fit", json!({"options": c.fit.options, "estimate_eta": c.fit.estimate_eta, "objective_evaluations": evals, "jitter_events": jitters}));
    match failed {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// The fitted model of one replicate, fitting it first when no report
/// exists yet.
fn fitted_model(ctx: &Context, run: &mut Run, d: &DatasetFile, s: DataSubset) -> Result<CovarianceModel> {
    let c = &ctx.config;
    let rel = format!("{}fit_{}.json", rep_dir(c, d.replicate), ctx.tag(s));
    let path = run.outputs.path(&rel);
    let report: FitReport = if path.exists() {
        read_json(&path)?
    } else {
        let seed = derive_seed(c.seed, STAGE_FIT, d.replicate as u64);
        let r = fit_one(ctx, &subset(&d.data, s), s, d.replicate, seed);
        run.outputs.write_json(&rel, &r)?;
        if r.status != "ok" {
            run.keep_on_failure(&rel);
        }
        r
    };
    if report.status != "ok" {
        return Err(fit_error(&report));
    }
    let model = report.covariance.ok_or_else(|| Error::Parse(format!("`{rel}` holds no fitted model")))?;
    if !model.is_valid() {
        if let CovarianceModel::BiMatern(p) = &model {
            let r = check_validity(p, crate::covariance::VALIDITY_TOL);
            return Err(Error::ConstraintViolation { margin_a: r.margin_a, margin_rho: r.margin_rho });
        }
        return Err(Error::Domain(format!("`{rel}` holds an invalid model")));
    }
    Ok(model)
}

/// Conditional mean and variance at the centroids of `grid`.
pub fn predict_grid(
    ctx: &Context,
    model: &dyn MultiscaleCovariance,
    posterior: &Posterior<'_>,
    grid: &StructuredGrid,
    scale: Scale,
) -> Result<(PosteriorSummary, f64)> {
    let targets = grid.centroids(scale);
    match ctx.config.predict.method {
        PredictMethod::Exact => Ok((posterior.predict(&targets, false)?, 0.0)),
        PredictMethod::Nystrom => {
            let quad = ctx.config.grid_of(ctx.config.predict.quad_grid)?;
            let factor = nystrom_factor(model, scale, &quad)?;
            let sampler = factor.conditional(posterior)?;
            Ok((sampler.predict(&targets)?, factor.jitter.max(sampler.jitter())))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PredictReport {
    replicate: usize,
    method: PredictMethod,
    grid: [usize; 2],
    mse: BTreeMap<String, f64>,
    clamped: BTreeMap<String, usize>,
    max_jitter: f64,
}

/// Conditional mean and variance grids per scale, and their MSE against the
/// reference fields when available.
pub fn cmd_predict(ctx: &Context, run: &mut Run) -> Result<()> {
    let c = &ctx.config;
    let grid = c.grid_of(c.predict.grid.unwrap_or(c.grid))?;
    let tag = ctx.tag(ctx.data);
    let mut rows = String::from("replicate,scale,mse\n");
    for k in 0..c.replicates {
        let d = load_dataset(run, c, k)?;
        let dir = rep_dir(c, k);
        let model = fitted_model(ctx, run, &d, ctx.data)?;
        let data = subset(&d.data, ctx.data);
        let posterior = with_progress(&format!("replicate {k}"), || Posterior::new(&data, &model))?;
        let mut report = PredictReport {
            replicate: k,
            method: c.predict.method,
            grid: grid.shape,
            mse: BTreeMap::new(),
            clamped: BTreeMap::new(),
            max_jitter: posterior.factor().jitter(),
        };
        for &scale in scales_of(ctx.data) {
            let (summary, jitter) = predict_grid(ctx, &model, &posterior, &grid, scale)?;
            report.max_jitter = report.max_jitter.max(jitter);
            report.clamped.insert(scale.name().into(), summary.clamped);
            let stem = format!("{dir}predict_{tag}_{scale}");
            if c.replicates == 1 {
                run.outputs.write_grid(&format!("{stem}_mean"), &grid, &summary.mean, "posterior mean", Some(scale), None)?;
                run.outputs.write_grid(&format!("{stem}_variance"), &grid, &summary.variance, "posterior variance", Some(scale), None)?;
            } else {
                for (q, v) in [("mean", &summary.mean), ("variance", &summary.variance)] {
                    let bytes = super::output::encode_grid(&grid, v, &format!("posterior {q}"), Some(scale), None);
                    run.outputs.write(&format!("{stem}_{q}.msgpgrid"), &bytes)?;
                }
            }
            let reference = run.outputs.path(&format!("{dir}{scale}_field.msgpgrid"));
            if reference.exists() {
                let r = read_field(&reference)?;
                if r.grid.same_as(&grid) {
                    let v = mse(&summary, &r)?;
                    report.mse.insert(scale.name().into(), v);
                    rows.push_str(&format!("{k},{scale},{}\n", num(v)));
                }
            }
        }
        run.outputs.write_json(&format!("{dir}predict_{tag}.json"), &report)?;
    }
    run.outputs.write(&format!("mse_{tag}.csv"), rows.as_bytes())?;
    run.stage("predict", json!({"method": c.predict.method, "grid": grid.shape, "quad_grid": c.predict.quad_grid}));
    Ok(())
}

/// Lags at which model curves are tabulated.
fn model_lags(max_lag: f64, n_bins: usize) -> Vec<f64> {
    let n = 4 * n_bins;
    (1..=n).map(|i| max_lag * i as f64 / n as f64).collect()
}

/// Semivariogram curves `(fine, coarse, cross)` of a model with nuggets, in
/// the form estimated by the empirical variograms.
pub fn model_variograms(model: &dyn MultiscaleCovariance, anchor: [f64; 2], lags: &[f64]) -> [Vec<f64>; 3] {
    let x = anchor;
    let at = |r: f64| [x[0] + r, x[1]];
    let c0 = |s: Scale| model.latent_cov(&x, s, &x, s) + model.nugget_variance(s);
    let (cf, cc) = (c0(Scale::Fine), c0(Scale::Coarse));
    let semi = |s: Scale, c: f64| lags.iter().map(|&r| c - model.latent_cov(&x, s, &at(r), s)).collect();
    let cross = lags.iter().map(|&r| 0.5 * (cc + cf) - model.latent_cov(&x, Scale::Coarse, &at(r), Scale::Fine)).collect();
    [semi(Scale::Fine, cf), semi(Scale::Coarse, cc), cross]
}

/// Empirical and model variograms of every replicate.
pub fn cmd_variogram(ctx: &Context, run: &mut Run) -> Result<()> {
    let c = &ctx.config;
    let truth = truth_block_model(c)?;
    let ext = c.extent();
    for k in 0..c.replicates {
        let d = load_dataset(run, c, k)?;
        let dir = rep_dir(c, k);
        let f = ObservationSet::from_dataset(&d.data, Scale::Fine);
        let co = ObservationSet::from_dataset(&d.data, Scale::Coarse);
        let max_lag = c.variogram.max_lag.unwrap_or_else(|| default_max_lag(&[&f, &co]));
        let n_bins = c.variogram.n_bins;
        let span = max_lag.min(0.999 * ext[0]);
        let anchor = [c.domain.lo[0] + 0.5 * (ext[0] - span), c.domain.lo[1] + 0.5 * ext[1]];
        let lags: Vec<f64> = model_lags(max_lag, n_bins).into_iter().filter(|&r| r <= span).collect();
        let empirical = [
            empirical_variogram(&f, None, n_bins, max_lag)?,
            empirical_variogram(&co, None, n_bins, max_lag)?,
            empirical_variogram(&co, Some(&f), n_bins, max_lag)?,
        ];
        let mut curves: Vec<(&str, [Vec<f64>; 3])> = vec![("true", model_variograms(&truth, anchor, &lags))];
        let path = run.outputs.path(&format!("{dir}fit_{}.json", ctx.tag(DataSubset::Multi)));
        if path.exists() {
            let r: FitReport = read_json(&path)?;
            if let Some(m) = r.covariance {
                curves.push(("estimated", model_variograms(&m, anchor, &lags)));
            }
        }
        for (i, family) in ["fine", "coarse", "cross"].iter().enumerate() {
            let mut rows = empirical_rows(&empirical[i]);
            for (kind, v) in &curves {
                rows.extend(lags.iter().zip(&v[i]).map(|(&l, &y)| (l, Some(y), None, *kind)));
            }
            run.outputs.write(&format!("{dir}variogram_{family}.csv"), variogram_csv(&rows).as_bytes())?;
        }
    }
    run.stage("variogram", json!({"n_bins": c.variogram.n_bins, "max_lag": c.variogram.max_lag}));
    Ok(())
}

/// Options of `simulate`.
#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    /// Fit report or parameter file; the reference-field model otherwise.
    pub params: Option<std::path::PathBuf>,
    /// Condition on the dataset of replicate 0.
    pub conditional: bool,
    pub scale: Option<Scale>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ParamsFile {
    Report(Box<FitReport>),
    Model(CovarianceModel),
    Params(BivariateMaternParams),
}

/// Unconditional or conditional realizations on the simulation grid.
pub fn cmd_simulate(ctx: &Context, run: &mut Run, opts: &SimulateOptions) -> Result<()> {
    let c = &ctx.config;
    let scale = opts.scale.unwrap_or(Scale::Fine);
    let model = match &opts.params {
        Some(p) => match read_json::<ParamsFile>(p)? {
            ParamsFile::Report(r) => r.covariance.ok_or_else(|| Error::Parse("fit report holds no model".into()))?,
            ParamsFile::Model(m) => m,
            ParamsFile::Params(p) => CovarianceModel::BiMatern(p),
        },
        None if opts.conditional => {
            let d = load_dataset(run, c, 0)?;
            fitted_model(ctx, run, &d, ctx.data)?
        }
        None => match scale {
            Scale::Fine => CovarianceModel::BiMatern(truth_params(c)),
            Scale::Coarse => CovarianceModel::BlockAvg(truth_block_model(c)?),
        },
    };
    if let CovarianceModel::BiMatern(p) = &model {
        let r = check_validity(p, crate::covariance::VALIDITY_TOL);
        if !r.feasible {
            return Err(Error::ConstraintViolation { margin_a: r.margin_a, margin_rho: r.margin_rho });
        }
    }
    let grid = c.sim_grid()?;
    let quad = match c.simulation.quad_grid {
        Some(q) => c.grid_of(q)?,
        None => grid,
    };
    let factor = nystrom_factor(&model, scale, &quad)?;
    let seed = run.seed("simulate".into(), derive_seed(c.seed, STAGE_SIMULATE, 0));
    let (fields, jitter) = if opts.conditional {
        let d = load_dataset(run, c, 0)?;
        let data = subset(&d.data, ctx.data);
        let posterior = Posterior::new(&data, &model)?;
        let sampler = factor.conditional(&posterior)?;
        (sampler.simulate_grid(&grid, c.simulation.n_real, seed)?, sampler.jitter())
    } else {
        (factor.sampler().simulate_grid(&grid, c.simulation.n_real, seed)?, 0.0)
    };
    for (k, f) in fields.iter().enumerate() {
        run.outputs.write_field(&format!("simulate/{scale}_{k:03}"), f, "realization")?;
    }
    run.stage(
        "simulate",
        json!({"scale": scale, "conditional": opts.conditional, "quad_grid": quad.shape, "rank": factor.rank,
               "factor_jitter": factor.jitter, "conditional_jitter": jitter, "n_real": c.simulation.n_real}),
    );
    Ok(())
}

/// One row of the flow report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarcyCase {
    pub data: DataSubset,
    pub prior_norm: f64,
    pub conditioned_norm: f64,
    /// Fraction of profile nodes where the reference lies in the 95% band
    /// of the conditioned estimate.
    pub coverage: f64,
    pub sampler_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarcyReport {
    pub k_g: f64,
    pub h_left: f64,
    pub h_right: f64,
    pub sigma_eh: f64,
    pub n_real: usize,
    pub n_head_obs: usize,
    pub profile_x2: f64,
    pub head_obs_nodes: Vec<usize>,
    pub cases: Vec<DarcyCase>,
    /// `{prior, conditioned}` rows by `{fine, multi}` columns.
    pub table: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Head moments under each conditioning set, MMSE update from noisy head
/// observations, and profile summaries.
pub fn cmd_darcy(ctx: &Context, run: &mut Run) -> Result<()> {
    let c = &ctx.config;
    let dc = c.darcy.ok_or_else(|| Error::Config("`darcy`: the config has no flow section".into()))?;
    let grid = c.sim_grid()?;
    let problem = DarcyProblem::new(grid, dc.k_g, dc.h_left, dc.h_right)?;
    let d = load_dataset(run, c, 0)?;
    let dir = rep_dir(c, 0);
    let reference = read_field(&run.outputs.path(&format!("{dir}fine_field.msgpgrid")))?;
    let ref_heads = solve_darcy(&problem, &reference)?.heads;
    let sigma_eh = dc.sigma_eh();
    let obs_seed = run.seed("head_observations".into(), derive_seed(c.seed, STAGE_HEAD_OBS, 0));
    let obs = HeadObservationSet::sample(&ref_heads, dc.n_head_obs, sigma_eh, obs_seed)?;
    let span = dc.h_left - dc.h_right;
    let obs_norm = HeadObservationSet::new(
        obs.nodes.clone(),
        obs.h_obs.iter().map(|h| problem.normalize(*h)).collect::<Result<_>>()?,
        sigma_eh / span.abs(),
    )?;
    let profile = grid.row_nearest(c.domain.lo[1] + dc.profile_x2 * c.extent()[1]);
    let mut tracked = profile.clone();
    tracked.extend(obs.nodes.iter().filter(|n| !profile.contains(n)));
    let ref_profile: Vec<f64> = profile.iter().map(|&n| problem.normalize(ref_heads[n])).collect::<Result<_>>()?;
    let quad = c.grid_of(dc.quad_grid)?;
    let mc_seed = run.seed("darcy_mc".into(), derive_seed(c.seed, STAGE_DARCY_MC, 0));
    let mut cases = Vec::new();
    let mut table: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for s in [DataSubset::Fine, DataSubset::Multi] {
        let model = fitted_model(ctx, run, &d, s)?;
        let data = subset(&d.data, s);
        let posterior = Posterior::new(&data, &model)?;
        let factor = nystrom_factor(&model, Scale::Fine, &quad)?;
        let sampler = factor.conditional(&posterior)?;
        let stats = mc_propagate(&problem, &sampler, dc.n_real, mc_seed, &tracked, true)?;
        let upd = mmse_update(&stats, &obs_norm)?;
        let np = profile.len();
        let prior_var = &stats.variance()[..np];
        let cond_var = &upd.variance()[..np];
        let prior_norm = profile_variance_norm(prior_var, grid.dx());
        let conditioned_norm = profile_variance_norm(cond_var, grid.dx());
        let band = |m: f64, v: f64| (m - 1.96 * v.sqrt(), m + 1.96 * v.sqrt());
        let inside = (0..np)
            .filter(|&i| {
                let (lo, hi) = band(upd.h_hat[i], cond_var[i]);
                (lo..=hi).contains(&ref_profile[i])
            })
            .count();
        let mut csv = String::from("x1,reference,prior_mean,prior_lo,prior_hi,prior_variance,cond_mean,cond_lo,cond_hi,cond_variance\n");
        for i in 0..np {
            let x1 = grid.centroid(profile[i])[0];
            let (plo, phi) = band(stats.mean[i], prior_var[i]);
            let (clo, chi) = band(upd.h_hat[i], cond_var[i]);
            let cols = [x1, ref_profile[i], stats.mean[i], plo, phi, prior_var[i], upd.h_hat[i], clo, chi, cond_var[i]];
            csv.push_str(&cols.map(num).join(","));
            csv.push('\n');
        }
        run.outputs.write(&format!("darcy_profile_{}.csv", s.name()), csv.as_bytes())?;
        table.entry("prior".into()).or_default().insert(s.name().into(), prior_norm);
        table.entry("conditioned".into()).or_default().insert(s.name().into(), conditioned_norm);
        cases.push(DarcyCase {
            data: s,
            prior_norm,
            conditioned_norm,
            coverage: inside as f64 / np as f64,
            sampler_jitter: factor.jitter.max(sampler.jitter()),
        });
    }
    let report = DarcyReport {
        k_g: dc.k_g,
        h_left: dc.h_left,
        h_right: dc.h_right,
        sigma_eh,
        n_real: dc.n_real,
        n_head_obs: dc.n_head_obs,
        profile_x2: dc.profile_x2,
        head_obs_nodes: obs.nodes.clone(),
        cases,
        table,
    };
    run.outputs.write_json("darcy_report.json", &report)?;
    let heads: Vec<f64> = ref_heads.iter().map(|h| problem.normalize(*h)).collect::<Result<_>>()?;
    run.outputs.write_grid("darcy_reference_heads", &grid, &heads, "normalized head", None, None)?;
    run.stage("darcy", json!({"quad_grid": quad.shape, "n_real": dc.n_real, "sigma_eh": sigma_eh, "profile_nodes": profile.len()}));
    Ok(())
}
