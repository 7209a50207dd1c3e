//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance` runs everything; numeric
//! arguments select criteria, e.g. `cargo test --test acceptance -- 1 4 7`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;

use msgp::cli::config::{preset, DataSubset, PredictMethod, RunConfig};
use msgp::covariance::{
    check_validity, cov_full_matern, pseudo_isotropic_variogram, rho_bound, BivariateMaternParams, BlockAvgModel,
    MultiscaleCovariance, Rect, Scale,
};
use msgp::darcy::{solve_darcy, DarcyProblem};
use msgp::fields::{nystrom_factor, nystrom_factor_at, simulate, FieldRealization, StructuredGrid};
use msgp::gp::{assemble_sym, log_marginal_likelihood, loo_cv_pseudolikelihood, MultiscaleDataset, TaggedPoints};
use msgp::kernels::matern;

struct Outcome {
    pass: bool,
    detail: String,
    /// Bit patterns of the computed quantities, compared across thread counts.
    record: Vec<u64>,
}

impl Outcome {
    fn new(pass: bool, detail: String, values: &[f64]) -> Self {
        Self { pass, detail, record: values.iter().map(|v| v.to_bits()).collect() }
    }
}

type Check = fn(&Scratch) -> Result<Outcome, String>;

/// Output directories of the command-line runs, kept for the determinism rerun.
struct Scratch {
    root: PathBuf,
    threads: usize,
}

impl Scratch {
    fn dir(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}_t{}", self.threads))
    }
}

fn ok(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn bimatern(lambda: f64, nu: f64) -> BivariateMaternParams {
    BivariateMaternParams {
        lambda_c: lambda,
        lambda_f: lambda,
        lambda_cf: lambda,
        nu_c: nu,
        nu_f: nu,
        sigma_c: 1.0,
        sigma_f: 1.0,
        rho: 0.5,
        sigma_nc: 0.0,
        sigma_nf: 0.0,
    }
}

// ---------------------------------------------------------------- 1

/// `max |matern(r, 30) - exp(-r^2 / 2)|` over `r` in `[0, 3]` at 30 digits.
const GAUSS_GAP_30: f64 = 7.650_258_055_241_045e-3;

fn criterion1(_: &Scratch) -> Result<Outcome, String> {
    let closed: [(f64, fn(f64) -> f64); 3] = [
        (0.5, |r| (-r).exp()),
        (1.5, |r| (1.0 + 3f64.sqrt() * r) * (-(3f64.sqrt()) * r).exp()),
        (2.5, |r| (1.0 + 5f64.sqrt() * r + 5.0 * r * r / 3.0) * (-(5f64.sqrt()) * r).exp()),
    ];
    let mut errs = Vec::new();
    for (nu, f) in closed {
        let mut worst: f64 = 0.0;
        for i in 0..=20_000 {
            let r = i as f64 * 1e-3;
            worst = worst.max((matern(r, nu).map_err(ok)? - f(r)).abs());
        }
        errs.push(worst);
    }
    let mut gauss: f64 = 0.0;
    for i in 0..=3000 {
        let r = i as f64 * 1e-3;
        gauss = gauss.max((matern(r, 30.0).map_err(ok)? - (-0.5 * r * r).exp()).abs());
    }
    let text = include_str!("data/matern_reference.csv");
    let mut rel: f64 = 0.0;
    let mut rows = 0;
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let v: Vec<f64> = line.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(ok)?;
        let got = matern(v[0], v[1]).map_err(ok)?;
        rel = rel.max(((got - v[2]) / v[2]).abs());
        rows += 1;
    }
    let pass = errs.iter().all(|&e| e <= 1e-10) && gauss <= 5e-3 && rel <= 1e-12 && rows == 50;
    let detail = format!(
        "closed-form max err {:.1e}/{:.1e}/{:.1e} (<= 1e-10), nu=30 vs Gaussian {gauss:.3e} (<= 5e-3; exact gap {GAUSS_GAP_30:.3e}), {rows} reference rows max rel {rel:.1e} (<= 1e-12)",
        errs[0], errs[1], errs[2]
    );
    Ok(Outcome::new(pass, detail, &[errs[0], errs[1], errs[2], gauss, rel]))
}

// ---------------------------------------------------------------- 2

fn criterion2(_: &Scratch) -> Result<Outcome, String> {
    let sym = rho_bound(&bimatern(1.0, 1.7));
    let p = BivariateMaternParams {
        nu_c: 1.5,
        nu_f: 0.5,
        lambda_c: 3f64.sqrt(),
        lambda_f: 1.0,
        lambda_cf: 2f64.sqrt(),
        ..bimatern(1.0, 1.0)
    };
    let equal_a = rho_bound(&p);
    let target = (2.0 / std::f64::consts::PI).sqrt();
    let t2 = BivariateMaternParams {
        lambda_f: 0.0675,
        sigma_f: 1.04,
        nu_f: 0.809,
        lambda_c: 0.0922,
        sigma_c: 0.772,
        nu_c: 2.91,
        lambda_cf: 0.0846,
        rho: 0.832,
        sigma_nf: 9.84e-6,
        sigma_nc: 2.62e-7,
    };
    let r = check_validity(&t2, 1e-2);
    let rel_a = r.margin_a / t2.a_cf().powi(2);
    let pass = sym == 1.0 && (equal_a - target).abs() <= 1e-12 && r.feasible && rel_a.abs() <= 1e-2;
    let detail = format!(
        "symmetric bound {sym}, equal-a bound err {:.1e}, published fit feasible={} with margin_a/a_cf^2 = {rel_a:.2e}, margin_rho = {:.3e}",
        (equal_a - target).abs(),
        r.feasible,
        r.margin_rho
    );
    Ok(Outcome::new(pass, detail, &[sym, equal_a, r.margin_a, r.margin_rho]))
}

// ---------------------------------------------------------------- 3

/// Dense observation covariance from point evaluations.
fn dense_cov(points: &[([f64; 2], Scale)], p: &BivariateMaternParams) -> Result<DMatrix<f64>, String> {
    let n = points.len();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            c[(i, j)] = cov_full_matern(&points[i].0, points[i].1, &points[j].0, points[j].1, p).map_err(ok)?;
        }
    }
    Ok(c)
}

fn naive_ml(c: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64, String> {
    let inv = c.clone().try_inverse().ok_or("singular covariance")?;
    let det = c.clone().lu().determinant();
    let n = y.len() as f64;
    Ok(-0.5 * y.dot(&(&inv * y)) - 0.5 * det.ln() - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

fn naive_loo(c: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64, String> {
    let n = y.len();
    let mut total = 0.0;
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let sub = c.select_rows(&keep).select_columns(&keep);
        let inv = sub.try_inverse().ok_or("singular covariance")?;
        let ci = DVector::from_iterator(n - 1, keep.iter().map(|&j| c[(i, j)]));
        let yi = DVector::from_iterator(n - 1, keep.iter().map(|&j| y[j]));
        let w = &inv * &ci;
        let mean = w.dot(&yi);
        let var = c[(i, i)] - w.dot(&ci);
        total += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (y[i] - mean).powi(2) / var;
    }
    Ok(total)
}

fn criterion3(_: &Scratch) -> Result<Outcome, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(20);
    let (mut worst_loo, mut worst_ml): (f64, f64) = (0.0, 0.0);
    let mut record = Vec::new();
    for _ in 0..10 {
        let nu_c = rng.random_range(0.6..3.0);
        let nu_f = rng.random_range(0.3..2.0);
        let mut p = BivariateMaternParams {
            lambda_c: rng.random_range(0.15..0.5),
            lambda_f: rng.random_range(0.1..0.4),
            lambda_cf: 0.0,
            nu_c,
            nu_f,
            sigma_c: rng.random_range(0.5..1.5),
            sigma_f: rng.random_range(0.5..1.5),
            rho: 0.0,
            sigma_nc: rng.random_range(0.02..0.2),
            sigma_nf: rng.random_range(0.02..0.2),
        };
        p.lambda_cf = 0.95 * p.max_lambda_cf();
        p.rho = rng.random_range(-0.8..0.8) * rho_bound(&p).min(1.0);
        let n_c = rng.random_range(5..=15);
        let mut data = MultiscaleDataset::new(2);
        let mut points = Vec::new();
        for i in 0..30 {
            let s = if i < n_c { Scale::Coarse } else { Scale::Fine };
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let v: f64 = StandardNormal.sample(&mut rng);
            data.push(&x, s, v);
            points.push((x, s));
        }
        let c = dense_cov(&points, &p)?;
        // coarse points come first, matching the stacked order of the dataset
        let y = data.values();
        let loo = loo_cv_pseudolikelihood(&data, &p).map_err(ok)?;
        let ml = log_marginal_likelihood(&data, &p).map_err(ok)?;
        worst_loo = worst_loo.max((loo - naive_loo(&c, &y)?).abs());
        worst_ml = worst_ml.max((ml - naive_ml(&c, &y)?).abs());
        record.extend([loo, ml]);
    }
    let pass = worst_loo <= 1e-8 && worst_ml <= 1e-8;
    let detail = format!("10 datasets, N = 30: LOO vs naive refit {worst_loo:.1e}, ML vs dense inverse {worst_ml:.1e} (<= 1e-8)");
    Ok(Outcome::new(pass, detail, &record))
}

// ---------------------------------------------------------------- 4

/// Variance of the mean of an exponential-covariance field over the `m x m`
/// subcell centres of an `eta x eta` square, by counting lags.
fn discrete_block_variance(lambda: f64, eta: f64, m: usize) -> f64 {
    let h = eta / m as f64;
    let mi = m as i64;
    let mut sum = 0.0;
    for dx in -(mi - 1)..mi {
        let wx = (mi - dx.abs()) as f64;
        for dy in -(mi - 1)..mi {
            let wy = (mi - dy.abs()) as f64;
            let d = h * ((dx * dx + dy * dy) as f64).sqrt();
            sum += wx * wy * (-d / lambda).exp();
        }
    }
    sum / (m as f64).powi(4)
}

fn criterion4(_: &Scratch) -> Result<Outcome, String> {
    let lambda = 0.05;
    let unit = Rect::new([0.0, 0.0], [1.0, 1.0]).map_err(ok)?;
    let x = [0.5, 0.5];
    let coarse_var = |ratio: f64| -> Result<f64, String> {
        let m = BlockAvgModel::new(1.0, lambda, 0.5, ratio * lambda, unit).map_err(ok)?;
        Ok(m.latent_cov(&x, Scale::Coarse, &x, Scale::Coarse))
    };
    let mut worst: f64 = 0.0;
    let mut record = Vec::new();
    for ratio in [0.5, 1.25, 2.0] {
        let v = coarse_var(ratio)?;
        let oracle = discrete_block_variance(lambda, ratio * lambda, 256);
        worst = worst.max((v / oracle - 1.0).abs());
        record.push(v);
    }
    let ratios = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0, 4.0];
    let vars: Vec<f64> = ratios.iter().map(|&r| coarse_var(r)).collect::<Result<_, _>>()?;
    let monotone = vars.windows(2).all(|w| w[1] < w[0]);
    let sigma_c = coarse_var(1.25)?.sqrt();
    let m = BlockAvgModel::new(1.0, lambda, 0.5, lambda, unit).map_err(ok)?;
    let delta = 1e-3 * lambda;
    let gc = pseudo_isotropic_variogram(&m, (Scale::Coarse, Scale::Coarse), &x, &[delta]).map_err(ok)?[0];
    let gf = pseudo_isotropic_variogram(&m, (Scale::Fine, Scale::Fine), &x, &[delta]).map_err(ok)?[0];
    let slope_ratio = (gc / delta) / (gf / delta);
    record.extend([sigma_c, slope_ratio]);
    let pass = worst <= 1e-3 && monotone && slope_ratio <= 0.1;
    let detail = format!(
        "quadrature vs discrete oracle max rel {worst:.1e} (<= 1e-3), variance ratio monotone={monotone}, \
         sigma_c(1.25) = {sigma_c:.4} vs published 0.736 (diff {:+.4}, reported only), slope ratio {slope_ratio:.2e} (<= 0.1)",
        sigma_c - 0.736
    );
    Ok(Outcome::new(pass, detail, &record))
}

// ---------------------------------------------------------------- command-line helpers

fn cli(config: &Path, out: &Path, threads: usize, args: &[&str]) -> Result<(), String> {
    let mut argv: Vec<String> = vec!["msgp".into(), "--config".into(), config.display().to_string()];
    argv.extend(["--out-dir".into(), out.display().to_string(), "--threads".into(), threads.to_string()]);
    argv.extend(args.iter().map(|s| s.to_string()));
    match msgp::cli::run(&argv) {
        0 => Ok(()),
        code => Err(format!("`msgp {}` exited with {code}", args.join(" "))),
    }
}

fn write_config(dir: &Path, c: &RunConfig) -> Result<PathBuf, String> {
    std::fs::create_dir_all(dir).map_err(ok)?;
    let path = dir.join("config.json");
    std::fs::write(&path, c.to_json()).map_err(ok)?;
    Ok(path)
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(ok)
}

fn rep(k: usize) -> String {
    format!("replicate_{k:03}")
}

// ---------------------------------------------------------------- 5

fn test3_config() -> Result<RunConfig, String> {
    let mut c = preset("test3").map_err(ok)?;
    c.name = "acceptance-recovery".into();
    c.replicates = 20;
    Ok(c)
}

fn criterion5(s: &Scratch) -> Result<Outcome, String> {
    let c = test3_config()?;
    let out = s.dir("recovery");
    let cfg = write_config(&out, &c)?;
    cli(&cfg, &out, s.threads, &["generate"])?;
    let mut lines = Vec::new();
    let mut pass = true;
    let mut record = Vec::new();
    for crit in ["ml", "loo"] {
        cli(&cfg, &out, s.threads, &["--criterion", crit, "fit"])?;
        let mut hits = 0;
        let (mut sf, mut nf, mut nc) = (Vec::new(), Vec::new(), Vec::new());
        for k in 0..c.replicates {
            let r = read_json(&out.join(rep(k)).join(format!("fit_{crit}_bimatern_multi.json")))?;
            let t = &r["table_row"];
            let g = |name: &str| t[name].as_f64().ok_or_else(|| format!("replicate {k}: no {name}"));
            let (sigma_c, sigma_f, nu_c, nu_f) = (g("sigma_c")?, g("sigma_f")?, g("nu_c")?, g("nu_f")?);
            let (lambda_c, lambda_f, rho) = (g("lambda_c")?, g("lambda_f")?, g("rho")?);
            if sigma_c < sigma_f && nu_c > nu_f && lambda_c > lambda_f && rho > 0.0 {
                hits += 1;
            }
            sf.push(sigma_f);
            nf.push(nu_f);
            nc.push(nu_c);
            record.extend([sigma_c, sigma_f, nu_c, nu_f, lambda_c, lambda_f, rho]);
        }
        let frac = hits as f64 / c.replicates as f64;
        let (msf, mnf, mnc) = (median(&sf), median(&nf), median(&nc));
        let ok_here = frac >= 0.8 && (0.7..=1.3).contains(&msf) && mnf < mnc;
        pass &= ok_here;
        lines.push(format!("{crit}: ordering in {hits}/{} (>= 80%), median sigma_f {msf:.3}, median nu_f {mnf:.3} < nu_c {mnc:.3}", c.replicates));
    }
    Ok(Outcome::new(pass, lines.join("; "), &record))
}

// ---------------------------------------------------------------- 6

fn test1_small() -> Result<RunConfig, String> {
    let mut c = preset("test1").map_err(ok)?;
    c.grid = [128, 64];
    c.block_size = 4;
    c.simulation.quad_grid = Some([128, 64]);
    c.predict.method = PredictMethod::Exact;
    Ok(c)
}

fn mse_table(path: &Path) -> Result<BTreeMap<(usize, String), f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() == 3 {
            out.insert((f[0].parse().map_err(ok)?, f[1].to_string()), f[2].parse::<f64>().map_err(ok)?);
        }
    }
    Ok(out)
}

fn criterion6(s: &Scratch) -> Result<Outcome, String> {
    let mut c = test1_small()?;
    c.name = "acceptance-mse".into();
    c.replicates = 5;
    let out = s.dir("mse");
    let cfg = write_config(&out, &c)?;
    cli(&cfg, &out, s.threads, &["generate"])?;
    for d in [DataSubset::Multi, DataSubset::Fine, DataSubset::Coarse] {
        cli(&cfg, &out, s.threads, &["--data", d.name(), "fit"])?;
        cli(&cfg, &out, s.threads, &["--data", d.name(), "predict"])?;
    }
    let multi = mse_table(&out.join("mse_ml_bimatern_multi.csv"))?;
    let fine = mse_table(&out.join("mse_ml_bimatern_fine.csv"))?;
    let coarse = mse_table(&out.join("mse_ml_bimatern_coarse.csv"))?;
    let get = |t: &BTreeMap<(usize, String), f64>, k: usize, s: &str| {
        t.get(&(k, s.to_string())).copied().ok_or_else(|| format!("replicate {k}: no {s} MSE"))
    };
    let mut reductions = Vec::new();
    let (mut coarse_ok, mut fine_ok) = (true, true);
    let mut record = Vec::new();
    let mut rows = Vec::new();
    for k in 0..c.replicates {
        let (mc, oc) = (get(&multi, k, "coarse")?, get(&coarse, k, "coarse")?);
        let (mf, of) = (get(&multi, k, "fine")?, get(&fine, k, "fine")?);
        coarse_ok &= mc < oc;
        fine_ok &= mf <= of;
        reductions.push(1.0 - mc / oc);
        record.extend([mc, oc, mf, of]);
        rows.push(format!("{oc:.3}->{mc:.3}|{of:.3}->{mf:.3}"));
    }
    let med = median(&reductions);
    let pass = coarse_ok && fine_ok && med >= 0.15;
    let detail = format!(
        "coarse multi<coarse-only in all={coarse_ok}, median reduction {:.1}% (>= 15%), fine multi<=fine-only in all={fine_ok} [coarse|fine MSE: {}]",
        100.0 * med,
        rows.join(" ")
    );
    Ok(Outcome::new(pass, detail, &record))
}

// ---------------------------------------------------------------- 7

fn frob_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// `n x n` nodes at `1/32 + i/n`, nested for `n` in {16, 32, 64}.
fn nested_nodes(n: usize) -> TaggedPoints {
    let mut pts = TaggedPoints::new(2);
    for j in 0..n {
        for i in 0..n {
            pts.push(&[1.0 / 32.0 + i as f64 / n as f64, 1.0 / 32.0 + j as f64 / n as f64], Scale::Fine);
        }
    }
    pts
}

fn criterion7(_: &Scratch) -> Result<Outcome, String> {
    let model = BivariateMaternParams { sigma_f: 1.0, ..bimatern(0.2, 0.5) };
    let unit = |n: usize| StructuredGrid::new([0.0, 0.0], [1.0, 1.0], [n, n]).map_err(ok);
    let nodes = nested_nodes(16);
    let f16 = nystrom_factor_at(&model, nodes.clone(), 1.0 / 256.0).map_err(ok)?;
    let exact_nodes = assemble_sym(&nodes, &model, false).map_err(ok)?;
    let exactness = frob_rel(&f16.approx_cov(&nodes, &nodes).map_err(ok)?, &exact_nodes);
    let targets = unit(20)?.centroids(Scale::Fine);
    let exact = assemble_sym(&targets, &model, false).map_err(ok)?;
    let mut errs = Vec::new();
    for n in [16, 32, 64] {
        let f = nystrom_factor_at(&model, nested_nodes(n), 1.0 / (n * n) as f64).map_err(ok)?;
        errs.push(frob_rel(&f.approx_cov(&targets, &targets).map_err(ok)?, &exact));
    }
    let monotone = errs[0] > errs[1] && errs[1] > errs[2];
    let factor = nystrom_factor(&model, Scale::Fine, &unit(32)?).map_err(ok)?;
    let x = unit(8)?.centroids(Scale::Fine);
    let k = 10_000;
    let draws = factor.sampler().sample(&x, k, 7).map_err(ok)?;
    let c = factor.approx_cov(&x, &x).map_err(ok)?;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        for j in 0..=i {
            let s: f64 = draws.iter().map(|d| d[i] * d[j]).sum::<f64>() / k as f64;
            let se = ((c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / k as f64).sqrt();
            worst = worst.max((s - c[(i, j)]).abs() / se);
        }
    }
    let pass = exactness <= 1e-8 && monotone && worst <= 5.0;
    let detail = format!(
        "exactness {exactness:.1e} (<= 1e-8), error 16^2/32^2/64^2 {:.2e}/{:.2e}/{:.2e} monotone={monotone}, sample covariance max {worst:.2} SE (<= 5)",
        errs[0], errs[1], errs[2]
    );
    Ok(Outcome::new(pass, detail, &[exactness, errs[0], errs[1], errs[2], worst]))
}

// ---------------------------------------------------------------- 8

fn criterion8(_: &Scratch) -> Result<Outcome, String> {
    let grid = StructuredGrid::new([0.0, 0.0], [2.0, 1.0], [32, 16]).map_err(ok)?;
    let (hl, hr) = (1.0, 0.0);
    let problem = DarcyProblem::new(grid, 1.0, hl, hr).map_err(ok)?;
    let field = |values: Vec<f64>| FieldRealization::new(grid, values, Scale::Fine, 0).map_err(ok);

    let homo = solve_darcy(&problem, &field(vec![0.0; grid.len()])?).map_err(ok)?;
    let homo_err = (0..grid.len())
        .map(|i| (homo.heads[i] - (hl - (hl - hr) * grid.centroid(i)[0] / 2.0)).abs())
        .fold(0.0, f64::max);

    let (k1, k2, a, b): (f64, f64, f64, f64) = (1.0, 5.0, 1.0, 1.0);
    let layered: Vec<f64> = (0..grid.len()).map(|i| if grid.centroid(i)[0] < a { k1.ln() } else { k2.ln() }).collect();
    let lay = solve_darcy(&problem, &field(layered)?).map_err(ok)?;
    let q = (hl - hr) / (a / k1 + b / k2);
    let analytic = hl - q * a / k1;
    let [n1, _] = grid.shape;
    let mut iface: f64 = 0.0;
    for i2 in 0..grid.shape[1] {
        let (l, r) = (lay.heads[grid.index(n1 / 2 - 1, i2)], lay.heads[grid.index(n1 / 2, i2)]);
        iface = iface.max(((k1 * l + k2 * r) / (k1 + k2) - analytic).abs());
    }

    let model = bimatern(0.2, 0.5);
    let quad = StructuredGrid::new([0.0, 0.0], [2.0, 1.0], [16, 8]).map_err(ok)?;
    let factor = nystrom_factor(&model, Scale::Fine, &quad).map_err(ok)?;
    let fields = simulate(&factor, &grid, 100, 8).map_err(ok)?;
    let (mut balance, mut overshoot): (f64, f64) = (0.0, 0.0);
    for f in &fields {
        let sol = solve_darcy(&problem, f).map_err(ok)?;
        balance = balance.max((sol.inflow - sol.outflow).abs());
        for h in &sol.heads {
            overshoot = overshoot.max(h - hl).max(hr - h);
        }
    }
    let pass = homo_err <= 1e-10 && iface <= 1e-8 && balance <= 1e-9 && overshoot <= 1e-10;
    let detail = format!(
        "homogeneous {homo_err:.1e} (<= 1e-10), interface head {iface:.1e} (<= 1e-8), flux balance {balance:.1e} (<= 1e-9), \
         max principle over 100 fields: worst excursion {overshoot:.1e} (<= 1e-10)"
    );
    Ok(Outcome::new(pass, detail, &[homo_err, iface, balance, overshoot]))
}

// ---------------------------------------------------------------- 9

fn criterion9(s: &Scratch) -> Result<Outcome, String> {
    let mut c = test1_small()?;
    c.name = "acceptance-flow".into();
    let mut d = preset("darcy1").map_err(ok)?.darcy.ok_or("darcy1 has no flow section")?;
    d.n_real = 500;
    d.n_head_obs = 20;
    c.darcy = Some(d);
    let out = s.dir("flow");
    let cfg = write_config(&out, &c)?;
    cli(&cfg, &out, s.threads, &["generate"])?;
    for d in ["multi", "fine"] {
        cli(&cfg, &out, s.threads, &["--data", d, "fit"])?;
    }
    cli(&cfg, &out, s.threads, &["darcy"])?;
    let r = read_json(&out.join("darcy_report.json"))?;
    let mut case = BTreeMap::new();
    for cs in r["cases"].as_array().ok_or("no cases")? {
        let g = |k: &str| cs[k].as_f64().ok_or_else(|| format!("case without {k}"));
        case.insert(cs["data"].as_str().unwrap_or("").to_string(), (g("prior_norm")?, g("conditioned_norm")?, g("coverage")?));
    }
    let (fp, fc, fcov) = *case.get("fine").ok_or("no fine case")?;
    let (mp, mc, mcov) = *case.get("multi").ok_or("no multi case")?;
    let reduction = 1.0 - mp / fp;
    let pass = fc < fp && mc < mp && reduction >= 0.15 && mcov >= 0.9;
    let detail = format!(
        "fine prior {fp:.3e} -> conditioned {fc:.3e}; multi prior {mp:.3e} -> conditioned {mc:.3e}; \
         multi/fine prior reduction {:.1}% (>= 15%); coverage multi {:.1}% (>= 90%), fine {:.1}%",
        100.0 * reduction,
        100.0 * mcov,
        100.0 * fcov
    );
    Ok(Outcome::new(pass, detail, &[fp, fc, mp, mc, mcov, fcov]))
}

// ---------------------------------------------------------------- 10

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(base, &p, out);
            } else if let Ok(bytes) = std::fs::read(&p) {
                out.insert(p.strip_prefix(base).unwrap().display().to_string(), bytes);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Number, name, runtime budget in seconds, check.
const CHECKS: [(usize, &str, f64, Check); 9] = [
    (1, "Matérn special forms", 10.0, criterion1),
    (2, "validity constraints", 1.0, criterion2),
    (3, "LOO-CV and ML oracles", 30.0, criterion3),
    (4, "block-average covariance", 120.0, criterion4),
    (5, "parameter recovery", 1800.0, criterion5),
    (6, "MSE reduction", 1200.0, criterion6),
    (7, "Nyström factor", 120.0, criterion7),
    (8, "Darcy solver", 120.0, criterion8),
    (9, "uncertainty propagation", 1800.0, criterion9),
];

fn run_check(check: Check, scratch: &Scratch) -> Result<Outcome, String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(scratch.threads).build().map_err(ok)?;
    pool.install(|| check(scratch))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let tmp = tempfile::tempdir().expect("temporary directory");
    let first = Scratch { root: tmp.path().to_path_buf(), threads: 1 };
    let second = Scratch { root: tmp.path().to_path_buf(), threads: 4 };
    let mut failures = 0;
    let mut records = BTreeMap::new();
    let mut line = |n: usize, name: &str, pass: bool, detail: &str, secs: f64| {
        if !pass {
            failures += 1;
        }
        println!("criterion {n:>2} [{name}]: {} ({secs:.1} s) {detail}", if pass { "PASS" } else { "FAIL" });
    };
    for (n, name, budget, check) in CHECKS {
        if !wanted(n) {
            continue;
        }
        let t = Instant::now();
        match run_check(check, &first) {
            Ok(o) => {
                let secs = t.elapsed().as_secs_f64();
                let detail = format!("{}; runtime budget {budget:.0} s", o.detail);
                line(n, name, o.pass && secs < budget, &detail, secs);
                records.insert(n, o.record);
            }
            Err(e) => line(n, name, false, &format!("error: {e}"), t.elapsed().as_secs_f64()),
        }
    }
    if wanted(10) {
        let t = Instant::now();
        let mut same = Vec::new();
        let mut differ = Vec::new();
        let mut compared_files = 0;
        for (n, _, _, check) in CHECKS {
            let Some(rec) = records.get(&n) else { continue };
            match run_check(check, &second) {
                Ok(o) if &o.record == rec => same.push(n),
                Ok(_) => differ.push(format!("{n}: values")),
                Err(e) => differ.push(format!("{n}: {e}")),
            }
        }
        for name in ["recovery", "mse", "flow"] {
            let (a, b) = (files(&first.dir(name)), files(&second.dir(name)));
            if a.is_empty() && b.is_empty() {
                continue;
            }
            compared_files += a.len();
            let keys_a: Vec<_> = a.keys().collect();
            let keys_b: Vec<_> = b.keys().collect();
            if keys_a != keys_b {
                differ.push(format!("{name}: file sets differ"));
                continue;
            }
            let mut w = String::new();
            for (k, v) in &a {
                if b[k] != *v {
                    let _ = write!(w, " {k}");
                }
            }
            if !w.is_empty() {
                differ.push(format!("{name}:{w}"));
            }
        }
        let pass = !same.is_empty() && differ.is_empty();
        let detail = format!(
            "threads 1 vs 4: criteria {same:?} reproduced bit for bit, {compared_files} output files compared{}",
            if differ.is_empty() { String::new() } else { format!("; differences: {}", differ.join(", ")) }
        );
        line(10, "determinism", pass, &detail, t.elapsed().as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
