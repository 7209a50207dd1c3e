//! Starting values read off empirical variograms.

use crate::covariance::{rho_bound, BivariateMaternParams, Scale};
use crate::error::{Error, Result};
use crate::fields::variogram::{default_max_lag, empirical_cross_covariance, empirical_variogram, ObservationSet, VariogramBin};
use crate::gp::MultiscaleDataset;

const N_BINS: usize = 15;
const MIN_OBS: usize = 5;

struct Structure {
    sill: f64,
    range: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sill as the median over the last third of the filled bins and range as
/// the lag where the variogram first reaches 63% of the sill.
fn structure(bins: &[VariogramBin], scale: Scale, max_lag: f64) -> Result<Structure> {
    let filled: Vec<(f64, f64)> = bins.iter().filter_map(|b| b.value.map(|v| (b.lag, v))).collect();
    if filled.is_empty() {
        return Err(Error::Config(format!("no {scale} observation pairs within the variogram range")));
    }
    let tail = &filled[filled.len() - filled.len().div_ceil(3)..];
    let sill = median(tail.iter().map(|(_, v)| *v).collect());
    if !(sill > 0.0) {
        return Err(Error::Domain(format!("degenerate variogram: {scale} sill is {sill}")));
    }
    let target = 0.63 * sill;
    let mut range = max_lag;
    let mut prev = (0.0, 0.0);
    for &(lag, v) in &filled {
        if v >= target {
            range = if v > prev.1 { prev.0 + (target - prev.1) / (v - prev.1) * (lag - prev.0) } else { lag };
            break;
        }
        prev = (lag, v);
    }
    Ok(Structure { sill, range: range.max(1e-3 * max_lag) })
}

fn check_count(set: &ObservationSet) -> Result<()> {
    if set.len() < MIN_OBS {
        return Err(Error::Config(format!(
            "initialization needs at least {MIN_OBS} {} observations, got {}",
            set.scale,
            set.len()
        )));
    }
    Ok(())
}

/// Heuristic starting point for the full bivariate Matérn model:
///
/// * sills and ranges from the empirical variogram of each scale;
/// * `nu_f = 0.5`, `nu_c = 1.5`;
/// * `lambda_cf` the geometric mean of the two ranges, pulled in to keep a
///   5% margin on the length-scale condition;
/// * `rho` from the cross-covariance at the shortest lags, capped at 90% of
///   its bound;
/// * nuggets at 1% of the standard deviations.
pub fn init_from_empirical(data: &MultiscaleDataset) -> Result<BivariateMaternParams> {
    let f = ObservationSet::from_dataset(data, Scale::Fine);
    let c = ObservationSet::from_dataset(data, Scale::Coarse);
    check_count(&f)?;
    check_count(&c)?;
    let max_lag = default_max_lag(&[&f, &c]);
    let sf = structure(&empirical_variogram(&f, None, N_BINS, max_lag)?, Scale::Fine, max_lag)?;
    let sc = structure(&empirical_variogram(&c, None, N_BINS, max_lag)?, Scale::Coarse, max_lag)?;
    let (sigma_f, sigma_c) = (sf.sill.sqrt(), sc.sill.sqrt());
    let mut p = BivariateMaternParams {
        lambda_c: sc.range,
        lambda_f: sf.range,
        lambda_cf: (sf.range * sc.range).sqrt(),
        nu_c: 1.5,
        nu_f: 0.5,
        sigma_c,
        sigma_f,
        rho: 0.0,
        sigma_nc: 1e-2 * sigma_c,
        sigma_nf: 1e-2 * sigma_f,
    };
    p.lambda_cf = p.lambda_cf.min(p.max_lambda_cf() / 1.05f64.sqrt());
    let cross = empirical_cross_covariance(&c, &f, N_BINS, max_lag)?;
    let estimate = cross
        .iter()
        .find_map(|b| b.value)
        .map(|v| v / (sigma_c * sigma_f))
        .unwrap_or(0.5);
    let cap = 0.9 * rho_bound(&p).min(1.0);
    p.rho = estimate.clamp(-cap, cap);
    Ok(p)
}

/// Starting point when only one scale is observed; the other scale mirrors
/// it and the cross correlation is zero.
pub fn init_single_scale(data: &MultiscaleDataset, scale: Scale) -> Result<BivariateMaternParams> {
    let s = ObservationSet::from_dataset(data, scale);
    check_count(&s)?;
    let max_lag = default_max_lag(&[&s]);
    let st = structure(&empirical_variogram(&s, None, N_BINS, max_lag)?, scale, max_lag)?;
    let sigma = st.sill.sqrt();
    let nu = match scale {
        Scale::Fine => 0.5,
        Scale::Coarse => 1.5,
    };
    let mut p = BivariateMaternParams {
        lambda_c: st.range,
        lambda_f: st.range,
        lambda_cf: st.range,
        nu_c: nu,
        nu_f: nu,
        sigma_c: sigma,
        sigma_f: sigma,
        rho: 0.0,
        sigma_nc: 1e-2 * sigma,
        sigma_nf: 1e-2 * sigma,
    };
    p.lambda_cf = p.max_lambda_cf() / 1.05f64.sqrt();
    Ok(p)
}
