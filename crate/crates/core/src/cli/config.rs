//! Versioned run configuration and the built-in presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariance::Rect;
use crate::error::{Error, Result};
use crate::fields::StructuredGrid;
use crate::fit::{Criterion, FitOptions};

pub const CONFIG_VERSION: u32 = 1;

pub const PRESETS: [&str; 4] = ["test1", "test2", "test3", "darcy1"];

/// Which observations a fit or prediction uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSubset {
    Multi,
    Fine,
    Coarse,
}

impl DataSubset {
    pub fn name(self) -> &'static str {
        match self {
            DataSubset::Multi => "multi",
            DataSubset::Fine => "fine",
            DataSubset::Coarse => "coarse",
        }
    }
}

impl std::str::FromStr for DataSubset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" | "multiscale" => Ok(DataSubset::Multi),
            "fine" => Ok(DataSubset::Fine),
            "coarse" => Ok(DataSubset::Coarse),
            _ => Err(Error::Parse(format!("unknown data subset `{s}` (expected multi|fine|coarse)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bimatern,
    Blockavg,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bimatern => "bimatern",
            ModelKind::Blockavg => "blockavg",
        }
    }
}

/// Conditional mean and variance from the rank-M form or from the dense
/// posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMethod {
    Nystrom,
    Exact,
}

/// Fine-scale reference field: zero-mean Matérn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub sigma_f: f64,
    pub lambda_f: f64,
    pub nu_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    pub n_f: usize,
    pub n_c: usize,
    pub noise_f: f64,
    pub noise_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Nyström quadrature grid; `null` uses the simulation grid itself.
    pub quad_grid: Option<[usize; 2]>,
    /// Realizations written by `simulate`.
    pub n_real: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub criterion: Criterion,
    pub model: ModelKind,
    pub data: DataSubset,
    /// Also estimate the window size of the block-average model.
    pub estimate_eta: bool,
    pub options: FitOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Target grid; `null` uses the generation grid.
    pub grid: Option<[usize; 2]>,
    pub method: PredictMethod,
    pub quad_grid: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariogramConfig {
    pub n_bins: usize,
    pub max_lag: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarcyConfig {
    pub k_g: f64,
    pub h_left: f64,
    pub h_right: f64,
    pub n_real: usize,
    pub n_head_obs: usize,
    /// Head noise standard deviation; `null` means `5e-2 (h_left - h_right)`.
    pub sigma_eh: Option<f64>,
    /// Height of the reported profile as a fraction of the domain height.
    pub profile_x2: f64,
    /// Nyström quadrature grid of the conditional log-conductivity sampler.
    pub quad_grid: [usize; 2],
}

impl DarcyConfig {
    pub fn sigma_eh(&self) -> f64 {
        self.sigma_eh.unwrap_or(5e-2 * (self.h_left - self.h_right).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub domain: Rect,
    pub grid: [usize; 2],
    pub truth: TruthConfig,
    /// Coarse window in cells, `eta_c = m dx`.
    pub block_size: usize,
    pub observations: ObservationConfig,
    pub replicates: usize,
    pub simulation: SimulationConfig,
    pub fit: FitConfig,
    pub predict: PredictConfig,
    pub variogram: VariogramConfig,
    #[serde(default)]
    pub darcy: Option<DarcyConfig>,
}

fn test1() -> RunConfig {
    RunConfig {
        version: CONFIG_VERSION,
        name: "test1".into(),
        seed: 1,
        domain: Rect { lo: [0.0, 0.0], hi: [2.0, 1.0] },
        grid: [256, 128],
        truth: TruthConfig { sigma_f: 1.0, lambda_f: 0.05, nu_f: 0.5 },
        block_size: 8,
        observations: ObservationConfig { n_f: 50, n_c: 150, noise_f: 5e-2, noise_c: 5e-2 },
        replicates: 1,
        simulation: SimulationConfig { quad_grid: Some([128, 64]), n_real: 4 },
        fit: FitConfig {
            criterion: Criterion::Ml,
            model: ModelKind::Bimatern,
            data: DataSubset::Multi,
            estimate_eta: false,
            options: FitOptions::default(),
        },
        predict: PredictConfig { grid: None, method: PredictMethod::Nystrom, quad_grid: [64, 32] },
        variogram: VariogramConfig { n_bins: 20, max_lag: Some(0.5) },
        darcy: None,
    }
}

/// A built-in configuration by name.
pub fn preset(name: &str) -> Result<RunConfig> {
    let mut c = test1();
    match name {
        "test1" => {}
        "test2" => {
            c.name = "test2".into();
            c.truth.lambda_f = 0.10;
            c.block_size = 16;
            c.observations.n_f = 40;
            c.observations.n_c = 120;
        }
        "test3" => {
            c.name = "test3".into();
            c.domain = Rect { lo: [0.0, 0.0], hi: [1.0, 1.0] };
            c.grid = [64, 64];
            c.observations.n_f = 150;
            c.observations.n_c = 50;
            c.replicates = 500;
            c.simulation.quad_grid = None;
            c.predict.quad_grid = [32, 32];
            c.variogram.max_lag = Some(0.4);
        }
        "darcy1" => {
            c.name = "darcy1".into();
            c.darcy = Some(DarcyConfig {
                k_g: 1.0,
                h_left: 1.0,
                h_right: 0.0,
                n_real: 1000,
                n_head_obs: 20,
                sigma_eh: None,
                profile_x2: 0.5,
                quad_grid: [64, 32],
            });
        }
        _ => {
            return Err(Error::Config(format!("unknown preset `{name}` (expected one of {})", PRESETS.join("|"))));
        }
    }
    Ok(c)
}

fn field_error(field: &str, e: Error) -> Error {
    Error::Config(format!("`{field}`: {e}"))
}

impl RunConfig {
    /// Parses a JSON config and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    /// A preset name or a path to a JSON config file.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if !path.exists() && PRESETS.contains(&spec) {
            return preset(spec);
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config `{spec}`: {e}")))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("`{field}`: {why}")));
        if self.version != CONFIG_VERSION {
            return bad("version", format!("unsupported schema version {} (expected {CONFIG_VERSION})", self.version));
        }
        Rect::new(self.domain.lo, self.domain.hi).map_err(|e| field_error("domain", e))?;
        self.sim_grid().map_err(|e| field_error("grid", e))?;
        let t = &self.truth;
        for (k, v) in [("truth.sigma_f", t.sigma_f), ("truth.lambda_f", t.lambda_f), ("truth.nu_f", t.nu_f)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(k, format!("must be positive, got {v}"));
            }
        }
        if self.block_size == 0 || self.block_size > self.grid[0].min(self.grid[1]) {
            return bad("block_size", format!("must lie in 1..={}, got {}", self.grid[0].min(self.grid[1]), self.block_size));
        }
        let o = &self.observations;
        let cells = self.grid[0] * self.grid[1];
        for (k, n) in [("observations.n_f", o.n_f), ("observations.n_c", o.n_c)] {
            if n > cells {
                return bad(k, format!("{n} exceeds the {cells} grid cells"));
            }
        }
        if o.n_f + o.n_c == 0 {
            return bad("observations", "at least one observation is required".into());
        }
        for (k, v) in [("observations.noise_f", o.noise_f), ("observations.noise_c", o.noise_c)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(k, format!("must be non-negative, got {v}"));
            }
        }
        if self.replicates == 0 {
            return bad("replicates", "must be at least 1".into());
        }
        if let Some(q) = self.simulation.quad_grid {
            self.grid_of(q).map_err(|e| field_error("simulation.quad_grid", e))?;
        }
        if self.fit.options.n_starts == 0 {
            return bad("fit.options.n_starts", "must be at least 1".into());
        }
        if let Some(g) = self.predict.grid {
            self.grid_of(g).map_err(|e| field_error("predict.grid", e))?;
        }
        self.grid_of(self.predict.quad_grid).map_err(|e| field_error("predict.quad_grid", e))?;
        if self.variogram.n_bins == 0 {
            return bad("variogram.n_bins", "must be at least 1".into());
        }
        if let Some(l) = self.variogram.max_lag {
            if !(l > 0.0 && l.is_finite()) {
                return bad("variogram.max_lag", format!("must be positive, got {l}"));
            }
        }
        if let Some(d) = &self.darcy {
            if !(d.k_g > 0.0 && d.k_g.is_finite()) {
                return bad("darcy.k_g", format!("must be positive, got {}", d.k_g));
            }
            if d.h_left == d.h_right || !d.h_left.is_finite() || !d.h_right.is_finite() {
                return bad("darcy.h_left", "boundary heads must be finite and distinct".into());
            }
            if d.n_real < 2 {
                return bad("darcy.n_real", format!("must be at least 2, got {}", d.n_real));
            }
            if d.n_head_obs > cells {
                return bad("darcy.n_head_obs", format!("{} exceeds the {cells} grid cells", d.n_head_obs));
            }
            if let Some(s) = d.sigma_eh {
                if !(s > 0.0 && s.is_finite()) {
                    return bad("darcy.sigma_eh", format!("must be positive, got {s}"));
                }
            }
            if !(0.0..=1.0).contains(&d.profile_x2) {
                return bad("darcy.profile_x2", format!("must lie in [0, 1], got {}", d.profile_x2));
            }
            self.grid_of(d.quad_grid).map_err(|e| field_error("darcy.quad_grid", e))?;
            let [lx, ly] = self.extent();
            if (lx - 2.0 * ly).abs() > 1e-12 * lx {
                return bad("domain", format!("flow domain must be [0, 2L] x [0, L], got {lx} x {ly}"));
            }
        }
        Ok(())
    }

    pub fn extent(&self) -> [f64; 2] {
        [self.domain.hi[0] - self.domain.lo[0], self.domain.hi[1] - self.domain.lo[1]]
    }

    pub fn grid_of(&self, shape: [usize; 2]) -> Result<StructuredGrid> {
        StructuredGrid::new(self.domain.lo, self.extent(), shape)
    }

    pub fn sim_grid(&self) -> Result<StructuredGrid> {
        self.grid_of(self.grid)
    }

    pub fn eta_c(&self) -> Result<f64> {
        Ok(self.block_size as f64 * self.sim_grid()?.dx())
    }
}
