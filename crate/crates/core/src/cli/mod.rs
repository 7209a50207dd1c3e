//! Command-line front end.
//!
//! Every command is a pure function of the configuration and seed: random
//! draws come from ChaCha12 generators whose seeds are derived from the run
//! seed, one stream per realization, so outputs do not depend on the number
//! of threads.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::covariance::Scale;
use crate::error::{Error, Result};
use crate::fit::Criterion;
use commands::{Context, Run, SimulateOptions};
use config::{DataSubset, ModelKind, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

const AFTER_HELP: &str = "\
Random numbers: ChaCha12 (rand_chacha 0.9). Stage seeds are derived from the
run seed; realization k of a stage draws from stream k of its generator.
Exit codes: 0 success, 1 user or input error, 2 numerical failure.
Every option can also be set through the environment variable named in its
help, e.g. MSGP_SEED=7.";

#[derive(Debug, Parser)]
#[command(name = "msgp", version, about = "Multiscale Gaussian-process experiments", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Preset name (test1|test2|test3|darcy1) or path to a JSON config.
    #[arg(long, global = true, env = "MSGP_CONFIG", default_value = "test1")]
    pub config: String,

    /// Run seed, overriding the config.
    #[arg(long, global = true, env = "MSGP_SEED")]
    pub seed: Option<u64>,

    /// Model-selection criterion, overriding the config.
    #[arg(long, global = true, env = "MSGP_CRITERION", value_parser = parse_criterion)]
    pub criterion: Option<Criterion>,

    /// Covariance model, overriding the config.
    #[arg(long, global = true, env = "MSGP_MODEL", value_enum)]
    pub model: Option<ModelKind>,

    /// Observations used by fit and predict (multi|fine|coarse).
    #[arg(long, global = true, env = "MSGP_DATA", value_parser = parse_subset)]
    pub data: Option<DataSubset>,

    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true, env = "MSGP_THREADS")]
    pub threads: Option<usize>,

    /// Run directory shared by the commands.
    #[arg(long, global = true, env = "MSGP_OUT_DIR", default_value = "msgp-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate reference fields, coarsen them and sample observations.
    Generate,
    /// Fit the covariance model to every generated dataset.
    Fit,
    /// Conditional mean and variance grids and their MSE.
    Predict,
    /// Empirical and model variograms.
    Variogram,
    /// Draw realizations of the reference or a fitted model.
    Simulate {
        /// Fit report, covariance model or parameter file to simulate from.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Condition on the generated dataset.
        #[arg(long)]
        conditional: bool,
        #[arg(long, value_parser = parse_scale, default_value = "fine")]
        scale: Scale,
    },
    /// Propagate log-conductivity uncertainty through steady Darcy flow.
    Darcy,
}

fn parse_criterion(s: &str) -> std::result::Result<Criterion, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_subset(s: &str) -> std::result::Result<DataSubset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scale(s: &str) -> std::result::Result<Scale, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Fit => "fit",
            Command::Predict => "predict",
            Command::Variogram => "variogram",
            Command::Simulate { .. } => "simulate",
            Command::Darcy => "darcy",
        }
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::NotPositiveDefinite { .. } | Error::Optimization(_) => EXIT_NUMERICAL,
        Error::Domain(_) | Error::Config(_) | Error::ConstraintViolation { .. } | Error::Io(_) | Error::Parse(_) => EXIT_USER,
    }
}

fn context(cli: &Cli) -> Result<Context> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let mut ctx = Context::new(config);
    if let Some(c) = cli.criterion {
        ctx.criterion = c;
        ctx.config.fit.criterion = c;
    }
    if let Some(m) = cli.model {
        ctx.model = m;
        ctx.config.fit.model = m;
    }
    if let Some(d) = cli.data {
        ctx.data = d;
        ctx.config.fit.data = d;
    }
    Ok(ctx)
}

/// Runs one parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let ctx = context(cli)?;
    let mut run = Run::new(&cli.out_dir)?;
    let result = match &cli.command {
        Command::Generate => commands::cmd_generate(&ctx, &mut run),
        Command::Fit => commands::cmd_fit(&ctx, &mut run),
        Command::Predict => commands::cmd_predict(&ctx, &mut run),
        Command::Variogram => commands::cmd_variogram(&ctx, &mut run),
        Command::Simulate { params, conditional, scale } => {
            let opts = SimulateOptions { params: params.clone(), conditional: *conditional, scale: Some(*scale) };
            commands::cmd_simulate(&ctx, &mut run, &opts)
        }
        Command::Darcy => commands::cmd_darcy(&ctx, &mut run),
    };
    run.finish(&ctx, cli.command.name(), result)
}

/// Parses `args`, runs the command in a pool of `--threads` workers and
/// returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build();
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("msgp: cannot start worker threads: {e}");
            return EXIT_USER;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("msgp {}: {e}", cli.command.name());
            exit_code(&e)
        }
    }
}
