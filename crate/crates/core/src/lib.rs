pub mod cli;
pub mod covariance;
pub mod darcy;
pub mod error;
pub mod fields;
pub mod fit;
pub mod gp;
pub mod kernels;
pub(crate) mod linalg;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/covariance.md")]
    mod covariance {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/darcy.md")]
    mod darcy {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
