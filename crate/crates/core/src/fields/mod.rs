//! Grids, simulation and the synthetic-experiment operations: Nyström
//! factorization, unconditional and conditional realizations, the discrete
//! coarsening operator, observation sampling, empirical variograms and MSE.

pub mod field;
pub mod grid;
pub mod nystrom;
pub mod variogram;

pub use field::{block_average_grid, mse, sample_cells, sample_observations, sample_observations_with_cells, FieldRealization};
pub use grid::StructuredGrid;
pub use nystrom::{nystrom_factor, nystrom_factor_at, simulate, FieldSampler, NystromFactor};
pub use variogram::{default_max_lag, empirical_cross_covariance, empirical_variogram, ObservationSet, VariogramBin};
