//! Monte Carlo ensembles over parameter grids, reduced to pass/fail reports.

mod blocks;
mod config;
mod report;
mod suites;

pub use blocks::{copy_offsets, max_copies, BlockIntegrals, BlockRecord, Integrand};
pub use config::{ExperimentConfig, Suite, TimeUnit};
pub use report::{CheckRecord, EstimateReport, FitRecord, GridPoint};
pub use suites::{
    heat_kernel, run_bg_scaling, run_ec_estimates, run_fixed_time_field, run_invariance_exact, run_linear_baseline,
    run_one_block, run_qv_check, run_stationarity, run_suite, run_trajectory, run_ucp_decay, Trajectory,
};

use thiserror::Error;

use crate::fields::FieldError;
use crate::gaussian::GaussianError;
use crate::integrator::SimulationError;
use crate::lattice::LatticeError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("worker pool: {0}")]
    Pool(String),
}
