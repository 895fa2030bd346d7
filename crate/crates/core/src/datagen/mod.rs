//! Gaussian random fields, finite-difference forward solvers, measurement
//! extraction and dataset storage.

mod dataset;
mod grf;
mod grid;
mod linalg;
mod solvers;
pub mod store;

pub use dataset::{
    derive_seed, extract_measurement, generate, measurement_indices, min_max_scale, problem_grids, solver_residuals, DataConfig,
    Dataset, FieldStats, Sample,
};
pub use grf::{grf_sample, GrfConfig, GrfSampler, DENSE_LIMIT};
pub use grid::{Grid, GridKind, PointSet};
pub use linalg::{conjugate_gradient, solve_tridiagonal, CgReport};
pub use solvers::{
    darcy_residual, downsample, helmholtz_residual, helmholtz_residual_with, rd_step_residual, solve_darcy, solve_helmholtz,
    solve_helmholtz_with, solve_reaction_diffusion, stride_indices, CG_TOL,
};
