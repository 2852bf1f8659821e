//! Monte-Carlo experiments, the perturbation-scaling check and the grid
//! imputation pipeline.

pub mod grid;
pub mod mc;
pub mod normality;
pub mod perturb;

pub use grid::{grid_impute, grid_pipeline, GridConfig, GridMask, GridResult, GridSummary};
pub use mc::{run_monte_carlo, run_monte_carlo_with, ExperimentSpec, IntervalKind, McSummary, Stage};
pub use normality::{normality_check, NormalityReport};
pub use perturb::{perturbation_scaling, PerturbSpec, PerturbTable};
