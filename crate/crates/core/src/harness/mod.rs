//! Experiment orchestration: baselines, comparison sweeps, grid searches,
//! policy maps and figures.

mod baseline;
mod compare;
mod gridsearch;
mod plan;
mod plots;
mod policy_map;
mod runner;
mod svg;

pub use baseline::{baseline_dir, load_baseline, pretrain_domain, run_oracle, Baseline, OracleReport};
pub use compare::{
    comparison_cells, read_results, run_comparison, Comparison, PValueRow, ResultRow, SummaryRow, PVALUES_FILE, RESULTS_FILE,
    SUMMARY_FILE,
};
pub use gridsearch::{
    curve_points, curves_from_points, read_curve_points, run_grid_search_lambda, run_grid_search_tau, CurvePoint, GridRow,
    LambdaCurve, LambdaSearch, TauSearch, LAMBDA_BEST, LAMBDA_CURVES, LAMBDA_TABLE, TAU_BEST, TAU_TABLE,
};
pub use plan::{DomainPair, ExperimentPlan, PlanStrategy, DEFAULT_LAMBDA, DEFAULT_TAU, DEFAULT_LAMBDA_GRID, DEFAULT_TAU_GRID};
pub use plots::{render_lambda_curves, render_scarcity_curves, Plot};
pub use policy_map::{collect_policy_frequencies, collect_policy_frequencies_sampled, render_policy_map, PolicyMap, PolicyStats};
pub use runner::{run_cells, subset_seed, Cell, CellContext};
