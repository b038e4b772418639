//! Sparse regression with a heat-flow penalty: random-walk smoothing of the
//! squared coefficients over a feature graph yields a group-lasso-like
//! penalty that needs no group labels, interpolating between the lasso
//! (t = 0) and the group lasso (t → ∞) as the walk duration t grows.

pub mod baselines;
pub mod design;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod heatflow;
pub mod io;
pub mod optimize;
pub mod penalty;
pub mod scalar;
pub mod seeds;

pub use baselines::{
    clustering_accuracy, group_lasso_bcd, group_lasso_cv, group_lasso_fit, group_lasso_lambda_grid,
    score, spectral_clustering, MetricsReport,
};
pub use design::{
    block_gaussian_sample, correlation_from_covariance, estimate_graph, gff_sample,
    gff_sample_with_graph, rblw_shrinkage, rblw_weight, BetaRule, Dataset, DesignKind, DesignSpec,
    ThetaRule, DEFAULT_GRAPH_QUANTILE,
};
pub use error::{Error, Result};
pub use experiment::{
    heatflow_lambda_grid, run_experiment, ExperimentConfig, ExperimentOutcome, Method,
    MetricSummary, RunRecord, SummaryRow, TMode,
};
pub use graph::{sbm_sample, spectral_gap, spectrum, Graph, LaplacianSpectrum};
pub use heatflow::{
    exact_heat_kernel_apply, exact_heat_kernel_matrix, simulate_heat_flow, HeatFlowMatrix,
};
pub use io::{
    read_dataset, read_graph, read_json, read_run_records_csv, write_beta_csv, write_dataset,
    write_graph, write_json, write_metrics_json, write_run_records_csv, write_summary_csv,
    write_trace_csv, DatasetSidecar,
};
pub use optimize::{
    cross_validate, ridge_init, stochastic_block_cd, subgradient_descent, t_flow_heuristic,
    unsupervised_threshold, CvCell, CvReport, FitConfig, FitMethod, FitResult, LearningRate,
};
pub use penalty::{
    group_lasso_gap_bound, group_lasso_penalty, GroupStructure, PenaltyBackend, PenaltyEvaluator,
};
pub use scalar::Real;
pub use seeds::SeedTree;

/// Double-precision aliases; the generic API accepts f32 as well.
pub type Spectrum64 = LaplacianSpectrum<f64>;
pub type HeatFlow64 = HeatFlowMatrix<f64>;
