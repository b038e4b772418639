//! The Monte Carlo experiment harness: replicate (generate → estimate graph
//! → simulate heat flow → fit every method → score), then aggregate
//! per-method means and standard errors.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    clustering_accuracy, group_lasso_cv, group_lasso_fit, group_lasso_lambda_grid, score,
    spectral_clustering, MetricsReport,
};
use crate::design::{
    correlation_from_covariance, estimate_graph, rblw_shrinkage, Dataset, DesignSpec,
    DEFAULT_GRAPH_QUANTILE,
};
use crate::error::{invalid, Result};
use crate::graph::{spectrum, Graph, LaplacianSpectrum};
use crate::heatflow::simulate_heat_flow;
use crate::optimize::{
    cross_validate, ridge_init, stochastic_block_cd, subgradient_descent, t_flow_heuristic,
    FitConfig, FitMethod, FitResult,
};
use crate::penalty::PenaltyBackend;
use crate::seeds::SeedTree;

/// The model-fitting arms an experiment can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    HeatflowSd,
    HeatflowCd,
    GroupLasso,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::HeatflowSd => "heatflow_sd",
            Method::HeatflowCd => "heatflow_cd",
            Method::GroupLasso => "group_lasso",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the walk duration is chosen for the heat-flow arms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TMode {
    /// The spectral heuristic value, fixed; only λ is cross-validated.
    FixedHeuristic,
    /// Cross-validate (λ, t) jointly over {½, 1, 2} × the heuristic value.
    FullCv,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub design: DesignSpec,
    pub methods: Vec<Method>,
    pub mc_runs: usize,
    pub cv_folds: usize,
    pub t_mode: TMode,
    /// Oracle cluster count for spectral clustering; when absent, the count
    /// of Laplacian eigenvalues below `k_auto_tol` is used.
    pub k_oracle: Option<usize>,
    pub k_auto_tol: f64,
    /// Base optimizer settings; λ, t, and seeds are filled in per cell.
    pub fit: FitConfig,
    /// Size of the log-spaced λ grid for the heat-flow arms.
    pub lambda_grid_points: usize,
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// The block-diagonal Gaussian benchmark at reduced replication.
    pub fn block_benchmark(master_seed: u64) -> Self {
        ExperimentConfig {
            design: DesignSpec::block_benchmark(0),
            methods: vec![Method::HeatflowSd, Method::HeatflowCd, Method::GroupLasso],
            mc_runs: 10,
            cv_folds: 5,
            t_mode: TMode::FixedHeuristic,
            k_oracle: Some(4),
            k_auto_tol: 0.01,
            fit: FitConfig {
                walks_per_vertex: 500,
                max_iter: 1000,
                eps: 1e-5,
                block_size: 10,
                ..FitConfig::default()
            },
            lambda_grid_points: 10,
            master_seed,
        }
    }

    /// The Gaussian-free-field benchmark at reduced replication.
    pub fn gff_benchmark(master_seed: u64) -> Self {
        ExperimentConfig {
            design: DesignSpec::gff_benchmark(0),
            ..Self::block_benchmark(master_seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mc_runs == 0 {
            return Err(invalid("mc_runs must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(invalid("no methods selected"));
        }
        if self.lambda_grid_points == 0 {
            return Err(invalid("lambda grid needs at least one point"));
        }
        if !(self.k_auto_tol > 0.0) {
            return Err(invalid("k_auto_tol must be positive"));
        }
        Ok(())
    }
}

/// One method's outcome in one replication.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub method: Method,
    /// Selected penalty weight (by cross-validation).
    pub lambda: Option<f64>,
    /// Walk duration used (heat-flow arms only).
    pub t: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub metrics: MetricsReport,
    /// Failure message; when set, the metrics are absent and the run is
    /// excluded from summary means.
    pub error: Option<String>,
}

impl RunRecord {
    fn failed(run: usize, method: Method, error: String) -> Self {
        RunRecord {
            run,
            method,
            lambda: None,
            t: None,
            iterations: None,
            converged: None,
            metrics: MetricsReport::default(),
            error: Some(error),
        }
    }
}

/// Mean and standard error of one metric for one method.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub prediction_error: Option<MetricSummary>,
    pub estimation_error: Option<MetricSummary>,
    pub sensitivity: Option<MetricSummary>,
    pub specificity: Option<MetricSummary>,
    pub clustering_accuracy: Option<MetricSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Everything the per-run pipeline derives before the method fits.
struct RunStage {
    data: Dataset<f64>,
    graph: Graph,
    spectrum: LaplacianSpectrum<f64>,
    t_heuristic: f64,
    lambda_grid: Vec<f64>,
    tree: SeedTree,
}

/// Runs the full replication loop. Replications are independent and seeded
/// by run index, so results do not depend on scheduling; failures are
/// recorded per row and excluded from the summary.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let runs: Vec<RunRecord> = (0..config.mc_runs)
        .into_par_iter()
        .flat_map_iter(|run| single_run(config, run))
        .collect();
    let summary = summarize(config, &runs);
    Ok(ExperimentOutcome { runs, summary })
}

fn single_run(config: &ExperimentConfig, run: usize) -> Vec<RunRecord> {
    let stage = match prepare_run(config, run) {
        Ok(stage) => stage,
        Err(e) => {
            return config
                .methods
                .iter()
                .map(|&m| RunRecord::failed(run, m, e.to_string()))
                .collect();
        }
    };
    config
        .methods
        .iter()
        .map(|&method| {
            let result = match method {
                Method::HeatflowSd => fit_heatflow(config, &stage, run, FitMethod::Subgradient),
                Method::HeatflowCd => fit_heatflow(config, &stage, run, FitMethod::BlockCd),
                Method::GroupLasso => fit_group_lasso(config, &stage, run),
            };
            result.unwrap_or_else(|e| RunRecord::failed(run, method, e.to_string()))
        })
        .collect()
}

fn prepare_run(config: &ExperimentConfig, run: usize) -> Result<RunStage> {
    let tree = SeedTree::new(config.master_seed).index(run as u64);

    let mut design = config.design.clone();
    design.seed = tree.child("design").seed();
    let data = design.sample()?;

    let sigma_hat = rblw_shrinkage(&data.x)?;
    let r_hat = correlation_from_covariance(&sigma_hat)?;
    let graph = estimate_graph(&r_hat, DEFAULT_GRAPH_QUANTILE)?;
    let spec = spectrum::<f64>(&graph.laplacian())?;
    let t_heuristic = t_flow_heuristic(&spec, None);
    let lambda_grid = heatflow_lambda_grid(&data, config.lambda_grid_points);

    Ok(RunStage {
        data,
        graph,
        spectrum: spec,
        t_heuristic,
        lambda_grid,
        tree,
    })
}

/// Log-spaced penalty weights from ‖Xᵀy/n‖_∞ (the lasso screening bound,
/// which the t = 0 endpoint makes exact) down three decades.
pub fn heatflow_lambda_grid(data: &Dataset<f64>, points: usize) -> Vec<f64> {
    let lambda_max = (data.x.tr_mul(&data.y) / data.n() as f64).amax();
    if !(lambda_max > 0.0) || points <= 1 {
        return vec![lambda_max.max(0.0)];
    }
    let ratio = 1e-3f64.powf(1.0 / (points as f64 - 1.0));
    (0..points)
        .map(|i| lambda_max * ratio.powi(i as i32))
        .collect()
}

fn fit_heatflow(
    config: &ExperimentConfig,
    stage: &RunStage,
    run: usize,
    method: FitMethod,
) -> Result<RunRecord> {
    let t_grid: Vec<f64> = match config.t_mode {
        TMode::FixedHeuristic => vec![stage.t_heuristic],
        TMode::FullCv => [0.5, 1.0, 2.0]
            .iter()
            .map(|m| m * stage.t_heuristic)
            .collect(),
    };
    let pairs: Vec<(f64, f64)> = t_grid
        .iter()
        .flat_map(|&t| stage.lambda_grid.iter().map(move |&l| (l, t)))
        .collect();

    let walk_tree = stage.tree.child("walks");
    let factory = |t: f64| -> Result<PenaltyBackend<f64>> {
        let seed = walk_tree.index(t.to_bits()).seed();
        simulate_heat_flow(&stage.graph, t, config.fit.walks_per_vertex, seed)
            .map(PenaltyBackend::monte_carlo)
    };

    let mut cfg = config.fit.clone();
    cfg.seed = stage.tree.child("optimizer").seed();
    let report = cross_validate(&stage.data, &factory, &pairs, config.cv_folds, method, &cfg)?;

    // Refit on the full data at the selected cell; the walk seed is a
    // function of t, so this reuses the cross-validation backend exactly.
    let backend = factory(report.best_t)?;
    let ev = backend.evaluator();
    cfg.lambda = report.best_lambda;
    cfg.t = report.best_t;
    cfg.seed = stage.tree.child("final-fit").seed();
    let beta0 = ridge_init(&stage.data, cfg.ridge_lambda)?;
    let fit: FitResult<f64> = match method {
        FitMethod::Subgradient => subgradient_descent(&stage.data, &ev, &cfg, &beta0)?,
        FitMethod::BlockCd => stochastic_block_cd(&stage.data, &ev, &cfg, &beta0)?,
    };

    let metrics = score(&fit.beta, &stage.data, None)?;
    Ok(RunRecord {
        run,
        method: match method {
            FitMethod::Subgradient => Method::HeatflowSd,
            FitMethod::BlockCd => Method::HeatflowCd,
        },
        lambda: Some(report.best_lambda),
        t: Some(report.best_t),
        iterations: Some(fit.iterations),
        converged: Some(fit.converged),
        metrics,
        error: None,
    })
}

fn fit_group_lasso(config: &ExperimentConfig, stage: &RunStage, run: usize) -> Result<RunRecord> {
    let p = stage.spectrum.p();
    let k = match config.k_oracle {
        Some(k) => k,
        None => stage
            .spectrum
            .eigenvalues
            .iter()
            .filter(|&&ev| ev < config.k_auto_tol)
            .count()
            .clamp(1, p),
    };
    let mut rng = stage.tree.child("clustering").rng();
    let gs = spectral_clustering(&stage.spectrum, k, &mut rng)?;
    let accuracy = match &stage.data.groups_true {
        Some(truth) => Some(clustering_accuracy(&gs, truth)?),
        None => None,
    };

    let grid = group_lasso_lambda_grid(&stage.data, &gs)?;
    let (best_lambda, _) = group_lasso_cv(
        &stage.data,
        &gs,
        &grid,
        config.cv_folds,
        stage.tree.child("gl-cv").seed(),
    )?;
    let beta: DVector<f64> = group_lasso_fit(&stage.data, &gs, best_lambda)?;

    let mut metrics = score(&beta, &stage.data, None)?;
    metrics.clustering_accuracy = accuracy;
    Ok(RunRecord {
        run,
        method: Method::GroupLasso,
        lambda: Some(best_lambda),
        t: None,
        iterations: None,
        converged: Some(true),
        metrics,
        error: None,
    })
}

fn summarize(config: &ExperimentConfig, runs: &[RunRecord]) -> Vec<SummaryRow> {
    config
        .methods
        .iter()
        .map(|&method| {
            let rows: Vec<&RunRecord> = runs.iter().filter(|r| r.method == method).collect();
            let ok: Vec<&RunRecord> = rows.iter().copied().filter(|r| r.error.is_none()).collect();
            let collect = |get: fn(&MetricsReport) -> Option<f64>| {
                mean_se(
                    &ok.iter()
                        .filter_map(|r| get(&r.metrics))
                        .collect::<Vec<_>>(),
                )
            };
            SummaryRow {
                method,
                runs_ok: ok.len(),
                runs_failed: rows.len() - ok.len(),
                prediction_error: collect(|m| m.prediction_error),
                estimation_error: collect(|m| m.estimation_error),
                sensitivity: collect(|m| m.sensitivity),
                specificity: collect(|m| m.specificity),
                clustering_accuracy: collect(|m| m.clustering_accuracy),
            }
        })
        .collect()
}

fn mean_se(values: &[f64]) -> Option<MetricSummary> {
    if values.is_empty() {
        return None;
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let se = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    } else {
        0.0
    };
    Some(MetricSummary { mean, se })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_se_matches_hand_computation() {
        assert!(mean_se(&[]).is_none());
        let single = mean_se(&[0.7]).unwrap();
        assert_eq!((single.mean, single.se), (0.7, 0.0));
        let s = mean_se(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((s.mean - 2.5).abs() < 1e-12);
        // sd = √(5/3), se = sd/2
        assert!((s.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_grid_spans_three_decades() {
        let spec = DesignSpec::block_benchmark(3);
        let data = spec.sample().unwrap();
        let grid = heatflow_lambda_grid(&data, 10);
        assert_eq!(grid.len(), 10);
        assert!(grid.windows(2).all(|w| w[1] < w[0]));
        assert!((grid[0] / grid[9] - 1000.0).abs() < 1e-6);
        let null = Dataset::new(data.x.clone(), DVector::zeros(data.n())).unwrap();
        assert_eq!(heatflow_lambda_grid(&null, 10), vec![0.0]);
    }

    #[test]
    fn config_validation_rejects_degenerate_setups() {
        let mut c = ExperimentConfig::block_benchmark(0);
        c.mc_runs = 0;
        assert!(run_experiment(&c).is_err());
        let mut c = ExperimentConfig::block_benchmark(0);
        c.methods.clear();
        assert!(run_experiment(&c).is_err());
        let mut c = ExperimentConfig::block_benchmark(0);
        c.lambda_grid_points = 0;
        assert!(run_experiment(&c).is_err());
    }

    /// A small end-to-end run: every arm completes, records carry metrics,
    /// summaries aggregate only successes, and reruns are identical.
    #[test]
    fn small_experiment_runs_all_arms_deterministically() {
        let mut config = ExperimentConfig::block_benchmark(7);
        config.mc_runs = 2;
        config.cv_folds = 3;
        config.lambda_grid_points = 4;
        config.fit.max_iter = 150;
        config.fit.walks_per_vertex = 100;
        // Shrink the design so the test stays fast.
        config.design = DesignSpec {
            kind: crate::design::DesignKind::BlockGaussian {
                sizes: vec![8, 8, 8],
                rhos: vec![0.6, 0.8, 0.5],
            },
            n: 60,
            beta_rule: vec![
                crate::design::BetaRule::Uniform { lo: 0.5, hi: 0.7 },
                crate::design::BetaRule::Zero,
                crate::design::BetaRule::Uniform { lo: -0.7, hi: -0.5 },
            ],
            noise_sigma: 0.5,
            seed: 0,
        };
        config.k_oracle = Some(3);

        let outcome = run_experiment(&config).unwrap();
        assert_eq!(outcome.runs.len(), 6); // 2 runs × 3 methods
        for record in &outcome.runs {
            assert!(
                record.error.is_none(),
                "{:?} failed: {:?}",
                record.method,
                record.error
            );
            assert!(record.metrics.prediction_error.is_some());
            assert!(record.metrics.sensitivity.is_some());
            if record.method == Method::GroupLasso {
                assert!(record.metrics.clustering_accuracy.is_some());
            } else {
                assert!(record.t.is_some());
            }
        }
        assert_eq!(outcome.summary.len(), 3);
        for row in &outcome.summary {
            assert_eq!(row.runs_ok, 2);
            assert_eq!(row.runs_failed, 0);
            assert!(row.specificity.is_some());
        }

        let again = run_experiment(&config).unwrap();
        assert_eq!(
            serde_json::to_string(&outcome.runs).unwrap(),
            serde_json::to_string(&again.runs).unwrap()
        );
    }

    #[test]
    fn summary_excludes_failed_runs() {
        let config = ExperimentConfig::block_benchmark(0);
        let runs = vec![
            RunRecord {
                run: 0,
                method: Method::HeatflowSd,
                lambda: Some(0.1),
                t: Some(0.5),
                iterations: Some(10),
                converged: Some(true),
                metrics: MetricsReport {
                    specificity: Some(1.0),
                    ..Default::default()
                },
                error: None,
            },
            RunRecord::failed(1, Method::HeatflowSd, "boom".into()),
        ];
        let summary = summarize(&config, &runs);
        let sd = summary
            .iter()
            .find(|r| r.method == Method::HeatflowSd)
            .unwrap();
        assert_eq!(sd.runs_ok, 1);
        assert_eq!(sd.runs_failed, 1);
        assert_eq!(sd.specificity.unwrap().mean, 1.0);
        assert_eq!(sd.specificity.unwrap().se, 0.0);
    }
}
