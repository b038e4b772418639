//! Command-line front end: simulate benchmark datasets, estimate the
//! variable graph, fit penalized estimators, cross-validate, and run the
//! full Monte Carlo benchmark.
//!
//! Exit codes: 0 success, 2 invalid arguments or configuration, 1 runtime
//! failure (I/O, parsing, divergence).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heatlasso::{
    clustering_accuracy, correlation_from_covariance, cross_validate, estimate_graph,
    group_lasso_bcd, group_lasso_cv, group_lasso_lambda_grid, heatflow_lambda_grid, rblw_shrinkage,
    read_dataset, ridge_init, run_experiment, score, simulate_heat_flow, spectral_clustering,
    spectrum, stochastic_block_cd, subgradient_descent, t_flow_heuristic, write_beta_csv,
    write_dataset, write_graph, write_json, write_metrics_json, write_run_records_csv,
    write_summary_csv, write_trace_csv, Dataset, DesignKind, DesignSpec, Error, ExperimentConfig,
    FitConfig, FitMethod, FitResult, Graph, LaplacianSpectrum, Method, PenaltyBackend, Result,
    SeedTree, SummaryRow, TMode, DEFAULT_GRAPH_QUANTILE,
};
use nalgebra::DVector;

#[derive(Parser)]
#[command(
    name = "heatlasso",
    version,
    about = "Sparse regression under latent group structure via a heat-flow penalty"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from a built-in benchmark design.
    Simulate(SimulateArgs),
    /// Estimate the variable graph from a dataset by correlation thresholding.
    EstimateGraph(EstimateGraphArgs),
    /// Fit one estimator to a dataset and write estimates, metrics, and trace.
    Fit(FitArgs),
    /// Cross-validate the penalty weight (and diffusion time) on a grid.
    Cv(CvArgs),
    /// Run the Monte Carlo benchmark: replicate, fit every method, summarize.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    /// Gaussian rows with block-diagonal equicorrelation covariance.
    Block,
    /// Gaussian free field on a stochastic block model graph.
    Gff,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Heat-flow penalty, subgradient descent.
    Sd,
    /// Heat-flow penalty, stochastic block coordinate descent.
    Cd,
    /// Spectral clustering followed by group lasso.
    GroupLasso,
}

impl MethodArg {
    fn as_method(self) -> Method {
        match self {
            MethodArg::Sd => Method::HeatflowSd,
            MethodArg::Cd => Method::HeatflowCd,
            MethodArg::GroupLasso => Method::GroupLasso,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    design: DesignArg,
    /// Rows to generate (default: the benchmark's 200).
    #[arg(long)]
    n: Option<usize>,
    /// Within-block correlations, comma-separated: one per block, or a
    /// single value for all blocks (block design only).
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    /// Noise standard deviation (default: the benchmark's 0.5).
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; a JSON sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateGraphArgs {
    /// Input dataset CSV (as written by `simulate`).
    #[arg(long)]
    data: PathBuf,
    /// Quantile of |correlation| below which variable pairs stay unlinked.
    #[arg(long, default_value_t = DEFAULT_GRAPH_QUANTILE)]
    quantile: f64,
    /// Output edge-list path.
    #[arg(long)]
    out: PathBuf,
}

/// Optimizer settings shared by `fit` and `cv`.
#[derive(Args)]
struct OptimArgs {
    /// Walks per vertex for the Monte Carlo penalty backend.
    #[arg(long = "B", default_value_t = 500)]
    walks: usize,
    /// Evaluate the heat kernel exactly (eigendecomposition) instead of
    /// by random walks.
    #[arg(long)]
    exact: bool,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    /// Relative-change stopping tolerance.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Coordinates per iteration for the block coordinate descent method.
    #[arg(long, default_value_t = 10)]
    block_size: usize,
    /// Ridge weight for the initializer.
    #[arg(long, default_value_t = 0.1)]
    ridge_lambda: f64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Penalty weight; may be omitted only with --cv.
    #[arg(long)]
    lambda: Option<f64>,
    /// Diffusion time for the heat-flow penalty.
    #[arg(long, conflicts_with = "t_heuristic")]
    t: Option<f64>,
    /// Choose the diffusion time by the spectral heuristic on the
    /// estimated graph.
    #[arg(long)]
    t_heuristic: bool,
    /// Pick the penalty weight by cross-validation before the final fit.
    #[arg(long)]
    cv: bool,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    /// Points in the log-spaced penalty-weight grid used with --cv.
    #[arg(long, default_value_t = 10)]
    lambda_points: usize,
    #[command(flatten)]
    optim: OptimArgs,
    /// Oracle cluster count for the group-lasso arm.
    #[arg(long)]
    k: Option<usize>,
    /// Without --k: clusters = count of Laplacian eigenvalues below this.
    #[arg(long, default_value_t = 0.01)]
    k_auto_tol: f64,
    /// Quantile for the graph-estimation step.
    #[arg(long, default_value_t = DEFAULT_GRAPH_QUANTILE)]
    quantile: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for beta.csv, metrics.json, and trace.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Explicit diffusion-time grid, comma-separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "t_heuristic")]
    t_grid: Option<Vec<f64>>,
    /// Diffusion-time grid {0.5, 1, 2} x the spectral heuristic.
    #[arg(long)]
    t_heuristic: bool,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    /// Points in the log-spaced penalty-weight grid.
    #[arg(long, default_value_t = 10)]
    lambda_points: usize,
    #[command(flatten)]
    optim: OptimArgs,
    /// Oracle cluster count for the group-lasso arm.
    #[arg(long)]
    k: Option<usize>,
    /// Without --k: clusters = count of Laplacian eigenvalues below this.
    #[arg(long, default_value_t = 0.01)]
    k_auto_tol: f64,
    /// Quantile for the graph-estimation step.
    #[arg(long, default_value_t = DEFAULT_GRAPH_QUANTILE)]
    quantile: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV of cross-validation cells (lambda, t, mean_mse).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    design: DesignArg,
    #[arg(long, default_value_t = 10)]
    mc_runs: usize,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    /// Methods to run, comma-separated.
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = [MethodArg::Sd, MethodArg::Cd, MethodArg::GroupLasso])]
    methods: Vec<MethodArg>,
    /// Cross-validate the diffusion time jointly with the penalty weight
    /// instead of fixing the spectral heuristic.
    #[arg(long)]
    full_cv: bool,
    /// Oracle cluster count for the group-lasso arm (the benchmarks use 4).
    #[arg(long)]
    k: Option<usize>,
    /// Without --k: clusters = count of Laplacian eigenvalues below this.
    #[arg(long, default_value_t = 0.01)]
    k_auto_tol: f64,
    /// Walks per vertex for the Monte Carlo penalty backend.
    #[arg(long = "B", default_value_t = 500)]
    walks: usize,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Relative-change stopping tolerance.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Points in the log-spaced penalty-weight grid.
    #[arg(long, default_value_t = 10)]
    lambda_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for runs.csv, summary.csv, and config.json.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure {threads} threads: {e}");
            std::process::exit(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::EstimateGraph(args) => cmd_estimate_graph(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Experiment(args) => cmd_experiment(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::Invalid(_) | Error::Shape(_) => 2,
            _ => 1,
        });
    }
}

fn build_design(args: &SimulateArgs) -> Result<DesignSpec> {
    let mut spec = match args.design {
        DesignArg::Block => DesignSpec::block_benchmark(args.seed),
        DesignArg::Gff => DesignSpec::gff_benchmark(args.seed),
    };
    if let Some(n) = args.n {
        spec.n = n;
    }
    if let Some(sigma) = args.noise_sigma {
        spec.noise_sigma = sigma;
    }
    if let Some(rho) = &args.rho {
        let DesignKind::BlockGaussian { sizes, rhos } = &mut spec.kind else {
            return Err(Error::Invalid(
                "--rho only applies to the block design".into(),
            ));
        };
        *rhos = match rho.len() {
            1 => vec![rho[0]; sizes.len()],
            len if len == sizes.len() => rho.clone(),
            len => {
                return Err(Error::Invalid(format!(
                    "{len} correlations for {} blocks (give one, or one per block)",
                    sizes.len()
                )))
            }
        };
    }
    Ok(spec)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let spec = build_design(&args)?;
    let data = spec.sample()?;
    write_dataset(&args.out, &data, Some(&spec))?;
    println!(
        "wrote {} ({} rows, {} variables)",
        args.out.display(),
        data.n(),
        data.p()
    );
    Ok(())
}

/// Shrink, rescale, threshold: the correlation graph and its spectrum.
fn graph_pipeline(data: &Dataset<f64>, quantile: f64) -> Result<(Graph, LaplacianSpectrum<f64>)> {
    let sigma_hat = rblw_shrinkage(&data.x)?;
    let r_hat = correlation_from_covariance(&sigma_hat)?;
    let graph = estimate_graph(&r_hat, quantile)?;
    let spec = spectrum::<f64>(&graph.laplacian())?;
    Ok((graph, spec))
}

fn cmd_estimate_graph(args: EstimateGraphArgs) -> Result<()> {
    let (data, _) = read_dataset(&args.data)?;
    let (graph, _) = graph_pipeline(&data, args.quantile)?;
    write_graph(&args.out, &graph)?;
    println!(
        "wrote {} ({} vertices, {} edges, {} components)",
        args.out.display(),
        graph.vertex_count(),
        graph.edges().len(),
        graph.component_count()
    );
    Ok(())
}

fn cluster_count(spec: &LaplacianSpectrum<f64>, k: Option<usize>, tol: f64) -> usize {
    match k {
        Some(k) => k,
        None => spec
            .eigenvalues
            .iter()
            .filter(|&&ev| ev < tol)
            .count()
            .clamp(1, spec.p()),
    }
}

fn fit_config(optim: &OptimArgs, lambda: f64, t: f64, seed: u64) -> FitConfig {
    FitConfig {
        lambda,
        t,
        walks_per_vertex: optim.walks,
        eps: optim.eps,
        max_iter: optim.max_iter,
        block_size: optim.block_size,
        ridge_lambda: optim.ridge_lambda,
        seed,
        ..FitConfig::default()
    }
}

/// One Monte Carlo walk table (or exact kernel) per diffusion time; the
/// walk seed is a function of t, so repeated requests reuse the same table.
fn backend_factory<'a>(
    graph: &'a Graph,
    spec: &'a LaplacianSpectrum<f64>,
    exact: bool,
    walks: usize,
    walk_tree: &'a SeedTree,
) -> impl Fn(f64) -> Result<PenaltyBackend<f64>> + 'a {
    move |t: f64| {
        if exact {
            PenaltyBackend::exact(spec.clone(), t)
        } else {
            let seed = walk_tree.index(t.to_bits()).seed();
            simulate_heat_flow(graph, t, walks, seed).map(PenaltyBackend::monte_carlo)
        }
    }
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let (data, _) = read_dataset(&args.data)?;
    std::fs::create_dir_all(&args.out)?;
    let tree = SeedTree::new(args.seed);

    if args.lambda.is_none() && !args.cv {
        return Err(Error::Invalid("give --lambda, or --cv to select it".into()));
    }

    let (beta_raw, beta, trace, metrics) = match args.method {
        MethodArg::GroupLasso => {
            let (_, spec) = graph_pipeline(&data, args.quantile)?;
            let k = cluster_count(&spec, args.k, args.k_auto_tol);
            let mut rng = tree.child("clustering").rng();
            let gs = spectral_clustering(&spec, k, &mut rng)?;

            let lambda = match args.lambda {
                Some(lambda) => lambda,
                None => {
                    let grid = group_lasso_lambda_grid(&data, &gs)?;
                    let (best, _) = group_lasso_cv(
                        &data,
                        &gs,
                        &grid,
                        args.cv_folds,
                        tree.child("gl-cv").seed(),
                    )?;
                    println!("cross-validated lambda = {best}");
                    best
                }
            };
            let (beta, trace) = group_lasso_bcd(&data, &gs, lambda, &DVector::zeros(data.p()))?;
            let mut metrics = score(&beta, &data, None)?;
            if let Some(truth) = &data.groups_true {
                metrics.clustering_accuracy = Some(clustering_accuracy(&gs, truth)?);
            }
            // Group lasso output is exactly sparse already; no thresholding.
            (beta.clone(), beta, trace, metrics)
        }
        MethodArg::Sd | MethodArg::Cd => {
            let (graph, spec) = graph_pipeline(&data, args.quantile)?;
            let t = match args.t {
                Some(t) => t,
                None if args.t_heuristic => t_flow_heuristic(&spec, None),
                None => {
                    return Err(Error::Invalid(
                        "give --t, or --t-heuristic to derive it from the graph".into(),
                    ))
                }
            };
            let walk_tree = tree.child("walks");
            let factory = backend_factory(
                &graph,
                &spec,
                args.optim.exact,
                args.optim.walks,
                &walk_tree,
            );
            let method = match args.method {
                MethodArg::Sd => FitMethod::Subgradient,
                _ => FitMethod::BlockCd,
            };

            let lambda = match args.lambda {
                Some(lambda) => lambda,
                None => {
                    let grid = heatflow_lambda_grid(&data, args.lambda_points);
                    let pairs: Vec<(f64, f64)> = grid.iter().map(|&l| (l, t)).collect();
                    let cfg = fit_config(&args.optim, 0.0, t, tree.child("optimizer").seed());
                    let report =
                        cross_validate(&data, &factory, &pairs, args.cv_folds, method, &cfg)?;
                    println!("cross-validated lambda = {}", report.best_lambda);
                    report.best_lambda
                }
            };

            let cfg = fit_config(&args.optim, lambda, t, tree.child("final-fit").seed());
            let backend = factory(t)?;
            let ev = backend.evaluator();
            let beta0 = ridge_init(&data, cfg.ridge_lambda)?;
            let fit: FitResult<f64> = match method {
                FitMethod::Subgradient => subgradient_descent(&data, &ev, &cfg, &beta0)?,
                FitMethod::BlockCd => stochastic_block_cd(&data, &ev, &cfg, &beta0)?,
            };
            println!(
                "t = {t}, {} iterations, converged = {}",
                fit.iterations, fit.converged
            );
            let metrics = score(&fit.beta, &data, None)?;
            (fit.beta_raw, fit.beta, fit.trace, metrics)
        }
    };

    write_beta_csv(&args.out.join("beta.csv"), &beta_raw, &beta)?;
    write_trace_csv(&args.out.join("trace.csv"), &trace)?;
    write_metrics_json(&args.out.join("metrics.json"), &metrics)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_cv(args: CvArgs) -> Result<()> {
    let (data, _) = read_dataset(&args.data)?;

    match args.method {
        MethodArg::GroupLasso => {
            let (_, spec) = graph_pipeline(&data, args.quantile)?;
            let tree = SeedTree::new(args.seed);
            let k = cluster_count(&spec, args.k, args.k_auto_tol);
            let mut rng = tree.child("clustering").rng();
            let gs = spectral_clustering(&spec, k, &mut rng)?;
            let grid = group_lasso_lambda_grid(&data, &gs)?;
            let (best, cells) =
                group_lasso_cv(&data, &gs, &grid, args.cv_folds, tree.child("gl-cv").seed())?;
            write_cells_csv(&args.out, cells.iter().map(|&(l, m)| (l, None, m)))?;
            println!("best lambda = {best}");
        }
        MethodArg::Sd | MethodArg::Cd => {
            let (graph, spec) = graph_pipeline(&data, args.quantile)?;
            let t_grid: Vec<f64> = match &args.t_grid {
                Some(grid) if !grid.is_empty() => grid.clone(),
                Some(_) => return Err(Error::Invalid("empty --t-grid".into())),
                None if args.t_heuristic => {
                    let t = t_flow_heuristic(&spec, None);
                    [0.5, 1.0, 2.0].iter().map(|m| m * t).collect()
                }
                None => {
                    return Err(Error::Invalid(
                        "give --t-grid, or --t-heuristic to derive one".into(),
                    ))
                }
            };
            let lambda_grid = heatflow_lambda_grid(&data, args.lambda_points);
            let pairs: Vec<(f64, f64)> = t_grid
                .iter()
                .flat_map(|&t| lambda_grid.iter().map(move |&l| (l, t)))
                .collect();

            let tree = SeedTree::new(args.seed);
            let walk_tree = tree.child("walks");
            let factory = backend_factory(
                &graph,
                &spec,
                args.optim.exact,
                args.optim.walks,
                &walk_tree,
            );
            let method = match args.method {
                MethodArg::Sd => FitMethod::Subgradient,
                _ => FitMethod::BlockCd,
            };
            let cfg = fit_config(&args.optim, 0.0, t_grid[0], tree.child("optimizer").seed());
            let report = cross_validate(&data, &factory, &pairs, args.cv_folds, method, &cfg)?;
            write_cells_csv(
                &args.out,
                report
                    .cells
                    .iter()
                    .map(|c| (c.lambda, Some(c.t), c.mean_mse)),
            )?;
            println!(
                "best lambda = {}, best t = {}",
                report.best_lambda, report.best_t
            );
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn write_cells_csv(
    path: &std::path::Path,
    cells: impl Iterator<Item = (f64, Option<f64>, f64)>,
) -> Result<()> {
    let mut out = String::from("lambda,t,mean_mse\n");
    for (lambda, t, mse) in cells {
        let t = t.map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!("{lambda},{t},{mse}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let design = match args.design {
        DesignArg::Block => DesignSpec::block_benchmark(0),
        DesignArg::Gff => DesignSpec::gff_benchmark(0),
    };
    let mut methods: Vec<Method> = args.methods.iter().map(|m| m.as_method()).collect();
    methods.dedup();
    let config = ExperimentConfig {
        design,
        methods,
        mc_runs: args.mc_runs,
        cv_folds: args.cv_folds,
        t_mode: if args.full_cv {
            TMode::FullCv
        } else {
            TMode::FixedHeuristic
        },
        k_oracle: args.k,
        k_auto_tol: args.k_auto_tol,
        fit: FitConfig {
            walks_per_vertex: args.walks,
            max_iter: args.max_iter,
            eps: args.eps,
            ..FitConfig::default()
        },
        lambda_grid_points: args.lambda_points,
        master_seed: args.seed,
    };

    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("config.json"), &config)?;
    let outcome = run_experiment(&config)?;
    write_run_records_csv(&args.out.join("runs.csv"), &outcome.runs)?;
    write_summary_csv(&args.out.join("summary.csv"), &outcome.summary)?;
    print_summary_table(&outcome.summary);
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Methods across, metrics down, mean (standard error) in each cell.
fn print_summary_table(summary: &[SummaryRow]) {
    let cell = |s: &Option<heatlasso::MetricSummary>| match s {
        Some(m) => format!("{:.3} ({:.3})", m.mean, m.se),
        None => String::new(),
    };
    let mut rows = vec![vec![String::new()]];
    for name in [
        "Prediction error",
        "Estimation error",
        "Sensitivity",
        "Specificity",
        "Clustering accuracy",
        "Runs ok/failed",
    ] {
        rows.push(vec![name.to_string()]);
    }
    for row in summary {
        rows[0].push(row.method.as_str().to_string());
        rows[1].push(cell(&row.prediction_error));
        rows[2].push(cell(&row.estimation_error));
        rows[3].push(cell(&row.sensitivity));
        rows[4].push(cell(&row.specificity));
        rows[5].push(cell(&row.clustering_accuracy));
        rows[6].push(format!("{}/{}", row.runs_ok, row.runs_failed));
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        println!("{}", line.join("  ").trim_end());
    }
}
