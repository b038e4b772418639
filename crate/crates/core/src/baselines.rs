//! The comparison arm and shared scoring: spectral clustering of an
//! estimated feature graph, a group-lasso solver run on the resulting
//! groups, and the support/error metrics both arms report.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::Dataset;
use crate::error::{invalid, shape, Result};
use crate::graph::LaplacianSpectrum;
use crate::penalty::GroupStructure;
use crate::scalar::{cst, Real};

/// The metrics reported per fitted model. Fields are absent when their
/// ingredients are unavailable (no ground truth, no holdout) or their
/// denominator is empty (no true support / co-support).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// In-sample design error (1/n)‖X(β̂ − β*)‖² when the generating
    /// coefficients are known, holdout MSE otherwise.
    pub prediction_error: Option<f64>,
    /// ‖β̂ − β*‖₂.
    pub estimation_error: Option<f64>,
    /// Fraction of the true support recovered: #{β̂_i ≠ 0 ∧ β*_i ≠ 0} / #{β*_i ≠ 0}.
    pub sensitivity: Option<f64>,
    /// Fraction of the true co-support kept zero: #{β̂_i = 0 ∧ β*_i = 0} / #{β*_i = 0}.
    pub specificity: Option<f64>,
    /// Best-permutation label agreement between estimated and true groups.
    pub clustering_accuracy: Option<f64>,
}

/// Spectral clustering: the rows of the matrix of eigenvectors for the k
/// smallest Laplacian eigenvalues, grouped by k-means (10 restarts, best
/// within-cluster sum of squares kept). Labels are compacted in order of
/// first occurrence, so fewer than k groups come back when k-means leaves a
/// cluster empty.
pub fn spectral_clustering<T: Real, R: Rng + ?Sized>(
    spec: &LaplacianSpectrum<T>,
    k: usize,
    rng: &mut R,
) -> Result<GroupStructure> {
    let p = spec.p();
    if k == 0 || k > p {
        return Err(invalid(format!("cluster count {k} outside [1, {p}]")));
    }
    if k == 1 {
        return Ok(GroupStructure::single(p));
    }
    let points = DMatrix::<f64>::from_fn(p, k, |i, j| {
        spec.eigenvectors[(i, j)].to_f64().unwrap_or(f64::NAN)
    });
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..10 {
        let (labels, inertia) = kmeans_once(&points, k, rng);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    let (labels, _) = best.expect("at least one restart ran");
    GroupStructure::from_labels(compact_labels(&labels))
}

/// Relabel by order of first occurrence so ids form 0..k' with no gaps.
fn compact_labels(labels: &[usize]) -> Vec<usize> {
    let mut remap: Vec<Option<usize>> = vec![None; labels.iter().max().map_or(0, |m| m + 1)];
    let mut next = 0;
    labels
        .iter()
        .map(|&l| {
            *remap[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// One k-means run: k-means++ seeding, Lloyd iterations until assignments
/// stabilize (or 100 passes). Returns labels and the final inertia.
fn kmeans_once<R: Rng + ?Sized>(points: &DMatrix<f64>, k: usize, rng: &mut R) -> (Vec<usize>, f64) {
    let p = points.nrows();
    let mut centers = kmeans_pp_init(points, k, rng);
    let mut labels = vec![0usize; p];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..p {
            let (mut arg, mut best) = (0usize, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = (points.row(i).transpose() - center).norm_squared();
                if d < best {
                    best = d;
                    arg = c;
                }
            }
            if labels[i] != arg {
                labels[i] = arg;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![DVector::<f64>::zeros(points.ncols()); k];
        let mut counts = vec![0usize; k];
        for i in 0..p {
            sums[labels[i]] += points.row(i).transpose();
            counts[labels[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            }
            // An emptied cluster keeps its previous center.
        }
    }
    let inertia = (0..p)
        .map(|i| (points.row(i).transpose() - &centers[labels[i]]).norm_squared())
        .sum();
    (labels, inertia)
}

/// k-means++ seeding: first center uniform, later ones proportional to the
/// squared distance from the nearest chosen center.
fn kmeans_pp_init<R: Rng + ?Sized>(
    points: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let p = points.nrows();
    let mut centers = vec![points.row(rng.gen_range(0..p)).transpose()];
    let mut dist_sq: Vec<f64> = (0..p)
        .map(|i| (points.row(i).transpose() - &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = dist_sq.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.gen_range(0.0..total);
            let mut pick = p - 1;
            for (i, &d) in dist_sq.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // All points coincide with a center; any choice is equivalent.
            rng.gen_range(0..p)
        };
        let center = points.row(idx).transpose();
        for i in 0..p {
            dist_sq[i] = dist_sq[i].min((points.row(i).transpose() - &center).norm_squared());
        }
        centers.push(center);
    }
    centers
}

/// Best-permutation agreement between two labelings of the same
/// coordinates: max over permutations σ of #{i : σ(est_i) = truth_i}/p,
/// enumerated exactly (so the group count is capped at 10).
pub fn clustering_accuracy(est: &GroupStructure, truth: &GroupStructure) -> Result<f64> {
    if est.p() != truth.p() {
        return Err(shape(format!(
            "labelings cover {} and {} coordinates",
            est.p(),
            truth.p()
        )));
    }
    let k = est.k().max(truth.k());
    if k > 10 {
        return Err(invalid(format!(
            "exact permutation search over {k} labels is not practical"
        )));
    }
    // counts[e][t] = #coordinates with estimated label e and true label t;
    // a permutation σ then scores Σ_e counts[e][σ(e)].
    let mut counts = vec![vec![0usize; k]; k];
    for (&e, &t) in est.labels().iter().zip(truth.labels()) {
        counts[e][t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0usize;
    permute_and_score(&mut perm, 0, &counts, &mut best);
    Ok(best as f64 / est.p() as f64)
}

fn permute_and_score(perm: &mut Vec<usize>, depth: usize, counts: &[Vec<usize>], best: &mut usize) {
    if depth == perm.len() {
        let score = perm.iter().enumerate().map(|(e, &t)| counts[e][t]).sum();
        *best = (*best).max(score);
        return;
    }
    for i in depth..perm.len() {
        perm.swap(depth, i);
        permute_and_score(perm, depth + 1, counts, best);
        perm.swap(depth, i);
    }
}

const GROUP_LASSO_TOL: f64 = 1e-8;
const GROUP_LASSO_MAX_SWEEPS: usize = 10_000;

/// Group lasso: minimizes (1/2n)‖y − Xβ‖² + λ·Σ_j √T_j·‖β_{C_j}‖₂ by block
/// coordinate descent, soft-thresholding each block's gradient step at its
/// own Lipschitz constant, until the largest block change in a sweep is at
/// most 1e−8. The objective is convex, so this is the global optimum.
pub fn group_lasso_fit<T: Real>(
    data: &Dataset<T>,
    gs: &GroupStructure,
    lambda: T,
) -> Result<DVector<T>> {
    let zero = DVector::zeros(data.p());
    group_lasso_bcd(data, gs, lambda, &zero).map(|(beta, _)| beta)
}

/// The solver behind [`group_lasso_fit`], exposed for warm starts and
/// progress reporting: returns the solution and the objective after each
/// sweep.
pub fn group_lasso_bcd<T: Real>(
    data: &Dataset<T>,
    gs: &GroupStructure,
    lambda: T,
    beta0: &DVector<T>,
) -> Result<(DVector<T>, Vec<T>)> {
    if gs.p() != data.p() {
        return Err(shape(format!(
            "groups cover {} coordinates but X has {} columns",
            gs.p(),
            data.p()
        )));
    }
    if beta0.len() != data.p() {
        return Err(shape(format!(
            "starting point has length {}, expected {}",
            beta0.len(),
            data.p()
        )));
    }
    let lambda_f = lambda.to_f64().unwrap_or(f64::NAN);
    if !(lambda_f >= 0.0) || !lambda_f.is_finite() {
        return Err(invalid(format!(
            "lambda must be finite and >= 0, got {lambda_f}"
        )));
    }
    let n = cst::<T>(data.n() as f64);
    let members = gs.members();
    let weights: Vec<T> = gs
        .sizes()
        .iter()
        .map(|&s| cst::<T>(s as f64).sqrt())
        .collect();

    // Per-block Lipschitz constants ‖X_jᵀX_j‖_op/n.
    let lipschitz: Vec<T> = members
        .iter()
        .map(|m| {
            if m.len() == 1 {
                data.x.column(m[0]).norm_squared() / n
            } else {
                let gram = DMatrix::<T>::from_fn(m.len(), m.len(), |a, b| {
                    data.x.column(m[a]).dot(&data.x.column(m[b])) / n
                });
                gram.symmetric_eigen().eigenvalues.amax()
            }
        })
        .collect();

    let mut beta = beta0.clone();
    // Zero-variance blocks cannot affect the fit; pin them to zero.
    for (j, m) in members.iter().enumerate() {
        if !(lipschitz[j] > T::zero()) {
            for &c in m {
                beta[c] = T::zero();
            }
        }
    }
    let mut resid = &data.y - &data.x * &beta;
    let mut trace: Vec<T> = Vec::new();

    for _ in 0..GROUP_LASSO_MAX_SWEEPS {
        let mut max_change = T::zero();
        for (j, m) in members.iter().enumerate() {
            let lip = lipschitz[j];
            if !(lip > T::zero()) {
                continue;
            }
            // u = β_j + X_jᵀ r / (n·L_j), soft-thresholded at λ√T_j/L_j.
            let mut u = DVector::<T>::from_fn(m.len(), |a, _| {
                beta[m[a]] + data.x.column(m[a]).dot(&resid) / (n * lip)
            });
            let threshold = lambda * weights[j] / lip;
            let u_norm = u.norm();
            if u_norm > threshold {
                u *= T::one() - threshold / u_norm;
            } else {
                u.fill(T::zero());
            }
            let mut change_sq = T::zero();
            for (a, &c) in m.iter().enumerate() {
                let delta = u[a] - beta[c];
                if delta != T::zero() {
                    resid.axpy(-delta, &data.x.column(c), T::one());
                    beta[c] = u[a];
                }
                change_sq += delta * delta;
            }
            max_change = max_change.max(change_sq.sqrt());
        }
        let penalty = members.iter().enumerate().fold(T::zero(), |acc, (j, m)| {
            let norm_sq = m.iter().fold(T::zero(), |s, &c| s + beta[c] * beta[c]);
            acc + weights[j] * norm_sq.sqrt()
        });
        trace.push(resid.norm_squared() / (cst::<T>(2.0) * n) + lambda * penalty);
        if max_change <= cst(GROUP_LASSO_TOL) {
            break;
        }
    }
    Ok((beta, trace))
}

/// The 50-point log-spaced λ grid from the screening bound
/// λ_max = max_j ‖X_jᵀy/n‖₂/√T_j (above which the solution is exactly zero)
/// down to λ_max/1000, in descending order.
pub fn group_lasso_lambda_grid<T: Real>(data: &Dataset<T>, gs: &GroupStructure) -> Result<Vec<T>> {
    if gs.p() != data.p() {
        return Err(shape(format!(
            "groups cover {} coordinates but X has {} columns",
            gs.p(),
            data.p()
        )));
    }
    let n = cst::<T>(data.n() as f64);
    let lambda_max = gs
        .members()
        .iter()
        .zip(gs.sizes())
        .map(|(m, &size)| {
            let g_sq = m.iter().fold(T::zero(), |s, &c| {
                let gc = data.x.column(c).dot(&data.y) / n;
                s + gc * gc
            });
            g_sq.sqrt() / cst::<T>(size as f64).sqrt()
        })
        .fold(T::zero(), |a, b| a.max(b));
    if !(lambda_max > T::zero()) {
        return Ok(vec![T::zero()]);
    }
    let ratio = cst::<T>(1e-3).powf(T::one() / cst(49.0));
    Ok((0..50).map(|i| lambda_max * ratio.powi(i)).collect())
}

/// k-fold cross-validation of the group lasso over a λ grid, warm-starting
/// each fold down the grid. Scores validation MSE; exact ties prefer the
/// smaller λ. Returns the winner and the per-λ mean scores in grid order.
pub fn group_lasso_cv<T: Real>(
    data: &Dataset<T>,
    gs: &GroupStructure,
    grid: &[T],
    folds: usize,
    seed: u64,
) -> Result<(T, Vec<(T, T)>)> {
    if grid.is_empty() {
        return Err(invalid("cross-validation grid is empty"));
    }
    let fold_rows = crate::optimize::fold_partition(data.n(), folds, seed)?;
    let mut mean_mse = vec![T::zero(); grid.len()];
    let fold_count = cst::<T>(folds as f64);
    for val_rows in &fold_rows {
        let mut train_rows: Vec<usize> = (0..data.n()).filter(|r| !val_rows.contains(r)).collect();
        train_rows.sort_unstable();
        let train = data.subset(&train_rows);
        let val = data.subset(val_rows);
        let mut warm = DVector::<T>::zeros(data.p());
        for (gi, &lambda) in grid.iter().enumerate() {
            let (beta, _) = group_lasso_bcd(&train, gs, lambda, &warm)?;
            let r = &val.y - &val.x * &beta;
            mean_mse[gi] += r.norm_squared() / cst::<T>(val.n() as f64) / fold_count;
            warm = beta;
        }
    }
    let mut best = 0;
    for i in 1..grid.len() {
        if mean_mse[i] < mean_mse[best] || (mean_mse[i] == mean_mse[best] && grid[i] < grid[best]) {
            best = i;
        }
    }
    Ok((grid[best], grid.iter().copied().zip(mean_mse).collect()))
}

/// Support and error metrics for an estimate. Sensitivity, specificity,
/// estimation error, and prediction error — the design error
/// ‖X(β̂ − β*)‖²/n on the fitted data — all need the dataset's generating
/// coefficients. When those are unknown, a holdout supplies plain test-set
/// MSE as the prediction error instead. A metric whose denominator set is
/// empty is reported absent.
pub fn score<T: Real>(
    beta_hat: &DVector<T>,
    data: &Dataset<T>,
    holdout: Option<&Dataset<T>>,
) -> Result<MetricsReport> {
    let p = data.p();
    if beta_hat.len() != p {
        return Err(shape(format!(
            "estimate has length {}, expected {p}",
            beta_hat.len()
        )));
    }
    let mut report = MetricsReport::default();

    if let Some(beta_true) = &data.beta_true {
        report.estimation_error = Some((beta_hat - beta_true).norm().to_f64().unwrap_or(f64::NAN));
        let n = cst::<T>(data.n() as f64);
        let design_err = (&data.x * (beta_hat - beta_true)).norm_squared() / n;
        report.prediction_error = Some(design_err.to_f64().unwrap_or(f64::NAN));
        let support = beta_true.iter().filter(|&&b| b != T::zero()).count();
        if support > 0 {
            let hit = (0..p)
                .filter(|&i| beta_true[i] != T::zero() && beta_hat[i] != T::zero())
                .count();
            report.sensitivity = Some(hit as f64 / support as f64);
        }
        if support < p {
            let kept = (0..p)
                .filter(|&i| beta_true[i] == T::zero() && beta_hat[i] == T::zero())
                .count();
            report.specificity = Some(kept as f64 / (p - support) as f64);
        }
    }

    if report.prediction_error.is_none() {
        if let Some(test) = holdout {
            if test.p() != p {
                return Err(shape(format!(
                    "holdout has {} columns, expected {p}",
                    test.p()
                )));
            }
            let n_test = cst::<T>(test.n() as f64);
            let mse = (&test.y - &test.x * beta_hat).norm_squared() / n_test;
            report.prediction_error = Some(mse.to_f64().unwrap_or(f64::NAN));
        }
    }
    Ok(report)
}
