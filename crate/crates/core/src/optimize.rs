//! Optimizers for the penalized least-squares objective
//! F(β) = (1/2n)‖y − Xβ‖² + λ·Λ_t(β): full subgradient descent, stochastic
//! block coordinate descent against a Monte Carlo heat flow, the k-means
//! thresholding post-processor, ridge initialization, and cross-validation
//! over a (λ, t) grid.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Dataset;
use crate::error::{invalid, shape, Error, Result};
use crate::graph::{default_zero_tol, spectral_gap, LaplacianSpectrum};
use crate::penalty::{PenaltyBackend, PenaltyEvaluator};
use crate::scalar::{cst, Real};
use crate::seeds::SeedTree;

/// Step-size protocol α(i) for iteration i = 1, 2, ….
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LearningRate {
    Constant {
        alpha: f64,
    },
    /// α(i) = c/√i.
    InverseSqrt {
        c: f64,
    },
    /// α(i) = c/√i with c = 0.1/‖XᵀX/n‖_op (power-iteration estimate).
    AutoInverseSqrt,
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate::AutoInverseSqrt
    }
}

/// Everything a fit needs beyond the data and the penalty backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Penalty weight λ ≥ 0.
    pub lambda: f64,
    /// Walk duration t ≥ 0 (used when a pipeline builds the heat flow).
    pub t: f64,
    /// Walks per vertex B for Monte Carlo backends built by pipelines.
    pub walks_per_vertex: usize,
    pub lr: LearningRate,
    /// Relative-change stopping tolerance, in (0, 1).
    pub eps: f64,
    pub max_iter: usize,
    /// Coordinates updated per iteration (block coordinate descent only).
    pub block_size: usize,
    pub seed: u64,
    /// Ridge weight for the initializer.
    pub ridge_lambda: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 0.1,
            t: 0.5,
            walks_per_vertex: 500,
            lr: LearningRate::default(),
            eps: 1e-4,
            max_iter: 2000,
            block_size: 10,
            seed: 0,
            ridge_lambda: 0.1,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(invalid(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        match self.lr {
            LearningRate::Constant { alpha } if !(alpha > 0.0) || !alpha.is_finite() => {
                Err(invalid(format!(
                    "constant learning rate {alpha} must be finite and > 0"
                )))
            }
            LearningRate::InverseSqrt { c } if !(c > 0.0) || !c.is_finite() => Err(invalid(
                format!("learning-rate scale {c} must be finite and > 0"),
            )),
            _ => Ok(()),
        }
    }
}

/// Outcome of one fit.
#[derive(Clone, Debug)]
pub struct FitResult<T: Real> {
    /// Best-objective iterate seen (including the starting point).
    pub beta_raw: DVector<T>,
    /// `beta_raw` after the k-means thresholding step.
    pub beta: DVector<T>,
    /// The final iterate, recorded alongside the best one.
    pub beta_last: DVector<T>,
    pub iterations: usize,
    /// Objective estimate (training loss + weighted penalty) after each
    /// iteration; length equals `iterations`.
    pub trace: Vec<T>,
    /// Whether the relative-change rule fired before the iteration cap.
    pub converged: bool,
}

/// Resolved step-size schedule.
#[derive(Clone, Copy, Debug)]
enum Schedule<T> {
    Constant(T),
    InverseSqrt(T),
}

impl<T: Real> Schedule<T> {
    fn at(&self, i: usize) -> T {
        match *self {
            Schedule::Constant(a) => a,
            Schedule::InverseSqrt(c) => c / cst::<T>(i as f64).sqrt(),
        }
    }
}

/// Power-iteration estimate of ‖XᵀX/n‖_op (20 steps, fixed start vector).
fn operator_norm_estimate<T: Real>(x: &DMatrix<T>) -> T {
    let n = x.nrows().max(1);
    let p = x.ncols();
    let a = x.tr_mul(x) / cst::<T>(n as f64);
    let mut v = DVector::from_fn(p, |i, _| {
        T::one() + cst::<T>(0.01) * cst::<T>((i % 7) as f64)
    });
    v /= v.norm();
    let mut est = T::zero();
    for _ in 0..20 {
        let av = &a * &v;
        est = av.norm();
        if est <= T::zero() {
            return T::zero();
        }
        v = av / est;
    }
    est
}

fn resolve_schedule<T: Real>(lr: LearningRate, x: &DMatrix<T>) -> Schedule<T> {
    match lr {
        LearningRate::Constant { alpha } => Schedule::Constant(cst(alpha)),
        LearningRate::InverseSqrt { c } => Schedule::InverseSqrt(cst(c)),
        LearningRate::AutoInverseSqrt => {
            let norm = operator_norm_estimate(x).max(cst(1e-12));
            Schedule::InverseSqrt(cst::<T>(0.1) / norm)
        }
    }
}

fn check_fit_inputs<T: Real>(
    data: &Dataset<T>,
    ev: &PenaltyEvaluator<'_, T>,
    beta0: &DVector<T>,
) -> Result<()> {
    if ev.p() != data.p() {
        return Err(shape(format!(
            "penalty evaluator covers {} coordinates but X has {} columns",
            ev.p(),
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
    Ok(())
}

fn trace_to_f64<T: Real>(trace: &[T]) -> Vec<f64> {
    trace
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .collect()
}

/// Full subgradient descent: β ← β − α(i)·[(1/n)Xᵀ(Xβ − y) + λ·∂Λ_t(β)],
/// stopping when ‖β_new − β_old‖/‖β_old‖ ≤ eps (absolute change when the
/// denominator is zero) or the iteration cap is hit. Returns the iterate
/// with the best recorded objective; a non-finite objective aborts with a
/// divergence error carrying the trace.
pub fn subgradient_descent<T: Real>(
    data: &Dataset<T>,
    ev: &PenaltyEvaluator<'_, T>,
    cfg: &FitConfig,
    beta0: &DVector<T>,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    check_fit_inputs(data, ev, beta0)?;
    let n = cst::<T>(data.n() as f64);
    let lambda = cst::<T>(cfg.lambda);
    let schedule = resolve_schedule(cfg.lr, &data.x);

    let objective = |resid: &DVector<T>, beta: &DVector<T>| -> Result<T> {
        let loss = resid.norm_squared() / (cst::<T>(2.0) * n);
        if cfg.lambda == 0.0 {
            Ok(loss)
        } else {
            Ok(loss + lambda * ev.heat_penalty(beta)?)
        }
    };

    let mut beta = beta0.clone();
    let mut resid = &data.x * &beta - &data.y;
    let start_obj = objective(&resid, &beta)?;
    let mut best_obj = start_obj;
    let mut best_beta = beta.clone();
    let mut trace: Vec<T> = Vec::new();
    let mut converged = false;

    for m in 1..=cfg.max_iter {
        let mut grad = data.x.tr_mul(&resid) / n;
        if cfg.lambda > 0.0 {
            grad += ev.subgradient(&beta)? * lambda;
        }
        let beta_new = &beta - grad * schedule.at(m);

        let delta = (&beta_new - &beta).norm();
        let denom = beta.norm();
        let rel = if denom > T::zero() {
            delta / denom
        } else {
            delta
        };

        resid = &data.x * &beta_new - &data.y;
        let obj = objective(&resid, &beta_new)?;
        if !obj.to_f64().unwrap_or(f64::NAN).is_finite() {
            return Err(Error::Diverged {
                iteration: m,
                trace: trace_to_f64(&trace),
            });
        }
        trace.push(obj);
        if obj < best_obj {
            best_obj = obj;
            best_beta = beta_new.clone();
        }
        beta = beta_new;
        if rel <= cst(cfg.eps) {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        beta: unsupervised_threshold(&best_beta),
        beta_raw: best_beta,
        beta_last: beta,
        iterations: trace.len(),
        trace,
        converged,
    })
}

/// Stochastic block coordinate descent. Each iteration samples `block_size`
/// coordinates without replacement and updates only those, with the exact
/// block loss gradient and a penalty direction estimated from the walk
/// endpoint rows of the sampled coordinates alone: the smoothed vector h is
/// evaluated only at vertices some sampled row actually visits, and
/// g_j = mean(ζ over row j's endpoints)·β_j. Requires the Monte Carlo
/// backend (the row-wise trick has no exact-mode counterpart).
pub fn stochastic_block_cd<T: Real>(
    data: &Dataset<T>,
    ev: &PenaltyEvaluator<'_, T>,
    cfg: &FitConfig,
    beta0: &DVector<T>,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    check_fit_inputs(data, ev, beta0)?;
    let flow = ev
        .monte_carlo_flow()
        .ok_or_else(|| invalid("block coordinate descent requires a Monte Carlo penalty"))?;
    let p = data.p();
    let q = cfg.block_size;
    if q == 0 || q > p {
        return Err(invalid(format!("block size {q} outside [1, {p}]")));
    }
    let n = cst::<T>(data.n() as f64);
    let lambda = cst::<T>(cfg.lambda);
    let schedule = resolve_schedule(cfg.lr, &data.x);
    let mut rng = SeedTree::new(cfg.seed).child("block-sampler").rng();
    let b_walks = cst::<T>(flow.walks_per_vertex() as f64);

    let objective = |resid: &DVector<T>, beta: &DVector<T>| -> Result<T> {
        let loss = resid.norm_squared() / (cst::<T>(2.0) * n);
        if cfg.lambda == 0.0 {
            Ok(loss)
        } else {
            Ok(loss + lambda * ev.heat_penalty(beta)?)
        }
    };

    let mut beta = beta0.clone();
    let mut resid = &data.x * &beta - &data.y;
    let start_obj = objective(&resid, &beta)?;
    let mut best_obj = start_obj;
    let mut best_beta = beta.clone();
    let mut trace: Vec<T> = Vec::new();
    let mut converged = false;

    let mut visited = vec![false; p];
    let mut zeta_at = vec![T::zero(); p];

    for m in 1..=cfg.max_iter {
        let mut block = rand::seq::index::sample(&mut rng, p, q).into_vec();
        block.sort_unstable();

        // ζ only at vertices the sampled rows visit.
        let mut needed: Vec<usize> = Vec::new();
        if cfg.lambda > 0.0 {
            for &j in &block {
                for &e in flow.row(j) {
                    let e = e as usize;
                    if !visited[e] {
                        visited[e] = true;
                        needed.push(e);
                    }
                }
            }
            let beta_sq = beta.component_mul(&beta);
            let h_vals = flow.apply_rows(&beta_sq, &needed)?;
            for (&u, &h) in needed.iter().zip(&h_vals) {
                zeta_at[u] = ev.zeta(h);
            }
        }

        let step = schedule.at(m);
        let full_old_norm = beta.norm();
        let mut deltas = Vec::with_capacity(q);
        let mut block_old_sq = T::zero();
        for &j in &block {
            let grad_loss = data.x.column(j).dot(&resid) / n;
            let pen = if cfg.lambda > 0.0 {
                let mut acc = T::zero();
                for &e in flow.row(j) {
                    acc += zeta_at[e as usize];
                }
                acc / b_walks * beta[j]
            } else {
                T::zero()
            };
            let delta = -step * (grad_loss + lambda * pen);
            block_old_sq += beta[j] * beta[j];
            deltas.push(delta);
        }
        for (&j, &d) in block.iter().zip(&deltas) {
            beta[j] += d;
            resid.axpy(d, &data.x.column(j), T::one());
        }
        for &u in &needed {
            visited[u] = false;
        }

        // Relative change of the updated block; fall back to the full
        // vector norm, then to the absolute change, when denominators are 0.
        let delta_norm = deltas.iter().fold(T::zero(), |a, &d| a + d * d).sqrt();
        let block_norm = block_old_sq.sqrt();
        let rel = if block_norm > T::zero() {
            delta_norm / block_norm
        } else if full_old_norm > T::zero() {
            delta_norm / full_old_norm
        } else {
            delta_norm
        };

        let obj = objective(&resid, &beta)?;
        if !obj.to_f64().unwrap_or(f64::NAN).is_finite() {
            return Err(Error::Diverged {
                iteration: m,
                trace: trace_to_f64(&trace),
            });
        }
        trace.push(obj);
        if obj < best_obj {
            best_obj = obj;
            best_beta = beta.clone();
        }
        if rel <= cst(cfg.eps) {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        beta: unsupervised_threshold(&best_beta),
        beta_raw: best_beta,
        beta_last: beta,
        iterations: trace.len(),
        trace,
        converged,
    })
}

/// Two-means thresholding of a coefficient vector: Lloyd's algorithm on the
/// magnitudes |β̂_i| with K = 2, centroids initialized at the min and max.
/// Coordinates in the cluster with the larger centroid keep their values
/// (signs included); the rest are zeroed. A vector of all-equal magnitudes
/// is returned unchanged.
pub fn unsupervised_threshold<T: Real>(beta: &DVector<T>) -> DVector<T> {
    let p = beta.len();
    if p < 2 {
        return beta.clone();
    }
    let mags: Vec<T> = beta.iter().map(|b| b.abs()).collect();
    let lo_init = mags.iter().copied().fold(mags[0], |a, b| a.min(b));
    let hi_init = mags.iter().copied().fold(mags[0], |a, b| a.max(b));
    if lo_init == hi_init {
        return beta.clone();
    }
    let mut boundary = (lo_init + hi_init) / cst(2.0);
    for _ in 0..100 {
        let mut lo_sum = T::zero();
        let mut lo_n = 0usize;
        let mut hi_sum = T::zero();
        let mut hi_n = 0usize;
        for &m in &mags {
            if m >= boundary {
                hi_sum += m;
                hi_n += 1;
            } else {
                lo_sum += m;
                lo_n += 1;
            }
        }
        if lo_n == 0 || hi_n == 0 {
            break;
        }
        let new_boundary = (lo_sum / cst(lo_n as f64) + hi_sum / cst(hi_n as f64)) / cst(2.0);
        if new_boundary == boundary {
            break;
        }
        boundary = new_boundary;
    }
    DVector::from_fn(p, |i, _| {
        if mags[i] >= boundary {
            beta[i]
        } else {
            T::zero()
        }
    })
}

/// Ridge starting point: solves (XᵀX/n + ρI)β = Xᵀy/n by Cholesky.
pub fn ridge_init<T: Real>(data: &Dataset<T>, ridge_lambda: T) -> Result<DVector<T>> {
    if !(ridge_lambda > T::zero()) {
        return Err(invalid("ridge weight must be > 0"));
    }
    let n = cst::<T>(data.n() as f64);
    let mut a = data.x.tr_mul(&data.x) / n;
    for i in 0..data.p() {
        a[(i, i)] += ridge_lambda;
    }
    let b = data.x.tr_mul(&data.y) / n;
    let chol = a
        .cholesky()
        .ok_or_else(|| invalid("ridge system is not positive definite"))?;
    Ok(chol.solve(&b))
}

/// t_flow = 0.5·min{1, 1/λ̂_g}, where λ̂_g is the smallest eigenvalue past
/// the kernel: `eigenvalues[k_hat]` when a component count is supplied, the
/// first eigenvalue above the default zero tolerance otherwise. Falls back
/// to 0.5 when no such eigenvalue exists or it is not positive.
pub fn t_flow_heuristic<T: Real>(spec: &LaplacianSpectrum<T>, k_hat: Option<usize>) -> T {
    let lambda_g = match k_hat {
        Some(k) if k < spec.p() => Some(spec.eigenvalues[k]),
        Some(_) => None,
        None => spectral_gap(spec, default_zero_tol(spec)).1,
    };
    let half = cst::<T>(0.5);
    match lambda_g {
        Some(l) if l > T::zero() => half * (T::one() / l).min(T::one()),
        _ => half,
    }
}

/// Which optimizer a pipeline runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Subgradient,
    BlockCd,
}

/// One cross-validation cell: a (λ, t) pair with its mean validation MSE.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CvCell<T> {
    pub lambda: T,
    pub t: T,
    pub mean_mse: T,
}

#[derive(Clone, Debug)]
pub struct CvReport<T: Real> {
    pub best_lambda: T,
    pub best_t: T,
    /// One entry per grid point, in grid order.
    pub cells: Vec<CvCell<T>>,
}

/// Balanced fold assignment: one seeded shuffle of the row indices, then
/// contiguous blocks. Returns the validation rows of each fold.
pub(crate) fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(invalid(format!("need at least 2 folds, got {folds}")));
    }
    if n / folds < 2 {
        return Err(invalid(format!(
            "{folds} folds over {n} rows leaves a fold under 2 rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeedTree::new(seed).child("fold-shuffle").rng());
    Ok((0..folds)
        .map(|f| order[f * n / folds..(f + 1) * n / folds].to_vec())
        .collect())
}

/// Grid search by k-fold cross-validation. `backend_for_t` is called once
/// per distinct t in grid order (a Monte Carlo factory should derive a
/// distinct walk seed per call); every fold of every λ at that t shares the
/// returned backend. Each cell fits from a ridge start on the training rows
/// and scores the raw iterate's validation MSE; a diverged cell scores +∞
/// rather than aborting the search. Ties prefer smaller t, then smaller λ.
pub fn cross_validate<T, F>(
    data: &Dataset<T>,
    backend_for_t: F,
    grid: &[(T, T)],
    folds: usize,
    method: FitMethod,
    cfg: &FitConfig,
) -> Result<CvReport<T>>
where
    T: Real,
    F: Fn(T) -> Result<PenaltyBackend<T>>,
{
    if grid.is_empty() {
        return Err(invalid("cross-validation grid is empty"));
    }
    let fold_rows = fold_partition(data.n(), folds, cfg.seed)?;
    let splits: Vec<(Dataset<T>, Dataset<T>)> = fold_rows
        .iter()
        .map(|val_rows| {
            let mut train_rows: Vec<usize> =
                (0..data.n()).filter(|r| !val_rows.contains(r)).collect();
            train_rows.sort_unstable();
            (data.subset(&train_rows), data.subset(val_rows))
        })
        .collect();

    let mut distinct_t: Vec<T> = Vec::new();
    for &(_, t) in grid {
        if !distinct_t.contains(&t) {
            distinct_t.push(t);
        }
    }

    let tree = SeedTree::new(cfg.seed).child("cv-cells");
    let mut cells: Vec<CvCell<T>> = grid
        .iter()
        .map(|&(lambda, t)| CvCell {
            lambda,
            t,
            mean_mse: T::zero(),
        })
        .collect();
    for t in distinct_t {
        let backend = backend_for_t(t)?;
        let ev = backend.evaluator();
        let jobs: Vec<(usize, usize)> = grid
            .iter()
            .enumerate()
            .filter(|(_, &(_, tc))| tc == t)
            .flat_map(|(gi, _)| (0..folds).map(move |f| (gi, f)))
            .collect();
        let scores: Vec<(usize, T)> = jobs
            .par_iter()
            .map(|&(gi, f)| -> Result<(usize, T)> {
                let (train, val) = &splits[f];
                let mut cell_cfg = cfg.clone();
                cell_cfg.lambda = grid[gi].0.to_f64().unwrap_or(f64::NAN);
                cell_cfg.t = t.to_f64().unwrap_or(f64::NAN);
                cell_cfg.seed = tree.index((gi * folds + f) as u64).seed();
                let beta0 = ridge_init(train, cst(cfg.ridge_lambda))?;
                let fit = match method {
                    FitMethod::Subgradient => subgradient_descent(train, &ev, &cell_cfg, &beta0),
                    FitMethod::BlockCd => stochastic_block_cd(train, &ev, &cell_cfg, &beta0),
                };
                let mse = match fit {
                    Ok(res) => {
                        let r = &val.y - &val.x * &res.beta_raw;
                        r.norm_squared() / cst(val.n() as f64)
                    }
                    Err(Error::Diverged { .. }) => T::max_value().unwrap_or_else(T::one),
                    Err(e) => return Err(e),
                };
                Ok((gi, mse))
            })
            .collect::<Result<_>>()?;
        let fold_count = cst::<T>(folds as f64);
        for (gi, mse) in scores {
            cells[gi].mean_mse += mse / fold_count;
        }
    }

    let mut best = 0;
    for i in 1..cells.len() {
        if cell_improves(&cells[i], &cells[best]) {
            best = i;
        }
    }
    Ok(CvReport {
        best_lambda: cells[best].lambda,
        best_t: cells[best].t,
        cells,
    })
}

/// Strict ordering of cross-validation cells: lower mean MSE wins; exact
/// ties go to the smaller t, then the smaller λ.
fn cell_improves<T: Real>(a: &CvCell<T>, b: &CvCell<T>) -> bool {
    a.mean_mse < b.mean_mse
        || (a.mean_mse == b.mean_mse && (a.t < b.t || (a.t == b.t && a.lambda < b.lambda)))
}
