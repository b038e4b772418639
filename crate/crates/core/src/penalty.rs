//! The heat-flow penalty Λ_t(β) = Σ_i √|h_i| with h = e^{−tL}(β⊙β), its
//! subgradient, the group-lasso penalty it converges to as t grows, and the
//! closed-form bound on the gap between the two.

use nalgebra::DVector;

use crate::error::{invalid, shape, Result};
use crate::graph::{default_zero_tol, Graph, LaplacianSpectrum};
use crate::heatflow::{exact_heat_kernel_apply, HeatFlowMatrix};
use crate::scalar::{cst, Real};

/// Partition of the p coordinates into k nonempty groups, identified by
/// contiguous labels 0..k.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupStructure {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl GroupStructure {
    /// Build from per-coordinate labels; every id in 0..max+1 must occur.
    pub fn from_labels(labels: Vec<usize>) -> Result<GroupStructure> {
        if labels.is_empty() {
            return Err(invalid("group labels must cover at least one coordinate"));
        }
        let k = labels.iter().max().unwrap() + 1;
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        if let Some(j) = sizes.iter().position(|&s| s == 0) {
            return Err(invalid(format!("group {j} is empty")));
        }
        Ok(GroupStructure { labels, sizes })
    }

    /// One group per connected component of the graph.
    pub fn from_components(g: &Graph) -> GroupStructure {
        GroupStructure::from_labels(g.components()).expect("component labels are contiguous")
    }

    /// Everything in a single group.
    pub fn single(p: usize) -> GroupStructure {
        GroupStructure {
            labels: vec![0; p],
            sizes: vec![p],
        }
    }

    /// One group per coordinate.
    pub fn singletons(p: usize) -> GroupStructure {
        GroupStructure {
            labels: (0..p).collect(),
            sizes: vec![1; p],
        }
    }

    pub fn p(&self) -> usize {
        self.labels.len()
    }

    /// Number of groups.
    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Member coordinates of each group, in coordinate order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// How the heat kernel behind the penalty is evaluated: a fixed Monte Carlo
/// endpoint table, or the exact eigendecomposition at a given time.
#[derive(Clone, Copy, Debug)]
enum Mode<'a, T: Real> {
    MonteCarlo(&'a HeatFlowMatrix<T>),
    Exact {
        spec: &'a LaplacianSpectrum<T>,
        t: T,
    },
}

/// Evaluates Λ_t and its subgradient against one fixed heat-kernel backend.
/// An optimization run constructs a single evaluator up front, so every
/// Monte Carlo evaluation reuses the same endpoint table.
#[derive(Clone, Copy, Debug)]
pub struct PenaltyEvaluator<'a, T: Real> {
    mode: Mode<'a, T>,
    zero_guard: T,
}

const DEFAULT_ZERO_GUARD: f64 = 1e-12;
// Round-off can turn an exact-kernel h_i that should be +0 into a tiny
// negative; these are treated as zero rather than given a sign.
const NEGATIVE_DEADZONE: f64 = 1e-15;

impl<'a, T: Real> PenaltyEvaluator<'a, T> {
    /// Monte Carlo mode, reusing `flow`'s endpoint table for everything.
    pub fn monte_carlo(flow: &'a HeatFlowMatrix<T>) -> Self {
        PenaltyEvaluator {
            mode: Mode::MonteCarlo(flow),
            zero_guard: cst(DEFAULT_ZERO_GUARD),
        }
    }

    /// Exact mode at time `t` via the eigendecomposition.
    pub fn exact(spec: &'a LaplacianSpectrum<T>, t: T) -> Result<Self> {
        let t_f64 = t.to_f64().unwrap_or(f64::NAN);
        if !(t_f64 >= 0.0) || !t_f64.is_finite() {
            return Err(invalid(format!(
                "time must be finite and >= 0, got {t_f64}"
            )));
        }
        Ok(PenaltyEvaluator {
            mode: Mode::Exact { spec, t },
            zero_guard: cst(DEFAULT_ZERO_GUARD),
        })
    }

    /// Replace the divergence guard used by ℓ(x) = sgn(x)/√|x| near zero.
    pub fn with_zero_guard(mut self, guard: T) -> Result<Self> {
        if !(guard > T::zero()) {
            return Err(invalid("zero guard must be positive"));
        }
        self.zero_guard = guard;
        Ok(self)
    }

    pub fn p(&self) -> usize {
        match self.mode {
            Mode::MonteCarlo(flow) => flow.p(),
            Mode::Exact { spec, .. } => spec.p(),
        }
    }

    pub fn t(&self) -> T {
        match self.mode {
            Mode::MonteCarlo(flow) => flow.t(),
            Mode::Exact { t, .. } => t,
        }
    }

    pub fn zero_guard(&self) -> T {
        self.zero_guard
    }

    /// The Monte Carlo endpoint table, when that is the backend.
    pub fn monte_carlo_flow(&self) -> Option<&'a HeatFlowMatrix<T>> {
        match self.mode {
            Mode::MonteCarlo(flow) => Some(flow),
            Mode::Exact { .. } => None,
        }
    }

    /// The heat-kernel action e^{−tL}f under this evaluator's backend.
    pub fn kernel_apply(&self, f: &DVector<T>) -> Result<DVector<T>> {
        match self.mode {
            Mode::MonteCarlo(flow) => flow.apply(f),
            Mode::Exact { spec, t } => exact_heat_kernel_apply(spec, t, f),
        }
    }

    /// The smoothed squared coefficients h = e^{−tL}(β⊙β).
    pub fn smoothed(&self, beta: &DVector<T>) -> Result<DVector<T>> {
        self.check_beta(beta)?;
        self.kernel_apply(&beta.component_mul(beta))
    }

    /// Λ_t(β) = Σ_i √|h_i|. Both backends produce h ≥ 0 up to round-off,
    /// so the absolute value is a safeguard only.
    pub fn heat_penalty(&self, beta: &DVector<T>) -> Result<T> {
        let h = self.smoothed(beta)?;
        Ok(h.iter().fold(T::zero(), |acc, &x| acc + x.abs().sqrt()))
    }

    /// Subgradient of Λ_t at β: (e^{−tL}ζ)⊙β with ζ_i = ℓ(h_i). The kernel
    /// is symmetric, so its transpose in the chain rule is itself.
    pub fn subgradient(&self, beta: &DVector<T>) -> Result<DVector<T>> {
        let h = self.smoothed(beta)?;
        let zeta = h.map(|hi| self.zeta(hi));
        Ok(self.kernel_apply(&zeta)?.component_mul(beta))
    }

    /// ℓ(x) = sgn(x)/√|x|, clamped to sgn(x)/√ε₀ when |x| < ε₀.
    #[inline]
    pub(crate) fn zeta(&self, h: T) -> T {
        let s = if h > T::zero() {
            T::one()
        } else if h < -cst::<T>(NEGATIVE_DEADZONE) {
            -T::one()
        } else {
            T::zero()
        };
        s / h.abs().max(self.zero_guard).sqrt()
    }

    fn check_beta(&self, beta: &DVector<T>) -> Result<()> {
        if beta.len() != self.p() {
            return Err(shape(format!(
                "beta has length {}, expected {}",
                beta.len(),
                self.p()
            )));
        }
        Ok(())
    }
}

/// An owning counterpart to [`PenaltyEvaluator`]: holds the endpoint table
/// or eigendecomposition itself, so pipelines can build backends (one per
/// walk duration) and hand out borrowing evaluators per fit.
#[derive(Clone, Debug)]
pub enum PenaltyBackend<T: Real> {
    MonteCarlo(HeatFlowMatrix<T>),
    Exact { spec: LaplacianSpectrum<T>, t: T },
}

impl<T: Real> PenaltyBackend<T> {
    pub fn monte_carlo(flow: HeatFlowMatrix<T>) -> Self {
        PenaltyBackend::MonteCarlo(flow)
    }

    /// Exact backend; rejects a negative or non-finite time.
    pub fn exact(spec: LaplacianSpectrum<T>, t: T) -> Result<Self> {
        let t_f64 = t.to_f64().unwrap_or(f64::NAN);
        if !(t_f64 >= 0.0) || !t_f64.is_finite() {
            return Err(invalid(format!(
                "time must be finite and >= 0, got {t_f64}"
            )));
        }
        Ok(PenaltyBackend::Exact { spec, t })
    }

    pub fn evaluator(&self) -> PenaltyEvaluator<'_, T> {
        match self {
            PenaltyBackend::MonteCarlo(flow) => PenaltyEvaluator::monte_carlo(flow),
            // The time was validated when the backend was constructed.
            PenaltyBackend::Exact { spec, t } => PenaltyEvaluator {
                mode: Mode::Exact { spec, t: *t },
                zero_guard: cst(DEFAULT_ZERO_GUARD),
            },
        }
    }

    pub fn p(&self) -> usize {
        match self {
            PenaltyBackend::MonteCarlo(flow) => flow.p(),
            PenaltyBackend::Exact { spec, .. } => spec.p(),
        }
    }
}

/// Group-lasso penalty Σ_j √T_j · ‖β_{C_j}‖₂ over the given groups.
pub fn group_lasso_penalty<T: Real>(gs: &GroupStructure, beta: &DVector<T>) -> Result<T> {
    if beta.len() != gs.p() {
        return Err(shape(format!(
            "beta has length {}, expected {}",
            beta.len(),
            gs.p()
        )));
    }
    let mut sq = vec![T::zero(); gs.k()];
    for (i, &l) in gs.labels().iter().enumerate() {
        sq[l] += beta[i] * beta[i];
    }
    Ok(sq.iter().zip(gs.sizes()).fold(T::zero(), |acc, (&s, &t)| {
        acc + cst::<T>(t as f64).sqrt() * s.sqrt()
    }))
}

/// Closed-form bound on |Λ_t(β) − GL(β)| when the groups are exactly the
/// graph's connected components: with λ_g the smallest nonzero eigenvalue
/// and Ξ = e^{−tλ_g}·‖β⊙β‖₂, the gap is at most p·√Ξ provided
/// Ξ ≤ ½·min over active groups of ‖β_{C_j}‖²/T_j.
///
/// Returns (bound, condition_holds). A graph with no nonzero eigenvalue
/// (all singleton components) has Ξ = 0: the two penalties agree exactly.
pub fn group_lasso_gap_bound<T: Real>(
    spec: &LaplacianSpectrum<T>,
    gs: &GroupStructure,
    beta: &DVector<T>,
    t: T,
) -> Result<(T, bool)> {
    let p = spec.p();
    if gs.p() != p {
        return Err(shape(format!(
            "group labels cover {} coordinates, expected {p}",
            gs.p()
        )));
    }
    if beta.len() != p {
        return Err(shape(format!(
            "beta has length {}, expected {p}",
            beta.len()
        )));
    }
    let t_f64 = t.to_f64().unwrap_or(f64::NAN);
    if !(t_f64 >= 0.0) || !t_f64.is_finite() {
        return Err(invalid(format!(
            "time must be finite and >= 0, got {t_f64}"
        )));
    }
    check_groups_are_components(spec, gs)?;

    let k = gs.k();
    let xi = if k < p {
        let lambda_g = spec.eigenvalues[k];
        let sq = beta.component_mul(beta);
        (-(t * lambda_g)).exp() * sq.norm()
    } else {
        T::zero()
    };

    // ½·min_{active j} ‖β_{C_j}‖²/T_j; an inactive β leaves the condition vacuous.
    let mut sq_norms = vec![T::zero(); k];
    for (i, &l) in gs.labels().iter().enumerate() {
        sq_norms[l] += beta[i] * beta[i];
    }
    let mut rhs: Option<T> = None;
    for (j, &s) in sq_norms.iter().enumerate() {
        if s > T::zero() {
            let v = s / cst(gs.sizes()[j] as f64);
            rhs = Some(match rhs {
                Some(r) => r.min(v),
                None => v,
            });
        }
    }
    let condition_holds = match rhs {
        Some(r) => xi <= r / cst(2.0),
        None => true,
    };
    Ok((cst::<T>(p as f64) * xi.sqrt(), condition_holds))
}

/// The bound above is only valid when each group is exactly one connected
/// component. The kernel of L is spanned by component indicators, so it
/// suffices that (a) L has exactly k zero eigenvalues and (b) every group
/// indicator lies in the span of the kernel eigenvectors.
fn check_groups_are_components<T: Real>(
    spec: &LaplacianSpectrum<T>,
    gs: &GroupStructure,
) -> Result<()> {
    let p = spec.p();
    let k = gs.k();
    let zero_tol = default_zero_tol(spec);
    let zeros = spec
        .eigenvalues
        .iter()
        .take_while(|&&e| e < zero_tol)
        .count();
    if zeros != k {
        return Err(invalid(format!(
            "graph has {zeros} connected components but {k} groups were given"
        )));
    }
    let kernel = spec.eigenvectors.columns(0, k);
    let tol = cst::<T>(1e-6) * cst::<T>(p as f64).sqrt();
    for members in gs.members() {
        let ind = DVector::from_fn(p, |i, _| {
            if members.contains(&i) {
                T::one()
            } else {
                T::zero()
            }
        });
        let proj = &kernel * (kernel.transpose() * &ind);
        if (proj - &ind).norm() > tol {
            return Err(invalid(
                "groups do not coincide with the graph's connected components",
            ));
        }
    }
    Ok(())
}
