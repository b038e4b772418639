//! Monte Carlo heat flow: continuous-time random walks whose time-t endpoint
//! table implements an unbiased estimator of the heat-kernel action
//! (e^{−tL}f)_i = E[f(Z_t) | Z_0 = i], plus the exact eigendecomposition
//! oracle used for testing and exact-mode fitting.

use std::io::{Read as _, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, shape, Error, Result};
use crate::graph::{Graph, LaplacianSpectrum};
use crate::scalar::{cst, Real};

/// Endpoint table of B independent continuous-time simple random walks per
/// vertex, all run for duration t. Entry (i, j) is the vertex occupied at
/// time t by the j-th walk started at vertex i. Immutable once simulated;
/// every penalty and subgradient evaluation in an optimization run reuses
/// the same table.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatFlowMatrix<T: Real> {
    p: usize,
    walks_per_vertex: usize,
    t: T,
    seed: u64,
    /// Row-major p×B endpoint vertex ids.
    endpoints: Vec<u32>,
    /// Aggregate jump count across all walks. Diagnostic for step-count
    /// scaling; not persisted by [`HeatFlowMatrix::save`].
    total_steps: u64,
}

impl<T: Real> HeatFlowMatrix<T> {
    pub fn p(&self) -> usize {
        self.p
    }

    /// B, the number of walks per vertex.
    pub fn walks_per_vertex(&self) -> usize {
        self.walks_per_vertex
    }

    pub fn t(&self) -> T {
        self.t
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Mean number of jumps per walk.
    pub fn mean_steps(&self) -> f64 {
        self.total_steps as f64 / (self.p * self.walks_per_vertex) as f64
    }

    /// Endpoint row for walks started at vertex i.
    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.endpoints[i * self.walks_per_vertex..(i + 1) * self.walks_per_vertex]
    }

    /// Monte Carlo heat-kernel action on every coordinate:
    /// g_i = (1/B) Σ_j f[endpoints[i,j]], an unbiased estimate of (e^{−tL}f)_i.
    pub fn apply(&self, f: &DVector<T>) -> Result<DVector<T>> {
        self.check_f(f)?;
        Ok(DVector::from_fn(self.p, |i, _| self.row_mean(i, f)))
    }

    /// Monte Carlo heat-kernel action restricted to `rows`; returns values
    /// aligned with `rows`.
    pub fn apply_rows(&self, f: &DVector<T>, rows: &[usize]) -> Result<Vec<T>> {
        self.check_f(f)?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.p) {
            return Err(invalid(format!(
                "row index {bad} out of range for p = {}",
                self.p
            )));
        }
        Ok(rows.iter().map(|&i| self.row_mean(i, f)).collect())
    }

    fn check_f(&self, f: &DVector<T>) -> Result<()> {
        if f.len() != self.p {
            return Err(shape(format!(
                "f has length {}, expected {}",
                f.len(),
                self.p
            )));
        }
        Ok(())
    }

    #[inline]
    fn row_mean(&self, i: usize, f: &DVector<T>) -> T {
        let mut acc = T::zero();
        for &e in self.row(i) {
            acc += f[e as usize];
        }
        acc / cst(self.walks_per_vertex as f64)
    }

    /// Write the table to a flat binary file: a 32-byte little-endian header
    /// (p, B as u64; t as f64 bits; seed as u64) followed by the row-major
    /// endpoint ids as u32.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(&(self.p as u64).to_le_bytes())?;
        w.write_all(&(self.walks_per_vertex as u64).to_le_bytes())?;
        w.write_all(&self.t.to_f64().unwrap_or(f64::NAN).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for &e in &self.endpoints {
            w.write_all(&e.to_le_bytes())?;
        }
        Ok(())
    }

    /// Read a table written by [`HeatFlowMatrix::save`]. The step-count
    /// diagnostic is not stored and reads back as 0.
    pub fn load(path: &Path) -> Result<HeatFlowMatrix<T>> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut dyn std::io::Read| -> Result<u64> {
            r.read_exact(&mut u64buf).map_err(Error::Io)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let p = read_u64(&mut r)? as usize;
        let b = read_u64(&mut r)? as usize;
        let t_bits = read_u64(&mut r)?;
        let seed = read_u64(&mut r)?;
        let t_f64 = f64::from_bits(t_bits);
        if !(t_f64 >= 0.0) || !t_f64.is_finite() {
            return Err(Error::Parse(format!(
                "stored walk duration {t_f64} invalid"
            )));
        }
        let t = T::from_f64(t_f64)
            .ok_or_else(|| Error::Parse("stored walk duration not representable".into()))?;
        let count = p
            .checked_mul(b)
            .ok_or_else(|| Error::Parse("endpoint count overflows".into()))?;
        let mut endpoints = vec![0u32; count];
        let mut buf = [0u8; 4];
        for e in endpoints.iter_mut() {
            r.read_exact(&mut buf).map_err(Error::Io)?;
            *e = u32::from_le_bytes(buf);
            if *e as usize >= p {
                return Err(Error::Parse(format!(
                    "endpoint id {e} out of range for p = {p}"
                )));
            }
        }
        Ok(HeatFlowMatrix {
            p,
            walks_per_vertex: b,
            t,
            seed,
            endpoints,
            total_steps: 0,
        })
    }
}

/// Run one continuous-time simple random walk from `start` for duration `t`:
/// hold at the current vertex for an Exponential(degree) time, jump to a
/// uniform neighbor, repeat. The jump whose clock overshoots `t` is not
/// taken — the walk is still sitting at its pre-jump vertex at time t.
/// Returns (endpoint, jumps taken).
#[inline]
fn walk<T: Real, R: Rng + ?Sized>(g: &Graph, start: usize, t: T, rng: &mut R) -> (u32, u32) {
    let mut v = start;
    let mut steps = 0u32;
    let mut s = T::zero();
    while s < t {
        let deg = g.degree(v);
        if deg == 0 {
            break;
        }
        s += T::standard_exponential(rng) / cst(deg as f64);
        if s >= t {
            break;
        }
        v = g.neighbors(v)[rng.gen_range(0..deg)] as usize;
        steps += 1;
    }
    (v as u32, steps)
}

/// Simulate the p×B endpoint table. The walk for cell (i, j) draws from a
/// ChaCha stream determined by (seed, i, j) alone, so the table is identical
/// under any parallel schedule and any row ordering.
pub fn simulate_heat_flow<T: Real>(
    g: &Graph,
    t: T,
    walks_per_vertex: usize,
    seed: u64,
) -> Result<HeatFlowMatrix<T>> {
    let t_f64 = t.to_f64().unwrap_or(f64::NAN);
    if !(t_f64 >= 0.0) || !t_f64.is_finite() {
        return Err(invalid(format!(
            "walk duration must be finite and >= 0, got {t_f64}"
        )));
    }
    if walks_per_vertex == 0 {
        return Err(invalid("need at least one walk per vertex"));
    }
    let p = g.vertex_count();
    if p == 0 {
        return Err(invalid("graph has no vertices"));
    }
    if walks_per_vertex as u64 > u64::from(u32::MAX) {
        return Err(invalid("walks per vertex exceeds the 32-bit cell budget"));
    }
    let base = ChaCha8Rng::seed_from_u64(seed);

    let mut endpoints = vec![0u32; p * walks_per_vertex];
    let row_steps: Vec<u64> = endpoints
        .par_chunks_mut(walks_per_vertex)
        .enumerate()
        .map(|(i, row)| {
            let mut steps_in_row = 0u64;
            for (j, slot) in row.iter_mut().enumerate() {
                let mut rng = base.clone();
                rng.set_stream(((i as u64) << 32) | j as u64);
                let (end, steps) = walk(g, i, t, &mut rng);
                *slot = end;
                steps_in_row += u64::from(steps);
            }
            steps_in_row
        })
        .collect();

    Ok(HeatFlowMatrix {
        p,
        walks_per_vertex,
        t,
        seed,
        endpoints,
        total_steps: row_steps.iter().sum(),
    })
}

/// Exact heat-kernel action through the eigendecomposition:
/// e^{−tL} f = Σ_i e^{−t·λ_i} ⟨v_i, f⟩ v_i.
///
/// Computed as f + Σ_i (e^{−t·λ_i} − 1)⟨v_i, f⟩ v_i, which is the same sum
/// over a complete orthonormal basis but returns f bit-exactly at t = 0.
/// Eigenvalues are floored at zero (Laplacians are PSD; tiny negative
/// round-off would otherwise blow up under large t).
pub fn exact_heat_kernel_apply<T: Real>(
    spec: &LaplacianSpectrum<T>,
    t: T,
    f: &DVector<T>,
) -> Result<DVector<T>> {
    let p = spec.p();
    if f.len() != p {
        return Err(shape(format!("f has length {}, expected {}", f.len(), p)));
    }
    let t_f64 = t.to_f64().unwrap_or(f64::NAN);
    if !(t_f64 >= 0.0) || !t_f64.is_finite() {
        return Err(invalid(format!(
            "time must be finite and >= 0, got {t_f64}"
        )));
    }
    let mut out = f.clone();
    for i in 0..p {
        let lam = spec.eigenvalues[i].max(T::zero());
        let w = (-(t * lam)).exp() - T::one();
        if w != T::zero() {
            let vi = spec.eigenvectors.column(i);
            let coef = w * vi.dot(f);
            out.axpy(coef, &vi, T::one());
        }
    }
    Ok(out)
}

/// Dense heat-kernel matrix e^{−tL}; the column-by-column form of
/// [`exact_heat_kernel_apply`], for tests that want the full operator.
pub fn exact_heat_kernel_matrix<T: Real>(spec: &LaplacianSpectrum<T>, t: T) -> Result<DMatrix<T>> {
    let p = spec.p();
    let mut m = DMatrix::zeros(p, p);
    for j in 0..p {
        let ej = DVector::from_fn(p, |i, _| if i == j { T::one() } else { T::zero() });
        m.set_column(j, &exact_heat_kernel_apply(spec, t, &ej)?);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sbm_sample, spectrum, Graph};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn edge_plus_isolated() -> Graph {
        Graph::from_edges(3, &[(0, 1)]).unwrap()
    }

    #[test]
    fn zero_time_endpoints_are_start_vertices() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let h = simulate_heat_flow::<f64>(&g, 0.0, 50, 7).unwrap();
        for i in 0..4 {
            assert!(h.row(i).iter().all(|&e| e == i as u32));
        }
        assert_eq!(h.total_steps(), 0);
    }

    #[test]
    fn isolated_vertex_never_moves() {
        let h = simulate_heat_flow::<f64>(&edge_plus_isolated(), 5.0, 200, 3).unwrap();
        assert!(h.row(2).iter().all(|&e| e == 2));
    }

    #[test]
    fn single_edge_return_probability() {
        // P(Z_1 = 0 | Z_0 = 0) = (1 + e^{-2})/2 ≈ 0.5677 on one edge.
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let b = 20_000;
        let h = simulate_heat_flow::<f64>(&g, 1.0, b, 11).unwrap();
        let frac = h.row(0).iter().filter(|&&e| e == 0).count() as f64 / b as f64;
        let expect = (1.0 + (-2.0f64).exp()) / 2.0;
        let tol = 3.0 * (0.25 / b as f64).sqrt();
        assert!(
            (frac - expect).abs() <= tol,
            "frac {frac} vs {expect} (tol {tol})"
        );
    }

    #[test]
    fn apply_conserves_mass_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let g = sbm_sample(&[4, 4], 0.8, 0.2, &mut rng).unwrap();
        let h = simulate_heat_flow::<f64>(&g, 0.7, 321, 5).unwrap();
        let ones = DVector::from_element(8, 1.0);
        let out = h.apply(&ones).unwrap();
        assert!(out.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn apply_at_zero_time_is_identity_on_subset() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let h = simulate_heat_flow::<f64>(&g, 0.0, 10, 1).unwrap();
        let f = DVector::from_vec(vec![3.0, -1.0, 2.5]);
        let got = h.apply_rows(&f, &[2, 0]).unwrap();
        assert_eq!(got, vec![2.5, 3.0]);
    }

    #[test]
    fn apply_single_edge_matches_exact_kernel() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let b = 20_000;
        let h = simulate_heat_flow::<f64>(&g, 1.0, b, 13).unwrap();
        let f = DVector::from_vec(vec![1.0, 0.0]);
        let got = h.apply(&f).unwrap();
        let expect = (1.0 + (-2.0f64).exp()) / 2.0;
        let tol = 3.0 * (0.25 / b as f64).sqrt();
        assert!((got[0] - expect).abs() <= tol);
    }

    #[test]
    fn apply_validates_shapes_and_rows() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let h = simulate_heat_flow::<f64>(&g, 0.5, 10, 1).unwrap();
        assert!(h.apply(&DVector::from_vec(vec![1.0])).is_err());
        assert!(h
            .apply_rows(&DVector::from_vec(vec![1.0, 2.0]), &[2])
            .is_err());
    }

    #[test]
    fn simulate_rejects_bad_arguments() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        assert!(simulate_heat_flow::<f64>(&g, -1.0, 10, 1).is_err());
        assert!(simulate_heat_flow::<f64>(&g, f64::INFINITY, 10, 1).is_err());
        assert!(simulate_heat_flow::<f64>(&g, f64::NAN, 10, 1).is_err());
        assert!(simulate_heat_flow::<f64>(&g, 1.0, 0, 1).is_err());
    }

    #[test]
    fn same_seed_reproduces_endpoints() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let g = sbm_sample(&[5, 5], 0.7, 0.1, &mut rng).unwrap();
        let h1 = simulate_heat_flow::<f64>(&g, 1.3, 64, 77).unwrap();
        let h2 = simulate_heat_flow::<f64>(&g, 1.3, 64, 77).unwrap();
        assert_eq!(h1, h2);
        let h3 = simulate_heat_flow::<f64>(&g, 1.3, 64, 78).unwrap();
        assert_ne!(h1, h3);
    }

    #[test]
    fn mean_steps_bounded_by_mean_degree_times_t() {
        // Walks start uniformly, and 1ᵀe^{−sL} = 1ᵀ, so the expected jump
        // count per walk is exactly mean-degree · t; 1.5 covers MC noise.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for trial in 0..5 {
            let g = sbm_sample(&[6, 6, 6], 0.6, 0.1, &mut rng).unwrap();
            let t = 0.4 + 0.3 * trial as f64;
            let h = simulate_heat_flow::<f64>(&g, t, 400, trial).unwrap();
            assert!(h.mean_steps() <= g.mean_degree() * t * 1.5);
        }
    }

    #[test]
    fn exact_kernel_identity_at_zero_time() {
        let g = edge_plus_isolated();
        let spec = spectrum::<f64>(&g.laplacian()).unwrap();
        let f = DVector::from_vec(vec![0.3, -1.7, 4.2]);
        let out = exact_heat_kernel_apply(&spec, 0.0, &f).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn exact_kernel_single_edge_limits() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let spec = spectrum::<f64>(&g.laplacian()).unwrap();
        let f = DVector::from_vec(vec![1.0, 0.0]);
        // t = 1: (1 ± e^{-2})/2.
        let out = exact_heat_kernel_apply(&spec, 1.0, &f).unwrap();
        assert_abs_diff_eq!(out[0], (1.0 + (-2.0f64).exp()) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], (1.0 - (-2.0f64).exp()) / 2.0, epsilon = 1e-12);
        // Large t: uniform stationary distribution.
        let out = exact_heat_kernel_apply(&spec, 60.0, &f).unwrap();
        assert_abs_diff_eq!(out[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn exact_kernel_blockwise_fig_shape() {
        // Edge {0,1} plus isolated vertex 2, f = (1, 0, 5), t = 10:
        // the edge mixes toward (0.5, 0.5), the isolated coordinate is fixed.
        let spec = spectrum::<f64>(&edge_plus_isolated().laplacian()).unwrap();
        let f = DVector::from_vec(vec![1.0, 0.0, 5.0]);
        let out = exact_heat_kernel_apply(&spec, 10.0, &f).unwrap();
        let e20 = (-20.0f64).exp();
        assert_abs_diff_eq!(out[0], (1.0 + e20) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], (1.0 - e20) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[2], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_kernel_validates() {
        let spec = spectrum::<f64>(&edge_plus_isolated().laplacian()).unwrap();
        assert!(exact_heat_kernel_apply(&spec, -0.1, &DVector::zeros(3)).is_err());
        assert!(exact_heat_kernel_apply(&spec, 1.0, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn exact_kernel_matches_generator_at_small_time() {
        // (e^{−tL}f − f)/t → −L f as t → 0.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let g = sbm_sample(&[3, 3], 0.7, 0.2, &mut rng).unwrap();
        let l = g.laplacian::<f64>();
        let spec = spectrum(&l).unwrap();
        let t = 1e-3;
        for _ in 0..5 {
            let f = DVector::from_fn(6, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let lf = &l * &f;
            let out = exact_heat_kernel_apply(&spec, t, &f).unwrap();
            let quotient = (out - &f) / t;
            let err = (quotient + &lf).amax();
            assert!(err <= 5e-3 * lf.amax(), "generator mismatch: {err}");
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let g = sbm_sample(&[4, 3], 0.9, 0.3, &mut rng).unwrap();
        let h = simulate_heat_flow::<f64>(&g, 0.8, 33, 5150).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("walks.bin");
        h.save(&path).unwrap();
        let back = HeatFlowMatrix::<f64>::load(&path).unwrap();
        assert_eq!(back.p(), h.p());
        assert_eq!(back.walks_per_vertex(), h.walks_per_vertex());
        assert_eq!(back.t(), h.t());
        assert_eq!(back.seed(), h.seed());
        for i in 0..h.p() {
            assert_eq!(back.row(i), h.row(i));
        }
    }

    #[test]
    fn monte_carlo_tracks_exact_kernel_small_graphs() {
        // Scaled-down version of the oracle-equivalence gate: 3 graphs,
        // B = 20 000, per-coordinate agreement within 4/√B.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        let b = 20_000;
        let tol = 4.0 / (b as f64).sqrt();
        for trial in 0..3u64 {
            let g = sbm_sample(&[4, 4], 0.8, 0.25, &mut rng).unwrap();
            let spec = spectrum::<f64>(&g.laplacian()).unwrap();
            let f = DVector::from_fn(8, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            for (ti, &t) in [0.1, 0.5, 2.0].iter().enumerate() {
                let h = simulate_heat_flow::<f64>(&g, t, b, 900 + 10 * trial + ti as u64).unwrap();
                let mc = h.apply(&f).unwrap();
                let exact = exact_heat_kernel_apply(&spec, t, &f).unwrap();
                let worst = (mc - exact).amax();
                assert!(worst <= tol, "t={t}: max deviation {worst} > {tol}");
            }
        }
    }
}
