//! Undirected simple graphs, their Laplacians, and dense Laplacian spectra.
//!
//! The Laplacian L = D − A is the generator of the continuous-time simple
//! random walk simulated in [`crate::heatflow`]; its spectrum is the oracle
//! for every exact-kernel computation and for the spectral-gap heuristics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{invalid, shape, Result};
use crate::scalar::{cst, Real};

/// Undirected simple graph on vertices `0..p`, stored as sorted compressed
/// neighbor lists. No self-loops, no duplicate edges, symmetric by
/// construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    degrees: Vec<u32>,
}

impl Graph {
    /// Build from an undirected edge list over `p` vertices. Edges may appear
    /// in either orientation; self-loops and duplicates are rejected.
    pub fn from_edges(p: usize, edges: &[(u32, u32)]) -> Result<Graph> {
        let mut norm: Vec<(u32, u32)> = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i as usize >= p || j as usize >= p {
                return Err(invalid(format!("edge ({i}, {j}) out of range for p = {p}")));
            }
            if i == j {
                return Err(invalid(format!("self-loop at vertex {i}")));
            }
            norm.push((i.min(j), i.max(j)));
        }
        norm.sort_unstable();
        if norm.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate edge in edge list"));
        }

        let mut degrees = vec![0u32; p];
        for &(i, j) in &norm {
            degrees[i as usize] += 1;
            degrees[j as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(p + 1);
        offsets.push(0usize);
        for v in 0..p {
            offsets.push(offsets[v] + degrees[v] as usize);
        }
        let mut cursor = offsets.clone();
        let mut neighbors = vec![0u32; 2 * norm.len()];
        for &(i, j) in &norm {
            neighbors[cursor[i as usize]] = j;
            cursor[i as usize] += 1;
            neighbors[cursor[j as usize]] = i;
            cursor[j as usize] += 1;
        }
        for v in 0..p {
            neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Ok(Graph {
            offsets,
            neighbors,
            degrees,
        })
    }

    /// Graph with no edges on `p` vertices.
    pub fn empty(p: usize) -> Graph {
        Graph {
            offsets: vec![0; p + 1],
            neighbors: Vec::new(),
            degrees: vec![0; p],
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.degrees.len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.degrees[v] as usize
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn max_degree(&self) -> usize {
        self.degrees.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn mean_degree(&self) -> f64 {
        if self.degrees.is_empty() {
            0.0
        } else {
            self.neighbors.len() as f64 / self.degrees.len() as f64
        }
    }

    /// Edges as (i, j) with i < j, ascending.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for v in 0..self.vertex_count() {
            for &w in self.neighbors(v) {
                if (v as u32) < w {
                    out.push((v as u32, w));
                }
            }
        }
        out
    }

    /// Connected-component labels, contiguous from 0 in order of first visit.
    pub fn components(&self) -> Vec<usize> {
        let p = self.vertex_count();
        let mut label = vec![usize::MAX; p];
        let mut next = 0usize;
        let mut queue = Vec::new();
        for s in 0..p {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            queue.push(s);
            while let Some(v) = queue.pop() {
                for &w in self.neighbors(v) {
                    let w = w as usize;
                    if label[w] == usize::MAX {
                        label[w] = next;
                        queue.push(w);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn component_count(&self) -> usize {
        self.components().iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Dense unnormalized Laplacian L = D − A.
    pub fn laplacian<T: Real>(&self) -> DMatrix<T> {
        let p = self.vertex_count();
        let mut l = DMatrix::zeros(p, p);
        for v in 0..p {
            l[(v, v)] = cst(self.degree(v) as f64);
            for &w in self.neighbors(v) {
                l[(v, w as usize)] = -T::one();
            }
        }
        l
    }
}

/// Eigendecomposition of a Laplacian, eigenvalues ascending, eigenvector
/// column `i` paired with `eigenvalues[i]`.
#[derive(Clone, Debug)]
pub struct LaplacianSpectrum<T: Real> {
    pub eigenvalues: DVector<T>,
    pub eigenvectors: DMatrix<T>,
}

impl<T: Real> LaplacianSpectrum<T> {
    pub fn p(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Dense symmetric eigendecomposition of `l`, sorted ascending.
///
/// Rejects matrices that are asymmetric beyond a small absolute tolerance
/// rather than silently symmetrizing.
pub fn spectrum<T: Real>(l: &DMatrix<T>) -> Result<LaplacianSpectrum<T>> {
    if l.nrows() != l.ncols() {
        return Err(shape(format!(
            "matrix is {}x{}, expected square",
            l.nrows(),
            l.ncols()
        )));
    }
    let p = l.nrows();
    let tol = cst::<T>(1e-12).max(T::default_epsilon() * cst::<T>(64.0));
    let mut max_asym = T::zero();
    for i in 0..p {
        for j in (i + 1)..p {
            max_asym = max_asym.max((l[(i, j)] - l[(j, i)]).abs());
        }
    }
    if max_asym > tol {
        return Err(invalid(format!(
            "matrix not symmetric: max |L_ij - L_ji| = {:?}",
            max_asym.to_f64().unwrap_or(f64::NAN)
        )));
    }

    let eig = l.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("non-finite eigenvalue")
    });
    let eigenvalues = DVector::from_fn(p, |i, _| eig.eigenvalues[order[i]]);
    let mut eigenvectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(LaplacianSpectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Scale-aware default tolerance separating the exact kernel of L from small
/// positive eigenvalues: `1e-8 * max(1, lambda_max)`.
pub fn default_zero_tol<T: Real>(spec: &LaplacianSpectrum<T>) -> T {
    let lam_max = spec.eigenvalues[spec.p() - 1];
    cst::<T>(1e-8) * T::one().max(lam_max)
}

/// Number of near-zero eigenvalues (= component count for a true Laplacian)
/// and the spectral gap: the smallest eigenvalue at or above `zero_tol`.
/// The gap is `None` when every eigenvalue falls below the tolerance
/// (graph fully disconnected into singletons, or `zero_tol` too large).
pub fn spectral_gap<T: Real>(spec: &LaplacianSpectrum<T>, zero_tol: T) -> (usize, Option<T>) {
    let k = spec
        .eigenvalues
        .iter()
        .take_while(|&&lam| lam < zero_tol)
        .count();
    let lambda_g = if k < spec.p() {
        Some(spec.eigenvalues[k])
    } else {
        None
    };
    (k, lambda_g)
}

/// Sample a stochastic block model graph: vertices in consecutive blocks of
/// the given sizes, each within-block pair joined independently with
/// probability `a`, each between-block pair with probability `b`. No
/// self-loops; each unordered pair is examined once and mirrored.
pub fn sbm_sample<R: Rng + ?Sized>(sizes: &[usize], a: f64, b: f64, rng: &mut R) -> Result<Graph> {
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return Err(invalid(format!(
            "edge probabilities must lie in [0,1], got a={a}, b={b}"
        )));
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(invalid("block sizes must be nonempty and positive"));
    }
    let p: usize = sizes.iter().sum();
    let mut block = vec![0usize; p];
    let mut v = 0;
    for (idx, &s) in sizes.iter().enumerate() {
        for _ in 0..s {
            block[v] = idx;
            v += 1;
        }
    }
    let mut edges = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            let prob = if block[i] == block[j] { a } else { b };
            if prob > 0.0 && rng.gen_bool(prob) {
                edges.push((i as u32, j as u32));
            }
        }
    }
    Graph::from_edges(p, &edges)
}
