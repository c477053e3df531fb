//! kNN affinity graph construction.
//!
//! For each item `i` the `k` most similar other items (by dot product of the
//! embeddings, unit-normalized by default) become its neighbors. Directed
//! weights are `m_ij = max(0, z_i . z_j)^gamma`; the affinity is the
//! symmetrization `W = M + M^T` (duplicate edges summed) and the diffusion
//! operator is `S = D^{-1/2} W D^{-1/2}` with `D = diag(W 1)`.
//!
//! All tie-breaking is by ascending node index, so results do not depend on
//! the number of worker threads.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::sparse::{AffinityKind, SparseAffinity};

pub const DEFAULT_POWER_ITERS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Neighbors per node.
    pub k: usize,
    /// Sharpness exponent applied to clamped similarities.
    pub gamma: f64,
    /// Unit-normalize embedding rows before computing similarities.
    pub normalize_embeddings: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { k: 50, gamma: 3.0, normalize_embeddings: true }
    }
}

impl GraphConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Param("k must be at least 1".into()));
        }
        if self.k >= n {
            return Err(Error::Param(format!("k = {} must be smaller than n = {n}", self.k)));
        }
        if !self.gamma.is_finite() || self.gamma < 1.0 {
            return Err(Error::Param(format!("gamma must be finite and >= 1, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// `k` `(neighbor, similarity)` pairs per node, most similar first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    n: usize,
    k: usize,
    entries: Vec<(usize, f64)>,
}

impl NeighborTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn of(&self, i: usize) -> &[(usize, f64)] {
        &self.entries[i * self.k..(i + 1) * self.k]
    }
}

/// Descending similarity, then ascending index. `-0.0` and `0.0` tie.
fn neighbor_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Exact brute-force kNN search. Parallel over query rows.
pub fn knn_search(emb: &EmbeddingMatrix, cfg: &GraphConfig) -> Result<NeighborTable> {
    let n = emb.n();
    cfg.validate(n)?;
    let normalized;
    let emb = if cfg.normalize_embeddings {
        normalized = emb.normalized()?;
        &normalized
    } else {
        emb
    };
    let k = cfg.k;
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let zi = emb.row(i);
            let mut cands: Vec<(usize, f64)> =
                (0..n).filter(|&j| j != i).map(|j| (j, dot(zi, emb.row(j)))).collect();
            if k < cands.len() {
                cands.select_nth_unstable_by(k - 1, neighbor_order);
                cands.truncate(k);
            }
            cands.sort_by(neighbor_order);
            cands
        })
        .collect();
    Ok(NeighborTable { n, k, entries: rows.into_iter().flatten().collect() })
}

/// Directed kNN weight `max(0, s)^gamma`. Clamping happens before the power.
pub fn edge_weight(similarity: f64, gamma: f64) -> f64 {
    similarity.max(0.0).powf(gamma)
}

/// The directed weight matrix `M`.
pub fn directed_affinity(neighbors: &NeighborTable, cfg: &GraphConfig) -> Result<SparseAffinity> {
    let rows = (0..neighbors.n())
        .map(|i| {
            neighbors
                .of(i)
                .iter()
                .filter(|&&(j, _)| j != i)
                .map(|&(j, s)| (j, edge_weight(s, cfg.gamma)))
                .collect()
        })
        .collect();
    SparseAffinity::from_rows(neighbors.n(), rows, AffinityKind::M)
}

/// Symmetric affinity `W = M + M^T`, zero diagonal, non-positive weights dropped.
pub fn build_affinity(neighbors: &NeighborTable, cfg: &GraphConfig) -> Result<SparseAffinity> {
    let n = neighbors.n();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for &(j, s) in neighbors.of(i) {
            if j == i {
                continue;
            }
            let m = edge_weight(s, cfg.gamma);
            if !m.is_finite() {
                return Err(Error::Data(format!("non-finite edge weight between {i} and {j}")));
            }
            if m > 0.0 {
                rows[i].push((j, m));
                rows[j].push((i, m));
            }
        }
    }
    SparseAffinity::from_rows(n, rows, AffinityKind::W)
}

/// Weighted degrees `d_i = sum_j w_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeVector(pub Vec<f64>);

impl DegreeVector {
    pub fn isolated(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &d)| d == 0.0).map(|(i, _)| i)
    }
}

/// `S = D^{-1/2} W D^{-1/2}`. Isolated nodes keep all-zero rows and columns.
pub fn normalize(w: &SparseAffinity) -> (SparseAffinity, DegreeVector) {
    let degrees = w.row_sums();
    let n = w.n();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(w.nnz());
    let mut vals = Vec::with_capacity(w.nnz());
    offsets.push(0);
    for i in 0..n {
        for (j, v) in w.row(i) {
            let denom = (degrees[i] * degrees[j]).sqrt();
            if denom > 0.0 {
                cols.push(j);
                vals.push(v / denom);
            }
        }
        offsets.push(cols.len());
    }
    let s = SparseAffinity::from_csr(n, offsets, cols, vals, AffinityKind::S)
        .expect("normalization preserves CSR structure");
    (s, DegreeVector(degrees))
}

/// Power-iteration estimate of the spectral radius of a symmetric matrix.
///
/// Tracks `||S x||` for unit `x`, which never exceeds the spectral radius of
/// a symmetric matrix and converges to it even when `+rho` and `-rho` are
/// both eigenvalues. The start vector has positive entries drawn from `seed`.
pub fn estimate_spectral_radius(s: &SparseAffinity, iters: usize, seed: u64) -> f64 {
    let n = s.n();
    if n == 0 || s.nnz() == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.0)).collect();
    let norm0 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= norm0);
    let mut y = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        s.matvec_into(&x, &mut y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = norm;
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm;
        }
    }
    estimate
}

/// Everything produced by one graph construction pass.
#[derive(Debug, Clone)]
pub struct Graph {
    pub neighbors: NeighborTable,
    pub affinity: SparseAffinity,
    pub normalized: SparseAffinity,
    pub degrees: DegreeVector,
}

/// kNN search, affinity, normalization in one call.
pub fn build_graph(emb: &EmbeddingMatrix, cfg: &GraphConfig) -> Result<Graph> {
    let neighbors = knn_search(emb, cfg)?;
    let affinity = build_affinity(&neighbors, cfg)?;
    let (normalized, degrees) = normalize(&affinity);
    Ok(Graph { neighbors, affinity, normalized, degrees })
}

/// Summary statistics printed by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n: usize,
    pub nnz: usize,
    pub isolated: usize,
    pub degree_min: f64,
    pub degree_median: f64,
    pub degree_mean: f64,
    pub degree_max: f64,
    /// Count of nodes by number of stored edges, in ascending edge-count order.
    pub edge_count_histogram: Vec<(usize, usize)>,
    pub spectral_radius: f64,
}

impl GraphStats {
    pub fn compute(graph: &Graph, power_iters: usize, seed: u64) -> Self {
        let w = &graph.affinity;
        let mut deg = graph.degrees.0.clone();
        deg.sort_by(f64::total_cmp);
        let n = w.n();
        let median = if n % 2 == 1 { deg[n / 2] } else { 0.5 * (deg[n / 2 - 1] + deg[n / 2]) };
        let mut hist = std::collections::BTreeMap::new();
        for i in 0..n {
            *hist.entry(w.row_nnz(i)).or_insert(0usize) += 1;
        }
        Self {
            n,
            nnz: w.nnz(),
            isolated: graph.degrees.isolated().count(),
            degree_min: deg[0],
            degree_median: median,
            degree_mean: deg.iter().sum::<f64>() / n as f64,
            degree_max: deg[n - 1],
            edge_count_histogram: hist.into_iter().collect(),
            spectral_radius: estimate_spectral_radius(&graph.normalized, power_iters, seed),
        }
    }
}
