//! Compressed-row storage for the affinity matrices `M`, `W` and `S`.
//!
//! The optional graph dump is little-endian:
//!
//! ```text
//! "LPGS" | u32 version = 1 | u64 n | u64 nnz
//!        | row_offsets (n+1 x u64) | col_indices (nnz x u64) | values (nnz x f32)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self as bio, write_atomic};

pub const GRAPH_MAGIC: &[u8; 4] = b"LPGS";
pub const GRAPH_VERSION: u32 = 1;

/// Which stage of graph construction a matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AffinityKind {
    /// Directed kNN weights.
    M,
    /// Symmetrized affinity `M + M^T`.
    W,
    /// Normalized affinity `D^{-1/2} W D^{-1/2}`.
    S,
}

/// Square sparse matrix in CSR form. Column indices are strictly increasing
/// within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinity {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    kind: AffinityKind,
}

impl SparseAffinity {
    /// Builds from per-row `(col, value)` lists. Duplicate columns in a row
    /// are summed in ascending-column order after a stable sort; exact zeros
    /// are dropped.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>, kind: AffinityKind) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::Data(format!("expected {n} rows, got {}", rows.len())));
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let (j, mut v) = row[k];
                if j >= n {
                    return Err(Error::Data(format!("row {i}: column {j} out of range")));
                }
                k += 1;
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self { n, row_offsets, col_indices, values, kind })
    }

    /// Builds from raw CSR arrays, validating their structure.
    pub fn from_csr(
        n: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
        kind: AffinityKind,
    ) -> Result<Self> {
        if row_offsets.len() != n + 1 || row_offsets[0] != 0 {
            return Err(Error::Format("row_offsets must have n+1 entries starting at 0".into()));
        }
        if col_indices.len() != values.len() || row_offsets[n] != col_indices.len() {
            return Err(Error::Format("row_offsets / col_indices / values disagree on nnz".into()));
        }
        for i in 0..n {
            let (a, b) = (row_offsets[i], row_offsets[i + 1]);
            if a > b {
                return Err(Error::Format(format!("row_offsets decrease at row {i}")));
            }
            let cols = &col_indices[a..b];
            if cols.iter().any(|&j| j >= n) || cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!("row {i}: columns out of range or unsorted")));
            }
        }
        Ok(Self { n, row_offsets, col_indices, values, kind })
    }

    pub fn zeros(n: usize, kind: AffinityKind) -> Self {
        Self { n, row_offsets: vec![0; n + 1], col_indices: Vec::new(), values: Vec::new(), kind }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn kind(&self) -> AffinityKind {
        self.kind
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
        self.col_indices[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
        match self.col_indices[a..b].binary_search(&j) {
            Ok(k) => self.values[a + k],
            Err(_) => 0.0,
        }
    }

    /// `y = self * x`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        // Rows are filled in increasing source-row order, so already sorted.
        Self::from_rows(self.n, rows, self.kind).expect("transpose of a valid matrix")
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    pub fn has_zero_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i) == 0.0)
    }

    /// Row sums.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[i * self.n + j] = v;
            }
        }
        out
    }

    pub fn write_dump(&self, w: &mut dyn Write) -> Result<()> {
        w.write_all(GRAPH_MAGIC)?;
        w.write_all(&GRAPH_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.nnz() as u64).to_le_bytes())?;
        for &o in &self.row_offsets {
            w.write_all(&(o as u64).to_le_bytes())?;
        }
        for &c in &self.col_indices {
            w.write_all(&(c as u64).to_le_bytes())?;
        }
        bio::write_f32s(w, self.values.iter().map(|&v| v as f32))
    }

    pub fn save_dump(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write_dump(w))
    }

    /// Reads a graph dump. Values come back rounded to f32 precision; the
    /// dump does not record the matrix kind.
    pub fn read_dump(r: &mut dyn Read, kind: AffinityKind) -> Result<Self> {
        const WHAT: &str = "graph dump";
        bio::read_magic(r, GRAPH_MAGIC, WHAT)?;
        let version = bio::read_u32(r, WHAT)?;
        if version != GRAPH_VERSION {
            return Err(Error::Format(format!("{WHAT}: unsupported version {version}")));
        }
        let n = bio::read_u64(r, WHAT)? as usize;
        let nnz = bio::read_u64(r, WHAT)? as usize;
        let offsets = bio::read_u64_vec(r, n.saturating_add(1), WHAT)?;
        let cols = bio::read_u64_vec(r, nnz, WHAT)?;
        let vals = bio::read_f32_vec(r, nnz, WHAT)?;
        bio::expect_eof(r, WHAT)?;
        Self::from_csr(
            n,
            offsets.into_iter().map(|v| v as usize).collect(),
            cols.into_iter().map(|v| v as usize).collect(),
            vals.into_iter().map(f64::from).collect(),
            kind,
        )
    }
}
