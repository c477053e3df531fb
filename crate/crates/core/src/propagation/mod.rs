//! Label diffusion over the normalized affinity graph.
//!
//! Seeds form a one-hot label matrix `Y` (eval and unlabeled rows are zero).
//! The propagated scores are `P = (I - alpha S)^{-1} Y`, computed column by
//! column with conjugate gradient; a dense LU solve is kept as a reference
//! for small graphs. Pseudo-labels are row-wise argmaxes of `P`.

pub mod cg;
pub mod iterate;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::sparse::SparseAffinity;

pub use cg::CgStats;
pub use iterate::{iterate_propagation, IterationOutcome, LoopConfig};

/// Largest graph the dense reference solver will materialize.
pub const DENSE_ORACLE_MAX_N: usize = 2000;

/// Rows whose largest score is at or below this get no label.
pub const UNASSIGNED_EPS: f64 = 1e-12;

/// Dense row-major `n x c` matrix, used for both `Y` and `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    c: usize,
    data: Vec<f64>,
}

/// The seed matrix `Y`.
pub type LabelMatrix = ScoreMatrix;

impl ScoreMatrix {
    pub fn zeros(n: usize, c: usize) -> Self {
        Self { n, c, data: vec![0.0; n * c] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Data("ragged score rows".into()));
        }
        Ok(Self { n: rows.len(), c, data: rows.concat() })
    }

    /// One-hot rows at seeded indices, zero rows elsewhere.
    pub fn from_seeds(seeds: &[Option<usize>], c: usize) -> Result<Self> {
        let mut y = Self::zeros(seeds.len(), c);
        for (i, s) in seeds.iter().enumerate() {
            if let Some(j) = *s {
                if j >= c {
                    return Err(Error::Data(format!("seed {i} has class {j} >= {c}")));
                }
                y.data[i * c + j] = 1.0;
            }
        }
        Ok(y)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.c + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    fn from_columns(n: usize, cols: &[Vec<f64>]) -> Self {
        let c = cols.len();
        let mut m = Self::zeros(n, c);
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                m.data[i * c + j] = *v;
            }
        }
        m
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { n: self.n, c: self.c, data: self.data.iter().map(|v| v * factor).collect() }
    }

    /// Row-wise argmax of nonzero rows; `None` for all-zero rows.
    pub fn seeds(&self) -> Vec<Option<usize>> {
        (0..self.n)
            .map(|i| {
                let row = self.row(i);
                if row.iter().all(|&v| v == 0.0) {
                    None
                } else {
                    Some(argmax(row))
                }
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.n, self.c), (other.n, other.c));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `Y` from a manifest: only role `labeled` rows are one-hot.
pub fn build_label_matrix(manifest: &DatasetManifest) -> LabelMatrix {
    ScoreMatrix::from_seeds(&manifest.seed_labels(), manifest.num_classes())
        .expect("manifest labels are validated on construction")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    /// Diffusion strength in `[0, 1)`.
    pub alpha: f64,
    /// CG stops once the residual is below `tol * max(1, ||y_j||)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Divide each column of `P` by its sum before assigning labels.
    pub class_mass_norm: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self { alpha: 0.99, tol: 1e-6, max_iter: 200, class_mass_norm: false }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Param(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::Param(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

fn check_inputs(s: &SparseAffinity, y: &LabelMatrix, cfg: &PropagationConfig) -> Result<()> {
    cfg.validate()?;
    if s.n() != y.n() {
        return Err(Error::Param(format!("graph has {} nodes but Y has {} rows", s.n(), y.n())));
    }
    Ok(())
}

/// Reference solve `P = (I - alpha S)^{-1} Y` by dense LU factorization.
pub fn propagate_dense_oracle(s: &SparseAffinity, y: &LabelMatrix, cfg: &PropagationConfig) -> Result<ScoreMatrix> {
    check_inputs(s, y, cfg)?;
    let n = s.n();
    if n > DENSE_ORACLE_MAX_N {
        return Err(Error::Param(format!(
            "dense oracle limited to n <= {DENSE_ORACLE_MAX_N}, got {n}"
        )));
    }
    let mut a = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for (j, v) in s.row(i) {
            a[(i, j)] -= cfg.alpha * v;
        }
    }
    let rhs = DMatrix::from_row_slice(n, y.c(), y.as_slice());
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("I - alpha S is singular".into()))?;
    let mut p = ScoreMatrix::zeros(n, y.c());
    for i in 0..n {
        for j in 0..y.c() {
            p.data[i * y.c() + j] = sol[(i, j)];
        }
    }
    Ok(p)
}

/// A class column that stopped at `max_iter` above tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceWarning {
    pub class: usize,
    pub iterations: usize,
    pub final_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub scores: ScoreMatrix,
    /// `None` marks items that received no propagation mass.
    pub pseudo_labels: Vec<Option<usize>>,
    pub confidence: Vec<f64>,
    pub cg_stats: Vec<CgStats>,
    pub warnings: Vec<ConvergenceWarning>,
}

impl PropagationResult {
    /// Flat per-class solver report.
    pub fn cg_report(&self, classes: &[String]) -> Vec<CgReportEntry> {
        self.cg_stats
            .iter()
            .enumerate()
            .map(|(j, st)| CgReportEntry {
                class: classes.get(j).cloned().unwrap_or_else(|| j.to_string()),
                iterations: st.iterations,
                final_residual: st.final_residual,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgReportEntry {
    pub class: String,
    pub iterations: usize,
    pub final_residual: f64,
}

/// Solves `(I - alpha S) Z = Y` with one CG run per class column.
///
/// Columns are solved in parallel; each column is written only by its own
/// solve, so the result does not depend on the thread count. Seeds keep
/// their given label with confidence 1.
pub fn propagate_cg(s: &SparseAffinity, y: &LabelMatrix, cfg: &PropagationConfig) -> Result<PropagationResult> {
    check_inputs(s, y, cfg)?;
    if !s.is_symmetric() {
        return Err(Error::Param("propagation requires a symmetric affinity matrix".into()));
    }
    let solved: Vec<(Vec<f64>, CgStats)> = (0..y.c())
        .into_par_iter()
        .map(|j| cg::solve_column(s, cfg.alpha, &y.column(j), cfg.tol, cfg.max_iter))
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    for (j, (_, st)) in solved.iter().enumerate() {
        if !st.converged {
            warn!(
                "class {j}: CG stopped after {} iterations with residual {:.3e} (threshold {:.3e})",
                st.iterations, st.final_residual, st.threshold
            );
            warnings.push(ConvergenceWarning {
                class: j,
                iterations: st.iterations,
                final_residual: st.final_residual,
            });
        }
    }
    let (cols, cg_stats): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
    let mut scores = ScoreMatrix::from_columns(s.n(), &cols);
    if cfg.class_mass_norm {
        class_mass_normalize(&mut scores);
    }
    let (mut pseudo_labels, mut confidence) = assign_pseudo_labels(&scores)?;
    for (i, seed) in y.seeds().into_iter().enumerate() {
        if let Some(label) = seed {
            pseudo_labels[i] = Some(label);
            confidence[i] = 1.0;
        }
    }
    Ok(PropagationResult { scores, pseudo_labels, confidence, cg_stats, warnings })
}

/// Scales each column to unit sum (columns with no mass are left alone).
pub fn class_mass_normalize(p: &mut ScoreMatrix) {
    for j in 0..p.c {
        let mass: f64 = (0..p.n).map(|i| p.get(i, j).max(0.0)).sum();
        if mass > 0.0 {
            for i in 0..p.n {
                p.data[i * p.c + j] /= mass;
            }
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Argmax labels and normalized-entropy confidences per row.
///
/// A row with maximum `<= 1e-12` is unassigned with confidence 0. Otherwise
/// the label is the first maximal column and the confidence is
/// `1 - H(p) / ln(c)`, where `p` is the row clamped at zero and scaled to
/// sum to one.
pub fn assign_pseudo_labels(p: &ScoreMatrix) -> Result<(Vec<Option<usize>>, Vec<f64>)> {
    let c = p.c();
    let mut labels = Vec::with_capacity(p.n());
    let mut conf = Vec::with_capacity(p.n());
    for i in 0..p.n() {
        let row = p.row(i);
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite score at row {i}, class {j}")));
        }
        let best = argmax(row);
        if c == 0 || row[best] <= UNASSIGNED_EPS {
            labels.push(None);
            conf.push(0.0);
            continue;
        }
        labels.push(Some(best));
        let total: f64 = row.iter().map(|v| v.max(0.0)).sum();
        let entropy: f64 = row
            .iter()
            .map(|v| v.max(0.0) / total)
            .filter(|&q| q > 0.0)
            .map(|q| -q * q.ln())
            .sum();
        let certainty = if c > 1 { 1.0 - entropy / (c as f64).ln() } else { 1.0 };
        conf.push(certainty.clamp(0.0, 1.0));
    }
    Ok((labels, conf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ItemRecord, Role};
    use crate::sparse::AffinityKind;

    fn manifest(roles: &[(Role, Option<usize>)], c: usize) -> DatasetManifest {
        let items = roles
            .iter()
            .enumerate()
            .map(|(i, &(role, label))| ItemRecord { id: i.to_string(), file_id: i.to_string(), label, role })
            .collect();
        DatasetManifest::new((0..c).map(|j| format!("c{j}")).collect(), items).unwrap()
    }

    #[test]
    fn label_matrix_basic() {
        let m = manifest(&[(Role::Labeled, Some(1)), (Role::Unlabeled, None), (Role::Unlabeled, None)], 2);
        let y = build_label_matrix(&m);
        assert_eq!(y.as_slice(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn label_matrix_all_labeled_and_eval_withheld() {
        let m = manifest(&[(Role::Labeled, Some(0)), (Role::Labeled, Some(1))], 2);
        let y = build_label_matrix(&m);
        assert!((0..2).all(|i| y.row(i).iter().sum::<f64>() == 1.0));
        let m = manifest(&[(Role::Labeled, Some(0)), (Role::Eval, Some(1))], 2);
        assert_eq!(build_label_matrix(&m).row(1), &[0.0, 0.0]);
    }

    fn two_node() -> SparseAffinity {
        SparseAffinity::from_rows(2, vec![vec![(1, 1.0)], vec![(0, 1.0)]], AffinityKind::S).unwrap()
    }

    #[test]
    fn oracle_alpha_zero_is_identity() {
        let y = ScoreMatrix::from_seeds(&[Some(0), None], 2).unwrap();
        let cfg = PropagationConfig { alpha: 0.0, ..Default::default() };
        assert_eq!(propagate_dense_oracle(&two_node(), &y, &cfg).unwrap(), y);
    }

    #[test]
    fn oracle_two_node() {
        let y = ScoreMatrix::from_seeds(&[Some(0), None], 1).unwrap();
        let cfg = PropagationConfig { alpha: 0.5, ..Default::default() };
        let p = propagate_dense_oracle(&two_node(), &y, &cfg).unwrap();
        assert!((p.get(0, 0) - 4.0 / 3.0).abs() < 1e-14);
        assert!((p.get(1, 0) - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn oracle_disconnected_pair() {
        let s = SparseAffinity::zeros(2, AffinityKind::S);
        let y = ScoreMatrix::from_seeds(&[Some(0), Some(1)], 2).unwrap();
        let p = propagate_dense_oracle(&s, &y, &PropagationConfig::default()).unwrap();
        assert_eq!(p.get(0, 1), 0.0);
        assert_eq!(p.get(1, 0), 0.0);
    }

    #[test]
    fn oracle_size_guard() {
        let s = SparseAffinity::zeros(DENSE_ORACLE_MAX_N + 1, AffinityKind::S);
        let y = ScoreMatrix::zeros(DENSE_ORACLE_MAX_N + 1, 1);
        assert!(matches!(
            propagate_dense_oracle(&s, &y, &PropagationConfig::default()),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn cg_alpha_zero() {
        let y = ScoreMatrix::from_seeds(&[Some(0), None], 2).unwrap();
        let cfg = PropagationConfig { alpha: 0.0, ..Default::default() };
        let r = propagate_cg(&two_node(), &y, &cfg).unwrap();
        assert_eq!(r.scores, y);
        assert!(r.cg_stats.iter().all(|s| s.iterations <= 1));
    }

    #[test]
    fn config_validation() {
        assert!(PropagationConfig { alpha: 1.0, ..Default::default() }.validate().is_err());
        assert!(PropagationConfig { alpha: -0.1, ..Default::default() }.validate().is_err());
        assert!(PropagationConfig { tol: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn pseudo_label_examples() {
        let p = ScoreMatrix::from_rows(&[vec![0.2, 0.7, 0.1], vec![0.0, 0.0, 0.0]]).unwrap();
        let (l, c) = assign_pseudo_labels(&p).unwrap();
        assert_eq!(l, vec![Some(1), None]);
        let h = -(0.2f64 * 0.2f64.ln() + 0.7 * 0.7f64.ln() + 0.1 * 0.1f64.ln());
        assert!((c[0] - (1.0 - h / 3f64.ln())).abs() < 1e-12);
        assert!((c[0] - 0.270).abs() < 5e-4);
        assert_eq!(c[1], 0.0);

        let p = ScoreMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let (l, c) = assign_pseudo_labels(&p).unwrap();
        assert_eq!(l, vec![Some(0)]);
        assert!(c[0].abs() < 1e-15);

        let p = ScoreMatrix::from_rows(&[vec![f64::NAN, 0.5]]).unwrap();
        assert!(matches!(assign_pseudo_labels(&p), Err(Error::Data(_))));
    }

    #[test]
    fn class_mass_norm_rescales_columns() {
        let mut p = ScoreMatrix::from_rows(&[vec![2.0, 0.1], vec![2.0, 0.3]]).unwrap();
        class_mass_normalize(&mut p);
        assert_eq!(p.column(0), vec![0.5, 0.5]);
        assert!((p.get(1, 1) - 0.75).abs() < 1e-15);
    }
}
