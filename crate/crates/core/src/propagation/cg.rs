//! Conjugate gradient for `(I - alpha S) z = b` with minimal-residual smoothing.
//!
//! Plain CG minimizes the error in the `A`-norm, so its residual 2-norm can
//! go up between iterations. Alongside the CG recurrences we keep a smoothed
//! iterate `x_s` (Zhou & Walker's minimal residual smoothing): after each CG
//! step `x_s` moves toward the new CG iterate by the step length that
//! minimizes the residual norm. The search directions are untouched; the
//! smoothed residual is never larger than the CG residual of the same step
//! and is non-increasing, so it serves as both stopping test and trace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseAffinity;

/// Per-column solver record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgStats {
    pub iterations: usize,
    /// `||b - A z||` recomputed from the returned solution.
    pub final_residual: f64,
    /// Stopping threshold `tol * max(1, ||b||)`.
    pub threshold: f64,
    pub converged: bool,
    /// Smoothed residual norm before the first and after every iteration.
    pub residual_trace: Vec<f64>,
    /// Raw CG recurrence residual norms, same indexing.
    pub cg_residual_trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `out = x - alpha * S x`.
pub fn apply_diffusion(s: &SparseAffinity, alpha: f64, x: &[f64], out: &mut [f64]) {
    s.matvec_into(x, out);
    for (o, xi) in out.iter_mut().zip(x) {
        *o = xi - alpha * *o;
    }
}

/// Solves one right-hand side. `Err(Solver)` on non-finite arithmetic; a
/// solve that hits `max_iter` returns `Ok` with `converged = false`.
pub fn solve_column(
    s: &SparseAffinity,
    alpha: f64,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgStats)> {
    let n = s.n();
    let b_norm = norm(b);
    let threshold = tol * b_norm.max(1.0);

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut q = vec![0.0; n];
    let mut rr = b_norm * b_norm;

    let mut xs = vec![0.0; n];
    let mut rs = r.clone();
    let mut rs_norm = b_norm;
    let mut d = vec![0.0; n];
    let mut cand = vec![0.0; n];

    let mut residual_trace = vec![rs_norm];
    let mut cg_residual_trace = vec![b_norm];
    let mut iterations = 0;

    while rs_norm > threshold && iterations < max_iter {
        apply_diffusion(s, alpha, &p, &mut q);
        let pq = dot(&p, &q);
        if !pq.is_finite() {
            return Err(Error::Solver(format!("non-finite curvature at iteration {iterations}")));
        }
        if pq <= 0.0 {
            // Only reachable when p vanished in floating point; nothing left to gain.
            break;
        }
        let step = rr / pq;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * q[i];
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::Solver(format!("non-finite residual at iteration {iterations}")));
        }
        iterations += 1;

        for i in 0..n {
            d[i] = r[i] - rs[i];
        }
        let dd = dot(&d, &d);
        if dd > 0.0 {
            let eta = -dot(&rs, &d) / dd;
            for i in 0..n {
                cand[i] = rs[i] + eta * d[i];
            }
            let cand_norm = norm(&cand);
            // Accept only non-increasing steps; rounding can otherwise add an ulp.
            if cand_norm <= rs_norm {
                std::mem::swap(&mut rs, &mut cand);
                rs_norm = cand_norm;
                for i in 0..n {
                    xs[i] += eta * (x[i] - xs[i]);
                }
            }
        }
        residual_trace.push(rs_norm);
        cg_residual_trace.push(rr_new.sqrt());

        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }

    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite solution".into()));
    }
    apply_diffusion(s, alpha, &xs, &mut q);
    let final_residual = norm(&b.iter().zip(&q).map(|(bi, qi)| bi - qi).collect::<Vec<_>>());
    let converged = rs_norm <= threshold;
    Ok((
        xs,
        CgStats { iterations, final_residual, threshold, converged, residual_trace, cg_residual_trace },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::AffinityKind;

    fn two_node() -> SparseAffinity {
        SparseAffinity::from_rows(2, vec![vec![(1, 1.0)], vec![(0, 1.0)]], AffinityKind::S).unwrap()
    }

    #[test]
    fn identity_when_alpha_zero() {
        let (z, st) = solve_column(&two_node(), 0.0, &[0.3, 0.0], 1e-6, 10).unwrap();
        assert_eq!(z, vec![0.3, 0.0]);
        assert_eq!(st.iterations, 1);
        let (z, st) = solve_column(&two_node(), 0.5, &[0.0, 0.0], 1e-6, 10).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        assert_eq!(st.iterations, 0);
    }

    #[test]
    fn two_node_solution() {
        let (z, st) = solve_column(&two_node(), 0.5, &[1.0, 0.0], 1e-12, 10).unwrap();
        assert!((z[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((z[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!(st.converged);
        assert!(st.final_residual <= 1e-12);
    }

    #[test]
    fn iteration_cap_reports_unconverged() {
        let s = SparseAffinity::from_rows(
            3,
            vec![vec![(1, 0.7)], vec![(0, 0.7), (2, 0.7)], vec![(1, 0.7)]],
            AffinityKind::S,
        )
        .unwrap();
        let (_, st) = solve_column(&s, 0.9, &[1.0, 0.0, 0.0], 1e-14, 1).unwrap();
        assert!(!st.converged);
        assert_eq!(st.iterations, 1);
    }
}
