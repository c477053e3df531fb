//! Power-iteration estimate of rho(S) next to a dense eigendecomposition.

use labelprop::dataset::{self, SyntheticConfig};
use labelprop::graph::{self, GraphConfig};
use nalgebra::DMatrix;

fn main() -> labelprop::Result<()> {
    let cfg = SyntheticConfig { n_per_class: 15, label_fraction: 0.1, ..Default::default() };
    let (emb, _) = dataset::generate_synthetic(&cfg)?;
    let g = graph::build_graph(&emb, &GraphConfig { k: 5, ..Default::default() })?;

    let s = &g.normalized;
    let dense = DMatrix::from_row_slice(s.n(), s.n(), &s.to_dense());
    let exact = dense.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    for iters in [10, 100, 1000] {
        let rho = graph::estimate_spectral_radius(s, iters, 0);
        println!("{iters:>5} iterations: rho ~ {rho:.12}  (|error| {:.2e})", (rho - exact).abs());
    }
    println!("eigendecomposition: {exact:.12}");
    Ok(())
}
