//! Label propagation with the CG solver, checked against the dense LU solve.

use labelprop::dataset::{self, SyntheticConfig};
use labelprop::graph::{self, GraphConfig};
use labelprop::propagation::{self, PropagationConfig};

fn main() -> labelprop::Result<()> {
    let (emb, manifest) = dataset::generate_synthetic(&SyntheticConfig { seed: 3, separation: 4.0, ..Default::default() })?;
    let g = graph::build_graph(&emb, &GraphConfig { k: 10, ..Default::default() })?;
    let y = propagation::build_label_matrix(&manifest);
    let cfg = PropagationConfig { alpha: 0.99, ..Default::default() };

    let result = propagation::propagate_cg(&g.normalized, &y, &cfg)?;
    for (class, st) in manifest.classes().iter().zip(&result.cg_stats) {
        println!("{class}: {} CG iterations, residual {:.2e}", st.iterations, st.final_residual);
    }

    let dense = propagation::propagate_dense_oracle(&g.normalized, &y, &cfg)?;
    println!("max |P_cg - P_dense| = {:.2e}", result.scores.max_abs_diff(&dense));

    let correct = manifest
        .items()
        .iter()
        .zip(&result.pseudo_labels)
        .filter(|(it, p)| it.label == **p)
        .count();
    println!("pseudo-labels matching truth: {correct}/{}", manifest.len());

    let least_sure = (0..manifest.len()).min_by(|&a, &b| result.confidence[a].total_cmp(&result.confidence[b])).unwrap();
    println!("least confident item: {} ({:.3})", manifest.items()[least_sure].id, result.confidence[least_sure]);
    Ok(())
}
