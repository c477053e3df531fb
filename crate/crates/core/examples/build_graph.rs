//! Builds the kNN affinity graph for a synthetic dataset and prints its shape.

use labelprop::dataset::{self, SyntheticConfig};
use labelprop::graph::{self, GraphConfig, GraphStats};

fn main() -> labelprop::Result<()> {
    let (emb, _) = dataset::generate_synthetic(&SyntheticConfig::default())?;
    let cfg = GraphConfig { k: 10, gamma: 3.0, normalize_embeddings: true };
    let g = graph::build_graph(&emb, &cfg)?;

    println!("nearest neighbours of item 0:");
    for &(j, sim) in g.neighbors.of(0).iter().take(5) {
        println!("  {j:>4}  cos {sim:.4}  weight {:.4}", graph::edge_weight(sim, cfg.gamma));
    }

    let stats = GraphStats::compute(&g, graph::DEFAULT_POWER_ITERS, 0);
    println!("stored entries of W: {} (bound 2nk = {})", stats.nnz, 2 * emb.n() * cfg.k);
    println!("symmetric: {}", g.affinity.is_symmetric());
    println!("degree range: {:.3} .. {:.3}", stats.degree_min, stats.degree_max);
    println!("isolated nodes: {}", stats.isolated);
    Ok(())
}
