//! Alternates propagation, training and re-embedding until labels settle.

use labelprop::classifier::{Optimizer, TrainConfig};
use labelprop::dataset::{self, SyntheticConfig};
use labelprop::evaluation::{self, Averaging};
use labelprop::graph::GraphConfig;
use labelprop::propagation::{self, LoopConfig, PropagationConfig};

fn main() -> labelprop::Result<()> {
    let data = SyntheticConfig { separation: 4.0, label_fraction: 0.1, chunks_per_file: 5, seed: 2, ..Default::default() };
    let (emb, manifest) = dataset::generate_synthetic(&data)?;

    let outcome = propagation::iterate_propagation(
        &emb,
        &manifest,
        &GraphConfig { k: 10, ..Default::default() },
        &PropagationConfig::default(),
        &TrainConfig { optimizer: Optimizer::Adam, seed: 2, ..Default::default() },
        &LoopConfig { rounds: 5, ..Default::default() },
    )?;

    println!("rounds run: {}", outcome.rounds_run);
    for (r, a) in outcome.agreement_trace.iter().enumerate() {
        println!("  round {} vs {}: {:.1}% of labels unchanged", r + 2, r + 1, 100.0 * a);
    }
    let (chunk, file) = evaluation::evaluate_manifest(&manifest, &outcome.result.pseudo_labels, Averaging::Macro)?;
    print!("{}", chunk.to_table(false));
    print!("{}", file.to_table(false));
    Ok(())
}
