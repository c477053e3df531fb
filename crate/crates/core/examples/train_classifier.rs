//! Trains the MLP on seeds plus propagated pseudo-labels and saves a checkpoint.

use labelprop::classifier::{self, ClassifierParams, Optimizer, TrainConfig};
use labelprop::dataset::{self, SyntheticConfig};
use labelprop::graph::{self, GraphConfig};
use labelprop::propagation::{self, PropagationConfig};

fn main() -> labelprop::Result<()> {
    let (emb, manifest) = dataset::generate_synthetic(&SyntheticConfig::default())?;
    let g = graph::build_graph(&emb, &GraphConfig { k: 10, ..Default::default() })?;
    let lp = propagation::propagate_cg(
        &g.normalized,
        &propagation::build_label_matrix(&manifest),
        &PropagationConfig::default(),
    )?;

    let cfg = TrainConfig { optimizer: Optimizer::Adam, seed: 1, ..Default::default() };
    let init = ClassifierParams::init(emb.d(), 32, manifest.num_classes(), cfg.seed);
    let (params, trace) = classifier::train(&init, &emb, &manifest, Some(&lp), &cfg)?;
    for (epoch, loss) in trace.iter().enumerate().step_by(10) {
        println!("epoch {epoch:>3}  loss {loss:.5}");
    }

    let pred = classifier::predict(&params, &emb)?;
    let hits = manifest.items().iter().zip(&pred).filter(|(it, p)| it.label == Some(**p)).count();
    println!("training-set accuracy {hits}/{}", manifest.len());

    let path = std::env::temp_dir().join("labelprop-example.lpmc");
    params.save(&path)?;
    let loaded = ClassifierParams::load(&path)?;
    let drift = params
        .blocks()
        .iter()
        .zip(loaded.blocks())
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!("checkpoint: {} ({} parameters)", path.display(), params.num_params());
    println!("largest change from f32 storage: {drift:.1e}");
    Ok(())
}
