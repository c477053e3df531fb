//! Seeded statistical checks of the training loop on synthetic blobs.

mod common;

use labelprop::classifier::{self, ClassifierParams, Optimizer, TrainConfig};
use labelprop::dataset::{self, EmbeddingMatrix, SyntheticConfig};
use labelprop::graph::GraphConfig;
use labelprop::propagation::{self, LoopConfig, PropagationConfig};

use common::truth;

/// Closer blobs than the defaults, so raw 1-NN makes mistakes. Adam is used
/// below: the default SGD schedule barely moves the weights in 50 epochs.
fn blobs(seed: u64) -> SyntheticConfig {
    SyntheticConfig { n_per_class: 50, num_classes: 3, dim: 16, separation: 4.0, label_fraction: 0.1, seed, chunks_per_file: 1 }
}

/// Leave-one-out cosine 1-NN accuracy against the true labels.
fn loo_1nn_accuracy(emb: &EmbeddingMatrix, labels: &[usize]) -> f64 {
    let z = emb.normalized().unwrap();
    let n = z.n();
    let hits = (0..n)
        .filter(|&i| {
            let nearest = (0..n)
                .filter(|&j| j != i)
                .map(|j| (z.row(i).iter().zip(z.row(j)).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum::<f64>(), j))
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                .unwrap()
                .1;
            labels[nearest] == labels[i]
        })
        .count();
    hits as f64 / n as f64
}

#[test]
fn reembedding_does_not_hurt_neighbourhoods() {
    let mut wins = 0;
    let mut log = Vec::new();
    for seed in 0..10 {
        let (emb, manifest) = dataset::generate_synthetic(&blobs(seed)).unwrap();
        let graph = GraphConfig { k: 10, ..Default::default() };
        let train = TrainConfig { seed, optimizer: Optimizer::Adam, ..Default::default() };
        let outcome = propagation::iterate_propagation(
            &emb,
            &manifest,
            &graph,
            &PropagationConfig::default(),
            &train,
            &LoopConfig { rounds: 2, ..Default::default() },
        )
        .unwrap();
        let params = outcome.classifier.unwrap();
        let hidden = classifier::reembed(&params, &emb).unwrap();
        let t = truth(&manifest);
        let (raw, re) = (loo_1nn_accuracy(&emb, &t), loo_1nn_accuracy(&hidden, &t));
        wins += usize::from(re >= raw);
        log.push(format!("{raw:.3}->{re:.3}"));
    }
    assert!(wins >= 8, "re-embedded 1-NN >= raw in {wins}/10: {log:?}");
}

#[test]
fn pseudo_labels_stabilise_across_rounds() {
    let mut stable = 0;
    let mut log = Vec::new();
    for seed in 0..20 {
        let (emb, manifest) = dataset::generate_synthetic(&blobs(100 + seed)).unwrap();
        let outcome = propagation::iterate_propagation(
            &emb,
            &manifest,
            &GraphConfig { k: 10, ..Default::default() },
            &PropagationConfig::default(),
            &TrainConfig { seed, optimizer: Optimizer::Adam, ..Default::default() },
            // Agreement can never exceed 1, so all three rounds run.
            &LoopConfig { rounds: 3, agreement_stop: 2.0, ..Default::default() },
        )
        .unwrap();
        assert_eq!(outcome.rounds_run, 3);
        let a = &outcome.agreement_trace;
        stable += usize::from(a[1] >= a[0]);
        log.push(format!("{:.3}/{:.3}", a[0], a[1]));
    }
    assert!(stable >= 18, "agreement(2,3) >= agreement(1,2) in {stable}/20: {log:?}");
}

#[test]
fn seed_only_training_reduces_loss() {
    let (emb, manifest) = dataset::generate_synthetic(&SyntheticConfig { seed: 4, ..Default::default() }).unwrap();
    let init = ClassifierParams::init(emb.d(), 64, manifest.num_classes(), 4);
    let result = propagation::propagate_cg(
        &labelprop::graph::build_graph(&emb, &GraphConfig { k: 10, ..Default::default() }).unwrap().normalized,
        &propagation::build_label_matrix(&manifest),
        &PropagationConfig::default(),
    )
    .unwrap();
    // A zero pseudo weight ignores the propagated labels entirely.
    let cfg = TrainConfig { pseudo_weight: 0.0, seed: 4, ..Default::default() };
    let (with_pl, trace) = classifier::train(&init, &emb, &manifest, Some(&result), &cfg).unwrap();
    let (without, trace2) = classifier::train(&init, &emb, &manifest, None, &cfg).unwrap();
    assert!(trace.last().unwrap() < &trace[0], "{trace:?}");
    assert_eq!(trace, trace2);
    assert_eq!(with_pl, without);
}
