//! Alternating propagate / train / re-embed loop.
//!
//! Round 1 propagates over the graph built from the input embeddings. Each
//! later round trains the classifier on seeds plus the previous round's
//! pseudo-labels, rebuilds the graph from the classifier's hidden layer and
//! propagates again. Before the first pseudo-label round the classifier is
//! pre-trained on seeds alone. The loop stops early once consecutive rounds
//! agree on at least `agreement_stop` of the non-seed pseudo-labels.

use log::info;
use serde::{Deserialize, Serialize};

use super::{build_label_matrix, propagate_cg, PropagationConfig, PropagationResult};
use crate::classifier::{self, ClassifierParams, TrainConfig};
use crate::dataset::{DatasetManifest, EmbeddingMatrix, Role};
use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph, GraphConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub rounds: usize,
    /// Classifier hidden width.
    pub hidden: usize,
    /// Seed-only epochs before the first pseudo-label round (0 disables).
    pub pretrain_epochs: usize,
    pub agreement_stop: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self { rounds: 3, hidden: 64, pretrain_epochs: 10, agreement_stop: 0.995 }
    }
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    /// Result of the last round that ran.
    pub result: PropagationResult,
    /// `agreement_trace[r]` compares round `r + 2` with round `r + 1`.
    pub agreement_trace: Vec<f64>,
    /// Per-round training loss traces (pre-training included in the first).
    pub loss_traces: Vec<Vec<f64>>,
    pub rounds_run: usize,
    /// Trained classifier, if any training round ran.
    pub classifier: Option<ClassifierParams>,
    /// Graph used in the last round.
    pub graph: Graph,
}

/// Fraction of non-seed items whose pseudo-labels agree.
pub fn label_agreement(manifest: &DatasetManifest, a: &[Option<usize>], b: &[Option<usize>]) -> f64 {
    let (mut same, mut total) = (0usize, 0usize);
    for (i, item) in manifest.items().iter().enumerate() {
        if item.role != Role::Labeled {
            total += 1;
            same += usize::from(a[i] == b[i]);
        }
    }
    if total == 0 {
        1.0
    } else {
        same as f64 / total as f64
    }
}

pub fn iterate_propagation(
    emb: &EmbeddingMatrix,
    manifest: &DatasetManifest,
    graph_cfg: &GraphConfig,
    prop_cfg: &PropagationConfig,
    train_cfg: &TrainConfig,
    loop_cfg: &LoopConfig,
) -> Result<IterationOutcome> {
    if loop_cfg.rounds == 0 {
        return Err(Error::Param("rounds must be at least 1".into()));
    }
    if loop_cfg.hidden == 0 {
        return Err(Error::Param("hidden width must be at least 1".into()));
    }
    if manifest.len() != emb.n() {
        return Err(Error::Param("manifest and embeddings disagree on item count".into()));
    }
    train_cfg.validate()?;
    let y = build_label_matrix(manifest);

    let mut graph = build_graph(emb, graph_cfg)?;
    let mut result = propagate_cg(&graph.normalized, &y, prop_cfg)?;
    info!("round 1: propagated over {} edges", graph.affinity.nnz());

    let mut agreement_trace = Vec::new();
    let mut loss_traces = Vec::new();
    let mut params: Option<ClassifierParams> = None;
    let mut rounds_run = 1;

    for round in 2..=loop_cfg.rounds {
        let round_cfg = TrainConfig { seed: train_cfg.seed.wrapping_add(round as u64), ..train_cfg.clone() };
        let mut trace = Vec::new();
        let start = match params.take() {
            Some(p) => p,
            None => {
                let p = ClassifierParams::init(emb.d(), loop_cfg.hidden, manifest.num_classes(), train_cfg.seed);
                if loop_cfg.pretrain_epochs > 0 {
                    let pre_cfg = TrainConfig {
                        epochs: loop_cfg.pretrain_epochs,
                        pseudo_weight: 0.0,
                        ..round_cfg.clone()
                    };
                    let (p, t) = classifier::train(&p, emb, manifest, None, &pre_cfg)?;
                    trace.extend(t);
                    p
                } else {
                    p
                }
            }
        };
        let (trained, t) = classifier::train(&start, emb, manifest, Some(&result), &round_cfg)?;
        trace.extend(t);
        loss_traces.push(trace);

        let hidden = classifier::reembed(&trained, emb)?;
        params = Some(trained);
        graph = build_graph(&hidden, graph_cfg)?;
        let next = propagate_cg(&graph.normalized, &y, prop_cfg)?;
        let agreement = label_agreement(manifest, &result.pseudo_labels, &next.pseudo_labels);
        info!("round {round}: agreement with previous round {agreement:.4}");
        agreement_trace.push(agreement);
        result = next;
        rounds_run = round;
        if agreement >= loop_cfg.agreement_stop {
            break;
        }
    }

    Ok(IterationOutcome { result, agreement_trace, loss_traces, rounds_run, classifier: params, graph })
}
