//! One-hidden-layer network trained on seeds plus weighted pseudo-labels.
//!
//! `hidden = relu(x W1 + b1)`, `scores = hidden W2 + b2`. The loss is the
//! weighted mean cross-entropy
//!
//! ```text
//! L = sum_i w_i * CE(softmax(scores_i), t_i) / sum_i w_i
//! ```
//!
//! where seeds carry weight 1 and pseudo-labeled items `lambda_p` times
//! their propagation confidence. Gradients are computed by hand-written
//! backpropagation. The hidden layer doubles as the re-embedding used to
//! rebuild the graph between propagation rounds.
//!
//! Checkpoints are little-endian:
//!
//! ```text
//! "LPMC" | u32 version = 1 | u64 d | u64 h | u64 c | W1 (d*h) | b1 (h) | W2 (h*c) | b2 (c)
//! ```
//!
//! with all parameter blocks stored as f32.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, EmbeddingMatrix, Role};
use crate::error::{Error, Result};
use crate::io::{self as bio, write_atomic};
use crate::propagation::PropagationResult;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LPMC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Network weights. `w1` is `d x h` and `w2` is `h x c`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub d: usize,
    pub h: usize,
    pub c: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ClassifierParams {
    pub fn zeros(d: usize, h: usize, c: usize) -> Self {
        Self { d, h, c, w1: vec![0.0; d * h], b1: vec![0.0; h], w2: vec![0.0; h * c], b2: vec![0.0; c] }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
    pub fn init(d: usize, h: usize, c: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(d, h, c);
        let b1 = 1.0 / (d as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = rng.random_range(-b1..=b1));
        let b2 = 1.0 / (h as f64).sqrt();
        p.w2.iter_mut().for_each(|w| *w = rng.random_range(-b2..=b2));
        p
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.w1.len() == self.d * self.h
            && self.b1.len() == self.h
            && self.w2.len() == self.h * self.c
            && self.b2.len() == self.c;
        if ok {
            Ok(())
        } else {
            Err(Error::Param("classifier parameter blocks do not match (d, h, c)".into()))
        }
    }

    pub fn write_to(&self, w: &mut dyn Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for dim in [self.d, self.h, self.c] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for block in self.blocks() {
            bio::write_f32s(w, block.iter().map(|&v| v as f32))?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut dyn Read) -> Result<Self> {
        const WHAT: &str = "model checkpoint";
        bio::read_magic(r, CHECKPOINT_MAGIC, WHAT)?;
        let version = bio::read_u32(r, WHAT)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("{WHAT}: unsupported version {version}")));
        }
        let d = bio::read_u64(r, WHAT)? as usize;
        let h = bio::read_u64(r, WHAT)? as usize;
        let c = bio::read_u64(r, WHAT)? as usize;
        let mut p = Self::zeros(0, 0, 0);
        (p.d, p.h, p.c) = (d, h, c);
        let sizes = [d.saturating_mul(h), h, h.saturating_mul(c), c];
        for (block, len) in p.blocks_mut().into_iter().zip(sizes) {
            *block = bio::read_f32_vec(r, len, WHAT)?.into_iter().map(f64::from).collect();
        }
        bio::expect_eof(r, WHAT)?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write_to(w))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Activations for a batch of inputs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub n: usize,
    /// `n x h`, post-ReLU.
    pub hidden: Vec<f64>,
    /// `n x c` logits.
    pub scores: Vec<f64>,
}

/// Pre-activation, activation and logits for one input.
fn forward_one(p: &ClassifierParams, x: &[f32], pre: &mut [f64], hidden: &mut [f64], scores: &mut [f64]) {
    pre.copy_from_slice(&p.b1);
    for (k, &xk) in x.iter().enumerate() {
        let xk = f64::from(xk);
        if xk != 0.0 {
            for (pj, wkj) in pre.iter_mut().zip(&p.w1[k * p.h..(k + 1) * p.h]) {
                *pj += xk * wkj;
            }
        }
    }
    for (a, &z) in hidden.iter_mut().zip(pre.iter()) {
        *a = z.max(0.0);
    }
    scores.copy_from_slice(&p.b2);
    for (j, &a) in hidden.iter().enumerate() {
        if a != 0.0 {
            for (s, w) in scores.iter_mut().zip(&p.w2[j * p.c..(j + 1) * p.c]) {
                *s += a * w;
            }
        }
    }
}

fn check_input(p: &ClassifierParams, emb: &EmbeddingMatrix) -> Result<()> {
    p.check_shapes()?;
    if emb.d() != p.d {
        return Err(Error::Param(format!(
            "embedding dimension {} does not match classifier input {}",
            emb.d(),
            p.d
        )));
    }
    Ok(())
}

pub fn forward(params: &ClassifierParams, emb: &EmbeddingMatrix) -> Result<Forward> {
    check_input(params, emb)?;
    let (n, h, c) = (emb.n(), params.h, params.c);
    let mut hidden = vec![0.0; n * h];
    let mut scores = vec![0.0; n * c];
    let mut pre = vec![0.0; h];
    for i in 0..n {
        forward_one(
            params,
            emb.row(i),
            &mut pre,
            &mut hidden[i * h..(i + 1) * h],
            &mut scores[i * c..(i + 1) * c],
        );
    }
    Ok(Forward { n, hidden, scores })
}

/// Numerically stable softmax in place; returns log-sum-exp.
fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
    max + sum.ln()
}

fn check_targets(p: &ClassifierParams, n: usize, targets: &[usize], weights: &[f64]) -> Result<()> {
    if targets.len() != n || weights.len() != n {
        return Err(Error::Param(format!(
            "expected {n} targets and weights, got {} and {}",
            targets.len(),
            weights.len()
        )));
    }
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Param(format!("weight {i} must be finite and non-negative")));
    }
    if let Some(i) = targets.iter().zip(weights).position(|(&t, &w)| w > 0.0 && t >= p.c) {
        return Err(Error::Param(format!("target {i} out of range for {} classes", p.c)));
    }
    Ok(())
}

/// Weighted mean loss and its gradient over the items in `batch`.
fn batch_loss_and_grad(
    p: &ClassifierParams,
    emb: &EmbeddingMatrix,
    batch: &[usize],
    targets: &[usize],
    weights: &[f64],
) -> Result<(f64, ClassifierParams, f64)> {
    let total: f64 = batch.iter().map(|&i| weights[i]).sum();
    if total <= 0.0 {
        return Err(Error::Param("sum of example weights is zero".into()));
    }
    let (h, c) = (p.h, p.c);
    let mut grad = ClassifierParams::zeros(p.d, h, c);
    let mut pre = vec![0.0; h];
    let mut hidden = vec![0.0; h];
    let mut probs = vec![0.0; c];
    let mut dhidden = vec![0.0; h];
    let mut loss = 0.0;
    for &i in batch {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let x = emb.row(i);
        forward_one(p, x, &mut pre, &mut hidden, &mut probs);
        let target_logit = probs[targets[i]];
        let lse = softmax_in_place(&mut probs);
        loss += w * (lse - target_logit);

        let scale = w / total;
        // dscores = (softmax - onehot) * w / W, stored in probs.
        probs[targets[i]] -= 1.0;
        probs.iter_mut().for_each(|g| *g *= scale);
        for (g, &d) in grad.b2.iter_mut().zip(&probs) {
            *g += d;
        }
        for (k, &a) in hidden.iter().enumerate() {
            let w2_row = &p.w2[k * c..(k + 1) * c];
            let acc: f64 = w2_row.iter().zip(&probs).map(|(w, d)| w * d).sum();
            dhidden[k] = if pre[k] > 0.0 { acc } else { 0.0 };
            if a != 0.0 {
                for (g, &d) in grad.w2[k * c..(k + 1) * c].iter_mut().zip(&probs) {
                    *g += a * d;
                }
            }
        }
        for (k, &dk) in dhidden.iter().enumerate() {
            grad.b1[k] += dk;
        }
        for (m, &xm) in x.iter().enumerate() {
            let xm = f64::from(xm);
            if xm != 0.0 {
                for (g, &dk) in grad.w1[m * h..(m + 1) * h].iter_mut().zip(&dhidden) {
                    *g += xm * dk;
                }
            }
        }
    }
    Ok((loss / total, grad, total))
}

/// Weighted mean cross-entropy over all items and its exact gradient.
pub fn loss_and_grad(
    params: &ClassifierParams,
    emb: &EmbeddingMatrix,
    targets: &[usize],
    weights: &[f64],
) -> Result<(f64, ClassifierParams)> {
    check_input(params, emb)?;
    check_targets(params, emb.n(), targets, weights)?;
    let all: Vec<usize> = (0..emb.n()).collect();
    let (loss, grad, _) = batch_loss_and_grad(params, emb, &all, targets, weights)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Multiplier on pseudo-label example weights (`lambda_p`).
    pub pseudo_weight: f64,
    /// Give every pseudo-label weight `lambda_p` instead of `lambda_p * confidence`.
    pub uniform_pseudo_weights: bool,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 50,
            batch_size: 128,
            pseudo_weight: 1.0,
            uniform_pseudo_weights: false,
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Param(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Param("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be at least 1".into()));
        }
        if !(self.pseudo_weight.is_finite() && self.pseudo_weight >= 0.0) {
            return Err(Error::Param(format!("pseudo weight must be >= 0, got {}", self.pseudo_weight)));
        }
        Ok(())
    }
}

/// Borrowed pseudo-labels and their confidences, one entry per item.
#[derive(Debug, Clone, Copy)]
pub struct PseudoLabels<'a> {
    pub labels: &'a [Option<usize>],
    pub confidence: &'a [f64],
}

impl<'a> From<&'a PropagationResult> for PseudoLabels<'a> {
    fn from(r: &'a PropagationResult) -> Self {
        Self { labels: &r.pseudo_labels, confidence: &r.confidence }
    }
}

/// Targets and example weights from seeds and (optionally) pseudo-labels.
///
/// Seeds get their true label with weight 1. Every other item with an
/// assigned pseudo-label gets `lambda_p * confidence` (or `lambda_p` with
/// uniform weights); unassigned items get weight 0.
pub fn training_targets(
    manifest: &DatasetManifest,
    pseudo: Option<PseudoLabels<'_>>,
    cfg: &TrainConfig,
) -> (Vec<usize>, Vec<f64>) {
    let n = manifest.len();
    let mut targets = vec![0; n];
    let mut weights = vec![0.0; n];
    for (i, item) in manifest.items().iter().enumerate() {
        if item.role == Role::Labeled {
            targets[i] = item.label.expect("labeled items carry labels");
            weights[i] = 1.0;
        } else if let Some(pl) = pseudo {
            if let Some(label) = pl.labels[i] {
                targets[i] = label;
                let certainty = if cfg.uniform_pseudo_weights { 1.0 } else { pl.confidence[i] };
                weights[i] = cfg.pseudo_weight * certainty;
            }
        }
    }
    (targets, weights)
}

struct AdamState {
    m: ClassifierParams,
    v: ClassifierParams,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_step(p: &mut ClassifierParams, g: &ClassifierParams, lr: f64, adam: Option<&mut AdamState>) {
    match adam {
        None => {
            for (pb, gb) in p.blocks_mut().into_iter().zip(g.blocks()) {
                for (x, dx) in pb.iter_mut().zip(gb) {
                    *x -= lr * dx;
                }
            }
        }
        Some(st) => {
            st.t += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(st.t);
            let c2 = 1.0 - ADAM_BETA2.powi(st.t);
            let blocks = p.blocks_mut().into_iter().zip(g.blocks()).zip(st.m.blocks_mut()).zip(st.v.blocks_mut());
            for (((pb, gb), mb), vb) in blocks {
                for k in 0..pb.len() {
                    mb[k] = ADAM_BETA1 * mb[k] + (1.0 - ADAM_BETA1) * gb[k];
                    vb[k] = ADAM_BETA2 * vb[k] + (1.0 - ADAM_BETA2) * gb[k] * gb[k];
                    pb[k] -= lr * (mb[k] / c1) / ((vb[k] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Mini-batch training on explicit targets and weights.
///
/// Items with zero weight are skipped entirely. Batches are drawn from a
/// per-epoch shuffle driven by `cfg.seed`. Returns the final parameters and
/// the weighted mean loss of each epoch.
pub fn train_weighted(
    params: &ClassifierParams,
    emb: &EmbeddingMatrix,
    targets: &[usize],
    weights: &[f64],
    cfg: &TrainConfig,
) -> Result<(ClassifierParams, Vec<f64>)> {
    cfg.validate()?;
    check_input(params, emb)?;
    check_targets(params, emb.n(), targets, weights)?;
    let mut order: Vec<usize> = (0..emb.n()).filter(|&i| weights[i] > 0.0).collect();
    if order.is_empty() {
        return Err(Error::Param("no training examples with positive weight".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = params.clone();
    let mut adam = match cfg.optimizer {
        Optimizer::Sgd => None,
        Optimizer::Adam => Some(AdamState {
            m: ClassifierParams::zeros(p.d, p.h, p.c),
            v: ClassifierParams::zeros(p.d, p.h, p.c),
            t: 0,
        }),
    };
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad, w) = batch_loss_and_grad(&p, emb, batch, targets, weights)?;
            if !loss.is_finite() {
                return Err(Error::Train { epoch, message: format!("loss became {loss}") });
            }
            apply_step(&mut p, &grad, cfg.learning_rate, adam.as_mut());
            if !p.is_finite() {
                return Err(Error::Train { epoch, message: "parameters became non-finite".into() });
            }
            loss_sum += loss * w;
            weight_sum += w;
        }
        trace.push(loss_sum / weight_sum);
    }
    Ok((p, trace))
}

/// Trains on the manifest's seeds plus the pseudo-labels of `propagation`.
pub fn train(
    params: &ClassifierParams,
    emb: &EmbeddingMatrix,
    manifest: &DatasetManifest,
    propagation: Option<&PropagationResult>,
    cfg: &TrainConfig,
) -> Result<(ClassifierParams, Vec<f64>)> {
    if manifest.len() != emb.n() {
        return Err(Error::Param("manifest and embeddings disagree on item count".into()));
    }
    train_with_pseudo(params, emb, manifest, propagation.map(PseudoLabels::from), cfg)
}

/// Like [`train`], with pseudo-labels supplied directly (e.g. read from a labels file).
pub fn train_with_pseudo(
    params: &ClassifierParams,
    emb: &EmbeddingMatrix,
    manifest: &DatasetManifest,
    pseudo: Option<PseudoLabels<'_>>,
    cfg: &TrainConfig,
) -> Result<(ClassifierParams, Vec<f64>)> {
    if manifest.len() != emb.n() {
        return Err(Error::Param("manifest and embeddings disagree on item count".into()));
    }
    if let Some(pl) = pseudo {
        if pl.labels.len() != emb.n() || pl.confidence.len() != emb.n() {
            return Err(Error::Param("pseudo-labels do not cover every item".into()));
        }
    }
    let (targets, weights) = training_targets(manifest, pseudo, cfg);
    train_weighted(params, emb, &targets, &weights, cfg)
}

/// Hidden-layer activations with unit-normalized rows.
pub fn reembed(params: &ClassifierParams, emb: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let fwd = forward(params, emb)?;
    let hidden = EmbeddingMatrix::new(fwd.n, params.h, fwd.hidden.iter().map(|&v| v as f32).collect())?;
    hidden.normalized().map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("re-embedding has all-zero hidden activations: {msg}")),
        other => other,
    })
}

/// Predicted class per row (argmax of logits, first index on ties).
pub fn predict(params: &ClassifierParams, emb: &EmbeddingMatrix) -> Result<Vec<usize>> {
    let fwd = forward(params, emb)?;
    Ok(fwd
        .scores
        .chunks_exact(params.c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}
