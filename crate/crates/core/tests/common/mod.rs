//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use labelprop::dataset::{DatasetManifest, EmbeddingMatrix, ItemRecord, Role};
use labelprop::graph::GraphConfig;
use labelprop::sparse::SparseAffinity;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const ALPHAS: [f64; 3] = [0.5, 0.9, 0.99];

/// A small random labeled point cloud plus graph settings.
pub struct Case {
    pub emb: EmbeddingMatrix,
    pub manifest: DatasetManifest,
    pub graph: GraphConfig,
    pub alpha: f64,
}

/// Gaussian clusters with 1 to 3 seeds per class.
pub fn random_case(seed: u64, max_n: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(2..=5);
    let d = rng.random_range(2..=8);
    let n = rng.random_range((4 * c).max(12)..=max_n);
    let k = rng.random_range(1..=10usize.min(n - 1));
    let spread: f64 = rng.random_range(0.5..3.0);
    let centers: Vec<Vec<f64>> =
        (0..c).map(|_| (0..d).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let mut rows = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % c;
        rows.push(centers[class].iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>());
        truth.push(class);
    }
    let seeds_per_class: usize = rng.random_range(1..=3);
    let items = (0..n)
        .map(|i| ItemRecord {
            id: format!("n{i}"),
            file_id: format!("n{i}"),
            label: Some(truth[i]),
            role: if i / c < seeds_per_class { Role::Labeled } else { Role::Eval },
        })
        .collect();
    let classes = (0..c).map(|j| format!("c{j}")).collect();
    Case {
        emb: EmbeddingMatrix::from_rows_f64(&rows).unwrap(),
        manifest: DatasetManifest::new(classes, items).unwrap(),
        graph: GraphConfig { k, gamma: rng.random_range(1.0..4.0), normalize_embeddings: true },
        alpha: ALPHAS[rng.random_range(0..3)],
    }
}

pub fn dense(s: &SparseAffinity) -> DMatrix<f64> {
    DMatrix::from_row_slice(s.n(), s.n(), &s.to_dense())
}

/// Largest absolute eigenvalue from a full symmetric eigendecomposition.
pub fn dense_spectral_radius(s: &SparseAffinity) -> f64 {
    dense(s).symmetric_eigen().eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn truth(manifest: &DatasetManifest) -> Vec<usize> {
    manifest.items().iter().map(|it| it.label.unwrap()).collect()
}

/// Accuracy of `pred` over the non-seed items; unassigned counts as wrong.
pub fn non_seed_accuracy(manifest: &DatasetManifest, pred: &[Option<usize>]) -> f64 {
    let (mut hit, mut total) = (0, 0);
    for (it, p) in manifest.items().iter().zip(pred) {
        if it.role != Role::Labeled {
            total += 1;
            hit += usize::from(*p == it.label);
        }
    }
    hit as f64 / total as f64
}

/// Each item takes the label of its most cosine-similar seed.
pub fn nearest_seed_labels(emb: &EmbeddingMatrix, manifest: &DatasetManifest) -> Vec<Option<usize>> {
    let z = emb.normalized().unwrap();
    let seeds: Vec<(usize, usize)> = manifest
        .items()
        .iter()
        .enumerate()
        .filter(|(_, it)| it.role == Role::Labeled)
        .map(|(i, it)| (i, it.label.unwrap()))
        .collect();
    (0..z.n())
        .map(|i| {
            let mut best = (f64::NEG_INFINITY, None);
            for &(s, label) in &seeds {
                let sim: f64 = z.row(i).iter().zip(z.row(s)).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                if sim > best.0 {
                    best = (sim, Some(label));
                }
            }
            best.1
        })
        .collect()
}

/// Every file under `dir`, sorted by name, with its bytes.
pub fn dir_contents(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}
