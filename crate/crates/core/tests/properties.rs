mod common;

use labelprop::classifier::{self, ClassifierParams, TrainConfig};
use labelprop::dataset::{self, DatasetManifest, EmbeddingMatrix, ItemRecord, Role, SyntheticConfig};
use labelprop::evaluation::{self, Averaging, EvalOptions};
use labelprop::graph::{self, GraphConfig};
use labelprop::propagation::{self, PropagationConfig};
use proptest::prelude::*;

use common::random_case;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() }
}

/// Rows drawn from a coarse grid so exact similarity ties are common.
fn grid_embeddings() -> impl Strategy<Value = EmbeddingMatrix> {
    (3usize..60, 1usize..5).prop_flat_map(|(n, d)| {
        prop::collection::vec(prop::collection::vec(-2i8..=2, d), n).prop_map(move |rows| {
            let rows: Vec<Vec<f64>> = rows
                .into_iter()
                .map(|r| {
                    let mut r: Vec<f64> = r.into_iter().map(f64::from).collect();
                    if r.iter().all(|&v| v == 0.0) {
                        r[0] = 1.0;
                    }
                    r
                })
                .collect();
            EmbeddingMatrix::from_rows_f64(&rows).unwrap()
        })
    })
}

/// Full-sort reference kNN: descending similarity, ascending index.
fn brute_force_knn(emb: &EmbeddingMatrix, k: usize) -> Vec<Vec<usize>> {
    let z = emb.normalized().unwrap();
    (0..z.n())
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..z.n())
                .filter(|&j| j != i)
                .map(|j| (z.row(i).iter().zip(z.row(j)).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum(), j))
                .collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn knn_matches_brute_force(emb in grid_embeddings(), k_frac in 0.0f64..1.0) {
        let k = 1 + ((emb.n() - 2) as f64 * k_frac) as usize;
        let cfg = GraphConfig { k, gamma: 2.0, normalize_embeddings: true };
        let table = graph::knn_search(&emb, &cfg).unwrap();
        let reference = brute_force_knn(&emb, k);
        for (i, want) in reference.iter().enumerate() {
            let got: Vec<usize> = table.of(i).iter().map(|&(j, _)| j).collect();
            prop_assert_eq!(&got, want, "row {}", i);
        }
    }

    #[test]
    fn affinity_structure(emb in grid_embeddings(), k_frac in 0.0f64..1.0, gamma in 1.0f64..5.0) {
        let k = 1 + ((emb.n() - 2) as f64 * k_frac) as usize;
        let g = graph::build_graph(&emb, &GraphConfig { k, gamma, normalize_embeddings: true }).unwrap();
        for m in [&g.affinity, &g.normalized] {
            prop_assert!(m.is_symmetric());
            prop_assert!(m.has_zero_diagonal());
            prop_assert!(m.values().iter().all(|&v| v >= 0.0));
            for i in 0..m.n() {
                for (j, v) in m.row(i) {
                    prop_assert_eq!(m.get(j, i).to_bits(), v.to_bits());
                }
            }
        }
        prop_assert!(g.affinity.nnz() <= 2 * emb.n() * k);
        let rho = graph::estimate_spectral_radius(&g.normalized, 500, 1);
        prop_assert!(rho <= 1.0 + 1e-8, "rho = {}", rho);
    }

    #[test]
    fn cg_agrees_with_dense_oracle(seed in any::<u64>()) {
        let case = random_case(seed, 120);
        let g = graph::build_graph(&case.emb, &case.graph).unwrap();
        let y = propagation::build_label_matrix(&case.manifest);
        let cfg = PropagationConfig { alpha: case.alpha, tol: 1e-10, max_iter: 2000, class_mass_norm: false };
        let cg = propagation::propagate_cg(&g.normalized, &y, &cfg).unwrap();
        let dense = propagation::propagate_dense_oracle(&g.normalized, &y, &cfg).unwrap();
        prop_assert!(cg.scores.max_abs_diff(&dense) <= 1e-5);
        prop_assert!(dense.as_slice().iter().all(|&v| v >= 0.0));
        prop_assert!(cg.scores.as_slice().iter().all(|&v| v >= -1e-9));
        for st in &cg.cg_stats {
            prop_assert!(st.residual_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn label_scaling_scales_scores(seed in any::<u64>(), factor in 0.01f64..100.0) {
        let case = random_case(seed, 100);
        let g = graph::build_graph(&case.emb, &case.graph).unwrap();
        let y = propagation::build_label_matrix(&case.manifest);
        let cfg = PropagationConfig { alpha: case.alpha, tol: 1e-12, max_iter: 2000, class_mass_norm: false };
        let base = propagation::propagate_dense_oracle(&g.normalized, &y, &cfg).unwrap();
        let scaled = propagation::propagate_dense_oracle(&g.normalized, &y.scaled(factor), &cfg).unwrap();
        prop_assert!(base.scaled(factor).max_abs_diff(&scaled) <= 1e-9 * factor.max(1.0));
        let (a, _) = propagation::assign_pseudo_labels(&base).unwrap();
        let (b, _) = propagation::assign_pseudo_labels(&scaled).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn unreachable_nodes_stay_unassigned(per in 4usize..15, seed in any::<u64>()) {
        // Two blocks on orthogonal coordinates; only the first has seeds.
        let mut rows = Vec::new();
        let mut items = Vec::new();
        for comp in 0..2 {
            for t in 0..per {
                let mut r = vec![0.0; 4];
                let theta = 1.5 * (t as f64 + 0.5) / per as f64;
                r[2 * comp] = theta.cos();
                r[2 * comp + 1] = theta.sin();
                rows.push(r);
                let labeled = comp == 0 && t < 2;
                items.push(ItemRecord {
                    id: format!("{comp}/{t}"),
                    file_id: format!("{comp}/{t}"),
                    label: if labeled { Some(t) } else { None },
                    role: if labeled { Role::Labeled } else { Role::Unlabeled },
                });
            }
        }
        let emb = EmbeddingMatrix::from_rows_f64(&rows).unwrap();
        let manifest = DatasetManifest::new(vec!["a".into(), "b".into()], items).unwrap();
        let k = 1 + (seed as usize % (per - 1));
        let g = graph::build_graph(&emb, &GraphConfig { k, gamma: 3.0, normalize_embeddings: true }).unwrap();
        let y = propagation::build_label_matrix(&manifest);
        let r = propagation::propagate_cg(&g.normalized, &y, &PropagationConfig::default()).unwrap();
        for i in per..2 * per {
            prop_assert_eq!(r.pseudo_labels[i], None);
            prop_assert_eq!(r.confidence[i], 0.0);
            prop_assert!(r.scores.row(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn propagation_is_thread_count_independent(seed in any::<u64>()) {
        let case = random_case(seed, 150);
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let g = graph::build_graph(&case.emb, &case.graph).unwrap();
                let y = propagation::build_label_matrix(&case.manifest);
                let cfg = PropagationConfig { alpha: case.alpha, ..Default::default() };
                (g.normalized.clone(), propagation::propagate_cg(&g.normalized, &y, &cfg).unwrap())
            })
        };
        let (s1, r1) = run(1);
        let (s4, r4) = run(4);
        prop_assert_eq!(s1, s4);
        prop_assert_eq!(r1, r4);
    }
}

fn predictions() -> impl Strategy<Value = (usize, Vec<(Option<usize>, usize)>)> {
    (2usize..6).prop_flat_map(|c| {
        let pair = (prop::option::weighted(0.9, 0..c), 0..c);
        (Just(c), prop::collection::vec(pair, 1..80))
    })
}

fn names(c: usize) -> Vec<String> {
    (0..c).map(|j| format!("k{j}")).collect()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn metrics_ignore_item_order((c, data) in predictions(), shuffle_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let classes = names(c);
        let (p, t): (Vec<_>, Vec<_>) = data.iter().copied().unzip();
        let base = evaluation::chunk_metrics(&p, &t, &classes, EvalOptions::default()).unwrap();
        let mut shuffled = data.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
        let (p2, t2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        let other = evaluation::chunk_metrics(&p2, &t2, &classes, EvalOptions::default()).unwrap();
        prop_assert!((base.accuracy - other.accuracy).abs() < 1e-12);
        prop_assert!((base.macro_f1 - other.macro_f1).abs() < 1e-12);
        prop_assert!((base.macro_precision - other.macro_precision).abs() < 1e-12);
        prop_assert!((base.macro_recall - other.macro_recall).abs() < 1e-12);
        for (a, b) in base.per_class.iter().zip(&other.per_class) {
            prop_assert_eq!(a.support, b.support);
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_is_mean_indicator((c, data) in predictions()) {
        let (p, t): (Vec<_>, Vec<_>) = data.iter().copied().unzip();
        let r = evaluation::chunk_metrics(&p, &t, &names(c), EvalOptions::default()).unwrap();
        let hits = data.iter().filter(|(p, t)| *p == Some(*t)).count();
        prop_assert!((r.accuracy - hits as f64 / data.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn single_chunk_files_match_chunk_metrics((c, data) in predictions(), weighted in any::<bool>()) {
        let (p, t): (Vec<_>, Vec<_>) = data.iter().copied().unzip();
        let ids: Vec<String> = (0..data.len()).map(|i| format!("f{i}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let opts = EvalOptions {
            others_class: None,
            averaging: if weighted { Averaging::Weighted } else { Averaging::Macro },
        };
        let chunk = evaluation::chunk_metrics(&p, &t, &names(c), opts).unwrap();
        let file = evaluation::file_metrics(&p, &t, &id_refs, &names(c), opts).unwrap();
        prop_assert_eq!(chunk.accuracy, file.accuracy);
        prop_assert_eq!(chunk.macro_f1, file.macro_f1);
        prop_assert_eq!(chunk.per_class, file.per_class);
    }

    #[test]
    fn relabeling_classes_permutes_rows((c, data) in predictions(), rot in 1usize..5) {
        let perm = |j: usize| (j + rot) % c;
        let classes = names(c);
        let mut permuted_names = vec![String::new(); c];
        for j in 0..c {
            permuted_names[perm(j)] = classes[j].clone();
        }
        let (p, t): (Vec<_>, Vec<_>) = data.iter().copied().unzip();
        let p2: Vec<_> = p.iter().map(|v| v.map(perm)).collect();
        let t2: Vec<_> = t.iter().map(|&v| perm(v)).collect();
        let a = evaluation::chunk_metrics(&p, &t, &classes, EvalOptions::default()).unwrap();
        let b = evaluation::chunk_metrics(&p2, &t2, &permuted_names, EvalOptions::default()).unwrap();
        prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        prop_assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
        prop_assert!((a.macro_recall - b.macro_recall).abs() < 1e-12);
        for j in 0..c {
            prop_assert_eq!(&a.per_class[j], &b.per_class[perm(j)]);
        }
    }
}

fn classifier_instance() -> impl Strategy<Value = (ClassifierParams, EmbeddingMatrix, Vec<usize>, Vec<f64>)> {
    (1usize..8, 1usize..8, 2usize..8, 1usize..10, any::<u64>()).prop_flat_map(|(d, h, c, n, seed)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), n),
            prop::collection::vec(0..c, n),
            prop::collection::vec(0.05f64..3.0, n),
        )
            .prop_map(move |(rows, targets, weights)| {
                let mut p = ClassifierParams::init(d, h, c, seed);
                p.b1.iter_mut().enumerate().for_each(|(j, b)| *b = 0.1 * j as f64);
                (p, EmbeddingMatrix::from_rows_f64(&rows).unwrap(), targets, weights)
            })
    })
}

fn max_block_diff(a: &ClassifierParams, b: &ClassifierParams) -> f64 {
    a.blocks()
        .iter()
        .zip(b.blocks())
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn doubling_weights_changes_nothing((p, emb, t, w) in classifier_instance()) {
        let (l1, g1) = classifier::loss_and_grad(&p, &emb, &t, &w).unwrap();
        let w2: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
        let (l2, g2) = classifier::loss_and_grad(&p, &emb, &t, &w2).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
        prop_assert!(max_block_diff(&g1, &g2) <= 1e-12);
    }

    #[test]
    fn shifting_logits_changes_nothing((p, emb, t, w) in classifier_instance(), shift in -50.0f64..50.0) {
        let (l1, g1) = classifier::loss_and_grad(&p, &emb, &t, &w).unwrap();
        let mut shifted = p.clone();
        shifted.b2.iter_mut().for_each(|b| *b += shift);
        let (l2, g2) = classifier::loss_and_grad(&shifted, &emb, &t, &w).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-9);
        prop_assert!(max_block_diff(&g1, &g2) <= 1e-9);
    }

    #[test]
    fn training_is_deterministic((p, emb, t, w) in classifier_instance(), seed in any::<u64>()) {
        let cfg = TrainConfig { epochs: 5, batch_size: 3, seed, ..Default::default() };
        let a = classifier::train_weighted(&p, &emb, &t, &w, &cfg).unwrap();
        let b = classifier::train_weighted(&p, &emb, &t, &w, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn embeddings_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..30)) {
        let emb = EmbeddingMatrix::from_rows_f64(&rows).unwrap();
        let mut bytes = Vec::new();
        emb.write_to(&mut bytes).unwrap();
        let back = EmbeddingMatrix::read_from(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &emb);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        prop_assert_eq!(bytes, again);
    }

    #[test]
    fn synthetic_sets_round_trip_and_are_stratified(
        n_per_class in 5usize..40,
        classes in 2usize..6,
        frac in 0.2f64..1.0,
        seed in any::<u64>(),
    ) {
        let cfg = SyntheticConfig {
            n_per_class, num_classes: classes, dim: 4, separation: 3.0, label_fraction: frac, seed, chunks_per_file: 3,
        };
        let (emb, manifest) = dataset::generate_synthetic(&cfg).unwrap();
        let mut per_class = vec![0usize; classes];
        for it in manifest.items().iter().filter(|it| it.role == Role::Labeled) {
            per_class[it.label.unwrap()] += 1;
        }
        prop_assert!(per_class.iter().all(|&k| k == cfg.labeled_per_class()));

        let mut bytes = Vec::new();
        manifest.write_to(&mut bytes).unwrap();
        let back = DatasetManifest::read_from(&mut bytes.as_slice(), Some(emb.n())).unwrap();
        prop_assert_eq!(&back, &manifest);
        prop_assert_eq!(dataset::generate_synthetic(&cfg).unwrap(), (emb, manifest));
    }
}
