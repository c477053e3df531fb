//! Embeddings, label manifests and the synthetic blob generator.
//!
//! On disk an embedding matrix is a little-endian binary blob:
//!
//! ```text
//! "LPEM" | u32 version = 1 | u64 n | u64 d | n*d f32, row-major
//! ```
//!
//! A manifest is JSON Lines. The first line is a header carrying the ordered
//! class list, every following line describes one item in embedding row
//! order:
//!
//! ```text
//! {"classes":["Bhairav","Yaman","Others"]}
//! {"id":"a-001","file_id":"a","role":"labeled","label":"Yaman"}
//! {"id":"a-002","file_id":"a","role":"unlabeled"}
//! {"id":"b-001","file_id":"b","role":"eval","label":"Others"}
//! ```
//!
//! Eval items keep their ground truth in the manifest but are treated as
//! unlabeled nodes during propagation.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self as bio, write_atomic};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"LPEM";
pub const EMBEDDING_VERSION: u32 = 1;

/// Dense `n x d` matrix of per-item feature vectors, stored row-major as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Wraps row-major data, checking shape and finiteness.
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Data(format!("embedding matrix must be non-empty, got {n}x{d}")));
        }
        if data.len() != n * d {
            return Err(Error::Data(format!(
                "embedding data has {} values, expected {n}x{d} = {}",
                data.len(),
                n * d
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite embedding value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { n, d, data })
    }

    /// Builds a matrix from f64 rows, rounding to f32.
    pub fn from_rows_f64(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Data("ragged embedding rows".into()));
        }
        let data = rows.iter().flatten().map(|&v| v as f32).collect();
        Self::new(rows.len(), d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    /// Returns a copy with every row scaled to unit Euclidean norm.
    ///
    /// Rows with zero norm cannot be normalized; all of them are listed in
    /// the returned `Error::Data`.
    pub fn normalized(&self) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        let mut zero_rows = Vec::new();
        for (i, row) in self.rows().enumerate() {
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if norm == 0.0 {
                zero_rows.push(i);
                data.extend(std::iter::repeat_n(0.0, self.d));
            } else {
                data.extend(row.iter().map(|&v| (f64::from(v) / norm) as f32));
            }
        }
        if !zero_rows.is_empty() {
            return Err(Error::Data(format!("zero-norm embedding rows: {}", list_rows(&zero_rows))));
        }
        Ok(Self { n: self.n, d: self.d, data })
    }

    pub fn read_from(r: &mut dyn Read) -> Result<Self> {
        const WHAT: &str = "embedding file";
        bio::read_magic(r, EMBEDDING_MAGIC, WHAT)?;
        let version = bio::read_u32(r, WHAT)?;
        if version != EMBEDDING_VERSION {
            return Err(Error::Format(format!("{WHAT}: unsupported version {version}")));
        }
        let n = bio::read_u64(r, WHAT)? as usize;
        let d = bio::read_u64(r, WHAT)? as usize;
        if n == 0 || d == 0 {
            return Err(Error::Format(format!("{WHAT}: empty shape {n}x{d}")));
        }
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Error::Format(format!("{WHAT}: shape {n}x{d} overflows")))?;
        let data = bio::read_f32_vec(r, len, WHAT)?;
        bio::expect_eof(r, WHAT)?;
        Self::new(n, d, data)
    }

    pub fn write_to(&self, w: &mut dyn Write) -> Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.d as u64).to_le_bytes())?;
        bio::write_f32s(w, self.data.iter().copied())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write_to(w))
    }
}

/// Reads an embedding file from disk.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let mut r = BufReader::new(File::open(path)?);
    EmbeddingMatrix::read_from(&mut r)
}

/// Writes an embedding file atomically.
pub fn write_embeddings(path: &Path, emb: &EmbeddingMatrix) -> Result<()> {
    emb.save(path)
}

fn list_rows(rows: &[usize]) -> String {
    const SHOWN: usize = 20;
    let mut s = rows.iter().take(SHOWN).map(usize::to_string).collect::<Vec<_>>().join(", ");
    if rows.len() > SHOWN {
        s.push_str(&format!(" ... ({} total)", rows.len()));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Labeled,
    Unlabeled,
    /// Has ground truth for scoring, withheld from propagation.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemRecord {
    pub id: String,
    pub file_id: String,
    pub label: Option<usize>,
    pub role: Role,
}

/// Ordered item records plus the class list, aligned with embedding rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    classes: Vec<String>,
    items: Vec<ItemRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file_id: Option<String>,
    role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

impl DatasetManifest {
    pub fn new(classes: Vec<String>, items: Vec<ItemRecord>) -> Result<Self> {
        let m = Self { classes, items };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Data("manifest declares no classes".into()));
        }
        let mut names = HashSet::new();
        for c in &self.classes {
            if !names.insert(c.as_str()) {
                return Err(Error::Data(format!("duplicate class name {c:?}")));
            }
        }
        let mut ids = HashSet::new();
        for item in &self.items {
            if !ids.insert(item.id.as_str()) {
                return Err(Error::Data(format!("duplicate item id {:?}", item.id)));
            }
            if item.file_id.is_empty() {
                return Err(Error::Data(format!("item {:?} has an empty file id", item.id)));
            }
            match (item.role, item.label) {
                (Role::Labeled | Role::Eval, None) => {
                    return Err(Error::Data(format!(
                        "item {:?} has role {:?} but no label",
                        item.id, item.role
                    )))
                }
                (Role::Unlabeled, Some(_)) => {
                    return Err(Error::Data(format!("unlabeled item {:?} carries a label", item.id)))
                }
                (_, Some(l)) if l >= self.classes.len() => {
                    return Err(Error::Data(format!(
                        "item {:?} label index {l} out of range for {} classes",
                        item.id,
                        self.classes.len()
                    )))
                }
                _ => {}
            }
        }
        if self.labeled_count() == 0 {
            return Err(Error::Data("manifest has no labeled items".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of items with role `labeled` (the seed set).
    pub fn labeled_count(&self) -> usize {
        self.items.iter().filter(|i| i.role == Role::Labeled).count()
    }

    /// Labels visible to propagation: present only for role `labeled`.
    pub fn seed_labels(&self) -> Vec<Option<usize>> {
        self.items
            .iter()
            .map(|i| if i.role == Role::Labeled { i.label } else { None })
            .collect()
    }

    pub fn eval_indices(&self) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, i)| i.role == Role::Eval)
            .map(|(k, _)| k)
            .collect()
    }

    /// Index of the catch-all "Others" class, if the manifest declares one.
    pub fn others_class(&self) -> Option<usize> {
        self.classes.iter().position(|c| c.eq_ignore_ascii_case("others"))
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn read_from(r: &mut dyn BufRead, n: Option<usize>) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter_map(|(k, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((k + 1, other)),
        });
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Data("manifest is empty (missing header line)".into()))?;
        let header: Header = serde_json::from_str(&header?)
            .map_err(|e| Error::Data(format!("manifest header: {e}")))?;
        let classes = header.classes;

        let mut items = Vec::new();
        for (line_no, line) in lines {
            let raw: RawRecord = serde_json::from_str(&line?)
                .map_err(|e| Error::Data(format!("manifest line {line_no}: {e}")))?;
            let label = match raw.label {
                None => None,
                Some(name) => Some(classes.iter().position(|c| *c == name).ok_or_else(|| {
                    Error::Data(format!("manifest line {line_no}: unknown class {name:?}"))
                })?),
            };
            let file_id = raw.file_id.unwrap_or_else(|| raw.id.clone());
            items.push(ItemRecord { id: raw.id, file_id, label, role: raw.role });
        }
        if let Some(n) = n {
            if items.len() != n {
                return Err(Error::Data(format!(
                    "manifest has {} items but the embedding matrix has {n} rows",
                    items.len()
                )));
            }
        }
        Self::new(classes, items)
    }

    pub fn write_to(&self, w: &mut dyn Write) -> Result<()> {
        serde_json::to_writer(&mut *w, &Header { classes: self.classes.clone() })?;
        w.write_all(b"\n")?;
        for item in &self.items {
            let raw = RawRecord {
                id: item.id.clone(),
                file_id: Some(item.file_id.clone()),
                role: item.role,
                label: item.label.map(|l| self.classes[l].clone()),
            };
            serde_json::to_writer(&mut *w, &raw)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write_to(w))
    }
}

/// Reads a manifest and checks it describes exactly `n` items.
pub fn load_manifest(path: &Path, n: usize) -> Result<DatasetManifest> {
    let mut r = BufReader::new(File::open(path)?);
    DatasetManifest::read_from(&mut r, Some(n))
}

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_per_class: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub label_fraction: f64,
    pub seed: u64,
    /// Consecutive same-class items sharing one parent file id.
    pub chunks_per_file: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_per_class: 50,
            num_classes: 3,
            dim: 16,
            separation: 8.0,
            label_fraction: 0.02,
            seed: 0,
            chunks_per_file: 1,
        }
    }
}

impl SyntheticConfig {
    /// Labeled items per class: `floor(label_fraction * n_per_class)`.
    pub fn labeled_per_class(&self) -> usize {
        // The epsilon absorbs products like 0.29 * 100 = 28.999999999999996.
        (self.label_fraction * self.n_per_class as f64 + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Param(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.dim < 2 {
            return Err(Error::Param(format!("need dimension >= 2, got {}", self.dim)));
        }
        if self.n_per_class == 0 {
            return Err(Error::Param("n_per_class must be positive".into()));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return Err(Error::Param(format!("separation must be > 0, got {}", self.separation)));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Param(format!(
                "label_fraction must lie in (0, 1], got {}",
                self.label_fraction
            )));
        }
        if self.chunks_per_file == 0 {
            return Err(Error::Param("chunks_per_file must be positive".into()));
        }
        if self.labeled_per_class() == 0 {
            return Err(Error::Param(format!(
                "label_fraction {} yields no labeled items among {} per class",
                self.label_fraction, self.n_per_class
            )));
        }
        Ok(())
    }
}

/// Cluster centers `sep / sqrt(2) * e_j` when `c <= d` (all pairwise
/// distances exactly `sep`), otherwise Gaussian draws rescaled so the closest
/// pair sits at distance `sep`.
fn centroids(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let (c, d, sep) = (cfg.num_classes, cfg.dim, cfg.separation);
    if c <= d {
        let scale = sep / std::f64::consts::SQRT_2;
        return (0..c)
            .map(|j| (0..d).map(|k| if k == j { scale } else { 0.0 }).collect())
            .collect();
    }
    loop {
        let pts: Vec<Vec<f64>> =
            (0..c).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let mut min_dist = f64::INFINITY;
        for a in 0..c {
            for b in a + 1..c {
                let dist = pts[a].iter().zip(&pts[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                min_dist = min_dist.min(dist);
            }
        }
        if min_dist > 0.0 {
            let s = sep / min_dist;
            return pts.into_iter().map(|p| p.into_iter().map(|v| v * s).collect()).collect();
        }
    }
}

/// Draws `num_classes` isotropic unit-variance Gaussian blobs.
///
/// Items are laid out class by class. Within each class the first
/// `labeled_per_class()` items are seeds (role `labeled`); the rest are
/// `eval` items whose truth is kept in the manifest. Every
/// `chunks_per_file` consecutive items of a class share a file id.
///
/// Randomness comes from ChaCha8 seeded with `seed` (via
/// `SeedableRng::seed_from_u64`), normals from the ziggurat sampler in
/// `rand_distr`. Output is a pure function of the config.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(EmbeddingMatrix, DatasetManifest)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = centroids(cfg, &mut rng);
    let labeled = cfg.labeled_per_class();
    let n = cfg.n_per_class * cfg.num_classes;

    let mut data = Vec::with_capacity(n * cfg.dim);
    let mut items = Vec::with_capacity(n);
    let mut file_counter = 0usize;
    for (class, center) in centers.iter().enumerate() {
        for k in 0..cfg.n_per_class {
            for &mu in center {
                let noise: f64 = rng.sample(StandardNormal);
                data.push((mu + noise) as f32);
            }
            if k % cfg.chunks_per_file == 0 {
                file_counter += 1;
            }
            let idx = items.len();
            items.push(ItemRecord {
                id: format!("item-{idx:06}"),
                file_id: format!("file-{:05}", file_counter - 1),
                label: Some(class),
                role: if k < labeled { Role::Labeled } else { Role::Eval },
            });
        }
    }
    let classes = (0..cfg.num_classes).map(|j| format!("class-{j}")).collect();
    Ok((EmbeddingMatrix::new(n, cfg.dim, data)?, DatasetManifest::new(classes, items)?))
}
