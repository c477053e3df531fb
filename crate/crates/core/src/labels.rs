//! Line-delimited propagation output.
//!
//! One JSON object per item, in manifest order:
//!
//! ```text
//! {"id":"item-000004","pseudo_label":"class-0","confidence":0.93,"assigned":true}
//! {"id":"item-000005","pseudo_label":null,"confidence":0.0,"assigned":false}
//! ```
//!
//! With scores enabled each record also carries the full row of `P` under
//! `scores`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::propagation::PropagationResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub pseudo_label: Option<String>,
    pub confidence: f64,
    pub assigned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

pub fn label_records(manifest: &DatasetManifest, result: &PropagationResult, emit_scores: bool) -> Vec<LabelRecord> {
    manifest
        .items()
        .iter()
        .enumerate()
        .map(|(i, item)| LabelRecord {
            id: item.id.clone(),
            pseudo_label: result.pseudo_labels[i].map(|j| manifest.classes()[j].clone()),
            confidence: result.confidence[i],
            assigned: result.pseudo_labels[i].is_some(),
            scores: emit_scores.then(|| result.scores.row(i).to_vec()),
        })
        .collect()
}

pub fn write_labels(path: &Path, records: &[LabelRecord]) -> Result<()> {
    write_atomic(path, |w| {
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// Pseudo-labels and confidences aligned to the manifest's item order.
///
/// Every manifest item must have a record; unknown ids or classes are data
/// errors.
pub fn read_labels(path: &Path, manifest: &DatasetManifest) -> Result<(Vec<Option<usize>>, Vec<f64>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut by_id: HashMap<String, (Option<usize>, f64)> = HashMap::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("labels line {}: {e}", k + 1)))?;
        let label = match (&rec.pseudo_label, rec.assigned) {
            (Some(name), true) => Some(manifest.class_index(name).ok_or_else(|| {
                Error::Data(format!("labels line {}: unknown class {name:?}", k + 1))
            })?),
            (None, false) => None,
            _ => return Err(Error::Data(format!("labels line {}: `assigned` disagrees with `pseudo_label`", k + 1))),
        };
        if by_id.insert(rec.id.clone(), (label, rec.confidence)).is_some() {
            return Err(Error::Data(format!("labels file repeats id {:?}", rec.id)));
        }
    }
    let mut labels = Vec::with_capacity(manifest.len());
    let mut confidence = Vec::with_capacity(manifest.len());
    for item in manifest.items() {
        let (l, c) = by_id
            .get(&item.id)
            .ok_or_else(|| Error::Data(format!("labels file has no record for item {:?}", item.id)))?;
        labels.push(*l);
        confidence.push(*c);
    }
    Ok((labels, confidence))
}
