use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{io_err, KittiError};
use crate::seed::rng_from;

/// Labeled/unlabeled partition of a scene-id set. Persisted as the split
/// manifest `{ratio, seed, labeled_ids, unlabeled_ids}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub ratio: Ratio,
    pub seed: u64,
    pub labeled_ids: Vec<String>,
    pub unlabeled_ids: Vec<String>,
}

/// `f64` wrapper so the manifest can derive `Eq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ratio(pub f64);

impl Eq for Ratio {}

impl DatasetSplit {
    pub fn labeled_fraction(&self) -> f64 {
        let total = self.labeled_ids.len() + self.unlabeled_ids.len();
        self.labeled_ids.len() as f64 / total as f64
    }
}

/// Groups ids (sorted) into consecutive blocks of `block_len`. Fallback for
/// datasets without a recorded sequence mapping.
pub fn block_sequence_map(ids: &[String], block_len: usize) -> BTreeMap<String, String> {
    let block_len = block_len.max(1);
    let sorted: BTreeSet<&String> = ids.iter().collect();
    sorted.into_iter().enumerate().map(|(i, id)| (id.clone(), format!("block{:05}", i / block_len))).collect()
}

/// Reads `scene_id sequence_id...` lines; the remainder of the line after the
/// first whitespace is the sequence id.
pub fn read_sequence_map(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>, KittiError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((id, seq)) = line.split_once(char::is_whitespace) else {
            return Err(KittiError::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "expected `<scene id> <sequence id>`".into(),
            });
        };
        map.insert(id.to_string(), seq.trim().to_string());
    }
    Ok(map)
}

/// Takes sequences in `order` until the labeled count first reaches
/// `ratio * total`. Returns how many sequences were taken.
pub fn fill_in_order(sizes_in_order: &[usize], ratio: f64) -> usize {
    let total: usize = sizes_in_order.iter().sum();
    let mut taken = 0usize;
    for (k, &s) in sizes_in_order.iter().enumerate() {
        if taken as f64 >= ratio * total as f64 {
            return k;
        }
        taken += s;
    }
    sizes_in_order.len()
}

/// Assigns whole sequences to the labeled side, in seeded random order, until
/// the labeled fraction first reaches `ratio`.
pub fn split_by_sequence(
    ids: &[String],
    sequence_of: &BTreeMap<String, String>,
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit, KittiError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(KittiError::InvalidRatio(ratio));
    }
    if ids.is_empty() {
        return Err(KittiError::NoIds);
    }
    let mut groups: BTreeMap<&str, Vec<&String>> = BTreeMap::new();
    for id in ids {
        let seq = sequence_of.get(id).ok_or_else(|| KittiError::UnmappedId(id.clone()))?;
        groups.entry(seq).or_default().push(id);
    }
    let mut order: Vec<&str> = groups.keys().copied().collect();
    order.shuffle(&mut rng_from(seed));
    let sizes: Vec<usize> = order.iter().map(|s| groups[s].len()).collect();
    let take = fill_in_order(&sizes, ratio);

    let mut labeled: Vec<String> =
        order[..take].iter().flat_map(|s| groups[s].iter().map(|id| (*id).clone())).collect();
    let mut unlabeled: Vec<String> =
        order[take..].iter().flat_map(|s| groups[s].iter().map(|id| (*id).clone())).collect();
    labeled.sort();
    unlabeled.sort();
    Ok(DatasetSplit { ratio: Ratio(ratio), seed, labeled_ids: labeled, unlabeled_ids: unlabeled })
}

pub fn write_split_manifest(path: impl AsRef<Path>, split: &DatasetSplit) -> Result<(), KittiError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(split)
        .map_err(|source| KittiError::Manifest { path: path.to_path_buf(), source })?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_split_manifest(path: impl AsRef<Path>) -> Result<DatasetSplit, KittiError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| KittiError::Manifest { path: path.to_path_buf(), source })
}
