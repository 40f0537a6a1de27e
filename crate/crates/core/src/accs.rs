//! Adaptive per-class confidence selection.
//!
//! Each round, the predictions on the unlabeled pool are grouped by class and
//! sorted by confidence; the class threshold is the confidence found at the
//! top-`c` rank. `c` grows linearly across rounds, so easy and hard classes
//! each contribute the same fraction of their own predictions while the
//! curriculum widens.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geometry::Detection;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccsError {
    #[error("initial ratio must lie in (0, 1], got {0}")]
    InvalidInitialRatio(f64),
    #[error("ratio increment must be non-negative, got {0}")]
    NegativeIncrement(f64),
    #[error("selection ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("expected {expected} class scores, got {got}")]
    ScoreLength { expected: usize, got: usize },
    #[error("no class has a finite threshold")]
    NoSelectableClass,
}

/// Slack when turning `c * n` into a rank, so that decimal ratios such as
/// `0.2 + 2 * 0.05` (which is `0.30000000000000004` in binary) still give
/// the intended rank.
const RANK_SLACK: f64 = 1e-9;

/// Linear selection-ratio curriculum `c_t = min(c0 + t * delta_c, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSchedule {
    pub c0: f64,
    pub delta_c: f64,
}

impl Default for RatioSchedule {
    fn default() -> Self {
        Self { c0: 0.20, delta_c: 0.05 }
    }
}

impl RatioSchedule {
    pub fn new(c0: f64, delta_c: f64) -> Result<Self, AccsError> {
        let s = Self { c0, delta_c };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), AccsError> {
        if !(self.c0 > 0.0 && self.c0 <= 1.0) {
            return Err(AccsError::InvalidInitialRatio(self.c0));
        }
        if !(self.delta_c >= 0.0 && self.delta_c.is_finite()) {
            return Err(AccsError::NegativeIncrement(self.delta_c));
        }
        Ok(())
    }

    pub fn ratio_at(&self, t: usize) -> f64 {
        (self.c0 + t as f64 * self.delta_c).min(1.0)
    }
}

/// 1-based nearest rank `ceil(c * n)`, clamped to `[1, n]`.
pub fn nearest_rank(c: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let r = (c * n as f64 - RANK_SLACK).ceil();
    (r.max(1.0) as usize).min(n)
}

/// Per-class thresholds for one round. Classes without predictions hold
/// `+inf` (serialized as `null`), which selects nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub round: usize,
    pub c: f64,
    #[serde(serialize_with = "ser_lambda", deserialize_with = "de_lambda")]
    pub lambda: Vec<f64>,
}

fn ser_lambda<S: Serializer>(lambda: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let v: Vec<Option<f64>> = lambda.iter().map(|l| l.is_finite().then_some(*l)).collect();
    v.serialize(s)
}

fn de_lambda<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    let v: Vec<Option<f64>> = Vec::deserialize(d)?;
    Ok(v.into_iter().map(|l| l.unwrap_or(f64::INFINITY)).collect())
}

impl ThresholdTable {
    pub fn num_classes(&self) -> usize {
        self.lambda.len()
    }

    pub fn threshold(&self, class_id: usize) -> f64 {
        self.lambda.get(class_id).copied().unwrap_or(f64::INFINITY)
    }

    /// Whether a detection passes its class threshold (`confidence >= λ`).
    pub fn passes(&self, det: &Detection) -> bool {
        det.confidence >= self.threshold(det.class_id)
    }
}

fn class_pools<'a>(predictions: impl IntoIterator<Item = &'a Detection>, num_classes: usize) -> Vec<Vec<f64>> {
    let mut pools = vec![Vec::new(); num_classes];
    for d in predictions {
        if let Some(pool) = pools.get_mut(d.class_id) {
            pool.push(d.confidence);
        }
    }
    for pool in &mut pools {
        pool.sort_by(|a, b| b.total_cmp(a));
    }
    pools
}

/// Nearest-rank top-`c` confidence per class over the whole prediction pool.
pub fn compute_thresholds<'a>(
    predictions: impl IntoIterator<Item = &'a Detection>,
    c: f64,
    num_classes: usize,
) -> Result<ThresholdTable, AccsError> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(AccsError::InvalidRatio(c));
    }
    let lambda = class_pools(predictions, num_classes)
        .iter()
        .map(|pool| match nearest_rank(c, pool.len()) {
            0 => f64::INFINITY,
            r => pool[r - 1],
        })
        .collect();
    Ok(ThresholdTable { round: 0, c, lambda })
}

/// `argmax_k p_k / λ_k` over classes with a finite threshold; ties go to the
/// lowest class index.
pub fn assign_class(scores: &[f64], table: &ThresholdTable) -> Result<usize, AccsError> {
    if scores.len() != table.num_classes() {
        return Err(AccsError::ScoreLength { expected: table.num_classes(), got: scores.len() });
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, (&p, &l)) in scores.iter().zip(&table.lambda).enumerate() {
        if !l.is_finite() {
            continue;
        }
        // λ = 0 only arises from an all-zero pool; treat as p / ε.
        let ratio = if l > 0.0 {
            p / l
        } else if p > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if best.is_none_or(|(_, r)| ratio > r) {
            best = Some((k, ratio));
        }
    }
    best.map(|(k, _)| k).ok_or(AccsError::NoSelectableClass)
}

/// Re-derives the class of a detection with the threshold-normalized rule
/// when it carries per-class scores; `confidence` follows the new class.
pub fn relabel(det: &Detection, table: &ThresholdTable) -> Detection {
    if det.scores.len() != table.num_classes() {
        return det.clone();
    }
    match assign_class(&det.scores, table) {
        Ok(k) => Detection { class_id: k, confidence: det.scores[k], ..det.clone() },
        Err(_) => det.clone(),
    }
}

/// Per-detection binary weight: 1 when the box is used as a pseudo label.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SelectionMask(pub Vec<bool>);

impl SelectionMask {
    pub fn ones(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|m| **m).count()
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|&m| if m { 1.0 } else { 0.0 })
    }
}

pub fn select_mask(detections: &[Detection], table: &ThresholdTable) -> SelectionMask {
    SelectionMask(detections.iter().map(|d| table.passes(d)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSelection {
    pub selected: usize,
    pub pool: usize,
    pub fraction: f64,
}

/// How many of each class's predictions pass the table. Empty pools report a
/// fraction of 0.
pub fn selected_fraction_report<'a>(
    predictions: impl IntoIterator<Item = &'a Detection>,
    table: &ThresholdTable,
) -> Vec<ClassSelection> {
    let mut out = vec![ClassSelection { selected: 0, pool: 0, fraction: 0.0 }; table.num_classes()];
    for d in predictions {
        if let Some(row) = out.get_mut(d.class_id) {
            row.pool += 1;
            row.selected += usize::from(table.passes(d));
        }
    }
    for row in &mut out {
        if row.pool > 0 {
            row.fraction = row.selected as f64 / row.pool as f64;
        }
    }
    out
}
