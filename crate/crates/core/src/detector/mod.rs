//! Detector contract, loss aggregation and two reference detectors.

mod cluster;
mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{segment, Cluster, ClusterConfig, ClusterDetector, ClusterModel, SizePrior};
pub use oracle::{OracleConfig, OracleDetector};

use crate::accs::SelectionMask;
use crate::geometry::Detection;
use crate::hpca::{hpca, AugmentParams, AugmentedScene, PseudoLabelDb};
use crate::scene::Scene;
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("{terms} loss terms but a mask of length {mask}")]
    MaskLength { terms: usize, mask: usize },
    #[error("invalid detector config: {0}")]
    Config(String),
    #[error("detector state: {0}")]
    State(#[from] serde_json::Error),
    #[error("fit failed: {0}")]
    Fit(String),
}

/// Regression loss of one positive proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxLossTerms {
    pub bin: f64,
    pub res: f64,
}

impl BoxLossTerms {
    pub fn total(&self) -> f64 {
        self.bin + self.res
    }
}

/// Normalizer of the unsupervised loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// Number of positive proposals, selected or not.
    #[default]
    AllPositives,
    /// Number of selected proposals.
    Selected,
}

/// Mean of `bin + res` over the positives; 0 when there are none.
pub fn supervised_loss(terms: &[BoxLossTerms]) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    terms.iter().map(BoxLossTerms::total).sum::<f64>() / terms.len() as f64
}

/// Mask-weighted sum of `bin + res` divided by the normalizer.
pub fn unsupervised_loss(terms: &[BoxLossTerms], mask: &SelectionMask, norm: LossNorm) -> Result<f64, DetectorError> {
    if terms.len() != mask.len() {
        return Err(DetectorError::MaskLength { terms: terms.len(), mask: mask.len() });
    }
    let n = match norm {
        LossNorm::AllPositives => terms.len(),
        LossNorm::Selected => mask.count(),
    };
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = terms.iter().zip(mask.weights()).map(|(t, m)| m * t.total()).sum();
    Ok(sum / n as f64)
}

pub fn total_loss(supervised: f64, unsupervised: f64) -> f64 {
    supervised + unsupervised
}

/// Indices into the labeled and pseudo-labeled pools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub labeled: Vec<usize>,
    pub pseudo: Vec<usize>,
}

/// Applied to pseudo-labeled scenes only. `draw` counts occurrences so that a
/// recycled scene is augmented differently each time.
pub trait Augment: Sync {
    fn augment(&self, scene: &Scene, draw: usize) -> AugmentedScene;
}

/// Leaves scenes untouched.
pub struct NoAugment;

impl Augment for NoAugment {
    fn augment(&self, scene: &Scene, _draw: usize) -> AugmentedScene {
        AugmentedScene::from_scene(scene)
    }
}

/// Full paste / global / object augmentation.
pub struct HpcaHook<'a> {
    pub db: &'a PseudoLabelDb,
    pub params: &'a AugmentParams,
    pub seed: u64,
}

impl Augment for HpcaHook<'_> {
    fn augment(&self, scene: &Scene, draw: usize) -> AugmentedScene {
        hpca(scene, self.db, self.params, derive_seed(self.seed, &["draw", &draw.to_string()]))
    }
}

/// Everything a detector sees during one fit.
pub struct FitData<'a> {
    /// Scenes with ground truth.
    pub labeled: &'a [Scene],
    /// Scenes with pseudo labels and masks; ground truth removed.
    pub pseudo: &'a [Scene],
    pub batches: &'a [Batch],
    pub augment: &'a dyn Augment,
    pub loss_norm: LossNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitReport {
    /// Means over batches.
    pub supervised_loss: f64,
    pub unsupervised_loss: f64,
    pub total_loss: f64,
    pub batches: usize,
    pub labeled_boxes: usize,
    pub pseudo_boxes: usize,
}

/// A trainable 3D detector. `predict` must be deterministic given the fitted
/// state and must only return confidences in [0, 1].
pub trait Detector: Send + Sync {
    fn name(&self) -> &'static str;

    /// Refits from the current state (warm start).
    fn fit(&mut self, data: &FitData<'_>) -> Result<FitReport, DetectorError>;

    /// Forgets the fitted state.
    fn reset(&mut self);

    fn predict(&self, scene: &Scene) -> Vec<Detection>;

    fn state_json(&self) -> Result<String, DetectorError>;

    fn load_state(&mut self, json: &str) -> Result<(), DetectorError>;
}

/// Per-batch loss bookkeeping shared by the detectors.
#[derive(Debug, Default)]
pub(crate) struct LossTally {
    supervised: f64,
    unsupervised: f64,
    batches: usize,
    labeled_boxes: usize,
    pseudo_boxes: usize,
}

impl LossTally {
    pub(crate) fn add_batch(
        &mut self,
        labeled: &[BoxLossTerms],
        pseudo: &[BoxLossTerms],
        mask: &SelectionMask,
        norm: LossNorm,
    ) -> Result<(), DetectorError> {
        self.supervised += supervised_loss(labeled);
        self.unsupervised += unsupervised_loss(pseudo, mask, norm)?;
        self.batches += 1;
        self.labeled_boxes += labeled.len();
        self.pseudo_boxes += mask.count();
        Ok(())
    }

    pub(crate) fn report(&self) -> FitReport {
        let n = self.batches.max(1) as f64;
        let (s, u) = (self.supervised / n, self.unsupervised / n);
        FitReport {
            supervised_loss: s,
            unsupervised_loss: u,
            total_loss: total_loss(s, u),
            batches: self.batches,
            labeled_boxes: self.labeled_boxes,
            pseudo_boxes: self.pseudo_boxes,
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn t(bin: f64, res: f64) -> BoxLossTerms {
        BoxLossTerms { bin, res }
    }

    #[test]
    fn supervised_examples() {
        assert_eq!(supervised_loss(&[t(1.0, 1.0), t(2.0, 0.0), t(0.0, 2.0)]), 2.0);
        assert_eq!(supervised_loss(&[]), 0.0);
    }

    #[test]
    fn unsupervised_examples() {
        let terms = [t(1.0, 1.0), t(2.0, 0.0), t(0.0, 4.0)];
        assert_eq!(unsupervised_loss(&terms, &SelectionMask::zeros(3), LossNorm::AllPositives).unwrap(), 0.0);
        assert_eq!(
            unsupervised_loss(&terms, &SelectionMask::ones(3), LossNorm::AllPositives).unwrap(),
            supervised_loss(&terms)
        );
        let m = SelectionMask(vec![true, false, true]);
        assert_eq!(unsupervised_loss(&terms, &m, LossNorm::AllPositives).unwrap(), 6.0 / 3.0);
        assert_eq!(unsupervised_loss(&terms, &m, LossNorm::Selected).unwrap(), 6.0 / 2.0);
        assert!(matches!(
            unsupervised_loss(&terms, &SelectionMask::ones(2), LossNorm::AllPositives),
            Err(DetectorError::MaskLength { terms: 3, mask: 2 })
        ));
        assert_eq!(unsupervised_loss(&[], &SelectionMask::default(), LossNorm::Selected).unwrap(), 0.0);
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(2.0, 3.0), 5.0);
        assert_eq!(total_loss(0.0, 1.25), 1.25);
    }

    fn terms_strategy() -> impl Strategy<Value = Vec<(f64, f64, bool)>> {
        proptest::collection::vec((0.0..10.0f64, 0.0..10.0f64, any::<bool>()), 0..40)
    }

    proptest! {
        #[test]
        fn supervised_matches_naive_sum(raw in terms_strategy()) {
            let terms: Vec<_> = raw.iter().map(|&(b, r, _)| t(b, r)).collect();
            let mut sum = 0.0;
            for &(b, r, _) in &raw {
                sum += b;
                sum += r;
            }
            let expected = if raw.is_empty() { 0.0 } else { sum / raw.len() as f64 };
            prop_assert!((supervised_loss(&terms) - expected).abs() <= 1e-12 * expected.max(1.0));
        }

        #[test]
        fn masked_equals_scaled_subset(raw in terms_strategy()) {
            let terms: Vec<_> = raw.iter().map(|&(b, r, _)| t(b, r)).collect();
            let mask = SelectionMask(raw.iter().map(|x| x.2).collect());
            let subset: Vec<_> = terms.iter().zip(&mask.0).filter(|(_, m)| **m).map(|(t, _)| *t).collect();
            let got = unsupervised_loss(&terms, &mask, LossNorm::AllPositives).unwrap();
            let expected = if terms.is_empty() { 0.0 } else { supervised_loss(&subset) * subset.len() as f64 / terms.len() as f64 };
            prop_assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));
        }

        #[test]
        fn total_is_addition(a in -1e6..1e6f64, b in -1e6..1e6f64) {
            prop_assert_eq!(total_loss(a, b), a + b);
        }
    }
}
