//! Scene-level data model shared by the loop, the augmenter and the detectors.

use serde::{Deserialize, Serialize};

use crate::accs::SelectionMask;
use crate::geometry::{Detection, PointCloud};
use crate::kitti_io::Difficulty;

/// A ground-truth object with its evaluation tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub detection: Detection,
    pub difficulty: Difficulty,
}

/// Pseudo labels attached to an unlabeled scene, with their selection mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub detections: Vec<Detection>,
    pub mask: SelectionMask,
    /// Round that produced these labels.
    pub round: usize,
}

impl PseudoLabels {
    pub fn selected(&self) -> impl Iterator<Item = &Detection> {
        self.detections.iter().zip(&self.mask.0).filter(|(_, m)| **m).map(|(d, _)| d)
    }

    pub fn selected_count(&self) -> usize {
        self.mask.count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub cloud: PointCloud,
    #[serde(default)]
    pub ground_truth: Vec<GroundTruth>,
    #[serde(default)]
    pub pseudo: Option<PseudoLabels>,
}

impl Scene {
    pub fn new(id: impl Into<String>, cloud: PointCloud) -> Self {
        Self { id: id.into(), cloud, ground_truth: Vec::new(), pseudo: None }
    }

    pub fn with_ground_truth(mut self, gt: Vec<GroundTruth>) -> Self {
        self.ground_truth = gt;
        self
    }

    pub fn gt_detections(&self) -> Vec<Detection> {
        self.ground_truth.iter().map(|g| g.detection.clone()).collect()
    }

    /// A copy with ground truth removed, as handed to a detector for
    /// unlabeled scenes.
    pub fn without_labels(&self) -> Scene {
        Scene { id: self.id.clone(), cloud: self.cloud.clone(), ground_truth: Vec::new(), pseudo: self.pseudo.clone() }
    }
}
