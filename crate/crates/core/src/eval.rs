//! KITTI-style Average Precision per class and difficulty tier over 3D IoU.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou_3d, Detection, ObjectClass};
use crate::kitti_io::Difficulty;
use crate::scene::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApMode {
    R11,
    R40,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// IoU needed for a match, per class index.
    pub iou_thresholds: Vec<f64>,
    pub mode: ApMode,
    pub tiers: Vec<Difficulty>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_thresholds: vec![0.7, 0.5, 0.5], mode: ApMode::R11, tiers: Difficulty::TIERS.to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchFlag {
    TruePositive,
    FalsePositive,
    /// Matched a ground truth of a harder tier than the one evaluated.
    Ignored,
}

fn eligible(gt: &GroundTruth, tier: Difficulty) -> bool {
    gt.difficulty != Difficulty::Ignored && gt.difficulty <= tier
}

/// Greedy matching for one class in one scene. Predictions are visited in
/// descending confidence; each takes the unmatched eligible ground truth of
/// highest IoU at or above the threshold. Flags are returned in input order.
pub fn match_detections(
    predictions: &[Detection],
    ground_truths: &[GroundTruth],
    iou_threshold: f64,
    tier: Difficulty,
) -> Vec<MatchFlag> {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].confidence.total_cmp(&predictions[a].confidence));
    let mut taken = vec![false; ground_truths.len()];
    let mut flags = vec![MatchFlag::FalsePositive; predictions.len()];
    for i in order {
        let p = &predictions[i].bbox;
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for (g, gt) in ground_truths.iter().enumerate() {
            let iou = iou_3d(p, &gt.detection.bbox);
            if iou < iou_threshold {
                continue;
            }
            if !eligible(gt, tier) {
                hits_ignored = true;
            } else if !taken[g] && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        flags[i] = match best {
            Some((g, _)) => {
                taken[g] = true;
                MatchFlag::TruePositive
            }
            None if hits_ignored => MatchFlag::Ignored,
            None => MatchFlag::FalsePositive,
        };
    }
    flags
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub num_gt: usize,
}

impl PrCurve {
    /// Builds the sweep from `(confidence, is_true_positive)` pairs, which
    /// must already be in sweep order.
    pub fn from_sorted(scored: &[(f64, bool)], num_gt: usize) -> Self {
        let mut tp = 0usize;
        let points = scored
            .iter()
            .enumerate()
            .map(|(i, &(confidence, hit))| {
                tp += usize::from(hit);
                PrPoint {
                    confidence,
                    precision: tp as f64 / (i + 1) as f64,
                    recall: if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 },
                }
            })
            .collect();
        Self { points, num_gt }
    }
}

/// Interpolated AP: mean over recall levels of the best precision reached at
/// or beyond that recall. `None` when there is no ground truth.
pub fn average_precision(curve: &PrCurve, mode: ApMode) -> Option<f64> {
    if curve.num_gt == 0 {
        return None;
    }
    let levels: Vec<f64> = match mode {
        ApMode::R11 => (0..=10).map(|i| i as f64 / 10.0).collect(),
        ApMode::R40 => (1..=40).map(|i| i as f64 / 40.0).collect(),
    };
    // Envelope from the right: best precision at recall >= r.
    let mut envelope = curve.points.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i].precision = envelope[i].precision.max(envelope[i + 1].precision);
    }
    let sum: f64 =
        levels.iter().map(|&r| envelope.iter().find(|p| p.recall >= r - 1e-12).map_or(0.0, |p| p.precision)).sum();
    Some(sum / levels.len() as f64)
}

/// Ground truth for one evaluated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScene {
    pub id: String,
    pub ground_truth: Vec<GroundTruth>,
}

/// AP per class (rows) and tier (columns); `None` where a cell has no
/// ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApTable {
    pub classes: Vec<String>,
    pub iou_thresholds: Vec<f64>,
    pub tiers: Vec<Difficulty>,
    pub mode: ApMode,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl ApTable {
    pub fn get(&self, class: ObjectClass, tier: Difficulty) -> Option<f64> {
        let t = self.tiers.iter().position(|d| *d == tier)?;
        self.cells.get(class.index())?.get(t).copied().flatten()
    }

    /// Mean over the present cells.
    pub fn mean(&self) -> Option<f64> {
        let vals: Vec<f64> = self.cells.iter().flatten().flatten().copied().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Aligned text table, AP in percent.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<22}", "Class (IoU)");
        for t in &self.tiers {
            let _ = write!(s, "{:>10}", t.name());
        }
        s.push('\n');
        for (k, row) in self.cells.iter().enumerate() {
            let label = format!("{} ({})", self.classes[k], self.iou_thresholds[k]);
            let _ = write!(s, "{label:<22}");
            for cell in row {
                match cell {
                    Some(v) => {
                        let _ = write!(s, "{:>10.2}", 100.0 * v);
                    }
                    None => {
                        let _ = write!(s, "{:>10}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Evaluates one prediction set against the scenes' ground truth. Scenes
/// without an entry in `predictions` count as having no detections.
pub fn evaluate(scenes: &[EvalScene], predictions: &BTreeMap<String, Vec<Detection>>, config: &EvalConfig) -> ApTable {
    let num_classes = config.iou_thresholds.len();
    let mut sorted: Vec<&EvalScene> = scenes.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let empty = Vec::new();
    let mut cells = vec![vec![None; config.tiers.len()]; num_classes];
    for (k, row) in cells.iter_mut().enumerate() {
        let thr = config.iou_thresholds[k];
        for (t, &tier) in config.tiers.iter().enumerate() {
            let mut scored: Vec<(f64, bool)> = Vec::new();
            let mut num_gt = 0;
            for scene in &sorted {
                let gts: Vec<GroundTruth> =
                    scene.ground_truth.iter().filter(|g| g.detection.class_id == k).cloned().collect();
                num_gt += gts.iter().filter(|g| eligible(g, tier)).count();
                let preds: Vec<Detection> =
                    predictions.get(&scene.id).unwrap_or(&empty).iter().filter(|d| d.class_id == k).cloned().collect();
                let flags = match_detections(&preds, &gts, thr, tier);
                for (d, f) in preds.iter().zip(flags) {
                    match f {
                        MatchFlag::TruePositive => scored.push((d.confidence, true)),
                        MatchFlag::FalsePositive => scored.push((d.confidence, false)),
                        MatchFlag::Ignored => {}
                    }
                }
            }
            // Stable sort keeps the canonical scene order among equal scores.
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            row[t] = average_precision(&PrCurve::from_sorted(&scored, num_gt), config.mode);
        }
    }
    ApTable {
        classes: (0..num_classes)
            .map(|k| ObjectClass::from_index(k).map_or(format!("class{k}"), |c| c.name().to_string()))
            .collect(),
        iou_thresholds: config.iou_thresholds.clone(),
        tiers: config.tiers.clone(),
        mode: config.mode,
        cells,
    }
}

/// Cell-wise mean over several prediction sets (e.g. repeated seeds). A cell
/// is present when it is present in every run.
pub fn evaluate_runs(
    scenes: &[EvalScene],
    runs: &[BTreeMap<String, Vec<Detection>>],
    config: &EvalConfig,
) -> Option<ApTable> {
    let tables: Vec<ApTable> = runs.iter().map(|r| evaluate(scenes, r, config)).collect();
    let mut out = tables.first()?.clone();
    for (k, row) in out.cells.iter_mut().enumerate() {
        for (t, cell) in row.iter_mut().enumerate() {
            let vals: Option<Vec<f64>> = tables.iter().map(|tb| tb.cells[k][t]).collect();
            *cell = vals.map(|v| v.iter().sum::<f64>() / v.len() as f64);
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Box3D, Point3, Size3};

    fn bx(x: f64) -> Box3D {
        Box3D::new(Point3::new(x, 0.0, 0.0), Size3::new(4.0, 2.0, 1.5), 0.0).unwrap()
    }

    fn det(x: f64, conf: f64) -> Detection {
        Detection::new(bx(x), 0, conf).unwrap()
    }

    fn gt(x: f64, difficulty: Difficulty) -> GroundTruth {
        GroundTruth { detection: det(x, 1.0), difficulty }
    }

    #[test]
    fn hand_computed_r11() {
        let curve = PrCurve::from_sorted(&[(0.9, true), (0.8, false)], 2);
        assert_eq!(average_precision(&curve, ApMode::R11), Some(6.0 / 11.0));
        // R40: recall 0.5 reached -> levels 1/40..20/40 have precision 1.
        assert_eq!(average_precision(&curve, ApMode::R40), Some(0.5));
    }

    #[test]
    fn perfect_and_empty() {
        let curve = PrCurve::from_sorted(&[(0.9, true), (0.8, true)], 2);
        assert_eq!(average_precision(&curve, ApMode::R11), Some(1.0));
        assert_eq!(average_precision(&curve, ApMode::R40), Some(1.0));
        let none = PrCurve::from_sorted(&[], 3);
        assert_eq!(average_precision(&none, ApMode::R11), Some(0.0));
        assert_eq!(average_precision(&PrCurve::from_sorted(&[(0.5, false)], 0), ApMode::R11), None);
    }

    #[test]
    fn matching_basics() {
        let gts = [gt(0.0, Difficulty::Easy), gt(10.0, Difficulty::Easy)];
        let preds = [det(0.0, 0.9), det(10.0, 0.8)];
        assert_eq!(match_detections(&preds, &gts, 0.7, Difficulty::Easy), vec![MatchFlag::TruePositive; 2]);
        assert_eq!(match_detections(&[det(0.0, 0.5)], &[], 0.7, Difficulty::Easy), vec![MatchFlag::FalsePositive]);
    }

    #[test]
    fn harder_ground_truth_is_ignore_region() {
        let gts = [gt(0.0, Difficulty::Hard)];
        let preds = [det(0.0, 0.9)];
        assert_eq!(match_detections(&preds, &gts, 0.7, Difficulty::Easy), vec![MatchFlag::Ignored]);
        assert_eq!(match_detections(&preds, &gts, 0.7, Difficulty::Hard), vec![MatchFlag::TruePositive]);
        let ignored = [gt(0.0, Difficulty::Ignored)];
        assert_eq!(match_detections(&preds, &ignored, 0.7, Difficulty::Hard), vec![MatchFlag::Ignored]);
    }

    /// Maximum number of true positives over all one-to-one assignments.
    fn best_assignment(preds: &[Detection], gts: &[GroundTruth], thr: f64) -> usize {
        fn go(i: usize, used: &mut Vec<bool>, preds: &[Detection], gts: &[GroundTruth], thr: f64) -> usize {
            if i == preds.len() {
                return 0;
            }
            let mut best = go(i + 1, used, preds, gts, thr);
            for g in 0..gts.len() {
                if !used[g] && iou_3d(&preds[i].bbox, &gts[g].detection.bbox) >= thr {
                    used[g] = true;
                    best = best.max(1 + go(i + 1, used, preds, gts, thr));
                    used[g] = false;
                }
            }
            best
        }
        go(0, &mut vec![false; gts.len()], preds, gts, thr)
    }

    #[test]
    fn double_match_attempt_agrees_with_assignment_oracle() {
        let gts = [gt(0.0, Difficulty::Easy), gt(3.0, Difficulty::Easy)];
        // The first two predictions both want GT 0; the third sits on GT 1.
        let preds = [det(0.1, 0.9), det(-0.1, 0.8), det(3.0, 0.7)];
        let thr = 0.5;
        let flags = match_detections(&preds, &gts, thr, Difficulty::Easy);
        assert_eq!(flags, vec![MatchFlag::TruePositive, MatchFlag::FalsePositive, MatchFlag::TruePositive]);
        let tp = flags.iter().filter(|f| **f == MatchFlag::TruePositive).count();
        assert_eq!(tp, best_assignment(&preds, &gts, thr));
    }

    fn scenes() -> Vec<EvalScene> {
        (0..4)
            .map(|i| EvalScene {
                id: format!("{i:06}"),
                ground_truth: vec![gt(0.0, Difficulty::Easy), gt(10.0, Difficulty::Moderate)],
            })
            .collect()
    }

    #[test]
    fn ground_truth_as_predictions_is_perfect() {
        let s = scenes();
        let preds: BTreeMap<_, _> =
            s.iter().map(|e| (e.id.clone(), e.ground_truth.iter().map(|g| g.detection.clone()).collect())).collect();
        let table = evaluate(&s, &preds, &EvalConfig::default());
        assert_eq!(table.get(ObjectClass::Car, Difficulty::Easy), Some(1.0));
        assert_eq!(table.get(ObjectClass::Car, Difficulty::Moderate), Some(1.0));
        assert_eq!(table.get(ObjectClass::Car, Difficulty::Hard), Some(1.0));
        assert_eq!(table.get(ObjectClass::Pedestrian, Difficulty::Easy), None);
        assert_eq!(table.mean(), Some(1.0));
        let empty = evaluate(&s, &BTreeMap::new(), &EvalConfig::default());
        assert_eq!(empty.get(ObjectClass::Car, Difficulty::Easy), Some(0.0));
    }

    #[test]
    fn scene_order_does_not_matter() {
        let s = scenes();
        let mut preds = BTreeMap::new();
        for (i, e) in s.iter().enumerate() {
            preds.insert(e.id.clone(), vec![det(0.0, 0.5), det(5.0 + i as f64, 0.5), det(10.2, 0.3)]);
        }
        let a = evaluate(&s, &preds, &EvalConfig::default());
        let mut rev = s.clone();
        rev.reverse();
        assert_eq!(a, evaluate(&rev, &preds, &EvalConfig::default()));
    }

    #[test]
    fn render_layout() {
        let s = scenes();
        let t = evaluate(&s, &BTreeMap::new(), &EvalConfig::default());
        let text = t.render();
        assert!(text.starts_with("Class (IoU)"));
        assert!(text.contains("Car (0.7)"));
        assert!(text.contains("Pedestrian (0.5)"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn runs_average() {
        let s = scenes();
        let perfect: BTreeMap<_, _> =
            s.iter().map(|e| (e.id.clone(), e.ground_truth.iter().map(|g| g.detection.clone()).collect())).collect();
        let t = evaluate_runs(&s, &[perfect, BTreeMap::new()], &EvalConfig::default()).unwrap();
        assert_eq!(t.get(ObjectClass::Car, Difficulty::Easy), Some(0.5));
    }
}
