//! Holistic point cloud augmentation for pseudo-labeled scenes: paste
//! objects from a pseudo-label database, apply a global scale / rotation /
//! flip, then jitter each object independently.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accs::SelectionMask;
use crate::geometry::{
    bev_iou, normalize_yaw, points_in_box, transform_box, Box3D, Detection, ObjectClass, Point3, PointCloud, Transform,
};
use crate::scene::Scene;
use crate::seed::{derive_seed, rng_from};

/// Overlap below this BEV IoU counts as disjoint.
pub const OVERLAP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentError {
    #[error("invalid augmentation parameter: {0}")]
    InvalidParam(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    /// Global scale factor range `[a, b]`.
    pub scale_range: [f64; 2],
    /// Global rotation is drawn from `[-rot_bound, rot_bound]`.
    pub rot_bound: f64,
    pub flip_prob: f64,
    /// Per-object rotation is drawn from `[-obj_rot_bound, obj_rot_bound]`.
    pub obj_rot_bound: f64,
    /// Per-axis standard deviation of the per-object translation, meters.
    pub obj_trans_sigma: f64,
    /// Target number of pasted objects per class index.
    pub paste_counts: Vec<usize>,
    pub paste_retry_budget: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            scale_range: [0.95, 1.05],
            rot_bound: PI / 4.0,
            flip_prob: 0.5,
            obj_rot_bound: PI / 10.0,
            obj_trans_sigma: 1.0,
            paste_counts: vec![12, 6, 6],
            paste_retry_budget: 20,
        }
    }
}

impl AugmentParams {
    /// Parameters under which every stage leaves the scene unchanged.
    pub fn identity() -> Self {
        Self {
            scale_range: [1.0, 1.0],
            rot_bound: 0.0,
            flip_prob: 0.0,
            obj_rot_bound: 0.0,
            obj_trans_sigma: 0.0,
            paste_counts: vec![0; ObjectClass::COUNT],
            paste_retry_budget: 0,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let [a, b] = self.scale_range;
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(AugmentError::InvalidParam("scale_range needs 0 < a <= b"));
        }
        if !(self.rot_bound >= 0.0 && self.rot_bound.is_finite()) {
            return Err(AugmentError::InvalidParam("rot_bound must be >= 0"));
        }
        if !(self.obj_rot_bound >= 0.0 && self.obj_rot_bound.is_finite()) {
            return Err(AugmentError::InvalidParam("obj_rot_bound must be >= 0"));
        }
        if !(self.obj_trans_sigma >= 0.0 && self.obj_trans_sigma.is_finite()) {
            return Err(AugmentError::InvalidParam("obj_trans_sigma must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(AugmentError::InvalidParam("flip_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A pseudo-labeled object with the points inside its box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbEntry {
    pub id: String,
    pub source_scene: String,
    pub detection: Detection,
    pub points: PointCloud,
}

/// Per-class store of selected pseudo-labeled objects.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoLabelDb {
    pub classes: Vec<Vec<DbEntry>>,
}

impl PseudoLabelDb {
    pub fn len(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_len(&self, k: usize) -> usize {
        self.classes.get(k).map_or(0, Vec::len)
    }
}

/// Collects every mask-selected pseudo detection with its cropped points.
pub fn build_db<'a>(scenes: impl IntoIterator<Item = &'a Scene>, num_classes: usize) -> PseudoLabelDb {
    let mut classes = vec![Vec::new(); num_classes];
    for scene in scenes {
        let Some(pseudo) = &scene.pseudo else { continue };
        for (i, (det, &selected)) in pseudo.detections.iter().zip(&pseudo.mask.0).enumerate() {
            if !selected || det.class_id >= num_classes {
                continue;
            }
            let inside = points_in_box(&scene.cloud, &det.bbox);
            classes[det.class_id].push(DbEntry {
                id: format!("{}#{i}", scene.id),
                source_scene: scene.id.clone(),
                detection: det.clone(),
                points: scene.cloud.select(&inside),
            });
        }
    }
    PseudoLabelDb { classes }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalDraw {
    pub scale: f64,
    pub rotation: f64,
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDraw {
    pub label_index: usize,
    pub rotation: f64,
    pub translation: [f64; 3],
    pub attempts: usize,
    pub skipped: bool,
}

/// Everything an augmentation drew, for audit and replay.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub pasted: Vec<String>,
    pub paste_rejections: usize,
    pub paste_budget_exhausted: bool,
    pub global: Option<GlobalDraw>,
    pub objects: Vec<ObjectDraw>,
}

/// A scene after augmentation: points, co-transformed label boxes with their
/// selection weights, and the provenance of every draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedScene {
    pub scene_id: String,
    pub cloud: PointCloud,
    pub labels: Vec<Detection>,
    pub mask: SelectionMask,
    pub provenance: Provenance,
}

impl AugmentedScene {
    /// Labels are the scene's pseudo detections when present, otherwise its
    /// ground truth (all selected).
    pub fn from_scene(scene: &Scene) -> Self {
        let (labels, mask) = match &scene.pseudo {
            Some(p) => (p.detections.clone(), p.mask.clone()),
            None => {
                let d = scene.gt_detections();
                let m = SelectionMask::ones(d.len());
                (d, m)
            }
        };
        Self { scene_id: scene.id.clone(), cloud: scene.cloud.clone(), labels, mask, provenance: Provenance::default() }
    }

    pub fn selected_labels(&self) -> impl Iterator<Item = &Detection> {
        self.labels.iter().zip(&self.mask.0).filter(|(_, m)| **m).map(|(d, _)| d)
    }
}

fn overlaps_any<'a>(candidate: &Box3D, others: impl IntoIterator<Item = &'a Box3D>) -> bool {
    others.into_iter().any(|b| bev_iou(candidate, b) > OVERLAP_EPS)
}

fn in_footprint(p: &Point3, b: &Box3D) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let (dx, dy) = (p.x - b.center.x, p.y - b.center.y);
    (dx * c + dy * s).abs() <= b.size.l / 2.0 && (-dx * s + dy * c).abs() <= b.size.w / 2.0
}

/// Pastes database objects that do not overlap any box already in the scene.
///
/// Up to `paste_counts[k]` entries of class `k` are drawn without
/// replacement. Each candidate that overlaps consumes one retry from the
/// shared budget; when it runs out pasting stops. Scene points under an
/// accepted box's footprint are removed before its points are inserted.
pub fn sample_paste(scene: &AugmentedScene, db: &PseudoLabelDb, params: &AugmentParams, seed: u64) -> AugmentedScene {
    let mut out = scene.clone();
    let mut rng = rng_from(seed);
    let mut budget = params.paste_retry_budget;
    'classes: for (k, entries) in db.classes.iter().enumerate() {
        let want = params.paste_counts.get(k).copied().unwrap_or(0);
        if want == 0 || entries.is_empty() {
            continue;
        }
        let mut accepted = 0;
        for idx in sample(&mut rng, entries.len(), entries.len()) {
            if accepted == want {
                break;
            }
            let entry = &entries[idx];
            let cand = &entry.detection.bbox;
            if overlaps_any(cand, out.labels.iter().map(|d| &d.bbox)) {
                out.provenance.paste_rejections += 1;
                if budget == 0 {
                    out.provenance.paste_budget_exhausted = true;
                    break 'classes;
                }
                budget -= 1;
                continue;
            }
            let pts = &out.cloud.points;
            let keep: Vec<bool> = pts.iter().map(|p| !in_footprint(p, cand)).collect();
            out.cloud.retain_indices(|i| keep[i]);
            out.cloud.extend(&entry.points);
            out.labels.push(entry.detection.clone());
            out.mask.0.push(true);
            out.provenance.pasted.push(entry.id.clone());
            accepted += 1;
        }
    }
    out
}

/// Scale, then rotate about z, then (with probability `flip_prob`) flip y;
/// points and boxes alike.
pub fn global_augment(scene: &AugmentedScene, params: &AugmentParams, seed: u64) -> AugmentedScene {
    let mut rng = rng_from(seed);
    let [a, b] = params.scale_range;
    let scale = rng.random_range(a..=b);
    let rotation = rng.random_range(-params.rot_bound..=params.rot_bound);
    let eta: f64 = rng.random();
    let flipped = eta < params.flip_prob;

    let mut ops = Vec::with_capacity(3);
    if scale != 1.0 {
        ops.push(Transform::Scale(scale));
    }
    if rotation != 0.0 {
        ops.push(Transform::RotateZ(rotation));
    }
    if flipped {
        ops.push(Transform::FlipY);
    }

    let mut out = scene.clone();
    for op in ops {
        // Scale factors are validated positive, so the ops cannot fail.
        out.cloud = op.apply_cloud(&out.cloud).expect("validated transform");
        for d in &mut out.labels {
            d.bbox = transform_box(&d.bbox, op).expect("validated transform");
        }
    }
    out.provenance.global = Some(GlobalDraw { scale, rotation, flipped });
    out
}

/// Moves each label box and its inlier points by a random rotation about the
/// box center and a Gaussian translation. Moves that would overlap another
/// box are redrawn up to the retry budget, then skipped.
pub fn object_augment(scene: &AugmentedScene, params: &AugmentParams, seed: u64) -> AugmentedScene {
    let mut rng = rng_from(seed);
    let normal = Normal::new(0.0, params.obj_trans_sigma).expect("sigma validated");
    let psi = params.obj_rot_bound;
    let mut out = scene.clone();
    for i in 0..out.labels.len() {
        let current = out.labels[i].bbox;
        let mut draw = ObjectDraw { label_index: i, rotation: 0.0, translation: [0.0; 3], attempts: 0, skipped: true };
        for _ in 0..=params.paste_retry_budget {
            draw.attempts += 1;
            let rot = rng.random_range(-psi..=psi);
            let t = [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)];
            let cand = Box3D {
                center: Point3::new(current.center.x + t[0], current.center.y + t[1], current.center.z + t[2]),
                size: current.size,
                yaw: normalize_yaw(current.yaw + rot),
            };
            let others = out.labels.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, d)| &d.bbox);
            if !overlaps_any(&cand, others) {
                draw.rotation = rot;
                draw.translation = t;
                draw.skipped = false;
                break;
            }
        }
        if !draw.skipped && (draw.rotation != 0.0 || draw.translation != [0.0; 3]) {
            let (s, c) = draw.rotation.sin_cos();
            let ctr = current.center;
            let t = draw.translation;
            for idx in points_in_box(&out.cloud, &current) {
                let p = &mut out.cloud.points[idx];
                let (dx, dy) = (p.x - ctr.x, p.y - ctr.y);
                *p = Point3::new(ctr.x + dx * c - dy * s + t[0], ctr.y + dx * s + dy * c + t[1], p.z + t[2]);
            }
            let b = &mut out.labels[i].bbox;
            b.center = Point3::new(ctr.x + t[0], ctr.y + t[1], ctr.z + t[2]);
            b.yaw = normalize_yaw(current.yaw + draw.rotation);
        }
        out.provenance.objects.push(draw);
    }
    out
}

/// Paste, then global transforms, then per-object jitter. Each stage draws
/// from its own seed derived from `(seed, scene id, stage)`.
pub fn hpca(scene: &Scene, db: &PseudoLabelDb, params: &AugmentParams, seed: u64) -> AugmentedScene {
    let base = AugmentedScene::from_scene(scene);
    let pasted = sample_paste(&base, db, params, derive_seed(seed, &[&scene.id, "paste"]));
    let global = global_augment(&pasted, params, derive_seed(seed, &[&scene.id, "global"]));
    object_augment(&global, params, derive_seed(seed, &[&scene.id, "object"]))
}
