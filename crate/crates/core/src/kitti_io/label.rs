use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, Calibration, KittiError};
use crate::geometry::{normalize_yaw, Box3D, Detection, ObjectClass, Point3, Size3};
use crate::scene::GroundTruth;

/// KITTI difficulty tier. Ordered from easiest to hardest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    pub const TIERS: [Difficulty; 3] = [Self::Easy, Self::Moderate, Self::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Self::Easy => "Easy",
            Self::Moderate => "Moderate",
            Self::Hard => "Hard",
            Self::Ignored => "Ignored",
        }
    }
}

/// One line of a KITTI label file, camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiLabel {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    pub bbox2d: [f64; 4],
    /// `(h, w, l)` in meters.
    pub dims: [f64; 3],
    /// Bottom-center of the box in the rectified camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

/// The image-derived fields of a label that a 3D box does not carry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMeta {
    pub truncated: f64,
    pub occluded: i32,
    pub bbox2d: [f64; 4],
}

impl Default for LabelMeta {
    /// A fully visible object with a nominal 100 px tall 2D box.
    fn default() -> Self {
        Self { truncated: 0.0, occluded: 0, bbox2d: [0.0, 0.0, 100.0, 100.0] }
    }
}

impl LabelMeta {
    /// Canonical image fields that [`assign_difficulty`] maps back to `tier`.
    pub fn for_difficulty(tier: Difficulty) -> Self {
        let (truncated, occluded, height) = match tier {
            Difficulty::Easy => (0.0, 0, 100.0),
            Difficulty::Moderate => (0.2, 1, 30.0),
            Difficulty::Hard => (0.4, 2, 30.0),
            Difficulty::Ignored => (0.0, 3, 10.0),
        };
        Self { truncated, occluded, bbox2d: [0.0, 0.0, 100.0, height] }
    }
}

/// KITTI benchmark tiers by 2D height, occlusion and truncation; a label gets
/// the easiest tier whose constraints it meets.
pub fn assign_difficulty(label: &KittiLabel) -> Difficulty {
    let height = label.bbox2d[3] - label.bbox2d[1];
    let tiers =
        [(Difficulty::Easy, 40.0, 0, 0.15), (Difficulty::Moderate, 25.0, 1, 0.30), (Difficulty::Hard, 25.0, 2, 0.50)];
    tiers
        .into_iter()
        .find(|&(_, min_h, max_occ, max_trunc)| {
            height >= min_h && label.occluded <= max_occ && label.truncated <= max_trunc
        })
        .map_or(Difficulty::Ignored, |(d, ..)| d)
}

impl KittiLabel {
    pub fn parse(path: &Path, line: usize, text: &str) -> Result<Self, KittiError> {
        let bad = |reason: String| KittiError::MalformedLine { path: path.to_path_buf(), line, reason };
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 15 && fields.len() != 16 {
            return Err(bad(format!("expected 15 or 16 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64, KittiError> {
            let v: f64 = fields[i].parse().map_err(|e| bad(format!("field {}: {e}", i + 1)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("field {} is not finite", i + 1)))
            }
        };
        let occluded: i32 = fields[2].parse().map_err(|e| bad(format!("field 3: {e}")))?;
        let label = KittiLabel {
            kind: fields[0].to_string(),
            truncated: num(1)?,
            occluded,
            alpha: num(3)?,
            bbox2d: [num(4)?, num(5)?, num(6)?, num(7)?],
            dims: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        };
        if label.bbox2d[2] < label.bbox2d[0] || label.bbox2d[3] < label.bbox2d[1] {
            return Err(bad("2D box has x2 < x1 or y2 < y1".into()));
        }
        if ObjectClass::from_name(&label.kind).is_some() && !label.dims.iter().all(|d| *d > 0.0) {
            return Err(bad(format!("non-positive dimensions for {}", label.kind)));
        }
        Ok(label)
    }

    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            self.kind,
            self.truncated,
            self.occluded,
            self.alpha,
            self.bbox2d[0],
            self.bbox2d[1],
            self.bbox2d[2],
            self.bbox2d[3],
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.location[0],
            self.location[1],
            self.location[2],
            self.rotation_y,
        );
        if let Some(score) = self.score {
            s.push_str(&format!(" {score}"));
        }
        s
    }
}

/// Converts a camera-frame label to a LiDAR-frame detection. Categories other
/// than Car, Pedestrian and Cyclist yield `None`.
pub fn label_to_detection(label: &KittiLabel, calib: &Calibration) -> Result<Option<Detection>, KittiError> {
    let Some(class) = ObjectClass::from_name(&label.kind) else {
        return Ok(None);
    };
    let [h, w, l] = label.dims;
    let [x, y, z] = label.location;
    let bottom = calib.cam_to_velo(&Point3::new(x, y, z));
    let center = Point3::new(bottom.x, bottom.y, bottom.z + h / 2.0);
    let bbox = Box3D::new(center, Size3::new(l, w, h), -label.rotation_y - FRAC_PI_2)?;
    let score = label.score.unwrap_or(1.0).clamp(0.0, 1.0);
    Ok(Some(Detection::new(bbox, class.index(), score)?))
}

/// Inverse of [`label_to_detection`]; the image-only fields come from `meta`.
pub fn detection_to_label(det: &Detection, calib: &Calibration, meta: &LabelMeta, with_score: bool) -> KittiLabel {
    let b = &det.bbox;
    let bottom = Point3::new(b.center.x, b.center.y, b.center.z - b.size.h / 2.0);
    let loc = calib.velo_to_cam(&bottom);
    let rotation_y = normalize_yaw(-b.yaw - FRAC_PI_2);
    let kind = ObjectClass::from_index(det.class_id).map_or("DontCare", ObjectClass::name);
    KittiLabel {
        kind: kind.to_string(),
        truncated: meta.truncated,
        occluded: meta.occluded,
        alpha: normalize_yaw(rotation_y - loc.x.atan2(loc.z)),
        bbox2d: meta.bbox2d,
        dims: [b.size.h, b.size.w, b.size.l],
        location: [loc.x, loc.y, loc.z],
        rotation_y,
        score: with_score.then_some(det.confidence),
    }
}

pub fn read_label_records(path: impl AsRef<Path>) -> Result<Vec<KittiLabel>, KittiError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| KittiLabel::parse(path, i + 1, l))
        .collect()
}

/// Reads a label file as LiDAR-frame detections, dropping non-evaluated
/// categories.
pub fn read_label(path: impl AsRef<Path>, calib: &Calibration) -> Result<Vec<Detection>, KittiError> {
    let mut out = Vec::new();
    for label in read_label_records(path)? {
        if let Some(det) = label_to_detection(&label, calib)? {
            out.push(det);
        }
    }
    Ok(out)
}

/// Like [`read_label`] but keeps the difficulty tier of each object.
pub fn read_ground_truth(path: impl AsRef<Path>, calib: &Calibration) -> Result<Vec<GroundTruth>, KittiError> {
    let mut out = Vec::new();
    for label in read_label_records(path)? {
        if let Some(detection) = label_to_detection(&label, calib)? {
            out.push(GroundTruth { detection, difficulty: assign_difficulty(&label) });
        }
    }
    Ok(out)
}

pub fn write_label_records(path: impl AsRef<Path>, labels: &[KittiLabel]) -> Result<(), KittiError> {
    let path = path.as_ref();
    let mut text = String::new();
    for l in labels {
        text.push_str(&l.to_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Writes detections with their score column.
pub fn write_label(path: impl AsRef<Path>, detections: &[Detection], calib: &Calibration) -> Result<(), KittiError> {
    let meta = LabelMeta::default();
    let labels: Vec<_> = detections.iter().map(|d| detection_to_label(d, calib, &meta, true)).collect();
    write_label_records(path, &labels)
}

/// Writes ground truth without a score column, encoding each tier in the
/// image-derived fields.
pub fn write_ground_truth(
    path: impl AsRef<Path>,
    objects: &[GroundTruth],
    calib: &Calibration,
) -> Result<(), KittiError> {
    let labels: Vec<_> = objects
        .iter()
        .map(|g| detection_to_label(&g.detection, calib, &LabelMeta::for_difficulty(g.difficulty), false))
        .collect();
    write_label_records(path, &labels)
}
