//! Points, oriented boxes and the numerical kernels built on them.
//!
//! All coordinates live in the LiDAR frame: x forward, y left, z up, meters.
//! A [`Box3D`] is parameterized by its volumetric center, its extents
//! `(l, w, h)` along its own axes and a yaw about +z normalized to `(-π, π]`.

mod hull;
mod iou;
mod transform;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hull::{convex_hull, min_area_rect, polygon_area, Rect2};
pub use iou::{bev_iou, clip_convex, iou_3d, CLIP_EPS};
pub use transform::{box_corners, flip_y, points_in_box, rotate_z, scale, transform_box, Transform};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("box extents must be positive, got l={l} w={w} h={h}")]
    NonPositiveSize { l: f64, w: f64, h: f64 },
    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("reflectance has {got} entries for {expected} points")]
    ReflectanceLength { expected: usize, got: usize },
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_yaw(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// An ordered set of points with optional per-point reflectance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub reflectance: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points, reflectance: None }
    }

    pub fn with_reflectance(points: Vec<Point3>, reflectance: Vec<f64>) -> Result<Self, GeometryError> {
        let cloud = Self { points, reflectance: Some(reflectance) };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.points.iter().all(Point3::is_finite) {
            return Err(GeometryError::NonFinite("point coordinates"));
        }
        if let Some(r) = &self.reflectance {
            if r.len() != self.points.len() {
                return Err(GeometryError::ReflectanceLength { expected: self.points.len(), got: r.len() });
            }
            if !r.iter().all(|v| v.is_finite()) {
                return Err(GeometryError::NonFinite("reflectance"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Copies the points at `indices` (in that order) into a new cloud.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            reflectance: self.reflectance.as_ref().map(|r| indices.iter().map(|&i| r[i]).collect()),
        }
    }

    /// Appends `other`. Missing reflectance on either side is filled with zeros.
    pub fn extend(&mut self, other: &PointCloud) {
        match (&mut self.reflectance, &other.reflectance) {
            (Some(mine), Some(theirs)) => mine.extend_from_slice(theirs),
            (Some(mine), None) => mine.extend(std::iter::repeat_n(0.0, other.len())),
            (None, Some(theirs)) if self.points.is_empty() => {
                self.reflectance = Some(theirs.clone());
            }
            (None, Some(theirs)) => {
                let mut r = vec![0.0; self.points.len()];
                r.extend_from_slice(theirs);
                self.reflectance = Some(r);
            }
            (None, None) => {}
        }
        self.points.extend_from_slice(&other.points);
    }

    /// Keeps the points for which `keep(index)` holds.
    pub fn retain_indices(&mut self, mut keep: impl FnMut(usize) -> bool) {
        let flags: Vec<bool> = (0..self.points.len()).map(&mut keep).collect();
        let mut i = 0;
        self.points.retain(|_| {
            i += 1;
            flags[i - 1]
        });
        if let Some(r) = &mut self.reflectance {
            let mut i = 0;
            r.retain(|_| {
                i += 1;
                flags[i - 1]
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Size3 {
    pub l: f64,
    pub w: f64,
    pub h: f64,
}

impl Size3 {
    pub const fn new(l: f64, w: f64, h: f64) -> Self {
        Self { l, w, h }
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }
}

/// Oriented 3D box: volumetric center, extents and yaw about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: Point3,
    pub size: Size3,
    pub yaw: f64,
}

impl Box3D {
    /// Validates extents and normalizes `yaw`.
    pub fn new(center: Point3, size: Size3, yaw: f64) -> Result<Self, GeometryError> {
        if !center.is_finite() || !yaw.is_finite() {
            return Err(GeometryError::NonFinite("box parameters"));
        }
        if !(size.l > 0.0 && size.w > 0.0 && size.h > 0.0)
            || !(size.l.is_finite() && size.w.is_finite() && size.h.is_finite())
        {
            return Err(GeometryError::NonPositiveSize { l: size.l, w: size.w, h: size.h });
        }
        Ok(Self { center, size, yaw: normalize_yaw(yaw) })
    }

    pub fn volume(&self) -> f64 {
        self.size.volume()
    }

    pub fn z_min(&self) -> f64 {
        self.center.z - self.size.h / 2.0
    }

    pub fn z_max(&self) -> f64 {
        self.center.z + self.size.h / 2.0
    }

    /// Footprint corners in the x-y plane, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.size.l / 2.0, self.size.w / 2.0);
        let local = [[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]];
        local.map(|[u, v]| [self.center.x + u * c - v * s, self.center.y + u * s + v * c])
    }

    /// Radius of the circle enclosing the footprint.
    pub fn bev_radius(&self) -> f64 {
        0.5 * (self.size.l * self.size.l + self.size.w * self.size.w).sqrt()
    }
}

/// The three evaluated object categories, in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [Self::Car, Self::Pedestrian, Self::Cyclist];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Option<Self> {
        Self::ALL.get(k).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Car => "Car",
            Self::Pedestrian => "Pedestrian",
            Self::Cyclist => "Cyclist",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// A scored, classified box. `scores`, when non-empty, holds the per-class
/// confidences `p(k|x)` the detector produced; `confidence` is the score of
/// `class_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub class_id: usize,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
}

impl Detection {
    pub fn new(bbox: Box3D, class_id: usize, confidence: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::Confidence(confidence));
        }
        Ok(Self { bbox, class_id, confidence, scores: Vec::new() })
    }

    pub fn with_scores(mut self, scores: Vec<f64>) -> Self {
        self.scores = scores;
        self
    }
}
