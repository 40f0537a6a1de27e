use serde::{Deserialize, Serialize};

use super::{normalize_yaw, Box3D, GeometryError, Point3, PointCloud, Size3};

/// A global rigid or scaling transform that acts on clouds and boxes alike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    RotateZ(f64),
    Scale(f64),
    FlipY,
}

impl Transform {
    pub fn apply_cloud(&self, cloud: &PointCloud) -> Result<PointCloud, GeometryError> {
        match *self {
            Transform::RotateZ(a) => Ok(rotate_z(cloud, a)),
            Transform::Scale(s) => scale(cloud, s),
            Transform::FlipY => Ok(flip_y(cloud)),
        }
    }

    pub fn apply_box(&self, bbox: &Box3D) -> Result<Box3D, GeometryError> {
        transform_box(bbox, *self)
    }
}

fn map_points(cloud: &PointCloud, f: impl Fn(&Point3) -> Point3) -> PointCloud {
    PointCloud { points: cloud.points.iter().map(f).collect(), reflectance: cloud.reflectance.clone() }
}

#[inline]
fn rotate_point(p: &Point3, sin: f64, cos: f64) -> Point3 {
    Point3::new(p.x * cos - p.y * sin, p.x * sin + p.y * cos, p.z)
}

/// Rotates every point about the z axis by `angle` radians (counter-clockwise
/// seen from +z).
pub fn rotate_z(cloud: &PointCloud, angle: f64) -> PointCloud {
    let (s, c) = angle.sin_cos();
    map_points(cloud, |p| rotate_point(p, s, c))
}

pub fn scale(cloud: &PointCloud, s: f64) -> Result<PointCloud, GeometryError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(GeometryError::NonPositiveScale(s));
    }
    Ok(map_points(cloud, |p| Point3::new(p.x * s, p.y * s, p.z * s)))
}

/// Reflects across the x-z plane: `(x, y, z) -> (x, -y, z)`.
pub fn flip_y(cloud: &PointCloud) -> PointCloud {
    map_points(cloud, |p| Point3::new(p.x, -p.y, p.z))
}

/// Applies `op` to a box so that it stays consistent with a cloud transformed
/// by the same op.
pub fn transform_box(bbox: &Box3D, op: Transform) -> Result<Box3D, GeometryError> {
    match op {
        Transform::RotateZ(a) => {
            let (s, c) = a.sin_cos();
            Ok(Box3D { center: rotate_point(&bbox.center, s, c), size: bbox.size, yaw: normalize_yaw(bbox.yaw + a) })
        }
        Transform::Scale(s) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(GeometryError::NonPositiveScale(s));
            }
            let c = bbox.center;
            Ok(Box3D {
                center: Point3::new(c.x * s, c.y * s, c.z * s),
                size: Size3::new(bbox.size.l * s, bbox.size.w * s, bbox.size.h * s),
                yaw: bbox.yaw,
            })
        }
        Transform::FlipY => Ok(Box3D {
            center: Point3::new(bbox.center.x, -bbox.center.y, bbox.center.z),
            size: bbox.size,
            yaw: normalize_yaw(-bbox.yaw),
        }),
    }
}

/// The eight corners of `bbox`.
///
/// Order: the bottom face counter-clockwise viewed from +z starting at the
/// local `(-l/2, -w/2)` corner, then the top face in the same order.
pub fn box_corners(bbox: &Box3D) -> [Point3; 8] {
    let foot = bbox.bev_corners();
    let (lo, hi) = (bbox.z_min(), bbox.z_max());
    std::array::from_fn(|i| {
        let [x, y] = foot[i % 4];
        Point3::new(x, y, if i < 4 { lo } else { hi })
    })
}

/// Indices of the points inside `bbox`, boundary included.
pub fn points_in_box(cloud: &PointCloud, bbox: &Box3D) -> Vec<usize> {
    let (s, c) = bbox.yaw.sin_cos();
    let (hl, hw, hh) = (bbox.size.l / 2.0, bbox.size.w / 2.0, bbox.size.h / 2.0);
    let ctr = bbox.center;
    cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let (dx, dy, dz) = (p.x - ctr.x, p.y - ctr.y, p.z - ctr.z);
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            u.abs() <= hl && v.abs() <= hw && dz.abs() <= hh
        })
        .map(|(i, _)| i)
        .collect()
}
