use std::cmp::Ordering;

use super::hull::polygon_area;
use super::Box3D;

/// Tolerance, in meters, for classifying a vertex as on the inner side of a
/// clipping edge.
pub const CLIP_EPS: f64 = 1e-9;

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    // Point on segment p->q where it crosses the infinite line a->b.
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland-Hodgman: clips `subject` against the convex, counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        let inside = |p: [f64; 2]| {
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            cross(a, b, p) >= -CLIP_EPS * len
        };
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            match (inside(prev), inside(cur)) {
                (true, true) => output.push(cur),
                (true, false) => output.push(line_intersection(prev, cur, a, b)),
                (false, true) => {
                    output.push(line_intersection(prev, cur, a, b));
                    output.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    output
}

fn canonical_cmp(a: &Box3D, b: &Box3D) -> Ordering {
    let key = |x: &Box3D| [x.center.x, x.center.y, x.center.z, x.size.l, x.size.w, x.size.h, x.yaw];
    key(a).iter().zip(key(b).iter()).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Footprint intersection area. The argument order is canonicalized so the
/// result is exactly symmetric.
fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let (a, b) = if canonical_cmp(a, b).is_gt() { (b, a) } else { (a, b) };
    if a.center.x == b.center.x
        && a.center.y == b.center.y
        && a.size.l == b.size.l
        && a.size.w == b.size.w
        && a.yaw == b.yaw
    {
        return a.size.l * a.size.w;
    }
    let dx = a.center.x - b.center.x;
    let dy = a.center.y - b.center.y;
    let reach = a.bev_radius() + b.bev_radius();
    if dx * dx + dy * dy > reach * reach {
        return 0.0;
    }
    let poly = clip_convex(&a.bev_corners(), &b.bev_corners());
    if poly.len() < 3 {
        return 0.0;
    }
    polygon_area(&poly).max(0.0)
}

/// Intersection over union of the two boxes' footprints in the x-y plane.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.size.l * a.size.w + b.size.l * b.size.w - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric intersection over union: footprint overlap times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let dz = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(a, b) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::{Point3, Size3};

    fn bx(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, yaw: f64) -> Box3D {
        Box3D::new(Point3::new(x, y, z), Size3::new(l, w, h), yaw).unwrap()
    }

    #[test]
    fn identical_boxes() {
        let a = bx(1.0, 2.0, 0.0, 4.0, 1.7, 1.5, 0.4);
        assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-9);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_boxes() {
        let a = bx(0.0, 0.0, 0.0, 4.0, 2.0, 1.0, 0.3);
        let b = bx(10.0, 0.0, 0.0, 4.0, 2.0, 1.0, -1.1);
        assert_eq!(bev_iou(&a, &b), 0.0);
        let c = bx(0.0, 0.0, 5.0, 4.0, 2.0, 1.0, 0.3);
        assert_eq!(iou_3d(&a, &c), 0.0);
        assert_eq!(bev_iou(&a, &c), 1.0);
    }

    #[test]
    fn half_overlap_is_one_third() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert!((bev_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn touching_edges_give_zero() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        let b = bx(2.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        assert!(bev_iou(&a, &b) <= 1e-9);
    }

    #[test]
    fn rotated_square_inside_square() {
        // A square rotated 45 degrees with half-diagonal 1 inside a 2x2 square:
        // intersection is the whole inner square (area 2).
        let outer = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        let inner = bx(0.0, 0.0, 0.0, 2f64.sqrt(), 2f64.sqrt(), 1.0, PI / 4.0);
        assert!((bev_iou(&outer, &inner) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let mut r = || {
                bx(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.5..4.0),
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.5..2.0),
                    rng.random_range(-PI..PI),
                )
            };
            let (a, b) = (r(), r());
            let (ab, ba) = (bev_iou(&a, &b), bev_iou(&b, &a));
            assert_eq!(ab, ba);
            assert!((0.0..=1.0).contains(&ab));
            assert_eq!(iou_3d(&a, &b), iou_3d(&b, &a));
            assert!(ab < 1.0);
        }
    }

    #[test]
    fn yaw_half_turn_only_matters_when_not_square() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.3);
        let b = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.3 + PI / 2.0);
        assert!((bev_iou(&a, &b) - 1.0).abs() < 1e-9);
        let c = bx(0.0, 0.0, 0.0, 4.0, 2.0, 1.0, 0.3);
        let d = bx(0.0, 0.0, 0.0, 4.0, 2.0, 1.0, 0.3 + PI / 2.0);
        assert!(bev_iou(&c, &d) < 0.5);
    }
}
