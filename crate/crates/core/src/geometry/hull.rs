use serde::{Deserialize, Serialize};

/// Oriented rectangle in the x-y plane. `length >= width`; `angle` is the
/// direction of the length axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect2 {
    pub center: [f64; 2],
    pub length: f64,
    pub width: f64,
    pub angle: f64,
}

impl Rect2 {
    pub fn area(&self) -> f64 {
        self.length * self.width
    }
}

/// Absolute area of a simple polygon (shoelace formula).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum();
    0.5 * twice.abs()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, without
/// collinear vertices.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn extent_along(hull: &[[f64; 2]], angle: f64) -> (f64, f64, f64, f64) {
    let (s, c) = angle.sin_cos();
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in hull {
        let u = p[0] * c + p[1] * s;
        let v = -p[0] * s + p[1] * c;
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    (umin, umax, vmin, vmax)
}

/// Minimum-area enclosing rectangle of a point set, by rotating calipers over
/// the convex hull edges. Returns `None` for an empty input.
pub fn min_area_rect(points: &[[f64; 2]]) -> Option<Rect2> {
    let hull = convex_hull(points);
    if hull.is_empty() {
        return None;
    }
    let mut angles: Vec<f64> = (0..hull.len())
        .map(|i| {
            let (p, q) = (hull[i], hull[(i + 1) % hull.len()]);
            (q[1] - p[1]).atan2(q[0] - p[0])
        })
        .collect();
    if hull.len() == 1 {
        angles = vec![0.0];
    }
    let mut best: Option<(f64, Rect2)> = None;
    for angle in angles {
        let (umin, umax, vmin, vmax) = extent_along(&hull, angle);
        let (du, dv) = (umax - umin, vmax - vmin);
        let area = du * dv;
        if best.as_ref().is_some_and(|(a, _)| *a <= area) {
            continue;
        }
        let (s, c) = angle.sin_cos();
        let (uc, vc) = ((umin + umax) / 2.0, (vmin + vmax) / 2.0);
        let center = [uc * c - vc * s, uc * s + vc * c];
        let rect = if du >= dv {
            Rect2 { center, length: du, width: dv, angle }
        } else {
            Rect2 { center, length: dv, width: du, angle: angle + std::f64::consts::FRAC_PI_2 }
        };
        best = Some((area, rect));
    }
    best.map(|(_, r)| r)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn hull_of_square_with_interior() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5], [0.5, 0.0]];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert!((polygon_area(&h) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rect_of_rotated_rectangle() {
        let a = 0.6f64;
        let (s, c) = a.sin_cos();
        let pts: Vec<[f64; 2]> = [[-2.0, -1.0], [2.0, -1.0], [2.0, 1.0], [-2.0, 1.0]]
            .iter()
            .map(|p| [p[0] * c - p[1] * s + 5.0, p[0] * s + p[1] * c - 3.0])
            .collect();
        let r = min_area_rect(&pts).unwrap();
        assert!((r.length - 4.0).abs() < 1e-9);
        assert!((r.width - 2.0).abs() < 1e-9);
        assert!((r.center[0] - 5.0).abs() < 1e-9 && (r.center[1] + 3.0).abs() < 1e-9);
        assert!(
            ((r.angle - a).rem_euclid(std::f64::consts::PI))
                .min(std::f64::consts::PI - (r.angle - a).rem_euclid(std::f64::consts::PI))
                < 1e-9
        );
    }

    #[test]
    fn degenerate_inputs() {
        assert!(min_area_rect(&[]).is_none());
        let r = min_area_rect(&[[1.0, 2.0]]).unwrap();
        assert_eq!(r.area(), 0.0);
        let r = min_area_rect(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert!((r.length - 5.0).abs() < 1e-12);
        assert!(r.width.abs() < 1e-12);
    }

    #[test]
    fn calipers_beat_one_degree_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            // Roundish random hulls: the 1-degree grid cannot resolve the
            // optimum of long thin slivers to 1%.
            let n = rng.random_range(12..60);
            let stretch = rng.random_range(1.0..1.5);
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| {
                    let (r, t) = (rng.random_range(0.0f64..1.0).sqrt(), rng.random_range(0.0..6.3f64));
                    [stretch * r * t.cos(), r * t.sin()]
                })
                .collect();
            let r = min_area_rect(&pts).unwrap();
            let scan = (0..180)
                .map(|d| {
                    let (umin, umax, vmin, vmax) = extent_along(&pts, (d as f64).to_radians());
                    (umax - umin) * (vmax - vmin)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(r.area() <= scan + 1e-9);
            assert!(scan <= r.area() * 1.01 + 1e-9, "scan {scan} rect {}", r.area());
            // every point enclosed
            let (s, c) = r.angle.sin_cos();
            for p in &pts {
                let (dx, dy) = (p[0] - r.center[0], p[1] - r.center[1]);
                assert!((dx * c + dy * s).abs() <= r.length / 2.0 + 1e-9);
                assert!((-dx * s + dy * c).abs() <= r.width / 2.0 + 1e-9);
            }
        }
    }
}
