//! Small planar geometry helpers.

use nalgebra::{Matrix3, Point2, Vector3};

/// Applies a 3x3 homography to a point. Returns `None` on the line at infinity.
pub fn apply_homography(h: &Matrix3<f64>, p: Point2<f64>) -> Option<Point2<f64>> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    if v.z.abs() < 1e-15 {
        return None;
    }
    Some(Point2::new(v.x / v.z, v.y / v.z))
}

#[inline]
pub fn cross(o: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Unsigned angle in `[0, pi]` between two vectors.
pub fn angle_between(a: nalgebra::Vector2<f64>, b: nalgebra::Vector2<f64>) -> f64 {
    let c = a.x * b.y - a.y * b.x;
    let d = a.dot(&b);
    c.abs().atan2(d)
}

/// Convex hull (Andrew's monotone chain), counter-clockwise in a y-up frame,
/// without collinear points.
pub fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts: Vec<Point2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2<f64>> = Vec::with_capacity(pts.len() * 2);
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

/// Signed shoelace area (positive for counter-clockwise in a y-up frame).
pub fn signed_area(poly: &[Point2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        s += a.x * b.y - b.x * a.y;
    }
    s / 2.0
}

pub fn polygon_area(poly: &[Point2<f64>]) -> f64 {
    signed_area(poly).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_grid_is_its_corners() {
        let pts: Vec<Point2<f64>> = (0..4)
            .flat_map(|y| (0..4).map(move |x| Point2::new(x as f64, y as f64)))
            .collect();
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!((polygon_area(&hull) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn homography_identity_and_angles() {
        let p = Point2::new(3.0, -2.0);
        assert_eq!(apply_homography(&Matrix3::identity(), p), Some(p));
        let a = angle_between(
            nalgebra::Vector2::new(1.0, 0.0),
            nalgebra::Vector2::new(0.0, -2.0),
        );
        assert!((a - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
