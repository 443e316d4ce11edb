//! Normalized direct linear transform.

use nalgebra::{DMatrix, Matrix3, Point2};

use crate::error::{Error, Result};

/// Similarity that moves the centroid to the origin and scales the mean
/// distance from it to `sqrt(2)`.
fn normalizer(points: &[Point2<f64>]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (mx, my) = (mx / n, my / n);
    let mean_dist = points
        .iter()
        .map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 1e-12) || !mean_dist.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(
        s,
        0.0,
        -s * mx,
        0.0,
        s,
        -s * my,
        0.0,
        0.0,
        1.0,
    ))
}

/// Homography `H` with `dst ~ H * src`, scaled so `H[(2, 2)] = 1`.
pub fn homography_dlt(src: &[Point2<f64>], dst: &[Point2<f64>]) -> Result<Matrix3<f64>> {
    if src.len() != dst.len() {
        return Err(Error::InvalidArgument(format!(
            "{} source points but {} targets",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 correspondences, got {}",
            src.len()
        )));
    }
    if src
        .iter()
        .chain(dst)
        .any(|p| !(p.x.is_finite() && p.y.is_finite()))
    {
        return Err(Error::InvalidArgument("non-finite point".into()));
    }
    let degenerate = || Error::DegenerateGeometry("points do not determine a homography".into());
    let ts = normalizer(src).ok_or_else(degenerate)?;
    let td = normalizer(dst).ok_or_else(degenerate)?;

    let n = src.len();
    // pad to a square system so the SVD exposes the full right null space
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = ts.transform_point(s);
        let d = td.transform_point(d);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericFailure("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    if sv(7) <= 1e-10 * sv(0) {
        return Err(degenerate());
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or_else(degenerate)?;
    let hm = td_inv * hn * ts;
    let scale = hm[(2, 2)];
    if scale.abs() < 1e-12 * hm.norm() {
        return Err(Error::DegenerateGeometry(
            "homography maps the origin to infinity".into(),
        ));
    }
    Ok(hm / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::apply_homography;

    fn square() -> Vec<Point2<f64>> {
        vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ]
    }

    #[test]
    fn identity_from_four_points() {
        let h = homography_dlt(&square(), &square()).unwrap();
        assert!((h - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn recovers_known_homography() {
        let truth = Matrix3::new(1.2, 0.1, 30.0, -0.05, 0.9, 12.0, 1e-3, -2e-3, 1.0);
        let src: Vec<Point2<f64>> = (0..5)
            .flat_map(|j| (0..5).map(move |i| Point2::new(i as f64 * 20.0, j as f64 * 20.0)))
            .collect();
        let dst: Vec<Point2<f64>> = src
            .iter()
            .map(|&p| apply_homography(&truth, p).unwrap())
            .collect();
        let h = homography_dlt(&src, &dst).unwrap();
        let rel = (h - truth).norm() / truth.norm();
        assert!(rel < 1e-6, "relative error {rel}");
        let pick = |v: &[Point2<f64>]| [0, 4, 20, 24].map(|i| v[i]);
        let h4 = homography_dlt(&pick(&src), &pick(&dst)).unwrap();
        assert!((h4 - truth).norm() / truth.norm() < 1e-6);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let src = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(0.0, 1.0),
        ];
        let dst = src.clone();
        assert!(matches!(
            homography_dlt(&src, &dst),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(matches!(
            homography_dlt(&src[..3], &dst[..3]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn invariant_to_pixel_scaling() {
        let truth = Matrix3::new(0.8, 0.2, 5.0, 0.1, 1.1, -3.0, 2e-3, 1e-3, 1.0);
        let src: Vec<Point2<f64>> = (0..4)
            .flat_map(|j| (0..4).map(move |i| Point2::new(i as f64, j as f64)))
            .collect();
        let dst: Vec<Point2<f64>> = src
            .iter()
            .map(|&p| apply_homography(&truth, p).unwrap())
            .collect();
        let k = 7.5;
        let scaled: Vec<Point2<f64>> = dst.iter().map(|p| Point2::new(p.x * k, p.y * k)).collect();
        let h1 = homography_dlt(&src, &dst).unwrap();
        let h2 = homography_dlt(&src, &scaled).unwrap();
        let s = Matrix3::new(k, 0.0, 0.0, 0.0, k, 0.0, 0.0, 0.0, 1.0);
        let expect = s * h1;
        let expect = expect / expect[(2, 2)];
        assert!((h2 - expect).norm() / expect.norm() < 1e-9);
    }
}
