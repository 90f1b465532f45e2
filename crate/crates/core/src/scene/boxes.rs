use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use super::{AxisAlignedBox, OrientedBox, Vec3};
use crate::error::{Error, Result};

pub fn fit_aabb(points: &[Vec3]) -> Result<AxisAlignedBox> {
    let (first, rest) = points.split_first().ok_or(Error::Empty("box points"))?;
    let (min, max) = rest
        .iter()
        .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    Ok(AxisAlignedBox { min, max })
}

/// Andrew's monotone chain. Returns the hull counter-clockwise without
/// repeating the first vertex; collinear points are dropped.
pub fn convex_hull_2d(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Minimum-area enclosing rectangle of a convex polygon by rotating
/// calipers. Returns `(center, half_extents, angle)` with the angle of the
/// first rectangle axis.
pub fn min_area_rect(hull: &[[f64; 2]]) -> Option<([f64; 2], [f64; 2], f64)> {
    if hull.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, [f64; 2], [f64; 2], f64)> = None;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        if dx == 0.0 && dy == 0.0 {
            continue;
        }
        let theta = dy.atan2(dx);
        let (s, c) = theta.sin_cos();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in hull {
            let u = c * p[0] + s * p[1];
            let v = -s * p[0] + c * p[1];
            lo[0] = lo[0].min(u);
            hi[0] = hi[0].max(u);
            lo[1] = lo[1].min(v);
            hi[1] = hi[1].max(v);
        }
        let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        if best.as_ref().map_or(true, |b| area < b.0) {
            let mu = (lo[0] + hi[0]) / 2.0;
            let mv = (lo[1] + hi[1]) / 2.0;
            let center = [c * mu - s * mv, s * mu + c * mv];
            let half = [(hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0];
            best = Some((area, center, half, theta));
        }
    }
    best.map(|(_, c, h, t)| (c, h, t))
}

/// Yaw-only box with minimal horizontal footprint.
///
/// Collinear (or single-point) footprints fall back to the axis-aligned box
/// with zero yaw. The yaw is reported in `[-pi/4, pi/4)`: a rectangle is
/// symmetric under quarter turns once its extents are swapped.
pub fn fit_oriented_box(points: &[Vec3]) -> Result<OrientedBox> {
    let aabb = fit_aabb(points)?;
    let xy: Vec<[f64; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
    let hull = convex_hull_2d(&xy);
    let zc = (aabb.min.z + aabb.max.z) / 2.0;
    let hz = (aabb.max.z - aabb.min.z) / 2.0;
    let Some((center, half, theta)) = min_area_rect(&hull) else {
        let c = aabb.center();
        let h = aabb.size() / 2.0;
        return Ok(OrientedBox {
            center: c,
            half_extents: h,
            yaw: 0.0,
        });
    };
    let (yaw, swap) = canonical_quarter_turn(theta);
    let (hx, hy) = if swap {
        (half[1], half[0])
    } else {
        (half[0], half[1])
    };
    Ok(OrientedBox {
        center: Vec3::new(center[0], center[1], zc),
        half_extents: Vec3::new(hx, hy, hz),
        yaw,
    })
}

fn canonical_quarter_turn(theta: f64) -> (f64, bool) {
    let k = (theta / FRAC_PI_2).round();
    let mut yaw = theta - k * FRAC_PI_2;
    let mut odd = (k as i64).rem_euclid(2) == 1;
    if yaw >= FRAC_PI_4 {
        yaw -= FRAC_PI_2;
        odd = !odd;
    } else if yaw < -FRAC_PI_4 {
        yaw += FRAC_PI_2;
        odd = !odd;
    }
    (yaw, odd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Footprint area of the yaw-rotated bounding rectangle, evaluated by
    /// direct projection. Independent of the hull and caliper code.
    fn footprint_at(points: &[Vec3], yaw: f64) -> f64 {
        let (s, c) = yaw.sin_cos();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            let u = c * p.x + s * p.y;
            let v = -s * p.x + c * p.y;
            lo[0] = lo[0].min(u);
            hi[0] = hi[0].max(u);
            lo[1] = lo[1].min(v);
            hi[1] = hi[1].max(v);
        }
        (hi[0] - lo[0]) * (hi[1] - lo[1])
    }

    fn sweep_min(points: &[Vec3], step_deg: f64) -> (f64, f64) {
        let steps = (90.0 / step_deg).round() as usize;
        (0..steps)
            .map(|i| {
                let yaw = (i as f64 * step_deg).to_radians();
                (footprint_at(points, yaw), yaw)
            })
            .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a })
    }

    #[test]
    fn aabb_of_unit_cube_corners() {
        let corners: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let b = fit_aabb(&corners).unwrap();
        assert_eq!(b.min, Vec3::zeros());
        assert_eq!(b.max, Vec3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn aabb_of_single_point_is_degenerate() {
        let p = Vec3::new(0.3, -2.0, 7.5);
        let b = fit_aabb(&[p]).unwrap();
        assert_eq!(b.min, p);
        assert_eq!(b.max, p);
    }

    #[test]
    fn aabb_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..3.0)))
            .collect();
        let b = fit_aabb(&pts).unwrap();
        for k in 0..3 {
            let lo = pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(b.min[k], lo);
            assert_eq!(b.max[k], hi);
        }
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(fit_aabb(&[]).is_err());
        assert!(fit_oriented_box(&[]).is_err());
    }

    #[test]
    fn axis_aligned_rectangle_has_zero_yaw() {
        let mut pts = Vec::new();
        for i in 0..=10 {
            for j in 0..=4 {
                pts.push(Vec3::new(i as f64 * 0.2, j as f64 * 0.1, 0.0));
                pts.push(Vec3::new(i as f64 * 0.2, j as f64 * 0.1, 0.5));
            }
        }
        let b = fit_oriented_box(&pts).unwrap();
        assert_eq!(b.yaw, 0.0);
        assert!((b.half_extents.x - 1.0).abs() < 1e-12);
        assert!((b.half_extents.y - 0.2).abs() < 1e-12);
        assert!((b.half_extents.z - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rotated_square_recovers_quarter_pi() {
        let yaw = std::f64::consts::FRAC_PI_4;
        let (s, c) = yaw.sin_cos();
        let mut pts = Vec::new();
        for i in 0..=20 {
            for j in 0..=20 {
                let (a, b) = (i as f64 / 20.0 - 0.5, j as f64 / 20.0 - 0.5);
                pts.push(Vec3::new(c * a - s * b, s * a + c * b, 0.0));
            }
        }
        pts.push(Vec3::new(0.0, 0.0, 1.0));
        let b = fit_oriented_box(&pts).unwrap();
        // The 0.1 degree sweep oracle lands on 45 degrees.
        let (_, sweep_yaw) = sweep_min(&pts, 0.1);
        let m = |y: f64| y.rem_euclid(FRAC_PI_2);
        assert!((m(sweep_yaw) - FRAC_PI_4).abs() < 1e-9);
        assert!((m(b.yaw) - FRAC_PI_4).abs() < 1e-9, "yaw {}", b.yaw);
        assert!((b.footprint_area() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_footprint_falls_back_to_aabb() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, i as f64, i as f64 * 0.1)).collect();
        let b = fit_oriented_box(&pts).unwrap();
        assert_eq!(b.yaw, 0.0);
        assert_eq!(b.center, Vec3::new(2.0, 2.0, 0.2));
    }

    #[test]
    fn random_points_beat_the_sweep_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let pts: Vec<Vec3> = (0..500)
                .map(|_| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)))
                .collect();
            let b = fit_oriented_box(&pts).unwrap();
            let (oracle, _) = sweep_min(&pts, 1.0);
            assert!(b.footprint_area() <= oracle + 1e-6);
            assert!((footprint_at(&pts, b.yaw) - b.footprint_area()).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn boxes_contain_their_points(raw in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -1.0f64..3.0), 1..80)) {
            let pts: Vec<Vec3> = raw.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let aabb = fit_aabb(&pts).unwrap();
            let obb = fit_oriented_box(&pts).unwrap();
            for p in &pts {
                prop_assert!(aabb.contains(p, 1e-12));
                prop_assert!(obb.contains(p, 1e-9));
            }
            let aabb_area = aabb.size().x * aabb.size().y;
            prop_assert!(obb.footprint_area() <= aabb_area + 1e-9);
            prop_assert!(obb.yaw >= -FRAC_PI_4 && obb.yaw < FRAC_PI_4);
        }
    }
}
