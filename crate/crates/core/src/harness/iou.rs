//! 3D intersection-over-union for axis-aligned and yaw-only boxes.

use serde::{Deserialize, Serialize};

use crate::scene::{AxisAlignedBox, OrientedBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalBox {
    Axis(AxisAlignedBox),
    Oriented(OrientedBox),
}

impl EvalBox {
    pub fn volume(&self) -> f64 {
        match self {
            EvalBox::Axis(b) => b.volume(),
            EvalBox::Oriented(b) => b.volume(),
        }
    }
}

pub fn iou_aabb(a: &AxisAlignedBox, b: &AxisAlignedBox) -> f64 {
    let (va, vb) = (a.volume(), b.volume());
    if !(va > 0.0 && vb > 0.0) {
        return 0.0;
    }
    let lo = a.min.sup(&b.min);
    let hi = a.max.inf(&b.max);
    let d = hi - lo;
    if d.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    let inter = d.x * d.y * d.z;
    (inter / (va + vb - inter)).clamp(0.0, 1.0)
}

fn polygon_area(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    if n < 3 {
        return 0.0;
    }
    let s: f64 = (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum();
    (s / 2.0).abs()
}

/// Sutherland-Hodgman clipping of `subject` by the convex CCW `clip`.
pub fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (side(p), side(q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

pub fn iou_obb(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (va, vb) = (a.volume(), b.volume());
    if !(va > 0.0 && vb > 0.0) {
        return 0.0;
    }
    let z = (a.center.z + a.half_extents.z).min(b.center.z + b.half_extents.z)
        - (a.center.z - a.half_extents.z).max(b.center.z - b.half_extents.z);
    if z <= 0.0 {
        return 0.0;
    }
    let area = polygon_area(&clip_polygon(&a.footprint(), &b.footprint()));
    let inter = area * z;
    (inter / (va + vb - inter)).clamp(0.0, 1.0)
}

/// Axis-aligned pairs are exact; any oriented operand switches to the
/// footprint-clipping path.
pub fn iou_3d(a: &EvalBox, b: &EvalBox) -> f64 {
    match (a, b) {
        (EvalBox::Axis(x), EvalBox::Axis(y)) => iou_aabb(x, y),
        (EvalBox::Axis(x), EvalBox::Oriented(y)) => iou_obb(&x.to_oriented(), y),
        (EvalBox::Oriented(x), EvalBox::Axis(y)) => iou_obb(x, &y.to_oriented()),
        (EvalBox::Oriented(x), EvalBox::Oriented(y)) => iou_obb(x, y),
    }
}
