//! Pinhole projection, z-buffering and per-view superpoint observations.
//!
//! Pixels are addressed by flat cell index `y * width + x`; a projected
//! point occupies the cell containing its continuous `(u, v)` coordinate.

use serde::{Deserialize, Serialize};

use crate::scene::{CameraIntrinsics, Frame, PointCloud, Pose, Vec3};

pub const DEFAULT_OCCLUSION_TOL: f64 = 0.05;
pub const DEFAULT_SPLAT_RADIUS: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    pub fn cell(&self, width: u32) -> usize {
        self.v as usize * width as usize + self.u as usize
    }

    pub fn pixel(&self) -> (u32, u32) {
        (self.u as u32, self.v as u32)
    }
}

/// Projects one world point; `None` when behind the camera or outside the
/// half-open image domain.
pub fn project_point(p: &Vec3, pose: &Pose, k: &CameraIntrinsics) -> Option<Projection> {
    let c = pose.world_to_camera(p);
    if !(c.z > 0.0) {
        return None;
    }
    let u = k.fx * c.x / c.z + k.cx;
    let v = k.fy * c.y / c.z + k.cy;
    let inside = u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64;
    inside.then_some(Projection { u, v, depth: c.z })
}

pub fn project_points(points: &[Vec3], pose: &Pose, k: &CameraIntrinsics) -> Vec<Option<Projection>> {
    points.iter().map(|p| project_point(p, pose, k)).collect()
}

/// Per-pixel nearest depth of the splatted cloud. Empty cells are `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZBuffer {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
}

impl ZBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; width as usize * height as usize],
        }
    }

    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.depth[y as usize * self.width as usize + x as usize]
    }

    /// Writes `depth` into every cell within `radius` (Euclidean, integer
    /// offsets) of `(cx, cy)`, keeping the minimum.
    pub fn splat(&mut self, cx: u32, cy: u32, radius: u32, depth: f64) {
        let r = radius as i64;
        let (w, h) = (self.width as i64, self.height as i64);
        for dy in -r..=r {
            let y = cy as i64 + dy;
            if y < 0 || y >= h {
                continue;
            }
            for dx in -r..=r {
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let x = cx as i64 + dx;
                if x < 0 || x >= w {
                    continue;
                }
                let cell = &mut self.depth[(y * w + x) as usize];
                if depth < *cell {
                    *cell = depth;
                }
            }
        }
    }
}

pub fn build_zbuffer(cloud: &PointCloud, pose: &Pose, k: &CameraIntrinsics, splat_radius: u32) -> ZBuffer {
    let mut zb = ZBuffer::new(k.width, k.height);
    for p in cloud.positions() {
        if let Some(pr) = project_point(p, pose, k) {
            let (x, y) = pr.pixel();
            zb.splat(x, y, splat_radius, pr.depth);
        }
    }
    zb
}

pub fn build_frame_zbuffer(cloud: &PointCloud, frame: &Frame, splat_radius: u32) -> ZBuffer {
    build_zbuffer(cloud, &frame.pose, &frame.intrinsics, splat_radius)
}

/// Binary instance masks produced for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub frame_id: u32,
    pub width: u32,
    pub height: u32,
    pub masks: Vec<Vec<bool>>,
}

impl MaskSet {
    pub fn n(&self) -> usize {
        self.masks.len()
    }

    /// Per-pixel index of the first mask covering it, or `-1`.
    ///
    /// Masks are ordered by confidence, so overlapping pixels go to the more
    /// confident mask and the resulting features never sum above one.
    pub fn label_image(&self) -> Vec<i32> {
        let mut labels = vec![-1i32; self.width as usize * self.height as usize];
        for (j, mask) in self.masks.iter().enumerate() {
            for (cell, &on) in mask.iter().enumerate() {
                if on && labels[cell] < 0 {
                    labels[cell] = j as i32;
                }
            }
        }
        labels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewObservation {
    pub frame_id: u32,
    pub visible_pixels: u32,
    pub total_pixels: u32,
    pub mask_feature: Vec<f64>,
}

impl ViewObservation {
    pub fn visible_fraction(&self) -> f64 {
        if self.total_pixels == 0 {
            0.0
        } else {
            self.visible_pixels as f64 / self.total_pixels as f64
        }
    }
}

/// Distinct visible and total cells of a point set in one frame, both
/// sorted ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViewCells {
    pub visible: Vec<u32>,
    pub total: Vec<u32>,
}

impl ViewCells {
    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    pub fn union(&self, other: &ViewCells) -> ViewCells {
        ViewCells {
            visible: sorted_union(&self.visible, &other.visible),
            total: sorted_union(&self.total, &other.total),
        }
    }

    /// Bounding rectangle `(x0, y0, x1, y1)` (inclusive) of the visible cells.
    pub fn visible_bbox(&self, width: u32) -> Option<(u32, u32, u32, u32)> {
        let mut it = self.visible.iter().map(|&c| (c % width, c / width));
        let (x, y) = it.next()?;
        Some(it.fold((x, y, x, y), |(x0, y0, x1, y1), (x, y)| {
            (x0.min(x), y0.min(y), x1.max(x), y1.max(y))
        }))
    }
}

pub fn sorted_union(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Visibility of a projected point against the cloud z-buffer and, when the
/// frame has a valid reading, the sensor depth.
pub fn is_visible(pr: &Projection, cell: usize, zbuffer: &ZBuffer, frame: &Frame, tol: f64) -> bool {
    if pr.depth > zbuffer.depth[cell] + tol {
        return false;
    }
    match frame.depth.valid_at(cell) {
        Some(d) => pr.depth <= d + tol,
        None => true,
    }
}

/// Distinct visible/total cells of the given points in `frame`.
pub fn view_cells(
    points: impl IntoIterator<Item = Vec3>,
    frame: &Frame,
    zbuffer: &ZBuffer,
    occlusion_tol: f64,
) -> ViewCells {
    let mut visible = Vec::new();
    let mut total = Vec::new();
    for p in points {
        if let Some(pr) = project_point(&p, &frame.pose, &frame.intrinsics) {
            let cell = pr.cell(frame.intrinsics.width);
            total.push(cell as u32);
            if is_visible(&pr, cell, zbuffer, frame, occlusion_tol) {
                visible.push(cell as u32);
            }
        }
    }
    visible.sort_unstable();
    visible.dedup();
    total.sort_unstable();
    total.dedup();
    ViewCells { visible, total }
}

/// Turns cell sets into the observation consumed by the affinity.
pub fn observation_from_cells(frame_id: u32, cells: &ViewCells, labels: &[i32], n_masks: usize) -> ViewObservation {
    let mut feature = vec![0.0; n_masks];
    if !cells.visible.is_empty() {
        for &c in &cells.visible {
            let l = labels[c as usize];
            if l >= 0 {
                feature[l as usize] += 1.0;
            }
        }
        let n = cells.visible.len() as f64;
        feature.iter_mut().for_each(|f| *f /= n);
    }
    ViewObservation {
        frame_id,
        visible_pixels: cells.visible.len() as u32,
        total_pixels: cells.total.len() as u32,
        mask_feature: feature,
    }
}

pub fn observe_superpoint(
    cloud: &PointCloud,
    point_indices: &[usize],
    frame: &Frame,
    zbuffer: &ZBuffer,
    masks: &MaskSet,
    occlusion_tol: f64,
) -> ViewObservation {
    let pts = point_indices.iter().map(|&i| cloud.positions()[i]);
    let cells = view_cells(pts, frame, zbuffer, occlusion_tol);
    observation_from_cells(frame.frame_id, &cells, &masks.label_image(), masks.n())
}
