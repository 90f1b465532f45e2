//! Stage-2 visual prompts: orbit renders of the candidate region with axes
//! and id overlays, and boxed native views of each candidate.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{project_point, ZBuffer};
use crate::scene::{AxisAlignedBox, CameraIntrinsics, PointCloud, Pose, Scene, Vec3};
use crate::semantics::{instance_cells, scaled_rect, Candidate, Rect};
use crate::vocab::BACKGROUND_RGB;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitCameraSpec {
    pub r: f64,
    pub h: f64,
    pub r_min: f64,
    pub h_min: f64,
    /// Radians.
    pub azimuths: Vec<f64>,
}

impl OrbitCameraSpec {
    pub fn new(r: f64, h: f64, r_min: f64, h_min: f64, azimuths: Vec<f64>) -> Result<Self> {
        let ok = r_min > 0.0 && h_min > 0.0 && r >= r_min && h >= h_min && r.is_finite() && h.is_finite();
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "orbit needs r >= r_min > 0 and h >= h_min > 0 (r={r}, r_min={r_min}, h={h}, h_min={h_min})"
            )));
        }
        if azimuths.is_empty() || azimuths.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("orbit needs finite azimuths".into()));
        }
        Ok(Self {
            r,
            h,
            r_min,
            h_min,
            azimuths,
        })
    }

    /// Radius and height derived from the scene extent.
    pub fn for_bounds(bounds: &AxisAlignedBox, h_min: f64, azimuths: Vec<f64>) -> Result<Self> {
        let s = bounds.size();
        let diag = s.x.hypot(s.y);
        let r_min = (diag / 2.0).max(0.05);
        let r = r_min.max(0.75 * diag);
        let h = h_min.max(s.z + 1.0);
        Self::new(r, h, r_min, h_min, azimuths)
    }
}

pub fn default_azimuths() -> Vec<f64> {
    [90.0f64, 210.0, 330.0].iter().map(|d| d.to_radians()).collect()
}

/// One look-at pose per azimuth around the mean of `centers`.
pub fn orbit_poses(centers: &[Vec3], spec: &OrbitCameraSpec) -> Result<Vec<Pose>> {
    if centers.is_empty() {
        return Err(Error::Empty("orbit centers"));
    }
    let mean = centers.iter().fold(Vec3::zeros(), |a, c| a + c) / centers.len() as f64;
    spec.azimuths
        .iter()
        .map(|t| {
            let eye = mean + Vec3::new(spec.r * t.cos(), spec.r * t.sin(), spec.h);
            Pose::look_at(eye, mean, Vec3::z())
        })
        .collect()
}

pub fn orbit_positions(candidates: &[Candidate], spec: &OrbitCameraSpec) -> Result<Vec<Pose>> {
    let centers: Vec<_> = candidates.iter().map(|c| c.instance.obb.center).collect();
    orbit_poses(&centers, spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    pub image: RgbImage,
    /// Per-pixel depth, `+inf` where nothing was drawn.
    pub depth: Vec<f64>,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl Render {
    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        self.depth[(y * self.intrinsics.width + x) as usize]
    }
}

/// Z-buffered disc splats; disc radius in pixels is
/// `max(1, round(base_radius * f / depth))`. Nearest point wins, equal
/// depths keep the earlier point.
pub fn render_scene(cloud: &PointCloud, pose: &Pose, k: &CameraIntrinsics, base_radius: f64) -> Render {
    let (w, h) = (k.width as i64, k.height as i64);
    let mut depth = vec![f64::INFINITY; (w * h) as usize];
    let mut owner = vec![u32::MAX; (w * h) as usize];
    for (i, p) in cloud.positions().iter().enumerate() {
        let c = pose.world_to_camera(p);
        if !(c.z > 0.0) {
            continue;
        }
        let (u, v) = (k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy);
        let r = ((base_radius * k.fx / c.z).round() as i64).max(1);
        let (cx, cy) = (u.floor() as i64, v.floor() as i64);
        if cx + r < 0 || cy + r < 0 || cx - r >= w || cy - r >= h {
            continue;
        }
        for y in (cy - r).max(0)..=(cy + r).min(h - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(w - 1) {
                let (dx, dy) = (x - cx, y - cy);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let cell = (y * w + x) as usize;
                if c.z < depth[cell] {
                    depth[cell] = c.z;
                    owner[cell] = i as u32;
                }
            }
        }
    }
    let colors = cloud.colors();
    let image = RgbImage::from_fn(k.width, k.height, |x, y| {
        let o = owner[(y as i64 * w + x as i64) as usize];
        Rgb(if o == u32::MAX { BACKGROUND_RGB } else { colors[o as usize] })
    });
    Render {
        image,
        depth,
        pose: *pose,
        intrinsics: *k,
    }
}

/// 5x7 glyphs, one byte per row, bit 4 leftmost.
fn glyph(c: char) -> Option<[u8; 7]> {
    Some(match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        _ => return None,
    })
}

const TEXT_SCALE: i64 = 2;

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && x < img.width() as i64 && y < img.height() as i64 {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

pub fn text_size(text: &str) -> (i64, i64) {
    let n = text.chars().count() as i64;
    ((6 * n - 1).max(0) * TEXT_SCALE, 7 * TEXT_SCALE)
}

/// Draws `text` with its top-left corner at `(x, y)`.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: [u8; 3]) {
    for (k, ch) in text.chars().enumerate() {
        let Some(rows) = glyph(ch) else { continue };
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..5 {
                if bits & (0x10 >> col) == 0 {
                    continue;
                }
                for sy in 0..TEXT_SCALE {
                    for sx in 0..TEXT_SCALE {
                        let px = x + (k as i64 * 6 + col) * TEXT_SCALE + sx;
                        put(img, px, y + r as i64 * TEXT_SCALE + sy, color);
                    }
                }
            }
        }
    }
}

/// Text on a white plate centred at `(cx, cy)`.
fn draw_label(img: &mut RgbImage, cx: i64, cy: i64, text: &str) {
    let (tw, th) = text_size(text);
    let (x0, y0) = (cx - tw / 2 - 2, cy - th / 2 - 2);
    for y in y0..y0 + th + 4 {
        for x in x0..x0 + tw + 4 {
            let edge = y == y0 || x == x0 || y == y0 + th + 3 || x == x0 + tw + 3;
            put(img, x, y, if edge { [0, 0, 0] } else { [255, 255, 255] });
        }
    }
    draw_text(img, x0 + 2, y0 + 2, text, [0, 0, 0]);
}

/// Line clipped to the image, `thickness` pixels wide.
pub fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: [u8; 3], thickness: i64) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    // Liang-Barsky against [0, w) x [0, h).
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, a.0), (dx, w - 1.0 - a.0), (-dy, a.1), (dy, h - 1.0 - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    if t0 > t1 {
        return;
    }
    let (sx, sy) = (a.0 + t0 * dx, a.1 + t0 * dy);
    let (ex, ey) = (a.0 + t1 * dx, a.1 + t1 * dy);
    let steps = ((ex - sx).abs().max((ey - sy).abs()).ceil() as i64).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = ((sx + t * (ex - sx)) as i64, (sy + t * (ey - sy)) as i64);
        for oy in 0..thickness {
            for ox in 0..thickness {
                put(img, x + ox - thickness / 2, y + oy - thickness / 2, color);
            }
        }
    }
}

pub fn draw_rect(img: &mut RgbImage, r: Rect, color: [u8; 3], thickness: i64) {
    let (x0, y0, x1, y1) = (r.0 as f64, r.1 as f64, r.2 as f64 - 1.0, r.3 as f64 - 1.0);
    draw_line(img, (x0, y0), (x1, y0), color, thickness);
    draw_line(img, (x1, y0), (x1, y1), color, thickness);
    draw_line(img, (x1, y1), (x0, y1), color, thickness);
    draw_line(img, (x0, y1), (x0, y0), color, thickness);
}

/// Pixel position of a world segment after clipping it to a near plane in
/// front of the camera.
fn project_segment(a: &Vec3, b: &Vec3, pose: &Pose, k: &CameraIntrinsics) -> Option<((f64, f64), (f64, f64))> {
    const NEAR: f64 = 0.05;
    let (mut ca, mut cb) = (pose.world_to_camera(a), pose.world_to_camera(b));
    if ca.z < NEAR && cb.z < NEAR {
        return None;
    }
    if ca.z < NEAR {
        ca = cb + (ca - cb) * ((cb.z - NEAR) / (cb.z - ca.z));
    } else if cb.z < NEAR {
        cb = ca + (cb - ca) * ((ca.z - NEAR) / (ca.z - cb.z));
    }
    let pix = |c: Vec3| (k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy);
    Some((pix(ca), pix(cb)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelFlag {
    BehindCamera,
    OutsideFrame,
    Occluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalRender {
    pub image: RgbImage,
    pub camera: Pose,
    pub intrinsics: CameraIntrinsics,
    /// candidate id -> label centre in pixels.
    pub overlay_ids: BTreeMap<u32, (i64, i64)>,
    /// Candidates that got no label, and why.
    pub hidden: BTreeMap<u32, LabelFlag>,
    pub axes_drawn: bool,
}

pub const AXIS_COLORS: [[u8; 3]; 3] = [[230, 20, 20], [20, 200, 20], [20, 40, 230]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateParams {
    pub axes_length: f64,
    pub occlusion_tol: f64,
    pub min_label_spacing: f64,
}

impl Default for AnnotateParams {
    fn default() -> Self {
        Self {
            axes_length: 0.5,
            occlusion_tol: 0.2,
            min_label_spacing: 10.0,
        }
    }
}

/// Draws the world axes from `origin` and one id label per visible
/// candidate. Labels closer than `min_label_spacing` to an earlier label are
/// nudged outwards along a fixed ring of offsets.
pub fn annotate_global(render: &Render, candidates: &[(u32, Vec3)], origin: Vec3, params: &AnnotateParams) -> GlobalRender {
    let mut image = render.image.clone();
    let (pose, k) = (&render.pose, &render.intrinsics);
    for (axis, color) in AXIS_COLORS.iter().enumerate() {
        let mut dir = Vec3::zeros();
        dir[axis] = params.axes_length;
        if let Some((a, b)) = project_segment(&origin, &(origin + dir), pose, k) {
            draw_line(&mut image, a, b, *color, 3);
            let name = ["+X", "+Y", "+Z"][axis];
            let (tw, th) = text_size(name);
            let (lx, ly) = (b.0 + (b.0 - a.0).signum() * 6.0, b.1 + (b.1 - a.1).signum() * 6.0);
            draw_text(&mut image, lx as i64 - tw / 2, ly as i64 - th / 2, name, *color);
        }
    }
    let mut overlay_ids = BTreeMap::new();
    let mut hidden = BTreeMap::new();
    let mut placed: Vec<(i64, i64)> = Vec::new();
    let (w, h) = (k.width as i64, k.height as i64);
    for &(id, center) in candidates {
        if pose.world_to_camera(&center).z <= 0.0 {
            hidden.insert(id, LabelFlag::BehindCamera);
            continue;
        }
        let Some(pr) = project_point(&center, pose, k) else {
            hidden.insert(id, LabelFlag::OutsideFrame);
            continue;
        };
        let (px, py) = pr.pixel();
        if pr.depth > render.depth_at(px, py) + params.occlusion_tol {
            hidden.insert(id, LabelFlag::Occluded);
            continue;
        }
        let base = (px as i64, py as i64);
        let clear = |p: (i64, i64), placed: &[(i64, i64)]| {
            p.0 >= 0
                && p.1 >= 0
                && p.0 < w
                && p.1 < h
                && placed
                    .iter()
                    .all(|q| (((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)) as f64).sqrt() >= params.min_label_spacing)
        };
        let step = params.min_label_spacing.ceil() as i64 + 2;
        let anchor = std::iter::once(base)
            .chain((1..64).flat_map(|ring| {
                [(0, -1), (1, 0), (0, 1), (-1, 0), (1, -1), (1, 1), (-1, 1), (-1, -1)]
                    .map(|(dx, dy)| (base.0 + dx * ring * step, base.1 + dy * ring * step))
            }))
            .find(|p| clear(*p, &placed));
        match anchor {
            Some(a) => {
                placed.push(a);
                overlay_ids.insert(id, a);
            }
            None => {
                hidden.insert(id, LabelFlag::OutsideFrame);
            }
        }
    }
    for (id, a) in &overlay_ids {
        draw_label(&mut image, a.0, a.1, &id.to_string());
    }
    GlobalRender {
        image,
        camera: *pose,
        intrinsics: *k,
        overlay_ids,
        hidden,
        axes_drawn: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewStat {
    pub frame_id: u32,
    /// Fraction of the image covered by the candidate.
    pub proportion: f64,
    pub position: Vec3,
}

fn spread(stats: &[&ViewStat]) -> f64 {
    let mut s = 0.0;
    for i in 0..stats.len() {
        for j in i + 1..stats.len() {
            s += (stats[i].position - stats[j].position).norm();
        }
    }
    s
}

/// Top `2l` frames by proportion (ties by frame id), then the size-`l`
/// subset with the largest summed pairwise camera distance. Equal sums go
/// to the larger summed proportion, then to the lexicographically smallest
/// sorted id list.
pub fn choose_views(stats: &[ViewStat], l: usize) -> Result<Vec<u32>> {
    if l == 0 {
        return Err(Error::InvalidArgument("l must be at least 1".into()));
    }
    let mut pool: Vec<&ViewStat> = stats.iter().collect();
    pool.sort_by(|a, b| b.proportion.total_cmp(&a.proportion).then(a.frame_id.cmp(&b.frame_id)));
    pool.truncate(2 * l);
    pool.sort_by_key(|s| s.frame_id);
    let k = l.min(pool.len());
    let mut best: Option<(f64, f64, Vec<u32>)> = None;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let subset: Vec<&ViewStat> = idx.iter().map(|&i| pool[i]).collect();
        let score = spread(&subset);
        let cover: f64 = subset.iter().map(|s| s.proportion).sum();
        let ids: Vec<u32> = subset.iter().map(|s| s.frame_id).collect();
        // Subsets are visited in lexicographic order, so only a strictly
        // better key replaces the incumbent.
        if best.as_ref().map_or(true, |b| score > b.0 || (score == b.0 && cover > b.1)) {
            best = Some((score, cover, ids));
        }
        // Next k-combination of 0..pool.len().
        let n = pool.len();
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(best.map(|b| b.2).unwrap_or_default());
            }
            i -= 1;
            if idx[i] < n - k + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateView {
    /// `None` for fallback renders.
    pub frame_id: Option<u32>,
    pub image: RgbImage,
    /// The drawn box in image coordinates (half-open).
    pub box2d: Rect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateViewSet {
    pub candidate_id: u32,
    pub views: Vec<CandidateView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewParams {
    /// Global orbit azimuths in degrees.
    pub azimuths_deg: Vec<f64>,
    pub h_min: f64,
    /// Views per candidate.
    pub l: usize,
    pub splat_base_radius: f64,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Context kept around a candidate's box in its native views.
    pub crop_scale: f64,
    pub occlusion_tol: f64,
    pub annotate: AnnotateParams,
}

impl Default for ViewParams {
    fn default() -> Self {
        Self {
            azimuths_deg: vec![90.0, 210.0, 330.0],
            h_min: 1.5,
            l: 3,
            splat_base_radius: 0.015,
            width: 640,
            height: 480,
            focal: 525.0,
            crop_scale: 2.5,
            occlusion_tol: crate::projection::DEFAULT_OCCLUSION_TOL,
            annotate: AnnotateParams::default(),
        }
    }
}

impl ViewParams {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
            self.width,
            self.height,
        )
    }

    pub fn azimuths(&self) -> Vec<f64> {
        self.azimuths_deg.iter().map(|d| d.to_radians()).collect()
    }
}

/// Annotated orbit renders around the candidates.
pub fn global_renders(cloud: &PointCloud, candidates: &[Candidate], params: &ViewParams) -> Result<Vec<GlobalRender>> {
    let bounds = cloud.bounds().ok_or(Error::Empty("cloud"))?;
    let spec = OrbitCameraSpec::for_bounds(&bounds, params.h_min, params.azimuths())?;
    let poses = orbit_positions(candidates, &spec)?;
    let k = params.intrinsics()?;
    let labels: Vec<(u32, Vec3)> = candidates.iter().map(|c| (c.candidate_id, c.instance.obb.center)).collect();
    let mean = labels.iter().fold(Vec3::zeros(), |a, l| a + l.1) / labels.len() as f64;
    let origin = Vec3::new(mean.x, mean.y, bounds.min.z);
    Ok(poses
        .iter()
        .map(|p| {
            let r = render_scene(cloud, p, &k, params.splat_base_radius);
            annotate_global(&r, &labels, origin, &params.annotate)
        })
        .collect())
}

fn boxed_crop(image: &RgbImage, bbox: (u32, u32, u32, u32), scale: f64) -> (RgbImage, Rect) {
    let (w, h) = image.dimensions();
    let rect = scaled_rect(bbox, scale, w, h);
    let mut crop = image::imageops::crop_imm(image, rect.0, rect.1, rect.2 - rect.0, rect.3 - rect.1).to_image();
    let inner = (bbox.0 - rect.0, bbox.1 - rect.1, bbox.2 + 1 - rect.0, bbox.3 + 1 - rect.1);
    draw_rect(&mut crop, inner, [255, 0, 255], 2);
    (crop, inner)
}

/// Native frames that show the candidate large and from spread-out
/// viewpoints, each with the candidate's 2D box drawn. Falls back to orbit
/// renders around the candidate when no frame sees it.
pub fn select_candidate_views(
    candidate: &Candidate,
    scene: &Scene,
    zbuffers: &[ZBuffer],
    params: &ViewParams,
) -> Result<CandidateViewSet> {
    let cells = instance_cells(&candidate.instance, scene, zbuffers, params.occlusion_tol);
    let stats: Vec<ViewStat> = scene
        .frames
        .iter()
        .zip(&cells)
        .filter(|(_, (_, c))| !c.visible.is_empty())
        .map(|(f, (_, c))| ViewStat {
            frame_id: f.frame_id,
            proportion: c.visible.len() as f64 / f.intrinsics.pixel_count() as f64,
            position: f.pose.center(),
        })
        .collect();
    let chosen = choose_views(&stats, params.l)?;
    if chosen.is_empty() {
        return fallback_views(candidate, &scene.cloud, params);
    }
    let views = chosen
        .iter()
        .map(|&fid| {
            let (i, f) = scene.frames.iter().enumerate().find(|(_, f)| f.frame_id == fid).expect("chosen from scene");
            let bbox = cells[i].1.visible_bbox(f.intrinsics.width).expect("visible");
            let (image, box2d) = boxed_crop(&f.rgb, bbox, params.crop_scale);
            CandidateView {
                frame_id: Some(fid),
                image,
                box2d,
            }
        })
        .collect();
    Ok(CandidateViewSet {
        candidate_id: candidate.candidate_id,
        views,
    })
}

fn fallback_views(candidate: &Candidate, cloud: &PointCloud, params: &ViewParams) -> Result<CandidateViewSet> {
    let obb = &candidate.instance.obb;
    let diag = (obb.half_extents * 2.0).norm();
    let r = (1.5 * diag).max(1.0);
    let az: Vec<f64> = (0..params.l).map(|i| std::f64::consts::TAU * i as f64 / params.l as f64).collect();
    let spec = OrbitCameraSpec::new(r, 0.5 * r, r, 0.5 * r, az)?;
    let k = params.intrinsics()?;
    let views = orbit_poses(&[obb.center], &spec)?
        .iter()
        .map(|p| {
            let mut img = render_scene(cloud, p, &k, params.splat_base_radius).image;
            let px: Vec<_> = obb.corners().iter().filter_map(|c| project_point(c, p, &k)).collect();
            let box2d = if px.is_empty() {
                (0, 0, k.width, k.height)
            } else {
                let x0 = px.iter().map(|q| q.u).fold(f64::INFINITY, f64::min) as u32;
                let y0 = px.iter().map(|q| q.v).fold(f64::INFINITY, f64::min) as u32;
                let x1 = px.iter().map(|q| q.u).fold(0.0, f64::max) as u32 + 1;
                let y1 = px.iter().map(|q| q.v).fold(0.0, f64::max) as u32 + 1;
                (x0, y0, x1.min(k.width), y1.min(k.height))
            };
            draw_rect(&mut img, box2d, [255, 0, 255], 2);
            CandidateView {
                frame_id: None,
                image: img,
                box2d,
            }
        })
        .collect();
    Ok(CandidateViewSet {
        candidate_id: candidate.candidate_id,
        views,
    })
}

pub fn save_png(image: &RgbImage, path: &Path) -> Result<()> {
    image
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}
