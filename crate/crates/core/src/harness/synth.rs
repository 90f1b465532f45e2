//! Seeded tabletop scenes of flat-coloured primitives on a floor, rendered
//! by exact ray casting from an orbit of cameras.

use std::collections::HashMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{save_scene, CameraIntrinsics, DepthMap, Frame, OrientedBox, PointCloud, Pose, Scene, Vec3};
use crate::vocab::{Label, Shape, BACKGROUND_RGB, COLORS, FLOOR_RGB};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub scene_id: String,
    pub objects: usize,
    /// Side length of the square floor (meters).
    pub floor_size: f64,
    /// Object centres are drawn from `[-placement, placement]^2`.
    pub placement: f64,
    /// Minimum horizontal gap between object footprints (meters).
    pub min_gap: f64,
    pub frames: usize,
    pub orbit_radius: (f64, f64),
    pub orbit_height: (f64, f64),
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Pixel stride used when back-projecting frames into the cloud.
    pub backproject_stride: u32,
    /// Cloud deduplication voxel (meters).
    pub cloud_spacing: f64,
    pub max_queries: usize,
    /// Minimum distance advantage of the target over same-label rivals.
    pub query_margin: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            scene_id: "synth_0000".into(),
            objects: 6,
            floor_size: 3.6,
            placement: 1.1,
            min_gap: 0.15,
            frames: 8,
            orbit_radius: (3.0, 3.3),
            orbit_height: (1.5, 1.9),
            width: 640,
            height: 480,
            focal: 525.0,
            backproject_stride: 2,
            cloud_spacing: 0.015,
            max_queries: 3,
            query_margin: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub object_id: u32,
    pub label: Label,
    pub name: String,
    pub obb: OrientedBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtQuery {
    pub query_id: String,
    pub text: String,
    pub target_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scene_id: String,
    pub objects: Vec<GtObject>,
    pub queries: Vec<GtQuery>,
}

impl GroundTruth {
    pub const FILE: &'static str = "ground_truth.json";

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn object(&self, id: u32) -> Option<&GtObject> {
        self.objects.iter().find(|o| o.object_id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Cuboid { center: Vec3, half: Vec3, yaw: f64 },
    Cylinder { center: Vec3, radius: f64, half_height: f64 },
    Sphere { center: Vec3, radius: f64 },
}

impl Primitive {
    pub fn obb(&self) -> OrientedBox {
        let (center, half, yaw) = match *self {
            Primitive::Cuboid { center, half, yaw } => (center, half, yaw),
            Primitive::Cylinder {
                center,
                radius,
                half_height,
            } => (center, Vec3::new(radius, radius, half_height), 0.0),
            Primitive::Sphere { center, radius } => (center, Vec3::repeat(radius), 0.0),
        };
        OrientedBox::new(center, half, yaw).expect("primitive extents are positive")
    }

    /// Nearest ray parameter `t > eps` where `o + t d` hits the surface.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match *self {
            Primitive::Cuboid { center, half, yaw } => {
                let (s, c) = yaw.sin_cos();
                let rot = |v: Vec3| Vec3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z);
                let (lo, ld) = (rot(o - center), rot(*d));
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if ld[k].abs() < 1e-15 {
                        if lo[k].abs() > half[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half[k] - lo[k]) / ld[k];
                    let b = (half[k] - lo[k]) / ld[k];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 {
                    return None;
                }
                [t0, t1].into_iter().find(|&t| t > EPS)
            }
            Primitive::Sphere { center, radius } => {
                let oc = o - center;
                let b = oc.dot(d);
                let cc = oc.norm_squared() - radius * radius;
                let a = d.norm_squared();
                let disc = b * b - a * cc;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > EPS)
            }
            Primitive::Cylinder {
                center,
                radius,
                half_height,
            } => {
                let oc = o - center;
                let mut best: Option<f64> = None;
                let mut consider = |t: f64| {
                    if t > EPS && best.map_or(true, |b| t < b) {
                        best = Some(t);
                    }
                };
                let a = d.x * d.x + d.y * d.y;
                if a > 1e-15 {
                    let b = oc.x * d.x + oc.y * d.y;
                    let cc = oc.x * oc.x + oc.y * oc.y - radius * radius;
                    let disc = b * b - a * cc;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        for t in [(-b - sq) / a, (-b + sq) / a] {
                            if (oc.z + t * d.z).abs() <= half_height {
                                consider(t);
                            }
                        }
                    }
                }
                if d.z.abs() > 1e-15 {
                    for zc in [-half_height, half_height] {
                        let t = (zc - oc.z) / d.z;
                        let (x, y) = (oc.x + t * d.x, oc.y + t * d.y);
                        if x * x + y * y <= radius * radius {
                            consider(t);
                        }
                    }
                }
                best
            }
        }
    }

    /// Distance from `p` to the primitive's surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
            Primitive::Cuboid { center, half, yaw } => {
                let (s, c) = yaw.sin_cos();
                let d = p - center;
                let l = Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
                box_surface_distance(&l, &half)
            }
            Primitive::Cylinder {
                center,
                radius,
                half_height,
            } => {
                let d = p - center;
                let r = (d.x * d.x + d.y * d.y).sqrt();
                let (dr, dz) = (r - radius, d.z.abs() - half_height);
                if dr <= 0.0 && dz <= 0.0 {
                    (-dr).min(-dz)
                } else {
                    (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt()
                }
            }
        }
    }
}

fn box_surface_distance(l: &Vec3, half: &Vec3) -> f64 {
    let q = l.abs() - half;
    let outside = q.map(|x| x.max(0.0)).norm();
    let inside = q.max().min(0.0);
    outside + inside.abs()
}

#[derive(Debug, Clone)]
pub struct SynthObject {
    pub object_id: u32,
    pub label: Label,
    pub primitive: Primitive,
}

/// Ray-traced view of the synthetic world.
pub struct World<'a> {
    pub objects: &'a [SynthObject],
    pub floor_half: f64,
}

pub const FLOOR_ID: i32 = -1;
pub const NO_HIT: i32 = -2;

impl World<'_> {
    /// `(t, colour, object id)` of the first hit, object id `-1` for floor.
    pub fn trace(&self, o: &Vec3, d: &Vec3) -> Option<(f64, [u8; 3], i32)> {
        let mut best: Option<(f64, [u8; 3], i32)> = None;
        if d.z < -1e-12 {
            let t = -o.z / d.z;
            let p = o + d * t;
            if t > 0.0 && p.x.abs() <= self.floor_half && p.y.abs() <= self.floor_half {
                best = Some((t, FLOOR_RGB, FLOOR_ID));
            }
        }
        for obj in self.objects {
            if let Some(t) = obj.primitive.intersect(o, d) {
                if best.map_or(true, |b| t < b.0) {
                    best = Some((t, obj.label.rgb(), obj.object_id as i32));
                }
            }
        }
        best
    }

    /// Renders colour, millimetre-quantised depth (meters) and object ids.
    pub fn render(&self, pose: &Pose, k: &CameraIntrinsics) -> (RgbImage, Vec<f32>, Vec<i32>) {
        let (w, h) = (k.width, k.height);
        let rows: Vec<(Vec<u8>, Vec<f32>, Vec<i32>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut rgb = Vec::with_capacity(3 * w as usize);
                let mut depth = Vec::with_capacity(w as usize);
                let mut ids = Vec::with_capacity(w as usize);
                for x in 0..w {
                    let dc = Vec3::new((x as f64 + 0.5 - k.cx) / k.fx, (y as f64 + 0.5 - k.cy) / k.fy, 1.0);
                    let dw = pose.rotation * dc;
                    match self.trace(&pose.translation, &dw) {
                        Some((t, c, id)) => {
                            rgb.extend_from_slice(&c);
                            // dc has unit z, so t is the camera-frame depth.
                            let mm = (t * 1000.0).round().min(65535.0);
                            depth.push(mm as f32 / 1000.0);
                            ids.push(id);
                        }
                        None => {
                            rgb.extend_from_slice(&BACKGROUND_RGB);
                            depth.push(0.0);
                            ids.push(NO_HIT);
                        }
                    }
                }
                (rgb, depth, ids)
            })
            .collect();
        let mut rgb = Vec::with_capacity((3 * w * h) as usize);
        let mut depth = Vec::with_capacity((w * h) as usize);
        let mut ids = Vec::with_capacity((w * h) as usize);
        for (r, d, i) in rows {
            rgb.extend(r);
            depth.extend(d);
            ids.extend(i);
        }
        (RgbImage::from_raw(w, h, rgb).expect("buffer sized to image"), depth, ids)
    }
}

pub struct SynthOutput {
    pub scene: Scene,
    pub truth: GroundTruth,
    pub objects: Vec<SynthObject>,
}

fn sample_primitive(rng: &mut ChaCha8Rng, shape: Shape, spec: &SyntheticSpec) -> Primitive {
    let xy = |rng: &mut ChaCha8Rng| (rng.gen_range(-spec.placement..spec.placement), rng.gen_range(-spec.placement..spec.placement));
    let (x, y) = xy(rng);
    match shape {
        Shape::Cube => {
            let half = Vec3::new(rng.gen_range(0.1..0.2), rng.gen_range(0.1..0.2), rng.gen_range(0.1..0.2));
            Primitive::Cuboid {
                center: Vec3::new(x, y, half.z),
                half,
                yaw: rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2),
            }
        }
        Shape::Cylinder => {
            let radius = rng.gen_range(0.08..0.15);
            let half_height = rng.gen_range(0.1..0.22);
            Primitive::Cylinder {
                center: Vec3::new(x, y, half_height),
                radius,
                half_height,
            }
        }
        Shape::Sphere => {
            let radius = rng.gen_range(0.1..0.17);
            Primitive::Sphere {
                center: Vec3::new(x, y, radius),
                radius,
            }
        }
    }
}

fn footprints_clear(a: &OrientedBox, b: &OrientedBox, gap: f64) -> bool {
    let (x, y) = (a.to_aabb(), b.to_aabb());
    x.max.x + gap <= y.min.x || y.max.x + gap <= x.min.x || x.max.y + gap <= y.min.y || y.max.y + gap <= x.min.y
}

fn place_objects(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Result<Vec<SynthObject>> {
    let mut out: Vec<SynthObject> = Vec::new();
    let mut attempts = 0;
    while out.len() < spec.objects {
        attempts += 1;
        if attempts > 1000 {
            return Err(Error::Unsatisfiable(format!(
                "could not place {} disjoint objects within +/-{} m",
                spec.objects, spec.placement
            )));
        }
        let label = Label::new(rng.gen_range(0..COLORS.len()), Shape::ALL[rng.gen_range(0..3)]);
        let prim = sample_primitive(rng, label.shape, spec);
        let obb = prim.obb();
        if out.iter().all(|o| footprints_clear(&o.primitive.obb(), &obb, spec.min_gap)) {
            out.push(SynthObject {
                object_id: out.len() as u32,
                label,
                primitive: prim,
            });
        }
    }
    Ok(out)
}

fn cameras(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Result<Vec<Pose>> {
    (0..spec.frames)
        .map(|k| {
            let az = std::f64::consts::TAU * k as f64 / spec.frames as f64 + rng.gen_range(-0.08..0.08);
            let r = rng.gen_range(spec.orbit_radius.0..=spec.orbit_radius.1);
            let h = rng.gen_range(spec.orbit_height.0..=spec.orbit_height.1);
            let eye = Vec3::new(r * az.cos(), r * az.sin(), h);
            let target = Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), 0.1);
            Pose::look_at(eye, target, Vec3::z())
        })
        .collect()
}

fn pick_queries(rng: &mut ChaCha8Rng, objects: &[SynthObject], spec: &SyntheticSpec) -> Vec<GtQuery> {
    let mut count: HashMap<Label, usize> = HashMap::new();
    for o in objects {
        *count.entry(o.label).or_default() += 1;
    }
    let center = |o: &SynthObject| o.primitive.obb().center;
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    for t in order {
        if out.len() >= spec.max_queries {
            break;
        }
        let target = &objects[t];
        let mut anchors: Vec<&SynthObject> = objects
            .iter()
            .filter(|a| a.object_id != target.object_id && count[&a.label] == 1 && a.label != target.label)
            .filter(|a| {
                let d = (center(a) - center(target)).norm();
                objects
                    .iter()
                    .filter(|r| r.label == target.label && r.object_id != target.object_id)
                    .all(|r| (center(a) - center(r)).norm() >= d + spec.query_margin)
            })
            .collect();
        anchors.sort_by_key(|a| a.object_id);
        let text = if let Some(a) = anchors.choose(rng) {
            format!("the {} closest to the {}", target.label.name(), a.label.name())
        } else if count[&target.label] == 1 {
            format!("the {}", target.label.name())
        } else {
            continue;
        };
        out.push(GtQuery {
            query_id: format!("{}_q{}", spec.scene_id, out.len()),
            text,
            target_id: target.object_id,
        });
    }
    out
}

/// Generates a scene in memory. Fails when objects cannot be placed or when
/// some object is not seen by at least two frames within the retry budget.
pub fn generate(spec: &SyntheticSpec) -> Result<SynthOutput> {
    if spec.objects == 0 || spec.frames < 2 {
        return Err(Error::InvalidArgument("need at least one object and two frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = CameraIntrinsics::new(
        spec.focal,
        spec.focal,
        spec.width as f64 / 2.0,
        spec.height as f64 / 2.0,
        spec.width,
        spec.height,
    )?;
    for _ in 0..50 {
        let objects = place_objects(&mut rng, spec)?;
        let poses = cameras(&mut rng, spec)?;
        let world = World {
            objects: &objects,
            floor_half: spec.floor_size / 2.0,
        };
        let renders: Vec<_> = poses.iter().map(|p| world.render(p, &k)).collect();
        let seen_ok = objects.iter().all(|o| {
            renders
                .iter()
                .filter(|(_, _, ids)| ids.iter().filter(|&&i| i == o.object_id as i32).count() >= 30)
                .count()
                >= 2
        });
        if !seen_ok {
            continue;
        }
        let queries = pick_queries(&mut rng, &objects, spec);
        let mut frames = Vec::new();
        for (i, ((rgb, depth, _), pose)) in renders.into_iter().zip(&poses).enumerate() {
            let dm = DepthMap::new(k.width, k.height, depth)?;
            frames.push(Frame::new(i as u32, rgb, dm, *pose, k)?);
        }
        let cloud = backproject(&frames, spec.backproject_stride, spec.cloud_spacing)?;
        let truth = GroundTruth {
            scene_id: spec.scene_id.clone(),
            objects: objects
                .iter()
                .map(|o| GtObject {
                    object_id: o.object_id,
                    label: o.label,
                    name: o.label.name(),
                    obb: o.primitive.obb(),
                })
                .collect(),
            queries,
        };
        return Ok(SynthOutput {
            scene: Scene {
                scene_id: spec.scene_id.clone(),
                cloud,
                frames,
            },
            truth,
            objects,
        });
    }
    Err(Error::Unsatisfiable("objects not visible in two frames after 50 layouts".into()))
}

/// Back-projects every `stride`-th pixel of each frame and keeps the first
/// point per `spacing` voxel.
pub fn backproject(frames: &[Frame], stride: u32, spacing: f64) -> Result<PointCloud> {
    let mut seen = std::collections::HashSet::new();
    let mut pos = Vec::new();
    let mut col = Vec::new();
    for f in frames {
        let k = &f.intrinsics;
        for y in (0..k.height).step_by(stride.max(1) as usize) {
            for x in (0..k.width).step_by(stride.max(1) as usize) {
                let z = f.depth.get(x, y) as f64;
                if z <= 0.0 {
                    continue;
                }
                let pc = Vec3::new((x as f64 + 0.5 - k.cx) / k.fx * z, (y as f64 + 0.5 - k.cy) / k.fy * z, z);
                let p = f.pose.camera_to_world(&pc);
                let key = (
                    (p.x / spacing).floor() as i64,
                    (p.y / spacing).floor() as i64,
                    (p.z / spacing).floor() as i64,
                );
                if seen.insert(key) {
                    pos.push(p);
                    col.push(f.rgb.get_pixel(x, y).0);
                }
            }
        }
    }
    PointCloud::new(pos, col)
}

/// Writes the scene directory plus `ground_truth.json`.
pub fn synth_scene(spec: &SyntheticSpec, out_dir: &Path) -> Result<SynthOutput> {
    let out = generate(spec)?;
    save_scene(&out.scene, out_dir)?;
    let path = out_dir.join(GroundTruth::FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&out.truth)?).map_err(|e| Error::io(&path, e))?;
    Ok(out)
}

/// Draws a plain object-id visualisation, useful when debugging layouts.
pub fn id_image(ids: &[i32], width: u32, height: u32) -> RgbImage {
    RgbImage::from_fn(width, height, |x, y| match ids[(y * width + x) as usize] {
        NO_HIT => Rgb(BACKGROUND_RGB),
        FLOOR_ID => Rgb(FLOOR_RGB),
        i => Rgb(Label::from_index(i as usize % 24).rgb()),
    })
}
