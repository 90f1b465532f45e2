//! Scene observations and box primitives.
//!
//! A [`Scene`] bundles a colored point cloud with a posed RGB-D frame
//! sequence. Cameras follow the pinhole convention with x right, y down and
//! z along the optical axis; poses map camera coordinates to world
//! coordinates. World +z is the gravity-aligned up axis.

mod boxes;
mod io;

pub use boxes::{convex_hull_2d, fit_aabb, fit_oriented_box, min_area_rect};
pub use io::{load_scene, read_ply, save_scene, write_ply};

use std::f64::consts::FRAC_PI_2;

use image::RgbImage;
use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Rotation tolerance accepted by [`Pose::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-6;
/// Looser tolerance used when reading poses from disk.
pub const LOAD_ORTHONORMAL_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    colors: Vec<[u8; 3]>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>, colors: Vec<[u8; 3]>) -> Result<Self> {
        if positions.len() != colors.len() {
            return Err(Error::InvalidCloud(format!(
                "{} positions but {} colors",
                positions.len(),
                colors.len()
            )));
        }
        if let Some(i) = positions
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::InvalidCloud(format!("point {i} is not finite")));
        }
        Ok(Self { positions, colors })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn point_count(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Copies the points selected by `indices` into a new cloud.
    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: indices.iter().map(|&i| self.colors[i]).collect(),
        }
    }

    pub fn bounds(&self) -> Option<AxisAlignedBox> {
        fit_aabb(&self.positions).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics with the principal point at the image center and the
    /// given horizontal field of view.
    pub fn from_fov(width: u32, height: u32, hfov_radians: f64) -> Result<Self> {
        let f = (width as f64 / 2.0) / (hfov_radians / 2.0).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        Self::with_tolerance(rotation, translation, ORTHONORMAL_TOL)
    }

    pub fn with_tolerance(rotation: Matrix3<f64>, translation: Vec3, tol: f64) -> Result<Self> {
        let deviation = orthonormal_deviation(&rotation);
        if !(deviation <= tol) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonOrthonormalPose {
                frame: None,
                deviation,
            });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_matrix(m: &Matrix4<f64>, tol: f64) -> Result<Self> {
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::with_tolerance(rotation, translation, tol)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera looking from `eye` toward `target`, image "up" as close to
    /// `up` as the viewing direction allows.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::InvalidArgument("look_at: eye equals target".into()));
        }
        let forward = forward.normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            // Looking straight along `up`; pick any perpendicular.
            let alt = if forward.x.abs() < 0.9 {
                Vec3::x()
            } else {
                Vec3::y()
            };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::new(rotation, eye)
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

pub(crate) fn orthonormal_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r * r.transpose() - Matrix3::identity();
    let det = r.determinant();
    gram.amax().max((det - 1.0).abs())
}

/// Depth image in meters; zero marks an invalid reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "depth buffer has {} values for {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument(
                "depth values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Valid reading at a flat cell index, if any.
    pub fn valid_at(&self, cell: usize) -> Option<f64> {
        let d = self.data[cell];
        (d > 0.0).then_some(d as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: u32,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl Frame {
    pub fn new(
        frame_id: u32,
        rgb: RgbImage,
        depth: DepthMap,
        pose: Pose,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self> {
        intrinsics.validate()?;
        let expected = (intrinsics.width, intrinsics.height);
        for actual in [rgb.dimensions(), (depth.width(), depth.height())] {
            if actual != expected {
                return Err(Error::DimensionMismatch {
                    frame: frame_id,
                    expected,
                    actual,
                });
            }
        }
        Ok(Self {
            frame_id,
            rgb,
            depth,
            pose,
            intrinsics,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub cloud: PointCloud,
    pub frames: Vec<Frame>,
}

impl Scene {
    pub fn frame(&self, frame_id: u32) -> Option<&Frame> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    /// Projection needs at least one frame and a non-empty cloud.
    pub fn validate_for_projection(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Empty("scene frames"));
        }
        if self.cloud.is_empty() {
            return Err(Error::Empty("point cloud"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAlignedBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl AxisAlignedBox {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).any(|k| !(min[k] <= max[k])) {
            return Err(Error::InvalidArgument(format!(
                "box min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let s = self.size();
        s.x * s.y * s.z
    }

    pub fn contains(&self, p: &Vec3, slack: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - slack && p[k] <= self.max[k] + slack)
    }

    pub fn to_oriented(&self) -> OrientedBox {
        OrientedBox {
            center: self.center(),
            half_extents: self.size() / 2.0,
            yaw: 0.0,
        }
    }
}

/// Gravity-aligned box: rotation only about world z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec3,
    pub half_extents: Vec3,
    /// Radians in `[-pi/2, pi/2)`.
    pub yaw: f64,
}

impl OrientedBox {
    pub fn new(center: Vec3, half_extents: Vec3, yaw: f64) -> Result<Self> {
        if half_extents.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "half extents must be positive, got {half_extents:?}"
            )));
        }
        Ok(Self {
            center,
            half_extents,
            yaw: normalize_yaw(yaw),
        })
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn footprint_area(&self) -> f64 {
        4.0 * self.half_extents.x * self.half_extents.y
    }

    /// Footprint corners in counter-clockwise order.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hx, hy) = (self.half_extents.x, self.half_extents.y);
        let corner = |a: f64, b: f64| {
            [
                self.center.x + c * a - s * b,
                self.center.y + s * a + c * b,
            ]
        };
        [
            corner(-hx, -hy),
            corner(hx, -hy),
            corner(hx, hy),
            corner(-hx, hy),
        ]
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let fp = self.footprint();
        let z0 = self.center.z - self.half_extents.z;
        let z1 = self.center.z + self.half_extents.z;
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in fp.iter().enumerate() {
            out[i] = Vec3::new(c[0], c[1], z0);
            out[i + 4] = Vec3::new(c[0], c[1], z1);
        }
        out
    }

    pub fn contains(&self, p: &Vec3, slack: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let d = p - self.center;
        let local = [c * d.x + s * d.y, -s * d.x + c * d.y, d.z];
        (0..3).all(|k| local[k].abs() <= self.half_extents[k] + slack)
    }

    pub fn to_aabb(&self) -> AxisAlignedBox {
        let corners = self.corners();
        let mut min = corners[0];
        let mut max = corners[0];
        for c in &corners[1..] {
            min = min.inf(c);
            max = max.sup(c);
        }
        AxisAlignedBox { min, max }
    }
}

/// Maps an angle into `[-pi/2, pi/2)`; a box is symmetric under a half turn.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut y = (yaw + FRAC_PI_2).rem_euclid(std::f64::consts::PI) - FRAC_PI_2;
    if y >= FRAC_PI_2 {
        y -= std::f64::consts::PI;
    }
    y
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingQuery {
    pub query_id: String,
    pub text: String,
}

impl GroundingQuery {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Empty("query text"));
        }
        Ok(Self {
            query_id: query_id.into(),
            text,
        })
    }
}
