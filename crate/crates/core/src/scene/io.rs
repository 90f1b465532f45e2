//! Scene directory layout:
//!
//! ```text
//! <root>/cloud.ply                 binary little-endian, x y z red green blue
//! <root>/frames/intrinsics.txt     fx fy cx cy width height
//! <root>/frames/color_000000.png   8-bit RGB
//! <root>/frames/depth_000000.png   16-bit millimeters, 0 = invalid
//! <root>/frames/pose_000000.txt    4x4 row-major camera-to-world
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Cursor, Read, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use nalgebra::Matrix4;
use rayon::prelude::*;

use super::{
    CameraIntrinsics, DepthMap, Frame, PointCloud, Pose, Scene, Vec3, LOAD_ORTHONORMAL_TOL,
};
use crate::error::{Error, Result};

const CLOUD_FILE: &str = "cloud.ply";
const FRAMES_DIR: &str = "frames";
const INTRINSICS_FILE: &str = "intrinsics.txt";

pub fn color_name(frame_id: u32) -> String {
    format!("color_{frame_id:06}.png")
}

pub fn depth_name(frame_id: u32) -> String {
    format!("depth_{frame_id:06}.png")
}

pub fn pose_name(frame_id: u32) -> String {
    format!("pose_{frame_id:06}.txt")
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
    has_list: bool,
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingCloud(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let corrupt = |reason: String| Error::CorruptCloud {
        path: path.to_path_buf(),
        reason,
    };

    let mut reader = BufReader::new(Cursor::new(&bytes));
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<Cursor<&Vec<u8>>>| -> Result<String> {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| corrupt(format!("header: {e}")))?;
        if n == 0 {
            return Err(corrupt("unterminated header".into()));
        }
        Ok(line.trim_end().to_string())
    };

    if next_line(&mut reader)? != "ply" {
        return Err(corrupt("missing 'ply' magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_ok = false;
    loop {
        let l = next_line(&mut reader)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, _] => return Err(corrupt(format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| corrupt(format!("bad element count {count}")))?,
                props: Vec::new(),
                has_list: false,
            }),
            ["property", "list", ..] => {
                elements
                    .last_mut()
                    .ok_or_else(|| corrupt("property before element".into()))?
                    .has_list = true;
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| corrupt(format!("bad type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| corrupt("property before element".into()))?
                    .props
                    .push((name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(corrupt(format!("unexpected header line '{l}'"))),
        }
    }
    if !format_ok {
        return Err(corrupt("missing format line".into()));
    }

    let header_len = reader.stream_position_compat();
    let mut offset = header_len;
    for el in &elements {
        if el.has_list {
            return Err(corrupt(format!("list properties in '{}' unsupported", el.name)));
        }
        let stride: usize = el.props.iter().map(|(_, t)| t.size()).sum();
        if el.name != "vertex" {
            offset += stride * el.count;
            continue;
        }
        let find = |n: &str| -> Result<(usize, Scalar)> {
            let mut off = 0;
            for (name, ty) in &el.props {
                if name == n {
                    return Ok((off, *ty));
                }
                off += ty.size();
            }
            Err(corrupt(format!("vertex property '{n}' missing")))
        };
        let fields = [
            find("x")?,
            find("y")?,
            find("z")?,
            find("red")?,
            find("green")?,
            find("blue")?,
        ];
        let end = offset + stride * el.count;
        if bytes.len() < end {
            return Err(corrupt(format!(
                "truncated vertex data: need {end} bytes, have {}",
                bytes.len()
            )));
        }
        let mut positions = Vec::with_capacity(el.count);
        let mut colors = Vec::with_capacity(el.count);
        for rec in bytes[offset..end].chunks_exact(stride) {
            let v = |k: usize| fields[k].1.read(&rec[fields[k].0..]);
            positions.push(Vec3::new(v(0), v(1), v(2)));
            colors.push([v(3) as u8, v(4) as u8, v(5) as u8]);
        }
        return PointCloud::new(positions, colors).map_err(|e| corrupt(e.to_string()));
    }
    Err(corrupt("no vertex element".into()))
}

trait StreamPos {
    fn stream_position_compat(&mut self) -> usize;
}

impl StreamPos for BufReader<Cursor<&Vec<u8>>> {
    fn stream_position_compat(&mut self) -> usize {
        let buffered = self.buffer().len();
        self.get_ref().position() as usize - buffered
    }
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = Vec::with_capacity(64 + cloud.point_count() * 27);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.point_count()
    )
    .expect("write to vec");
    for (p, c) in cloud.positions().iter().zip(cloud.colors()) {
        for v in p.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(c);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

fn parse_numbers(text: &str) -> Option<Vec<f64>> {
    text.split_whitespace().map(|t| t.parse().ok()).collect()
}

fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    if !path.exists() {
        return Err(Error::MissingIntrinsics(path.to_path_buf()));
    }
    let nums = parse_numbers(&read_text(path)?)
        .filter(|n| n.len() == 6)
        .ok_or_else(|| Error::InvalidIntrinsics(format!("{}: expected 6 numbers", path.display())))?;
    CameraIntrinsics::new(nums[0], nums[1], nums[2], nums[3], nums[4] as u32, nums[5] as u32)
}

fn read_pose(path: &Path, frame: u32) -> Result<Pose> {
    let nums = parse_numbers(&read_text(path)?)
        .filter(|n| n.len() == 16)
        .ok_or_else(|| Error::BadFrame {
            frame,
            reason: format!("{}: expected 16 numbers", path.display()),
        })?;
    let m = Matrix4::from_row_slice(&nums);
    let last = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
    if last != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::BadFrame {
            frame,
            reason: format!("pose last row is {last:?}"),
        });
    }
    Pose::from_matrix(&m, LOAD_ORTHONORMAL_TOL).map_err(|e| match e {
        Error::NonOrthonormalPose { deviation, .. } => Error::NonOrthonormalPose {
            frame: Some(frame),
            deviation,
        },
        other => other,
    })
}

fn frame_ids(frames_dir: &Path) -> Result<Vec<u32>> {
    let entries = fs::read_dir(frames_dir).map_err(|e| Error::io(frames_dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(frames_dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(idx) = name
            .strip_prefix("color_")
            .and_then(|s| s.strip_suffix(".png"))
            .and_then(|s| s.parse::<u32>().ok())
        {
            ids.push(idx);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

fn load_frame(dir: &Path, id: u32, intrinsics: CameraIntrinsics) -> Result<Frame> {
    let depth_path = dir.join(depth_name(id));
    if !depth_path.exists() {
        return Err(Error::MissingDepth(id));
    }
    let pose_path = dir.join(pose_name(id));
    if !pose_path.exists() {
        return Err(Error::MissingPose(id));
    }
    let pose = read_pose(&pose_path, id)?;
    let bad = |reason: String| Error::BadFrame { frame: id, reason };
    let rgb = image::open(dir.join(color_name(id)))
        .map_err(|e| bad(format!("color image: {e}")))?
        .to_rgb8();
    let depth_img = image::open(&depth_path).map_err(|e| bad(format!("depth image: {e}")))?;
    let depth_img = match depth_img {
        image::DynamicImage::ImageLuma16(img) => img,
        other => return Err(bad(format!("depth must be 16-bit gray, got {:?}", other.color()))),
    };
    let (w, h) = depth_img.dimensions();
    let data: Vec<f32> = depth_img
        .into_raw()
        .into_iter()
        .map(|mm| mm as f32 / 1000.0)
        .collect();
    let depth = DepthMap::new(w, h, data)?;
    Frame::new(id, rgb, depth, pose, intrinsics)
}

/// Loads and validates a scene directory. Frames come back in filename
/// index order.
pub fn load_scene(root: &Path) -> Result<Scene> {
    let cloud = read_ply(&root.join(CLOUD_FILE))?;
    let frames_dir = root.join(FRAMES_DIR);
    let intrinsics = read_intrinsics(&frames_dir.join(INTRINSICS_FILE))?;
    let ids = frame_ids(&frames_dir)?;
    if ids.is_empty() {
        return Err(Error::NoFrames(frames_dir));
    }
    let frames = ids
        .par_iter()
        .map(|&id| load_frame(&frames_dir, id, intrinsics))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        scene_id: scene_id_of(root),
        cloud,
        frames,
    })
}

fn scene_id_of(root: &Path) -> String {
    root.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".to_string())
}

/// Writes `scene` in the layout read by [`load_scene`]. All frames must
/// share one set of intrinsics.
pub fn save_scene(scene: &Scene, root: &Path) -> Result<()> {
    let frames_dir: PathBuf = root.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    write_ply(&root.join(CLOUD_FILE), &scene.cloud)?;
    let Some(first) = scene.frames.first() else {
        return Ok(());
    };
    let k = first.intrinsics;
    if scene.frames.iter().any(|f| f.intrinsics != k) {
        return Err(Error::InvalidArgument(
            "frames with differing intrinsics cannot share intrinsics.txt".into(),
        ));
    }
    let intr_path = frames_dir.join(INTRINSICS_FILE);
    fs::write(
        &intr_path,
        format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height),
    )
    .map_err(|e| Error::io(&intr_path, e))?;
    scene.frames.par_iter().try_for_each(|f| -> Result<()> {
        let path = frames_dir.join(color_name(f.frame_id));
        f.rgb
            .save(&path)
            .map_err(|e| Error::BadFrame {
                frame: f.frame_id,
                reason: e.to_string(),
            })?;
        let mm: Vec<u16> = f
            .depth
            .data()
            .iter()
            .map(|d| (d * 1000.0).round().clamp(0.0, u16::MAX as f32) as u16)
            .collect();
        let depth: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(f.depth.width(), f.depth.height(), mm).expect("sized buffer");
        let path = frames_dir.join(depth_name(f.frame_id));
        depth.save(&path).map_err(|e| Error::BadFrame {
            frame: f.frame_id,
            reason: e.to_string(),
        })?;
        let m = f.pose.to_matrix();
        let mut text = String::new();
        for r in 0..4 {
            let row: Vec<String> = (0..4).map(|c| format!("{:?}", m[(r, c)])).collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
        let path = frames_dir.join(pose_name(f.frame_id));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    })
}
