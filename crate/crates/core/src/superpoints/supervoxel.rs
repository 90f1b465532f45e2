use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rustc_hash::FxHashMap as HashMap;

use serde::{Deserialize, Serialize};

use super::{check_voxel_size, neighbor_offsets, voxel_key, Superpoint, VoxelKey};
use crate::error::{Error, Result};
use crate::scene::{PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervoxelParams {
    pub voxel_size: f64,
    pub seed_spacing: f64,
    pub w_color: f64,
    pub w_spatial: f64,
    pub w_normal: f64,
    /// Voxels farther than this from every reachable seed are left for a
    /// later seed instead of being absorbed.
    pub max_distance: f64,
}

impl Default for SupervoxelParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.02,
            seed_spacing: 0.5,
            w_color: 0.2,
            w_spatial: 0.4,
            w_normal: 1.0,
            max_distance: 0.6,
        }
    }
}

struct Voxel {
    points: Vec<usize>,
    centroid: Vec3,
    color: Vec3,
    normal: Vec3,
}

#[derive(PartialEq)]
struct Key(f64, u32, u32);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .total_cmp(&other.0)
            .then(self.1.cmp(&other.1))
            .then(self.2.cmp(&other.2))
    }
}

fn voxelize(cloud: &PointCloud, normals: &[Vec3], voxel_size: f64) -> (Vec<VoxelKey>, Vec<Voxel>) {
    let mut map: HashMap<VoxelKey, Vec<usize>> = HashMap::default();
    for (i, p) in cloud.positions().iter().enumerate() {
        map.entry(voxel_key(p, voxel_size)).or_default().push(i);
    }
    let mut entries: Vec<(VoxelKey, Vec<usize>)> = map.into_iter().collect();
    entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    let keys = entries.iter().map(|e| e.0).collect();
    let voxels = entries
        .into_iter()
        .map(|(_, points)| {
            let n = points.len() as f64;
            let mut c = Vec3::zeros();
            let mut col = Vec3::zeros();
            let mut nrm = Vec3::zeros();
            for &i in &points {
                c += cloud.positions()[i];
                let rgb = cloud.colors()[i];
                col += Vec3::new(rgb[0] as f64, rgb[1] as f64, rgb[2] as f64);
                nrm += normals[i];
            }
            let len = nrm.norm();
            Voxel {
                centroid: c / n,
                color: col / n,
                normal: if len > 1e-12 { nrm / len } else { normals[points[0]] },
                points,
            }
        })
        .collect();
    (keys, voxels)
}

/// VCCS-style clustering in voxel space.
///
/// Seeds are the lowest-index occupied voxel of every `seed_spacing` cell.
/// All seeds grow together best-first over the 26-neighbourhood, ranked by
/// the weighted spatial/colour/normal distance to their seed voxel. Voxels
/// left unclaimed (beyond `max_distance`, or unreachable) seed further
/// clusters in index order until every voxel is assigned, so every point
/// lands in exactly one 26-connected cluster.
pub fn supervoxel_cluster(cloud: &PointCloud, normals: &[Vec3], params: &SupervoxelParams) -> Result<Vec<Superpoint>> {
    if cloud.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    if normals.len() != cloud.point_count() {
        return Err(Error::InvalidArgument(format!(
            "{} normals for {} points",
            normals.len(),
            cloud.point_count()
        )));
    }
    check_voxel_size(params.voxel_size)?;
    if !(params.seed_spacing >= params.voxel_size) {
        return Err(Error::InvalidArgument("seed_spacing must be at least voxel_size".into()));
    }

    let (keys, voxels) = voxelize(cloud, normals, params.voxel_size);
    let index: HashMap<VoxelKey, u32> = keys.iter().enumerate().map(|(i, k)| (*k, i as u32)).collect();

    let mut seeds: Vec<u32> = Vec::new();
    let mut seen_cells = std::collections::HashSet::new();
    for (i, v) in voxels.iter().enumerate() {
        if seen_cells.insert(voxel_key(&v.centroid, params.seed_spacing)) {
            seeds.push(i as u32);
        }
    }

    let color_scale = 255.0 * 3f64.sqrt();
    let dist = |seed: &Voxel, v: &Voxel| {
        params.w_spatial * (v.centroid - seed.centroid).norm() / params.seed_spacing
            + params.w_color * (v.color - seed.color).norm() / color_scale
            + params.w_normal * (1.0 - v.normal.dot(&seed.normal).abs())
    };

    let mut label: Vec<u32> = vec![u32::MAX; voxels.len()];
    let mut cluster_seeds: Vec<u32> = Vec::new();
    let mut next_unclaimed = 0usize;
    loop {
        let mut heap = BinaryHeap::new();
        for &s in &seeds {
            if label[s as usize] == u32::MAX {
                let c = cluster_seeds.len() as u32;
                cluster_seeds.push(s);
                heap.push(Reverse(Key(0.0, c, s)));
            }
        }
        while let Some(Reverse(Key(_, c, v))) = heap.pop() {
            if label[v as usize] != u32::MAX {
                continue;
            }
            label[v as usize] = c;
            let seed = &voxels[cluster_seeds[c as usize] as usize];
            let k = keys[v as usize];
            for (dx, dy, dz) in neighbor_offsets() {
                if let Some(&w) = index.get(&(k.0 + dx, k.1 + dy, k.2 + dz)) {
                    if label[w as usize] == u32::MAX {
                        let d = dist(seed, &voxels[w as usize]);
                        if d <= params.max_distance {
                            heap.push(Reverse(Key(d, c, w)));
                        }
                    }
                }
            }
        }
        while next_unclaimed < voxels.len() && label[next_unclaimed] != u32::MAX {
            next_unclaimed += 1;
        }
        if next_unclaimed == voxels.len() {
            break;
        }
        seeds = vec![next_unclaimed as u32];
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cluster_seeds.len()];
    for (v, &c) in voxels.iter().zip(&label) {
        members[c as usize].extend_from_slice(&v.points);
    }
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(c, pts)| Superpoint::from_points(c as u32, pts, cloud, normals))
        .collect())
}
