//! Superpoint construction: voxel-seeded supervoxel clustering, normal- and
//! colour-driven region growing, and the superpoint adjacency graph.

mod grow;
mod normals;
mod supervoxel;

use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashMap as HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{PointCloud, Vec3};

pub use grow::{region_grow, RegionGrowParams};
pub use normals::{estimate_normals, NeighborGrid};
pub use supervoxel::{supervoxel_cluster, SupervoxelParams};

pub type VoxelKey = (i64, i64, i64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Superpoint {
    pub sp_id: u32,
    /// Sorted ascending.
    pub point_indices: Vec<usize>,
    pub centroid: Vec3,
    pub mean_normal: Vec3,
    pub mean_color: [f64; 3],
}

impl Superpoint {
    /// Builds the summary statistics from member points.
    pub fn from_points(sp_id: u32, mut point_indices: Vec<usize>, cloud: &PointCloud, normals: &[Vec3]) -> Self {
        point_indices.sort_unstable();
        let n = point_indices.len().max(1) as f64;
        let mut centroid = Vec3::zeros();
        let mut normal = Vec3::zeros();
        let mut color = [0.0; 3];
        for &i in &point_indices {
            centroid += cloud.positions()[i];
            normal += normals[i];
            for (c, v) in color.iter_mut().zip(cloud.colors()[i]) {
                *c += v as f64;
            }
        }
        let len = normal.norm();
        Self {
            sp_id,
            point_indices,
            centroid: centroid / n,
            mean_normal: if len > 1e-12 { normal / len } else { Vec3::z() },
            mean_color: color.map(|c| c / n),
        }
    }

    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    pub nodes: Vec<u32>,
    /// Each edge is stored once as `(min, max)`.
    pub edges: BTreeSet<(u32, u32)>,
}

impl AdjacencyGraph {
    pub fn new(nodes: Vec<u32>) -> Self {
        Self {
            nodes,
            edges: BTreeSet::new(),
        }
    }

    pub fn add_edge(&mut self, a: u32, b: u32) {
        if a != b {
            self.edges.insert((a.min(b), a.max(b)));
        }
    }

    pub fn contains(&self, a: u32, b: u32) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self) -> BTreeMap<u32, BTreeSet<u32>> {
        let mut out: BTreeMap<u32, BTreeSet<u32>> = self.nodes.iter().map(|&n| (n, BTreeSet::new())).collect();
        for &(a, b) in &self.edges {
            out.entry(a).or_default().insert(b);
            out.entry(b).or_default().insert(a);
        }
        out
    }
}

pub fn voxel_key(p: &Vec3, voxel_size: f64) -> VoxelKey {
    (
        (p.x / voxel_size).floor() as i64,
        (p.y / voxel_size).floor() as i64,
        (p.z / voxel_size).floor() as i64,
    )
}

pub(crate) fn neighbor_offsets() -> impl Iterator<Item = (i64, i64, i64)> {
    (-1..=1).flat_map(|dx| (-1..=1).flat_map(move |dy| (-1..=1).map(move |dz| (dx, dy, dz))))
}

/// Edge `(i, j)` whenever a voxel holding points of `i` equals or touches
/// (26-neighbourhood) a voxel holding points of `j`.
pub fn build_adjacency(cloud: &PointCloud, superpoints: &[Superpoint], voxel_size: f64) -> AdjacencyGraph {
    let mut owners: HashMap<VoxelKey, Vec<u32>> = HashMap::default();
    for sp in superpoints {
        for &i in &sp.point_indices {
            let v = owners.entry(voxel_key(&cloud.positions()[i], voxel_size)).or_default();
            if v.last() != Some(&sp.sp_id) {
                v.push(sp.sp_id);
            }
        }
    }
    for v in owners.values_mut() {
        v.sort_unstable();
        v.dedup();
    }
    let mut graph = AdjacencyGraph::new(superpoints.iter().map(|s| s.sp_id).collect());
    for (k, ids) in &owners {
        for (dx, dy, dz) in neighbor_offsets() {
            let Some(other) = owners.get(&(k.0 + dx, k.1 + dy, k.2 + dz)) else {
                continue;
            };
            for &a in ids {
                for &b in other {
                    graph.add_edge(a, b);
                }
            }
        }
    }
    graph
}

pub(crate) fn check_voxel_size(voxel_size: f64) -> Result<()> {
    if voxel_size.is_finite() && voxel_size > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("voxel_size must be positive, got {voxel_size}")))
    }
}

/// Debug dump: `sp_id -> point index list`.
pub fn write_superpoints_json(path: &Path, superpoints: &[Superpoint]) -> Result<()> {
    let map: BTreeMap<u32, &Vec<usize>> = superpoints.iter().map(|s| (s.sp_id, &s.point_indices)).collect();
    let text = serde_json::to_string_pretty(&map)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
