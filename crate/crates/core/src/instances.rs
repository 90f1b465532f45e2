//! Pairwise multi-view affinity between superpoints and the progressive
//! merge that aggregates them into object instances.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{observation_from_cells, ViewCells, ViewObservation};
use crate::scene::{fit_aabb, fit_oriented_box, AxisAlignedBox, OrientedBox, PointCloud};
use crate::superpoints::{AdjacencyGraph, Superpoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityEdge {
    pub i: u32,
    pub j: u32,
    pub affinity: f64,
    pub contributing_views: u32,
}

/// What `|i|` means in the joint-visibility factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeMode {
    /// Distinct projected cells of the superpoint in the same view.
    #[default]
    PerView,
    /// Number of 3D points of the superpoint, the same in every view.
    PointCount,
}

fn feature_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// Mean over co-visible views of joint visibility times mask-feature
/// cosine. Returns `(affinity, m)`.
pub fn pair_affinity(obs_i: &[ViewObservation], obs_j: &[ViewObservation]) -> (f64, u32) {
    pair_affinity_sized(obs_i, obs_j, None)
}

/// As [`pair_affinity`]; `sizes` replaces the per-view totals with fixed
/// sizes when given.
pub fn pair_affinity_sized(obs_i: &[ViewObservation], obs_j: &[ViewObservation], sizes: Option<(f64, f64)>) -> (f64, u32) {
    let by_frame: HashMap<u32, &ViewObservation> = obs_j.iter().map(|o| (o.frame_id, o)).collect();
    let mut sum = 0.0;
    let mut m = 0u32;
    for a in obs_i {
        let Some(b) = by_frame.get(&a.frame_id) else {
            continue;
        };
        if a.visible_pixels == 0 || b.visible_pixels == 0 {
            continue;
        }
        m += 1;
        let (si, sj) = sizes.unwrap_or((a.total_pixels as f64, b.total_pixels as f64));
        let fi = (a.visible_pixels as f64 / si).min(1.0);
        let fj = (b.visible_pixels as f64 / sj).min(1.0);
        sum += fi * fj * feature_cosine(&a.mask_feature, &b.mask_feature);
    }
    if m == 0 {
        (0.0, 0)
    } else {
        ((sum / m as f64).clamp(0.0, 1.0), m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSchedule {
    thresholds: Vec<f64>,
}

impl MergeSchedule {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::Empty("merge schedule"));
        }
        if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidArgument("thresholds must lie in [0, 1]".into()));
        }
        if thresholds.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("thresholds must be strictly decreasing".into()));
        }
        Ok(Self { thresholds })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }
}

/// `stages` evenly spaced thresholds from `start` down to `end`, snapped
/// to 12 decimals so that decimal endpoints give decimal steps.
pub fn linear_schedule(start: f64, end: f64, stages: usize) -> Result<MergeSchedule> {
    if !(start > end) {
        return Err(Error::InvalidArgument(format!("schedule start {start} must exceed end {end}")));
    }
    if stages < 2 {
        return Err(Error::InvalidArgument("a schedule needs at least two stages".into()));
    }
    let step = (start - end) / (stages - 1) as f64;
    let t = (0..stages)
        .map(|t| {
            let x = if t == stages - 1 { end } else { start - t as f64 * step };
            (x * 1e12).round() / 1e12
        })
        .collect();
    MergeSchedule::new(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeOrder {
    /// Highest affinity first; smaller combined size breaks ties.
    #[default]
    AffinityFirst,
    /// Smallest combined size first among qualifying pairs.
    SizeFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationUpdate {
    /// Per-view sums of counts and pixel-weighted feature means.
    #[default]
    Summation,
    /// Union of the members' projected cell sets, re-observed.
    Reprojection,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeParams {
    pub order: MergeOrder,
    pub update: ObservationUpdate,
    pub size_mode: SizeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: u32,
    pub member_superpoints: Vec<u32>,
    pub point_indices: Vec<usize>,
    pub aabb: AxisAlignedBox,
    pub obb: OrientedBox,
}

impl Instance {
    pub fn from_members(instance_id: u32, members: &[&Superpoint], cloud: &PointCloud) -> Result<Self> {
        let mut member_superpoints: Vec<u32> = members.iter().map(|s| s.sp_id).collect();
        member_superpoints.sort_unstable();
        let mut point_indices: Vec<usize> = members.iter().flat_map(|s| s.point_indices.iter().copied()).collect();
        point_indices.sort_unstable();
        let pts: Vec<_> = point_indices.iter().map(|&i| cloud.positions()[i]).collect();
        Ok(Self {
            instance_id,
            member_superpoints,
            aabb: fit_aabb(&pts)?,
            obb: fit_oriented_box(&pts)?,
            point_indices,
        })
    }

    pub fn point_count(&self) -> usize {
        self.point_indices.len()
    }
}

/// Per-view projected cells of one superpoint plus the label image of
/// each frame, enough to re-observe any union of superpoints.
#[derive(Debug, Clone, Default)]
pub struct CellObservations {
    /// `sp_id -> [(frame_id, cells)]`.
    pub cells: HashMap<u32, Vec<(u32, ViewCells)>>,
    /// `frame_id -> (label image, mask count)`.
    pub labels: HashMap<u32, (Vec<i32>, usize)>,
}

impl CellObservations {
    pub fn observe(&self, views: &[(u32, ViewCells)]) -> Vec<ViewObservation> {
        views
            .iter()
            .map(|(f, c)| {
                let (labels, n) = &self.labels[f];
                observation_from_cells(*f, c, labels, *n)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeOutcome {
    pub instances: Vec<Instance>,
    /// Node count after each schedule stage.
    pub stage_counts: Vec<usize>,
}

struct Node {
    members: Vec<u32>,
    points: usize,
    obs: Vec<ViewObservation>,
    cells: Vec<(u32, ViewCells)>,
}

fn sum_observations(a: &[ViewObservation], b: &[ViewObservation]) -> Vec<ViewObservation> {
    let mut out: BTreeMap<u32, ViewObservation> = a.iter().map(|o| (o.frame_id, o.clone())).collect();
    for o in b {
        match out.get_mut(&o.frame_id) {
            None => {
                out.insert(o.frame_id, o.clone());
            }
            Some(acc) => {
                let (va, vb) = (acc.visible_pixels as f64, o.visible_pixels as f64);
                let v = va + vb;
                let n = acc.mask_feature.len().max(o.mask_feature.len());
                let get = |f: &[f64], k: usize| f.get(k).copied().unwrap_or(0.0);
                acc.mask_feature = (0..n)
                    .map(|k| {
                        if v == 0.0 {
                            0.0
                        } else {
                            (get(&acc.mask_feature, k) * va + get(&o.mask_feature, k) * vb) / v
                        }
                    })
                    .collect();
                acc.visible_pixels += o.visible_pixels;
                acc.total_pixels += o.total_pixels;
            }
        }
    }
    out.into_values().collect()
}

fn merge_cells(a: &[(u32, ViewCells)], b: &[(u32, ViewCells)]) -> Vec<(u32, ViewCells)> {
    let mut out: BTreeMap<u32, ViewCells> = a.iter().cloned().collect();
    for (f, c) in b {
        let merged = match out.get(f) {
            Some(prev) => prev.union(c),
            None => c.clone(),
        };
        out.insert(*f, merged);
    }
    out.into_iter().collect()
}

/// Greedy agglomeration under a descending threshold schedule.
///
/// At each threshold the best qualifying adjacent pair is merged until none
/// is left. The merged node keeps the smaller id and inherits the union of
/// both adjacencies. `observations` maps each superpoint id to its per-view
/// observations; `cells` must be given for [`ObservationUpdate::Reprojection`].
pub fn progressive_merge(
    cloud: &PointCloud,
    superpoints: &[Superpoint],
    graph: &AdjacencyGraph,
    observations: &HashMap<u32, Vec<ViewObservation>>,
    cells: Option<&CellObservations>,
    schedule: &MergeSchedule,
    params: &MergeParams,
) -> Result<MergeOutcome> {
    let reproject = params.update == ObservationUpdate::Reprojection;
    if reproject && cells.is_none() {
        return Err(Error::InvalidArgument("re-projection merging needs per-view cells".into()));
    }
    let by_id: HashMap<u32, &Superpoint> = superpoints.iter().map(|s| (s.sp_id, s)).collect();
    for n in &graph.nodes {
        if !by_id.contains_key(n) {
            return Err(Error::InvalidArgument(format!("graph node {n} is not a superpoint")));
        }
    }

    let mut nodes: BTreeMap<u32, Node> = BTreeMap::new();
    for sp in superpoints {
        let cell_views = cells
            .filter(|_| reproject)
            .and_then(|c| c.cells.get(&sp.sp_id).cloned())
            .unwrap_or_default();
        let obs = if reproject {
            cells.map(|c| c.observe(&cell_views)).unwrap_or_default()
        } else {
            observations.get(&sp.sp_id).cloned().unwrap_or_default()
        };
        nodes.insert(
            sp.sp_id,
            Node {
                members: vec![sp.sp_id],
                points: sp.len(),
                obs,
                cells: cell_views,
            },
        );
    }
    let mut adj: BTreeMap<u32, BTreeSet<u32>> = nodes.keys().map(|&k| (k, BTreeSet::new())).collect();
    for &(a, b) in &graph.edges {
        if nodes.contains_key(&a) && nodes.contains_key(&b) {
            adj.get_mut(&a).unwrap().insert(b);
            adj.get_mut(&b).unwrap().insert(a);
        }
    }

    let affinity = |a: &Node, b: &Node| -> f64 {
        let sizes = match params.size_mode {
            SizeMode::PerView => None,
            SizeMode::PointCount => Some((a.points as f64, b.points as f64)),
        };
        pair_affinity_sized(&a.obs, &b.obs, sizes).0
    };
    let mut edge_aff: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for (&a, ns) in &adj {
        for &b in ns.range(a + 1..) {
            edge_aff.insert((a, b), affinity(&nodes[&a], &nodes[&b]));
        }
    }

    let mut stage_counts = Vec::with_capacity(schedule.thresholds().len());
    for &tau in schedule.thresholds() {
        loop {
            let mut best: Option<((u32, u32), f64, usize)> = None;
            for (&(a, b), &aff) in &edge_aff {
                if aff < tau {
                    continue;
                }
                let size = nodes[&a].points + nodes[&b].points;
                let better = match best {
                    None => true,
                    Some((_, baff, bsize)) => match params.order {
                        MergeOrder::AffinityFirst => aff > baff || (aff == baff && size < bsize),
                        MergeOrder::SizeFirst => size < bsize || (size == bsize && aff > baff),
                    },
                };
                if better {
                    best = Some(((a, b), aff, size));
                }
            }
            let Some(((a, b), _, _)) = best else {
                break;
            };
            let nb = nodes.remove(&b).unwrap();
            let na = nodes.get_mut(&a).unwrap();
            na.members.extend(nb.members);
            na.points += nb.points;
            if reproject {
                na.cells = merge_cells(&na.cells, &nb.cells);
                na.obs = cells.unwrap().observe(&na.cells);
            } else {
                na.obs = sum_observations(&na.obs, &nb.obs);
            }
            let nbrs_b = adj.remove(&b).unwrap();
            for &n in &nbrs_b {
                if let Some(s) = adj.get_mut(&n) {
                    s.remove(&b);
                }
                edge_aff.remove(&(n.min(b), n.max(b)));
            }
            let mut nbrs_a = adj.remove(&a).unwrap();
            nbrs_a.extend(nbrs_b);
            nbrs_a.remove(&a);
            nbrs_a.remove(&b);
            for &n in &nbrs_a {
                adj.get_mut(&n).unwrap().insert(a);
                edge_aff.insert((a.min(n), a.max(n)), affinity(&nodes[&a], &nodes[&n]));
            }
            adj.insert(a, nbrs_a);
        }
        stage_counts.push(nodes.len());
    }

    let instances = nodes
        .values()
        .enumerate()
        .map(|(k, n)| {
            let members: Vec<&Superpoint> = n.members.iter().map(|id| by_id[id]).collect();
            Instance::from_members(k as u32, &members, cloud)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MergeOutcome {
        instances,
        stage_counts,
    })
}

/// Debug dump: `instance_id -> {superpoints, aabb, obb}`.
pub fn write_instances_json(path: &Path, instances: &[Instance]) -> Result<()> {
    let map: BTreeMap<u32, serde_json::Value> = instances
        .iter()
        .map(|i| {
            (
                i.instance_id,
                serde_json::json!({
                    "superpoints": i.member_superpoints,
                    "aabb": i.aabb,
                    "obb": i.obb,
                }),
            )
        })
        .collect();
    std::fs::write(path, serde_json::to_string_pretty(&map)?).map_err(|e| Error::io(path, e))
}
