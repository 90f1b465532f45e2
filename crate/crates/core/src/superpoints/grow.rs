use serde::{Deserialize, Serialize};

use super::{build_adjacency, check_voxel_size, Superpoint};
use crate::error::{Error, Result};
use crate::scene::{PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionGrowParams {
    pub angle_thresh: f64,
    pub color_thresh: f64,
    /// Voxel size used to decide adjacency.
    pub voxel_size: f64,
}

impl Default for RegionGrowParams {
    fn default() -> Self {
        Self {
            angle_thresh: 15f64.to_radians(),
            color_thresh: 30.0,
            voxel_size: 0.02,
        }
    }
}

pub(crate) fn compatible(a: &Superpoint, b: &Superpoint, params: &RegionGrowParams) -> bool {
    let cos = a.mean_normal.dot(&b.mean_normal).clamp(-1.0, 1.0);
    let dc = Vec3::from(a.mean_color) - Vec3::from(b.mean_color);
    cos.acos() <= params.angle_thresh && dc.norm() <= params.color_thresh
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Merges adjacent superpoints whose mean normals and mean colours agree.
///
/// Each pass unions every qualifying adjacent pair, then recomputes the
/// merged statistics; passes repeat until nothing qualifies. Output ids are
/// dense and ordered by the smallest input id of each group, so an input at
/// its fixed point comes back unchanged apart from renumbering.
pub fn region_grow(
    cloud: &PointCloud,
    superpoints: &[Superpoint],
    normals: &[Vec3],
    params: &RegionGrowParams,
) -> Result<Vec<Superpoint>> {
    if !(params.angle_thresh > 0.0 && params.angle_thresh < std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidArgument("angle_thresh must lie in (0, pi/2)".into()));
    }
    if !(params.color_thresh >= 0.0) {
        return Err(Error::InvalidArgument("color_thresh must be non-negative".into()));
    }
    check_voxel_size(params.voxel_size)?;

    let mut current: Vec<Superpoint> = superpoints.to_vec();
    current.sort_by_key(|s| s.sp_id);
    loop {
        let pos: std::collections::HashMap<u32, usize> =
            current.iter().enumerate().map(|(i, s)| (s.sp_id, i)).collect();
        let graph = build_adjacency(cloud, &current, params.voxel_size);
        let mut parent: Vec<usize> = (0..current.len()).collect();
        let mut merged = false;
        for &(a, b) in &graph.edges {
            let (ia, ib) = (pos[&a], pos[&b]);
            if compatible(&current[ia], &current[ib], params) {
                let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                    merged = true;
                }
            }
        }
        if !merged {
            break;
        }
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); current.len()];
        for i in 0..current.len() {
            let r = find(&mut parent, i);
            groups[r].extend_from_slice(&current[i].point_indices);
        }
        current = groups
            .into_iter()
            .enumerate()
            .filter(|(_, g)| !g.is_empty())
            .map(|(r, g)| Superpoint::from_points(current[r].sp_id, g, cloud, normals))
            .collect();
    }
    for (i, sp) in current.iter_mut().enumerate() {
        sp.sp_id = i as u32;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::super::{supervoxel_cluster, SupervoxelParams};
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn plane(origin: Vec3, u: Vec3, v: Vec3, n: usize, step: f64) -> Vec<Vec3> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                out.push(origin + u * (i as f64 * step) + v * (j as f64 * step));
            }
        }
        out
    }

    /// Per pass: scan all pairs of the current partition for touching,
    /// compatible superpoints, merge connected components found by BFS, and
    /// repeat until a pass changes nothing.
    fn naive_grow(cloud: &PointCloud, sps: &[Superpoint], normals: &[Vec3], p: &RegionGrowParams) -> Vec<Vec<usize>> {
        let touches = |a: &Superpoint, b: &Superpoint| {
            a.point_indices.iter().any(|&i| {
                let ki = super::super::voxel_key(&cloud.positions()[i], p.voxel_size);
                b.point_indices.iter().any(|&j| {
                    let kj = super::super::voxel_key(&cloud.positions()[j], p.voxel_size);
                    (ki.0 - kj.0).abs() <= 1 && (ki.1 - kj.1).abs() <= 1 && (ki.2 - kj.2).abs() <= 1
                })
            })
        };
        let mut cur: Vec<Superpoint> = sps.to_vec();
        loop {
            let n = cur.len();
            let mut adj = vec![Vec::new(); n];
            for a in 0..n {
                for b in a + 1..n {
                    if touches(&cur[a], &cur[b]) && compatible(&cur[a], &cur[b], p) {
                        adj[a].push(b);
                        adj[b].push(a);
                    }
                }
            }
            let mut comp = vec![usize::MAX; n];
            let mut groups = Vec::new();
            for s in 0..n {
                if comp[s] != usize::MAX {
                    continue;
                }
                comp[s] = groups.len();
                let mut members = vec![s];
                let mut q = VecDeque::from([s]);
                while let Some(x) = q.pop_front() {
                    for &y in &adj[x] {
                        if comp[y] == usize::MAX {
                            comp[y] = groups.len();
                            members.push(y);
                            q.push_back(y);
                        }
                    }
                }
                groups.push(members);
            }
            if groups.len() == n {
                let mut out: Vec<Vec<usize>> = cur.iter().map(|s| s.point_indices.clone()).collect();
                out.sort();
                return out;
            }
            cur = groups
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    let pts: Vec<usize> = g.iter().flat_map(|&m| cur[m].point_indices.clone()).collect();
                    Superpoint::from_points(k as u32, pts, cloud, normals)
                })
                .collect();
        }
    }

    fn canon(sps: &[Superpoint]) -> Vec<Vec<usize>> {
        let mut v: Vec<Vec<usize>> = sps.iter().map(|s| s.point_indices.clone()).collect();
        v.sort();
        v
    }

    fn split_in_halves(cloud: &PointCloud, normals: &[Vec3], n: usize) -> Vec<Superpoint> {
        (0..2)
            .map(|h| {
                let idx: Vec<usize> = (0..n).filter(|&i| (cloud.positions()[i].x < 0.2) == (h == 0)).collect();
                Superpoint::from_points(h, idx, cloud, normals)
            })
            .collect()
    }

    #[test]
    fn coplanar_same_colour_neighbours_merge() {
        let pts = plane(Vec3::new(0.005, 0.005, 0.0), Vec3::x(), Vec3::y(), 20, 0.02);
        let n = pts.len();
        let cloud = PointCloud::new(pts, vec![[100; 3]; n]).unwrap();
        let normals = vec![Vec3::z(); n];
        let sps = split_in_halves(&cloud, &normals, n);
        let out = region_grow(&cloud, &sps, &normals, &RegionGrowParams::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), n);
    }

    #[test]
    fn wall_and_floor_stay_apart() {
        let mut pts = plane(Vec3::new(0.005, 0.005, 0.001), Vec3::x(), Vec3::y(), 15, 0.02);
        let floor = pts.len();
        pts.extend(plane(Vec3::new(0.001, 0.005, 0.021), Vec3::y(), Vec3::z(), 15, 0.02));
        let n = pts.len();
        let cloud = PointCloud::new(pts, vec![[100; 3]; n]).unwrap();
        let normals: Vec<Vec3> = (0..n).map(|i| if i < floor { Vec3::z() } else { Vec3::x() }).collect();
        let sps = vec![
            Superpoint::from_points(0, (0..floor).collect(), &cloud, &normals),
            Superpoint::from_points(1, (floor..n).collect(), &cloud, &normals),
        ];
        let out = region_grow(&cloud, &sps, &normals, &RegionGrowParams::default()).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn colour_difference_blocks_merge() {
        let pts = plane(Vec3::new(0.005, 0.005, 0.0), Vec3::x(), Vec3::y(), 20, 0.02);
        let n = pts.len();
        let colors: Vec<[u8; 3]> = pts.iter().map(|p| if p.x < 0.2 { [200, 0, 0] } else { [0, 0, 200] }).collect();
        let cloud = PointCloud::new(pts, colors).unwrap();
        let normals = vec![Vec3::z(); n];
        let sps = split_in_halves(&cloud, &normals, n);
        assert_eq!(region_grow(&cloud, &sps, &normals, &RegionGrowParams::default()).unwrap().len(), 2);
    }

    #[test]
    fn bad_thresholds_are_rejected() {
        let cloud = PointCloud::empty();
        let p = RegionGrowParams {
            angle_thresh: 2.0,
            ..Default::default()
        };
        assert!(region_grow(&cloud, &[], &[], &p).is_err());
    }

    fn room(seed: u64) -> (PointCloud, Vec<Vec3>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut cols = Vec::new();
        let mut nrm = Vec::new();
        let palette = [[200u8, 30, 30], [30, 200, 30], [190, 40, 35], [120, 120, 200]];
        for _ in 0..4 {
            let o = Vec3::new(rng.gen_range(0.0..0.6), rng.gen_range(0.0..0.6), rng.gen_range(0.0..0.3));
            let c = palette[rng.gen_range(0..palette.len())];
            let (u, v, n) = match rng.gen_range(0..3) {
                0 => (Vec3::x(), Vec3::y(), Vec3::z()),
                1 => (Vec3::y(), Vec3::z(), Vec3::x()),
                _ => (Vec3::x(), Vec3::new(0.0, 0.26, 0.97).normalize(), Vec3::new(0.0, -0.97, 0.26)),
            };
            for p in plane(o, u, v, 12, 0.025) {
                pts.push(p + n * rng.gen_range(-0.002..0.002));
                cols.push(c);
                nrm.push(n);
            }
        }
        let k = pts.len();
        (PointCloud::new(pts, cols).unwrap(), nrm.into_iter().take(k).collect())
    }

    #[test]
    fn random_rooms_match_the_naive_oracle() {
        for seed in 0..8 {
            let (cloud, normals) = room(seed);
            let sv = SupervoxelParams {
                seed_spacing: 0.1,
                ..Default::default()
            };
            let sps = supervoxel_cluster(&cloud, &normals, &sv).unwrap();
            let p = RegionGrowParams::default();
            let fast = region_grow(&cloud, &sps, &normals, &p).unwrap();
            assert_eq!(canon(&fast), naive_grow(&cloud, &sps, &normals, &p), "seed {seed}");
            assert!(fast.len() <= sps.len());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn growing_is_idempotent(seed in 0u64..1000) {
            let (cloud, normals) = room(seed);
            let sv = SupervoxelParams { seed_spacing: 0.1, ..Default::default() };
            let sps = supervoxel_cluster(&cloud, &normals, &sv).unwrap();
            let p = RegionGrowParams::default();
            let once = region_grow(&cloud, &sps, &normals, &p).unwrap();
            let twice = region_grow(&cloud, &once, &normals, &p).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
