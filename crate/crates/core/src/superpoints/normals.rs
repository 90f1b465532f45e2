use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::scene::{PointCloud, Vec3};

type Cell = (i64, i64, i64);

/// Uniform hash grid answering exact k-nearest-neighbour queries by
/// expanding Chebyshev rings of cells.
pub struct NeighborGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: FxHashMap<Cell, Vec<u32>>,
    max_ring: i64,
}

impl<'a> NeighborGrid<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        let mut cells: FxHashMap<Cell, Vec<u32>> = FxHashMap::default();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        let (mut lo, mut hi) = ([i64::MAX; 3], [i64::MIN; 3]);
        for k in cells.keys() {
            for (d, v) in [k.0, k.1, k.2].into_iter().enumerate() {
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
        }
        let max_ring = (0..3).map(|d| hi[d] - lo[d]).max().unwrap_or(0) + 1;
        Self {
            points,
            cell,
            cells,
            max_ring,
        }
    }

    /// Picks a cell size that holds a handful of points for surface-like
    /// or volumetric clouds alike.
    pub fn auto(points: &'a [Vec3]) -> Self {
        let n = points.len().max(1) as f64;
        let mut ext = [0.0f64; 3];
        if let Ok(b) = crate::scene::fit_aabb(points) {
            let s = b.size();
            ext = [s.x, s.y, s.z];
        }
        ext.sort_by(|a, b| b.total_cmp(a));
        let vol = (ext[0] * ext[1] * ext[2] / n).cbrt();
        let area = (ext[0] * ext[1] / n).sqrt();
        let line = ext[0] / n;
        let cell = (vol.max(area).max(line) * 2.0).max(1e-9);
        Self::new(points, cell)
    }

    fn key(p: &Vec3, cell: f64) -> Cell {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Indices of the `k` nearest points to `q` (including `q` itself if it
    /// is in the set), nearest first, ties by index.
    pub fn nearest(&self, q: &Vec3, k: usize) -> Vec<u32> {
        let c0 = Self::key(q, self.cell);
        let mut found: Vec<(f64, u32)> = Vec::with_capacity(4 * k);
        for r in 0..=self.max_ring {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&(c0.0 + dx, c0.1 + dy, c0.2 + dz)) {
                            for &i in ids {
                                found.push(((self.points[i as usize] - q).norm_squared(), i));
                            }
                        }
                    }
                }
            }
            if found.len() >= k {
                if found.len() > k {
                    found.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    found.truncate(k);
                }
                let worst = found.iter().map(|f| f.0).fold(0.0, f64::max);
                let reach = r as f64 * self.cell;
                if worst <= reach * reach {
                    break;
                }
            }
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        found.truncate(k);
        found.into_iter().map(|(_, i)| i).collect()
    }
}

/// Per-point unit normals from the smallest principal axis of the `k`
/// nearest neighbours. Each normal is flipped to face the nearest of
/// `viewpoints`; without viewpoints normals point up (+z).
pub fn estimate_normals(cloud: &PointCloud, k_neighbors: usize, viewpoints: &[Vec3]) -> Result<Vec<Vec3>> {
    if k_neighbors < 3 {
        return Err(Error::InvalidArgument(format!(
            "k_neighbors must be at least 3, got {k_neighbors}"
        )));
    }
    if cloud.point_count() < k_neighbors {
        return Err(Error::TooFewPoints {
            needed: k_neighbors,
            have: cloud.point_count(),
        });
    }
    let pts = cloud.positions();
    let grid = NeighborGrid::auto(pts);
    Ok(pts
        .par_iter()
        .map(|p| {
            let nbrs = grid.nearest(p, k_neighbors);
            let mean = nbrs.iter().map(|&i| pts[i as usize]).sum::<Vec3>() / nbrs.len() as f64;
            let mut cov = Matrix3::zeros();
            for &i in &nbrs {
                let d = pts[i as usize] - mean;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let (imin, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
            let mut n: Vec3 = eig.eigenvectors.column(imin).into_owned();
            let norm = n.norm();
            n = if norm > 0.0 { n / norm } else { Vec3::z() };
            let toward = viewpoints
                .iter()
                .min_by(|a, b| (*a - p).norm_squared().total_cmp(&(*b - p).norm_squared()))
                .map(|v| v - p)
                .unwrap_or_else(Vec3::z);
            if n.dot(&toward) < 0.0 {
                n = -n;
            }
            n
        })
        .collect())
}
