//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uniground_core::gateway::mock::{FuzzVlm, VocabEmbeddingProvider};
use uniground_core::gateway::Metered;
use uniground_core::harness::{
    ablate_candidates, ablate_prompts, evaluate_variants_with, iou_3d, synth_dataset, BoxType, Dataset, EvalBox,
    EvalOptions, EvalReport, Variant, PROMPT_ROWS,
};
use uniground_core::instances::MergeParams;
use uniground_core::projection::{build_frame_zbuffer, observation_from_cells, view_cells, MaskSet};
use uniground_core::reasoner::{PromptToggles, ReasonerParams};
use uniground_core::scene::{fit_aabb, fit_oriented_box};
use uniground_core::superpoints::AdjacencyGraph;
use uniground_core::viewfactory::{default_azimuths, orbit_poses, select_candidate_views, OrbitCameraSpec, ViewParams};
use uniground_core::*;

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Independent per-pixel projection used by the affinity and view oracles.

struct PixelView {
    width: usize,
    /// Per pixel: nearest splatted depth.
    zbuf: Vec<f64>,
}

fn pinhole(p: &Vec3, f: &Frame) -> Option<(usize, usize, f64)> {
    let r = f.pose.rotation;
    let d = p - f.pose.translation;
    // Camera coordinates: rows of R^T are the columns of R.
    let cx = r[(0, 0)] * d.x + r[(1, 0)] * d.y + r[(2, 0)] * d.z;
    let cy = r[(0, 1)] * d.x + r[(1, 1)] * d.y + r[(2, 1)] * d.z;
    let cz = r[(0, 2)] * d.x + r[(1, 2)] * d.y + r[(2, 2)] * d.z;
    if cz <= 0.0 {
        return None;
    }
    let k = &f.intrinsics;
    let u = k.fx * cx / cz + k.cx;
    let v = k.fy * cy / cz + k.cy;
    if u < 0.0 || v < 0.0 || u >= k.width as f64 || v >= k.height as f64 {
        return None;
    }
    Some((u.floor() as usize, v.floor() as usize, cz))
}

fn oracle_zbuffer(cloud: &[Vec3], f: &Frame, radius: i64) -> PixelView {
    let (w, h) = (f.intrinsics.width as usize, f.intrinsics.height as usize);
    let mut zbuf = vec![f64::INFINITY; w * h];
    for p in cloud {
        if let Some((x, y, z)) = pinhole(p, f) {
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (px, py) = (x as i64 + dx, y as i64 + dy);
                    if dx * dx + dy * dy > radius * radius || px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                        continue;
                    }
                    let c = py as usize * w + px as usize;
                    if z < zbuf[c] {
                        zbuf[c] = z;
                    }
                }
            }
        }
    }
    PixelView { width: w, zbuf }
}

/// Per pixel: does any point land here, and does any landing point pass the
/// depth test.
fn oracle_pixels(points: &[Vec3], f: &Frame, view: &PixelView, tol: f64) -> (Vec<bool>, Vec<bool>) {
    let n = view.zbuf.len();
    let (mut total, mut visible) = (vec![false; n], vec![false; n]);
    for p in points {
        if let Some((x, y, z)) = pinhole(p, f) {
            let c = y * view.width + x;
            total[c] = true;
            if z <= view.zbuf[c] + tol {
                visible[c] = true;
            }
        }
    }
    (total, visible)
}

fn look_at_frame(id: u32, eye: Vec3, target: Vec3, w: u32, h: u32, focal: f64) -> Frame {
    let pose = Pose::look_at(eye, target, Vec3::z()).unwrap();
    let k = CameraIntrinsics::new(focal, focal, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
    Frame::new(id, RgbImage::new(w, h), DepthMap::zeros(w, h), pose, k).unwrap()
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let tol = 0.05;
    let mut pairs = 0;
    for scene in 0..50u64 {
        let mut r = rng(100 + scene);
        let (w, h) = (r.gen_range(16..40u32), r.gen_range(12..30u32));
        let n_sp = r.gen_range(2..=10usize);
        let mut groups: Vec<Vec<Vec3>> = Vec::new();
        for _ in 0..n_sp {
            let c = Vec3::new(r.gen_range(-0.6..0.6), r.gen_range(-0.6..0.6), r.gen_range(0.0..0.5));
            let s = r.gen_range(0.05..0.3);
            let pts = (0..r.gen_range(5..40))
                .map(|_| c + Vec3::new(r.gen_range(-s..s), r.gen_range(-s..s), r.gen_range(-s..s)))
                .collect();
            groups.push(pts);
        }
        let all: Vec<Vec3> = groups.iter().flatten().copied().collect();
        let cloud = PointCloud::new(all.clone(), vec![[0, 0, 0]; all.len()]).unwrap();
        let n_views = r.gen_range(1..=5u32);
        let splat = r.gen_range(0..=1u32);

        // Per superpoint: per frame observation from the library and from
        // the brute-force oracle.
        let mut lib: Vec<Vec<uniground_core::projection::ViewObservation>> = vec![Vec::new(); n_sp];
        let mut ora: Vec<Vec<(u32, usize, usize, Vec<f64>)>> = vec![Vec::new(); n_sp];
        for v in 0..n_views {
            let az = r.gen_range(0.0..std::f64::consts::TAU);
            let eye = Vec3::new(2.5 * az.cos(), 2.5 * az.sin(), r.gen_range(0.8..2.0));
            let target = Vec3::new(r.gen_range(-0.2..0.2), r.gen_range(-0.2..0.2), 0.2);
            let frame = look_at_frame(v, eye, target, w, h, w as f64 * 0.9);
            let n_masks = r.gen_range(1..=4usize);
            let masks: Vec<Vec<bool>> = (0..n_masks)
                .map(|_| {
                    let (x0, y0) = (r.gen_range(0..w), r.gen_range(0..h));
                    let (x1, y1) = (r.gen_range(x0..w), r.gen_range(y0..h));
                    (0..w * h).map(|c| (x0..=x1).contains(&(c % w)) && (y0..=y1).contains(&(c / w))).collect()
                })
                .collect();
            let set = MaskSet { frame_id: v, width: w, height: h, masks: masks.clone() };
            let labels = set.label_image();
            let zb = build_frame_zbuffer(&cloud, &frame, splat);
            let oz = oracle_zbuffer(&all, &frame, splat as i64);
            for (i, g) in groups.iter().enumerate() {
                let cells = view_cells(g.iter().copied(), &frame, &zb, tol);
                if !cells.is_empty() {
                    lib[i].push(observation_from_cells(v, &cells, &labels, n_masks));
                }
                let (total, visible) = oracle_pixels(g, &frame, &oz, tol);
                let tot = total.iter().filter(|&&b| b).count();
                let vis = visible.iter().filter(|&&b| b).count();
                let mut feat = vec![0.0; n_masks];
                for (c, _) in visible.iter().enumerate().filter(|(_, &b)| b) {
                    if let Some(k) = masks.iter().position(|m| m[c]) {
                        feat[k] += 1.0 / vis as f64;
                    }
                }
                if tot > 0 {
                    ora[i].push((v, vis, tot, feat));
                }
            }
        }
        for i in 0..n_sp {
            for j in i + 1..n_sp {
                let (a, m) = pair_affinity(&lib[i], &lib[j]);
                let mut sum = 0.0;
                let mut views = 0u32;
                for (v, vi, ti, fi) in &ora[i] {
                    let Some((_, vj, tj, fj)) = ora[j].iter().find(|o| o.0 == *v) else { continue };
                    if *vi == 0 || *vj == 0 {
                        continue;
                    }
                    views += 1;
                    let dot: f64 = fi.iter().zip(fj).map(|(x, y)| x * y).sum();
                    let ni = fi.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nj = fj.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let cos = if ni > 0.0 && nj > 0.0 { dot / (ni * nj) } else { 0.0 };
                    sum += (*vi as f64 / *ti as f64) * (*vj as f64 / *tj as f64) * cos;
                }
                let want = if views == 0 { 0.0 } else { sum / views as f64 };
                ensure!(m == views, "scene {scene} pair ({i},{j}): {m} co-visible views, oracle {views}");
                ensure!((a - want).abs() <= 1e-9, "scene {scene} pair ({i},{j}): affinity {a} vs oracle {want}");
                pairs += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1}s");
    Ok(format!("{pairs} pairs over 50 scenes match within 1e-9 ({secs:.2}s)"))
}

fn criterion_2() -> Outcome {
    let s = linear_schedule(0.9, 0.5, 5).map_err(|e| e.to_string())?;
    ensure!(s.thresholds() == [0.9, 0.8, 0.7, 0.6, 0.5], "schedule {:?}", s.thresholds());
    let sched = s;
    let mut merges = 0;
    for g in 0..100u64 {
        let mut r = rng(200 + g);
        let n = r.gen_range(2..40usize);
        let mut positions = Vec::new();
        let mut members = Vec::new();
        for _ in 0..n {
            let k = r.gen_range(1..6);
            let base = positions.len();
            for _ in 0..k {
                positions.push(Vec3::new(r.gen(), r.gen(), r.gen()));
            }
            members.push((base..base + k).collect::<Vec<usize>>());
        }
        let cloud = PointCloud::new(positions.clone(), vec![[0, 0, 0]; positions.len()]).unwrap();
        let normals = vec![Vec3::z(); positions.len()];
        let sps: Vec<Superpoint> = members
            .into_iter()
            .enumerate()
            .map(|(i, m)| Superpoint::from_points(i as u32, m, &cloud, &normals))
            .collect();
        let mut graph = AdjacencyGraph::new((0..n as u32).collect());
        for _ in 0..r.gen_range(n..4 * n) {
            graph.add_edge(r.gen_range(0..n as u32), r.gen_range(0..n as u32));
        }
        let n_views = r.gen_range(1..5u32);
        let n_masks = r.gen_range(1..5usize);
        let obs: HashMap<u32, Vec<_>> = (0..n as u32)
            .map(|i| {
                let seen: Vec<u32> = (0..n_views).filter(|_| r.gen_bool(0.8)).collect();
                let o = seen
                    .into_iter()
                    .map(|v| {
                        let total = r.gen_range(1..50u32);
                        let hot = r.gen_range(0..n_masks);
                        let mut f: Vec<f64> = (0..n_masks).map(|k| if k == hot { 1.0 } else { r.gen_range(0.0..0.2) }).collect();
                        let s: f64 = f.iter().sum();
                        f.iter_mut().for_each(|x| *x /= s);
                        uniground_core::projection::ViewObservation {
                            frame_id: v,
                            visible_pixels: r.gen_range(0..=total),
                            total_pixels: total,
                            mask_feature: f,
                        }
                    })
                    .collect();
                (i, o)
            })
            .collect();
        let out = progressive_merge(&cloud, &sps, &graph, &obs, None, &sched, &MergeParams::default())
            .map_err(|e| format!("graph {g}: {e}"))?;
        ensure!(out.stage_counts.len() == 5, "graph {g}: {} stage counts", out.stage_counts.len());
        ensure!(out.stage_counts[0] <= n, "graph {g}: first stage {} > {n}", out.stage_counts[0]);
        ensure!(
            out.stage_counts.windows(2).all(|w| w[1] <= w[0]),
            "graph {g}: counts {:?}",
            out.stage_counts
        );
        ensure!(out.instances.len() == *out.stage_counts.last().unwrap(), "graph {g}: final count");
        merges += n - out.instances.len();
    }
    Ok(format!("schedule exact; 100 graphs non-increasing ({merges} merges)"))
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let mut poses = 0usize;
    for case in 0..10_000 {
        let lo = Vec3::new(r.gen_range(-5.0..0.0), r.gen_range(-5.0..0.0), r.gen_range(-1.0..0.5));
        let hi = lo + Vec3::new(r.gen_range(0.5..8.0), r.gen_range(0.5..8.0), r.gen_range(0.2..3.0));
        let bounds = AxisAlignedBox::new(lo, hi).unwrap();
        let centers: Vec<Vec3> = (0..r.gen_range(1..=10))
            .map(|_| Vec3::new(r.gen_range(lo.x..hi.x), r.gen_range(lo.y..hi.y), r.gen_range(lo.z..hi.z)))
            .collect();
        let az = if case % 2 == 0 {
            default_azimuths()
        } else {
            (0..r.gen_range(1..8)).map(|_| r.gen_range(-10.0..10.0)).collect()
        };
        let spec = OrbitCameraSpec::for_bounds(&bounds, r.gen_range(0.1..3.0), az).map_err(|e| e.to_string())?;
        ensure!(spec.r >= spec.r_min && spec.h >= spec.h_min, "case {case}: {spec:?}");
        let mean = centers.iter().fold(Vec3::zeros(), |a, c| a + c) / centers.len() as f64;
        for p in orbit_poses(&centers, &spec).map_err(|e| e.to_string())? {
            let c = p.center();
            let horiz = (c.x - mean.x).hypot(c.y - mean.y);
            ensure!((horiz - spec.r).abs() <= 1e-9, "case {case}: horizontal {horiz} vs r {}", spec.r);
            ensure!(((c.z - mean.z) - spec.h).abs() <= 1e-9, "case {case}: height {} vs h {}", c.z - mean.z, spec.h);
            poses += 1;
        }
    }
    Ok(format!("10000 candidate sets, {poses} poses exact to 1e-9"))
}

/// Monte-Carlo IoU of two yaw boxes given as (center, half, yaw), sampling
/// the smaller box.
fn mc_iou(a: (Vec3, Vec3, f64), b: (Vec3, Vec3, f64), samples: usize, r: &mut ChaCha8Rng) -> f64 {
    let vol = |h: Vec3| 8.0 * h.x * h.y * h.z;
    let (va, vb) = (vol(a.1), vol(b.1));
    let (src, dst) = if va <= vb { (a, b) } else { (b, a) };
    let (ss, sc) = src.2.sin_cos();
    let (ds, dc) = dst.2.sin_cos();
    let mut hit = 0usize;
    for _ in 0..samples {
        let l = Vec3::new(
            r.gen_range(-src.1.x..src.1.x),
            r.gen_range(-src.1.y..src.1.y),
            r.gen_range(-src.1.z..src.1.z),
        );
        let p = src.0 + Vec3::new(sc * l.x - ss * l.y, ss * l.x + sc * l.y, l.z);
        let d = p - dst.0;
        let (x, y) = (dc * d.x + ds * d.y, -ds * d.x + dc * d.y);
        if x.abs() <= dst.1.x && y.abs() <= dst.1.y && d.z.abs() <= dst.1.z {
            hit += 1;
        }
    }
    let inter = va.min(vb) * hit as f64 / samples as f64;
    inter / (va + vb - inter)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for oriented in [false, true] {
        for case in 0..1000 {
            let make = |r: &mut ChaCha8Rng| {
                let c = Vec3::new(r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5));
                let h = Vec3::new(r.gen_range(0.1..0.8), r.gen_range(0.1..0.8), r.gen_range(0.1..0.8));
                let yaw = if oriented { r.gen_range(-3.2..3.2) } else { 0.0 };
                (c, h, yaw)
            };
            let (a, b) = (make(&mut r), make(&mut r));
            let boxed = |t: (Vec3, Vec3, f64)| {
                if oriented {
                    EvalBox::Oriented(OrientedBox::new(t.0, t.1, t.2).unwrap())
                } else {
                    EvalBox::Axis(AxisAlignedBox::new(t.0 - t.1, t.0 + t.1).unwrap())
                }
            };
            let got = iou_3d(&boxed(a), &boxed(b));
            let want = mc_iou(a, b, 200_000, &mut r);
            let err = (got - want).abs();
            worst = worst.max(err);
            ensure!(err <= 0.01, "{} pair {case}: {got} vs Monte-Carlo {want}", if oriented { "OBB" } else { "AABB" });
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("2000 pairs, worst deviation {worst:.4} ({secs:.1}s)"))
}

fn spread(ids: &[usize], pos: &[Vec3]) -> f64 {
    let mut s = 0.0;
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            s += (pos[ids[i]] - pos[ids[j]]).norm();
        }
    }
    s
}

fn criterion_5() -> Outcome {
    let (w, h) = (64u32, 48u32);
    let mut nonempty = 0;
    for case in 0..500u64 {
        let mut r = rng(500 + case);
        let l = r.gen_range(1..=4usize);
        let n_frames = r.gen_range(1..=2 * l + 2);
        // A box of points as the candidate; nothing else in the scene.
        let s = Vec3::new(r.gen_range(0.1..0.5), r.gen_range(0.1..0.5), r.gen_range(0.1..0.5));
        let pts: Vec<Vec3> = (0..300)
            .map(|_| Vec3::new(r.gen_range(-s.x..s.x), r.gen_range(-s.y..s.y), r.gen_range(0.0..2.0 * s.z)))
            .collect();
        let cloud = PointCloud::new(pts.clone(), vec![[200, 0, 0]; pts.len()]).unwrap();
        let frames: Vec<Frame> = (0..n_frames as u32)
            .map(|f| {
                let az = r.gen_range(0.0..std::f64::consts::TAU);
                let d = r.gen_range(1.5..5.0);
                let eye = Vec3::new(d * az.cos(), d * az.sin(), r.gen_range(0.5..2.5));
                // Some cameras look away from the candidate.
                let target = if r.gen_bool(0.15) { eye * 2.0 } else { Vec3::new(0.0, 0.0, s.z) };
                look_at_frame(10 + f, eye, target, w, h, 50.0)
            })
            .collect();
        let scene = Scene { scene_id: format!("views_{case}"), cloud, frames };
        let params = ViewParams { l, ..ViewParams::default() };
        let zbs: Vec<_> = scene.frames.iter().map(|f| build_frame_zbuffer(&scene.cloud, f, 1)).collect();
        let idx: Vec<usize> = (0..pts.len()).collect();
        let instance = Instance {
            instance_id: 1,
            member_superpoints: vec![0],
            point_indices: idx,
            aabb: fit_aabb(&pts).unwrap(),
            obb: fit_oriented_box(&pts).unwrap(),
        };
        let cand = Candidate {
            candidate_id: 1,
            instance,
            embedding: SemanticEmbedding { vector: vec![1.0], view_count: 1 },
            score: 1.0,
        };
        let got = select_candidate_views(&cand, &scene, &zbs, &params).map_err(|e| e.to_string())?;

        // Oracle: proportions from per-pixel projection, top 2l, then every
        // l-subset of that pool.
        let pos: Vec<Vec3> = scene.frames.iter().map(|f| f.pose.center()).collect();
        let mut stats: Vec<(usize, f64)> = scene
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let view = oracle_zbuffer(&pts, f, 1);
                let (_, vis) = oracle_pixels(&pts, f, &view, params.occlusion_tol);
                (i, vis.iter().filter(|&&b| b).count() as f64 / (w * h) as f64)
            })
            .filter(|s| s.1 > 0.0)
            .collect();
        stats.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        stats.truncate(2 * l);
        stats.sort_by_key(|s| s.0);
        let k = l.min(stats.len());
        let mut subsets: Vec<(f64, f64, Vec<u32>)> = Vec::new();
        for mask in 0u32..(1 << stats.len()) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let pick: Vec<usize> = (0..stats.len()).filter(|b| mask >> b & 1 == 1).collect();
            let ids: Vec<usize> = pick.iter().map(|&b| stats[b].0).collect();
            let cover: f64 = pick.iter().map(|&b| stats[b].1).sum();
            let fids = ids.iter().map(|&i| scene.frames[i].frame_id).collect();
            subsets.push((spread(&ids, &pos), cover, fids));
        }
        subsets.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
        let want: Vec<u32> = subsets.first().map(|s| s.2.clone()).unwrap_or_default();
        let mut chosen: Vec<u32> = got.views.iter().filter_map(|v| v.frame_id).collect();
        chosen.sort_unstable();
        ensure!(chosen == want, "case {case} (l={l}, {n_frames} frames): chose {chosen:?}, oracle {want:?}");
        if !want.is_empty() {
            nonempty += 1;
        }
    }
    Ok(format!("500 cases agree ({nonempty} with visible frames)"))
}

fn fuzz_candidate(id: u32, r: &mut ChaCha8Rng) -> Candidate {
    let c = Vec3::new(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), 0.2);
    let aabb = AxisAlignedBox::new(c - Vec3::repeat(0.1), c + Vec3::repeat(0.1)).unwrap();
    Candidate {
        candidate_id: id,
        instance: Instance {
            instance_id: 100 + id,
            member_superpoints: vec![id],
            point_indices: vec![id as usize],
            aabb,
            obb: aabb.to_oriented(),
        },
        embedding: SemanticEmbedding { vector: vec![1.0], view_count: 1 },
        score: r.gen(),
    }
}

fn criterion_6() -> Outcome {
    let words = ["red cube", "the blue ball left of the green can", "chair", "", "  ", "ÿ§‽", "{\"selected_id\": 3}"];
    let embedder = VocabEmbeddingProvider::default();
    let mut rounds = 0u64;
    for q in 0..10_000u64 {
        let mut r = rng(600 + q);
        let k = r.gen_range(1..=8u32);
        let cands: Vec<Candidate> = (1..=k).map(|i| fuzz_candidate(i, &mut r)).collect();
        let toggles = loop {
            let t = PromptToggles { spatial: r.gen(), semantic: r.gen(), visual_cot: r.gen() };
            if t.spatial || t.semantic || t.visual_cot {
                break t;
            }
        };
        let params = ReasonerParams { max_retries: r.gen_range(0..=3), toggles, ..ReasonerParams::default() };
        let query = format!("{} {q}", words.choose(&mut r).unwrap());
        let vlm = Metered::new(std::sync::Arc::new(FuzzVlm { seed: q }));
        let res = catch_unwind(AssertUnwindSafe(|| ground(&query, &cands, &[], &[], &vlm, &embedder, &params)));
        let g = match res {
            Ok(Ok(g)) => g,
            Ok(Err(e)) => return Err(format!("query {q}: error {e}")),
            Err(_) => return Err(format!("query {q}: panic")),
        };
        ensure!((1..=k).contains(&g.trace.selected), "query {q}: selected {} of {k}", g.trace.selected);
        let c = &cands[g.trace.selected as usize - 1];
        ensure!(g.instance_id == c.instance.instance_id, "query {q}: box from a different candidate");
        ensure!(g.trace.correction_rounds <= params.max_retries, "query {q}: {} rounds", g.trace.correction_rounds);
        rounds += g.trace.correction_rounds as u64;
    }
    Ok(format!("10000 fuzzed queries, all ids valid ({rounds} correction rounds)"))
}

// ---------------------------------------------------------------------------
// End-to-end runs.

fn synth_100(root: &Path) -> Dataset {
    synth_dataset(root, 1, 100, 5..=10, BoxType::Aabb).expect("synthesize")
}

fn check_partitions(scene: &Scene, s1: &Stage1) -> std::result::Result<(), String> {
    let n = scene.cloud.point_count();
    let mut owner = vec![u32::MAX; n];
    for sp in &s1.superpoints {
        for &i in &sp.point_indices {
            ensure!(i < n, "{}: point index {i} out of range", scene.scene_id);
            ensure!(owner[i] == u32::MAX, "{}: point {i} in superpoints {} and {}", scene.scene_id, owner[i], sp.sp_id);
            owner[i] = sp.sp_id;
        }
    }
    let covered = owner.iter().filter(|&&o| o != u32::MAX).count();
    ensure!(covered == n, "{}: superpoints cover {covered} of {n} points", scene.scene_id);
    let ids: BTreeSet<u32> = s1.superpoints.iter().map(|s| s.sp_id).collect();
    let mut seen = BTreeSet::new();
    for inst in &s1.merge.instances {
        for &m in &inst.member_superpoints {
            ensure!(ids.contains(&m), "{}: instance {} has unknown superpoint {m}", scene.scene_id, inst.instance_id);
            ensure!(seen.insert(m), "{}: superpoint {m} in two instances", scene.scene_id);
        }
    }
    ensure!(seen == ids, "{}: instances cover {} of {} superpoints", scene.scene_id, seen.len(), ids.len());
    Ok(())
}

struct E2E {
    report: EvalReport,
    secs: f64,
    scenes: usize,
    partition_errors: Vec<String>,
}

fn run_e2e(root: &Path) -> std::result::Result<E2E, String> {
    let start = Instant::now();
    let dataset = synth_100(root);
    let cfg = Config::tabletop();
    let variant = Variant { name: "oracle".into(), config: cfg.clone() };
    let mut partition_errors = Vec::new();
    let mut scenes = 0;
    let mut reports = evaluate_variants_with(&dataset, &cfg, &[variant], &EvalOptions::default(), |scene, s1| {
        scenes += 1;
        if let Err(e) = check_partitions(scene, s1) {
            partition_errors.push(e);
        }
    })
    .map_err(|e| e.to_string())?;
    Ok(E2E { report: reports.remove(0), secs: start.elapsed().as_secs_f64(), scenes, partition_errors })
}

fn criterion_7(run: &E2E) -> Outcome {
    let r = &run.report;
    let summary = format!(
        "Acc@0.25 {:.3}, Acc@0.5 {:.3} over {} queries in {} scenes, {} failures, {:.0}s",
        r.acc_025, r.acc_05, r.total, run.scenes, r.failures, run.secs
    );
    ensure!(run.scenes == 100, "{summary}");
    ensure!(r.acc_05 >= 0.95 && r.acc_025 >= 0.98, "{summary}");
    ensure!(run.secs < 900.0, "{summary}");
    Ok(summary)
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dataset = synth_dataset(dir.path(), 1000, 20, 5..=10, BoxType::Aabb).map_err(|e| e.to_string())?;
    let mut cfg = Config::tabletop();
    cfg.providers.embed_noise = 2.0;
    let opts = EvalOptions::default();
    let rows = ablate_candidates(&dataset, &cfg, &[1, 2, 3, 5, 10], &opts).map_err(|e| e.to_string())?;
    let acc: Vec<f64> = rows.iter().map(|r| r.acc_05).collect();
    let curve = rows.iter().map(|r| format!("N={}:{:.3}", r.n, r.acc_05)).collect::<Vec<_>>().join(" ");
    ensure!(acc.windows(2).all(|w| w[1] >= w[0]), "not monotone: {curve}");
    ensure!(acc[4] - acc[3] < acc[3] - acc[0], "no saturation: {curve}");

    let prompts = ablate_prompts(&dataset, &cfg, &PROMPT_ROWS, &opts).map_err(|e| e.to_string())?;
    let find = |s: bool, se: bool, v: bool| {
        prompts
            .iter()
            .find(|(p, _)| (p.spatial, p.semantic, p.visual_cot) == (s, se, v))
            .map(|(p, _)| p.acc_05)
            .unwrap()
    };
    let (all, no_sp, no_se, no_cot) = (find(true, true, true), find(false, true, true), find(true, false, true), find(true, true, false));
    let table = format!("all {all:.3}, -spatial {no_sp:.3}, -semantic {no_se:.3}, -cot {no_cot:.3}");
    ensure!(all >= no_sp && no_sp >= no_se, "ordering broken: {table}");
    Ok(format!("{curve}; {table}"))
}

fn criterion_9(first: &E2E, second: &E2E) -> Outcome {
    let a = first.report.to_json().map_err(|e| e.to_string())?;
    let b = second.report.to_json().map_err(|e| e.to_string())?;
    ensure!(a == b, "reports differ ({} vs {} bytes)", a.len(), b.len());
    Ok(format!("{} bytes identical", a.len()))
}

fn criterion_10(runs: &[&E2E]) -> Outcome {
    let errors: Vec<&String> = runs.iter().flat_map(|r| &r.partition_errors).collect();
    ensure!(errors.is_empty(), "{} violations, first: {}", errors.len(), errors[0]);
    let scenes: usize = runs.iter().map(|r| r.scenes).sum();
    Ok(format!("{scenes} scene builds checked"))
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &res {
        Ok(m) => println!("PASS criterion {n:>2} {name}: {m} [{secs:.1}s]"),
        Err(m) => println!("FAIL criterion {n:>2} {name}: {m} [{secs:.1}s]"),
    }
    res.is_ok()
}

fn main() {
    // `cargo test` passes harness flags; honour a name filter loosely.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if filter.as_deref().is_some_and(|f| !"acceptance".contains(f)) {
        return;
    }
    let mut ok = true;
    ok &= report(1, "affinity fidelity", criterion_1);
    ok &= report(2, "schedule exactness", criterion_2);
    ok &= report(3, "orbit constraints", criterion_3);
    ok &= report(4, "IoU oracle", criterion_4);
    ok &= report(5, "view-selection optimality", criterion_5);
    ok &= report(6, "reasoner safety", criterion_6);

    let dirs = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = catch_unwind(AssertUnwindSafe(|| run_e2e(dirs.0.path()))).unwrap_or_else(|_| Err("panicked".into()));
    let first = match first {
        Ok(r) => Some(r),
        Err(e) => {
            println!("FAIL criterion  7 end-to-end oracle run: {e}");
            ok = false;
            None
        }
    };
    if let Some(f) = &first {
        ok &= report(7, "end-to-end oracle run", || criterion_7(f));
    }
    ok &= report(8, "ablation shape", criterion_8);
    let second = catch_unwind(AssertUnwindSafe(|| run_e2e(dirs.1.path()))).ok().and_then(|r| r.ok());
    match (&first, &second) {
        (Some(a), Some(b)) => {
            ok &= report(9, "determinism", || criterion_9(a, b));
            ok &= report(10, "partition invariants", || criterion_10(&[a, b]));
        }
        _ => {
            println!("FAIL criterion  9 determinism: an end-to-end run did not complete");
            println!("FAIL criterion 10 partition invariants: an end-to-end run did not complete");
            ok = false;
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
