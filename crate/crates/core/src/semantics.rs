//! Stage-1 semantics: mask repair from projected points, multi-scale crops,
//! multi-view embedding and query retrieval.

use image::{imageops, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{cosine, BinaryMask, EmbeddingProvider, MaskProvider, PointPrompt, ProviderError};
use crate::instances::Instance;
use crate::projection::{build_frame_zbuffer, view_cells, ViewCells, ZBuffer};
use crate::scene::{Frame, GroundingQuery, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticEmbedding {
    pub vector: Vec<f64>,
    pub view_count: usize,
}

impl SemanticEmbedding {
    /// L2-normalised mean of `views`.
    pub fn from_views(views: &[Vec<f64>]) -> Result<Self> {
        let first = views.first().ok_or(Error::Empty("view vectors"))?;
        let mut mean = vec![0.0; first.len()];
        for v in views {
            if v.len() != mean.len() {
                return Err(Error::InvalidArgument("embedding dimensions differ".into()));
            }
            mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument("view embeddings cancel out".into()));
        }
        mean.iter_mut().for_each(|m| *m /= norm);
        Ok(Self {
            vector: mean,
            view_count: views.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedInstance {
    pub instance: Instance,
    pub embedding: SemanticEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// 1-based display id, dense in score order.
    pub candidate_id: u32,
    pub instance: Instance,
    pub embedding: SemanticEmbedding,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticParams {
    pub max_views: usize,
    pub min_prompts: usize,
    pub max_prompts: usize,
    pub scales: Vec<f64>,
    /// Append the whole frame as the last crop.
    pub full_image: bool,
    /// Crops are resized to a square of this side before embedding.
    pub crop_resolution: Option<u32>,
    pub occlusion_tol: f64,
}

impl Default for SemanticParams {
    fn default() -> Self {
        Self {
            max_views: 10,
            min_prompts: 10,
            max_prompts: 50,
            scales: vec![1.0, 1.5, 2.25],
            full_image: true,
            crop_resolution: Some(224),
            occlusion_tol: crate::projection::DEFAULT_OCCLUSION_TOL,
        }
    }
}

impl SemanticParams {
    pub fn crop_scales(&self) -> Vec<f64> {
        let mut s = self.scales.clone();
        if self.full_image {
            s.push(f64::INFINITY);
        }
        s
    }
}

/// Top `max_views` frames by visible pixel count, ties by frame id.
/// Frames with no visible pixels are dropped.
pub fn rank_views(counts: &[(u32, usize)], max_views: usize) -> Result<Vec<u32>> {
    if max_views == 0 {
        return Err(Error::InvalidArgument("max_views must be at least 1".into()));
    }
    let mut v: Vec<_> = counts.iter().filter(|c| c.1 > 0).copied().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(v.into_iter().take(max_views).map(|c| c.0).collect())
}

/// Projected cells of `instance` in every frame.
pub fn instance_cells(instance: &Instance, scene: &Scene, zbuffers: &[ZBuffer], tol: f64) -> Vec<(u32, ViewCells)> {
    scene
        .frames
        .iter()
        .zip(zbuffers)
        .map(|(f, zb)| {
            let pts = instance.point_indices.iter().map(|&i| scene.cloud.positions()[i]);
            (f.frame_id, view_cells(pts, f, zb, tol))
        })
        .collect()
}

pub fn select_semantic_views(instance: &Instance, scene: &Scene, max_views: usize) -> Result<Vec<u32>> {
    let zbuffers: Vec<_> = scene.frames.iter().map(|f| build_frame_zbuffer(&scene.cloud, f, 1)).collect();
    let cells = instance_cells(instance, scene, &zbuffers, crate::projection::DEFAULT_OCCLUSION_TOL);
    let counts: Vec<_> = cells.iter().map(|(f, c)| (*f, c.visible.len())).collect();
    rank_views(&counts, max_views)
}

/// Stride over `n` visible pixels that yields between `min_prompts` and
/// `max_prompts` prompts where possible.
pub fn prompt_stride(n: usize, min_prompts: usize, max_prompts: usize) -> usize {
    let s = n.div_ceil(max_prompts.max(1)).max(1);
    if n.div_ceil(s) < min_prompts {
        (n / min_prompts.max(1)).max(1)
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedMask {
    pub mask: BinaryMask,
    /// False when the raw projection was kept.
    pub corrected: bool,
}

/// Re-segments an instance from every `stride`-th visible pixel used as a
/// positive point prompt. Falls back to the raw projected mask when the
/// provider fails or returns nothing usable.
pub fn defect_correct(
    visible: &ViewCells,
    frame: &Frame,
    stride: usize,
    provider: &dyn MaskProvider,
) -> Result<CorrectedMask> {
    if visible.visible.is_empty() {
        return Err(Error::InvalidArgument(format!("instance not visible in frame {}", frame.frame_id)));
    }
    let (w, h) = (frame.intrinsics.width, frame.intrinsics.height);
    let raw = BinaryMask::from_cells(w, h, visible.visible.iter().copied());
    let prompts: Vec<PointPrompt> = visible
        .visible
        .iter()
        .step_by(stride.max(1))
        .map(|&c| PointPrompt {
            u: c % w,
            v: c / w,
            positive: true,
        })
        .collect();
    let fallback = |why: String| {
        log::warn!("frame {}: keeping raw projected mask ({why})", frame.frame_id);
        Ok(CorrectedMask {
            mask: raw.clone(),
            corrected: false,
        })
    };
    let masks = match provider.segment(&frame.rgb, &prompts) {
        Ok(m) => m,
        Err(e) => return fallback(e.to_string()),
    };
    let Some(best) = masks
        .into_iter()
        .max_by(|a, b| a.confidence.total_cmp(&b.confidence))
    else {
        return fallback("no mask returned".into());
    };
    let mut mask = BinaryMask::new(w, h);
    for y in 0..h.min(best.mask.height) {
        for x in 0..w.min(best.mask.width) {
            mask.set(x, y, best.mask.get(x, y));
        }
    }
    if mask.is_empty() {
        return fallback("empty mask".into());
    }
    Ok(CorrectedMask { mask, corrected: true })
}

/// Half-open pixel rectangle `(x0, y0, x1, y1)`.
pub type Rect = (u32, u32, u32, u32);

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub scale: f64,
    pub rect: Rect,
    pub image: RgbImage,
}

/// Tight box of `bbox` (inclusive corners) grown about its centre by
/// `scale` and clamped to a `width` x `height` image.
pub fn scaled_rect(bbox: (u32, u32, u32, u32), scale: f64, width: u32, height: u32) -> Rect {
    let (x0, y0, x1, y1) = bbox;
    let axis = |lo: u32, hi: u32, limit: u32| {
        let (lo, hi) = (lo as f64, hi as f64 + 1.0);
        if !scale.is_finite() {
            return (0, limit);
        }
        let (c, half) = ((lo + hi) / 2.0, (hi - lo) * scale / 2.0);
        let a = (c - half).floor().clamp(0.0, lo) as u32;
        let b = (c + half).ceil().clamp(hi, limit as f64) as u32;
        (a, b)
    };
    let (ax, bx) = axis(x0, x1, width);
    let (ay, by) = axis(y0, y1, height);
    (ax, ay, bx, by)
}

/// Crops around `mask` at each scale. `f64::INFINITY` stands for the whole
/// image.
pub fn multiscale_crops(mask: &BinaryMask, rgb: &RgbImage, scales: &[f64]) -> Result<Vec<Crop>> {
    let bbox = mask.bbox().ok_or(Error::Empty("mask"))?;
    if scales.is_empty() || scales[0] != 1.0 || scales.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("scales must ascend from 1.0".into()));
    }
    if (mask.width, mask.height) != rgb.dimensions() {
        return Err(Error::InvalidArgument("mask and image sizes differ".into()));
    }
    Ok(scales
        .iter()
        .map(|&s| {
            let rect = scaled_rect(bbox, s, rgb.width(), rgb.height());
            let image = imageops::crop_imm(rgb, rect.0, rect.1, rect.2 - rect.0, rect.3 - rect.1).to_image();
            Crop { scale: s, rect, image }
        })
        .collect())
}

pub fn resize_for_embedding(image: &RgbImage, side: Option<u32>) -> RgbImage {
    match side {
        Some(s) if image.dimensions() != (s, s) && image.width() > 0 && image.height() > 0 => {
            // Nearest source pixel centre.
            let (w, h) = image.dimensions();
            let xs: Vec<u32> = (0..s).map(|x| ((2 * x as u64 + 1) * w as u64 / (2 * s as u64)) as u32).collect();
            let ys: Vec<u32> = (0..s).map(|y| ((2 * y as u64 + 1) * h as u64 / (2 * s as u64)) as u32).collect();
            RgbImage::from_fn(s, s, |x, y| *image.get_pixel(xs[x as usize], ys[y as usize]))
        }
        _ => image.clone(),
    }
}

/// Per view: mean of crop embeddings; then the normalised mean over views.
/// A view whose crops all fail is skipped.
pub fn embed_instance(views: &[Vec<RgbImage>], provider: &dyn EmbeddingProvider) -> Result<SemanticEmbedding> {
    if views.iter().all(|v| v.is_empty()) {
        return Err(Error::Empty("crop sequences"));
    }
    let jobs: Vec<(usize, &RgbImage)> = views
        .iter()
        .enumerate()
        .flat_map(|(i, v)| v.iter().map(move |c| (i, c)))
        .collect();
    let results: Vec<(usize, std::result::Result<Vec<f64>, ProviderError>)> =
        jobs.par_iter().map(|(i, c)| (*i, provider.embed_image(c))).collect();
    let mut per_view: Vec<(Vec<f64>, usize)> = vec![(Vec::new(), 0); views.len()];
    let mut last_err = None;
    for (i, r) in results {
        match r {
            Ok(v) => {
                let (acc, n) = &mut per_view[i];
                if acc.is_empty() {
                    *acc = vec![0.0; v.len()];
                }
                if acc.len() != v.len() {
                    return Err(Error::InvalidArgument("embedding dimensions differ".into()));
                }
                acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
                *n += 1;
            }
            Err(e) => {
                log::warn!("crop embedding failed: {e}");
                last_err = Some(e);
            }
        }
    }
    let means: Vec<Vec<f64>> = per_view
        .into_iter()
        .filter(|(_, n)| *n > 0)
        .map(|(v, n)| v.into_iter().map(|x| x / n as f64).collect())
        .collect();
    if means.is_empty() {
        return Err(last_err.map(Error::Provider).unwrap_or(Error::Empty("embeddings")));
    }
    SemanticEmbedding::from_views(&means)
}

/// Ranks instances against an already embedded query.
pub fn rank_candidates(embedded: &[EmbeddedInstance], query_vector: &[f64], u: usize) -> Result<Vec<Candidate>> {
    if u == 0 {
        return Err(Error::InvalidArgument("u must be at least 1".into()));
    }
    if embedded.is_empty() {
        return Err(Error::Empty("embedded instances"));
    }
    let mut scored: Vec<(f64, &EmbeddedInstance)> = embedded
        .iter()
        .map(|e| (cosine(&e.embedding.vector, query_vector).clamp(-1.0, 1.0), e))
        .collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.instance.instance_id.cmp(&b.1.instance.instance_id))
    });
    Ok(scored
        .into_iter()
        .take(u)
        .enumerate()
        .map(|(k, (score, e))| Candidate {
            candidate_id: k as u32 + 1,
            instance: e.instance.clone(),
            embedding: e.embedding.clone(),
            score,
        })
        .collect())
}

pub fn filter_top_u(
    embedded: &[EmbeddedInstance],
    query: &GroundingQuery,
    u: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Candidate>> {
    let q = provider.embed_text(&query.text)?;
    rank_candidates(embedded, &q, u)
}
