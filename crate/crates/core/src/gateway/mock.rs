//! Deterministic offline providers.
//!
//! The mask and embedding mocks key on the flat colours of the synthetic
//! vocabulary; the VLM mocks either replay a script, emit seeded garbage,
//! or answer from a scene's ground truth.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use super::{
    BinaryMask, EmbeddingProvider, MaskProvider, PointPrompt, ProviderError, ProviderResult, ScoredMask, VlmProvider,
    VlmRequest,
};
use crate::harness::iou::iou_aabb;
use crate::harness::GroundTruth;
use crate::reasoner::prompt::{parse_candidate_lines, parse_query_line, SCHEMA_NAMING};
use crate::scene::{AxisAlignedBox, Vec3};
use crate::vocab::{self, Label, Mention, BACKGROUND_RGB, FLOOR_RGB, LABEL_COUNT};

pub const EMBED_DIM: usize = 64;
const FLOOR_BIN: usize = LABEL_COUNT;
const OTHER_BIN: usize = LABEL_COUNT + 1;
const MOMENT_BIN: usize = LABEL_COUNT + 2;
const HASH_BIN: usize = 32;

fn stable_hash(parts: &[&[u8]], seed: u64) -> u64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    for p in parts {
        p.hash(&mut h);
    }
    h.finish()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Labels the 4-connected equal-colour region holding `start` with `id`.
/// Returns the smallest pixel index in the region.
fn flood(image: &RgbImage, start: usize, id: i32, comp: &mut [i32], stack: &mut Vec<usize>) -> usize {
    let w = image.width() as usize;
    let h = image.height() as usize;
    let px = image.as_raw();
    let rgb = |i: usize| [px[3 * i], px[3 * i + 1], px[3 * i + 2]];
    let c = rgb(start);
    let mut first = start;
    comp[start] = id;
    stack.push(start);
    while let Some(i) = stack.pop() {
        first = first.min(i);
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if comp[j] < 0 && rgb(j) == c {
                comp[j] = id;
                stack.push(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    first
}

fn is_background(image: &RgbImage, i: usize) -> bool {
    image.as_raw()[3 * i..3 * i + 3] == BACKGROUND_RGB
}

/// 4-connected components of equal colour, background excluded.
/// Returns the per-pixel component id (-1 for background) and the count.
pub fn color_components(image: &RgbImage) -> (Vec<i32>, usize) {
    let mut comp = vec![-1i32; (image.width() * image.height()) as usize];
    let mut n = 0usize;
    let mut stack = Vec::new();
    for start in 0..comp.len() {
        if comp[start] >= 0 || is_background(image, start) {
            continue;
        }
        flood(image, start, n as i32, &mut comp, &mut stack);
        n += 1;
    }
    (comp, n)
}

/// Segments synthetic renders by exact colour equality.
#[derive(Debug, Clone, Copy, Default)]
pub struct ColorMaskProvider;

impl MaskProvider for ColorMaskProvider {
    fn segment(&self, image: &RgbImage, prompts: &[PointPrompt]) -> ProviderResult<Vec<ScoredMask>> {
        let (w, h) = image.dimensions();
        let to_mask = |comp: &[i32], k: i32| ScoredMask {
            mask: BinaryMask {
                width: w,
                height: h,
                bits: comp.iter().map(|&c| c == k).collect(),
            },
            confidence: 1.0,
        };
        if prompts.is_empty() {
            let (comp, n) = color_components(image);
            let mut sizes = vec![0usize; n];
            for &c in &comp {
                if c >= 0 {
                    sizes[c as usize] += 1;
                }
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
            return Ok(order.into_iter().map(|k| to_mask(&comp, k as i32)).collect());
        }
        // Only the prompted regions are flooded. Each is keyed by its first
        // pixel in scan order, which matches the full labelling's order.
        let mut comp = vec![-1i32; (w * h) as usize];
        let mut first: Vec<usize> = Vec::new();
        let mut stack = Vec::new();
        let mut votes: HashMap<i32, usize> = HashMap::new();
        for p in prompts.iter().filter(|p| p.positive) {
            if p.u >= w || p.v >= h {
                return Err(ProviderError::InvalidRequest(format!("prompt ({}, {}) outside image", p.u, p.v)));
            }
            let i = (p.v * w + p.u) as usize;
            if is_background(image, i) {
                continue;
            }
            if comp[i] < 0 {
                first.push(flood(image, i, first.len() as i32, &mut comp, &mut stack));
            }
            *votes.entry(comp[i]).or_default() += 1;
        }
        Ok(votes
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(first[b.0 as usize].cmp(&first[a.0 as usize])))
            .map(|(k, _)| vec![to_mask(&comp, k)])
            .unwrap_or_default())
    }
}

/// Colour-histogram embedder over the synthetic vocabulary.
///
/// Dimensions `0..24` are the (colour, shape) labels, then floor, other,
/// a few low-weight shape moments, and hashed bag-of-words slots for text
/// outside the vocabulary.
#[derive(Debug, Clone)]
pub struct VocabEmbeddingProvider {
    /// Sorted by colour for binary search.
    lookup: Vec<([u8; 3], usize)>,
}

impl Default for VocabEmbeddingProvider {
    fn default() -> Self {
        let mut lookup: Vec<([u8; 3], usize)> = Label::all().map(|l| (l.rgb(), l.index())).collect();
        lookup.push((FLOOR_RGB, FLOOR_BIN));
        lookup.sort_unstable();
        Self { lookup }
    }
}

impl VocabEmbeddingProvider {
    fn mention_vector(m: &Mention) -> Vec<f64> {
        let mut v = vec![0.0; EMBED_DIM];
        let colors: Vec<usize> = m.color.map(|c| vec![c]).unwrap_or_else(|| (0..vocab::COLORS.len()).collect());
        let shapes: Vec<vocab::Shape> = m.shape.map(|s| vec![s]).unwrap_or_else(|| vocab::Shape::ALL.to_vec());
        let share = 1.0 / (colors.len() * shapes.len()) as f64;
        for &c in &colors {
            for &s in &shapes {
                v[Label::new(c, s).index()] += share;
            }
        }
        normalize(&mut v);
        v
    }
}

impl EmbeddingProvider for VocabEmbeddingProvider {
    fn embed_image(&self, image: &RgbImage) -> ProviderResult<Vec<f64>> {
        let mut v = vec![0.0; EMBED_DIM];
        let (w, _) = image.dimensions();
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut object_px = 0usize;
        // Colours come in long runs; skip the search when it repeats.
        let mut last: Option<([u8; 3], Result<usize, usize>)> = None;
        for (i, p) in image.pixels().enumerate() {
            if p.0 == BACKGROUND_RGB {
                continue;
            }
            let hit = match last {
                Some((c, r)) if c == p.0 => r,
                _ => {
                    let r = self.lookup.binary_search_by(|e| e.0.cmp(&p.0)).map(|k| self.lookup[k].1);
                    last = Some((p.0, r));
                    r
                }
            };
            match hit {
                Ok(FLOOR_BIN) => v[FLOOR_BIN] += 0.1,
                Ok(b) => {
                    v[b] += 1.0;
                    let (x, y) = (i as u32 % w, i as u32 / w);
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                    object_px += 1;
                }
                Err(_) => v[OTHER_BIN] += 0.3,
            }
        }
        let total: f64 = v.iter().sum();
        if total == 0.0 {
            v[EMBED_DIM - 1] = 1.0;
            return Ok(v);
        }
        v.iter_mut().for_each(|x| *x /= total);
        if object_px > 0 {
            let (bw, bh) = ((x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
            v[MOMENT_BIN] = 0.05 * object_px as f64 / (bw * bh);
            v[MOMENT_BIN + 1] = 0.05 * bw.min(bh) / bw.max(bh);
        }
        normalize(&mut v);
        Ok(v)
    }

    /// First mention weighs 1, later mentions 0.5. Text without any
    /// vocabulary term falls back to hashed words.
    fn embed_text(&self, text: &str) -> ProviderResult<Vec<f64>> {
        let mut v = vec![0.0; EMBED_DIM];
        let ms = vocab::mentions(text);
        for (k, m) in ms.iter().enumerate() {
            let w = if k == 0 { 1.0 } else { 0.5 };
            for (a, b) in v.iter_mut().zip(Self::mention_vector(m)) {
                *a += w * b;
            }
        }
        let words = vocab::tokens(text);
        if ms.is_empty() {
            if words.iter().any(|t| vocab::is_floor_word(t)) {
                v[FLOOR_BIN] = 1.0;
            } else {
                for t in &words {
                    let slot = HASH_BIN + (stable_hash(&[t.as_bytes()], 0) % (EMBED_DIM - HASH_BIN) as u64) as usize;
                    v[slot] += 1.0;
                }
            }
        }
        if v.iter().all(|&x| x == 0.0) {
            v[EMBED_DIM - 1] = 1.0;
        }
        normalize(&mut v);
        Ok(v)
    }
}

/// Adds seeded Gaussian noise to image embeddings of an inner provider.
/// The perturbation is a pure function of the image bytes and the seed.
pub struct NoisyEmbeddingProvider<P> {
    pub inner: P,
    pub sigma: f64,
    pub seed: u64,
}

impl<P: EmbeddingProvider> EmbeddingProvider for NoisyEmbeddingProvider<P> {
    fn embed_image(&self, image: &RgbImage) -> ProviderResult<Vec<f64>> {
        let mut v = self.inner.embed_image(image)?;
        let dims = [image.width() as u8, image.height() as u8];
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[image.as_raw(), &dims], self.seed));
        for x in v.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x += self.sigma * z;
        }
        normalize(&mut v);
        Ok(v)
    }

    fn embed_text(&self, text: &str) -> ProviderResult<Vec<f64>> {
        self.inner.embed_text(text)
    }
}

/// Replays a fixed list of replies in call order.
#[derive(Debug, Default)]
pub struct ScriptedVlm {
    responses: Vec<String>,
    cursor: AtomicUsize,
}

impl ScriptedVlm {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
            cursor: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

impl VlmProvider for ScriptedVlm {
    fn complete(&self, _request: &VlmRequest) -> ProviderResult<String> {
        let k = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.responses
            .get(k)
            .cloned()
            .ok_or_else(|| ProviderError::Transport(format!("script exhausted after {} replies", self.responses.len())))
    }
}

/// Adversarial replies: arbitrary text, ids in and out of range, broken
/// JSON and the occasional outage. Pure in (prompt, schema, seed).
#[derive(Debug, Clone, Copy)]
pub struct FuzzVlm {
    pub seed: u64,
}

impl VlmProvider for FuzzVlm {
    fn complete(&self, request: &VlmRequest) -> ProviderResult<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(
            &[request.prompt.as_bytes(), request.schema.as_bytes()],
            self.seed,
        ));
        let id: i64 = match rng.gen_range(0..4) {
            0 => rng.gen_range(-3..15),
            1 => rng.gen_range(1..6),
            2 => rng.gen(),
            _ => rng.gen_range(i64::MIN..0),
        };
        let junk: String = (0..rng.gen_range(0..40))
            .map(|_| char::from_u32(rng.gen_range(0x20..0x2FF)).unwrap_or('?'))
            .collect();
        Ok(match rng.gen_range(0..12) {
            0 => junk,
            1 => String::new(),
            2 => format!("{{\"selected_id\": {id}, \"relations\": [], \"explanation\": \"{}\"}}", junk.escape_default()),
            3 => format!("```json\n{{\"selected_id\": {id}, \"relations\": [\"near\"], \"explanation\": \"x\"}}\n```"),
            4 => format!("{{\"selected_id\": \"{id}\"}}"),
            5 => format!("{{\"selected_id\": {id}.5, \"relations\": {{}}, \"explanation\": 3}}"),
            6 => format!("I pick {id}. ```json\n{{\"selected_id\": {id}"),
            7 => format!("{{\"name\": \"{}\"}}", junk.escape_default()),
            8 => "```\nnot json\n```{\"selected_id\": 1}".into(),
            9 => format!("{{\"selected_id\": {}, \"relations\": [], \"explanation\": \"\"}}", u64::MAX),
            10 => return Err(ProviderError::Timeout),
            _ => format!("[{id}, {id}]"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// Answers every turn correctly from the ground truth.
    Exact,
    /// Needs the global renders to resolve relations and the candidate
    /// names to know what to look for.
    Degraded,
}

/// Answers from a synthetic scene's ground truth, matching candidates to
/// annotated objects by the boxes listed in the prompt.
#[derive(Debug, Clone)]
pub struct OracleVlm {
    pub truth: GroundTruth,
    pub mode: OracleMode,
}

impl OracleVlm {
    pub fn new(truth: GroundTruth, mode: OracleMode) -> Self {
        Self { truth, mode }
    }

    fn best_object(&self, b: &AxisAlignedBox) -> Option<(usize, f64)> {
        self.truth
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| (i, iou_aabb(b, &o.obb.to_aabb())))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
    }

    fn answer(&self, id: u32, why: &str) -> String {
        let body = json!({
            "selected_id": id,
            "relations": [{"subject": id, "relation": "matches", "object": why}],
            "explanation": format!("Object {id} {why}."),
        });
        format!("```json\n{body}\n```")
    }
}

fn cand_box(center: Vec3, size: Vec3) -> AxisAlignedBox {
    AxisAlignedBox {
        min: center - size / 2.0,
        max: center + size / 2.0,
    }
}

impl VlmProvider for OracleVlm {
    fn complete(&self, request: &VlmRequest) -> ProviderResult<String> {
        let cands = parse_candidate_lines(&request.prompt);
        if request.schema == SCHEMA_NAMING {
            let c = cands
                .first()
                .ok_or_else(|| ProviderError::InvalidRequest("naming prompt without a candidate".into()))?;
            let name = match self.best_object(&cand_box(c.center, c.size)) {
                Some((i, iou)) if iou >= 0.1 => self.truth.objects[i].name.clone(),
                _ => "background".to_string(),
            };
            return Ok(json!({ "name": name }).to_string());
        }
        if cands.is_empty() {
            return Err(ProviderError::InvalidRequest("no candidates in prompt".into()));
        }
        let query = parse_query_line(&request.prompt).unwrap_or_default();
        let target = self.truth.queries.iter().find(|q| q.text == query).and_then(|q| {
            self.truth.objects.iter().find(|o| o.object_id == q.target_id)
        });
        let Some(target) = target else {
            return Ok(self.answer(cands[0].id, "is the best guess"));
        };
        let has_names = cands.iter().any(|c| c.name.is_some()) || request.schema.starts_with("combined");
        let has_renders = request.prompt.contains("global render");
        if self.mode == OracleMode::Degraded && !(has_names && has_renders) {
            if !has_names {
                return Ok(self.answer(cands[0].id, "is listed first"));
            }
            let pick = cands
                .iter()
                .find(|c| c.name.as_deref() == Some(target.name.as_str()))
                .unwrap_or(&cands[0]);
            return Ok(self.answer(pick.id, "has the requested name"));
        }
        let tb = target.obb.to_aabb();
        let best = cands
            .iter()
            .map(|c| (c.id, iou_aabb(&cand_box(c.center, c.size), &tb)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(id, _)| id)
            .unwrap_or(cands[0].id);
        Ok(self.answer(best, &format!("is the {}", target.name)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::cosine;
    use crate::vocab::Shape;
    use image::Rgb;

    fn fill(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, c: [u8; 3]) {
        for y in y0..y1 {
            for x in x0..x1 {
                img.put_pixel(x, y, Rgb(c));
            }
        }
    }

    #[test]
    fn two_colours_give_two_masks() {
        let mut img = RgbImage::from_pixel(20, 10, Rgb([10, 10, 200]));
        fill(&mut img, 0, 0, 8, 10, [200, 10, 10]);
        let masks = ColorMaskProvider.segment(&img, &[]).unwrap();
        assert_eq!(masks.len(), 2);
        assert_eq!(masks[0].mask.count(), 120);
        assert_eq!(masks[1].mask.count(), 80);
    }

    #[test]
    fn prompts_select_the_majority_component() {
        let mut img = RgbImage::from_pixel(20, 10, Rgb(BACKGROUND_RGB));
        fill(&mut img, 0, 0, 8, 10, [200, 10, 10]);
        fill(&mut img, 12, 0, 20, 10, [10, 200, 10]);
        let p = |u, v| PointPrompt { u, v, positive: true };
        let masks = ColorMaskProvider.segment(&img, &[p(1, 1), p(2, 2), p(15, 5)]).unwrap();
        assert_eq!(masks.len(), 1);
        assert!(masks[0].mask.get(0, 0));
        assert!(!masks[0].mask.get(15, 5));
        assert_eq!(masks[0].confidence, 1.0);
        assert!(ColorMaskProvider.segment(&img, &[p(10, 5)]).unwrap().is_empty());
    }

    #[test]
    fn components_partition_foreground() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let palette = [[1, 2, 3], [200, 0, 0], BACKGROUND_RGB, [0, 0, 200]];
        let mut img = RgbImage::new(40, 30);
        for p in img.pixels_mut() {
            *p = Rgb(palette[rng.gen_range(0..4)]);
        }
        let masks = ColorMaskProvider.segment(&img, &[]).unwrap();
        for (i, p) in img.pixels().enumerate() {
            let owners = masks.iter().filter(|m| m.mask.bits[i]).count();
            assert_eq!(owners, usize::from(p.0 != BACKGROUND_RGB));
        }
    }

    #[test]
    fn text_and_crop_cosines() {
        let e = VocabEmbeddingProvider::default();
        let red_cube = Label::new(0, Shape::Cube);
        let blue_sphere = Label::new(2, Shape::Sphere);
        let mut crop = RgbImage::from_pixel(40, 40, Rgb(FLOOR_RGB));
        fill(&mut crop, 5, 5, 35, 35, red_cube.rgb());
        let mut other = RgbImage::from_pixel(40, 40, Rgb(FLOOR_RGB));
        fill(&mut other, 8, 8, 30, 30, blue_sphere.rgb());
        let t = e.embed_text("red cube").unwrap();
        assert!(cosine(&t, &e.embed_image(&crop).unwrap()) >= 0.9);
        assert!(cosine(&t, &e.embed_image(&other).unwrap()) <= 0.3);
        assert_eq!(e.embed_image(&crop).unwrap(), e.embed_image(&crop).unwrap());
        assert!(cosine(&t, &e.embed_text("the red box").unwrap()) > 0.999);
        assert!((crate::gateway::cosine(&e.embed_text("floor").unwrap(), &e.embed_text("background").unwrap()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn every_label_pair_is_separated() {
        let e = VocabEmbeddingProvider::default();
        for a in Label::all() {
            let mut img = RgbImage::from_pixel(30, 30, Rgb(FLOOR_RGB));
            fill(&mut img, 3, 3, 27, 27, a.rgb());
            let iv = e.embed_image(&img).unwrap();
            for b in Label::all() {
                let c = cosine(&e.embed_text(&b.name()).unwrap(), &iv);
                if a == b {
                    assert!(c >= 0.9, "{} {c}", a.name());
                } else {
                    assert!(c <= 0.3, "{} vs {} {c}", a.name(), b.name());
                }
            }
        }
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let n = |seed| NoisyEmbeddingProvider {
            inner: VocabEmbeddingProvider::default(),
            sigma: 0.1,
            seed,
        };
        let img = RgbImage::from_pixel(8, 8, Rgb(Label::new(1, Shape::Cube).rgb()));
        assert_eq!(n(1).embed_image(&img).unwrap(), n(1).embed_image(&img).unwrap());
        assert_ne!(n(1).embed_image(&img).unwrap(), n(2).embed_image(&img).unwrap());
        let v = n(1).embed_image(&img).unwrap();
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scripted_replays_in_order() {
        let s = ScriptedVlm::new(["garbage", "{\"selected_id\": 1}"]);
        let req = VlmRequest {
            images: vec![],
            prompt: String::new(),
            schema: String::new(),
        };
        assert_eq!(s.complete(&req).unwrap(), "garbage");
        assert_eq!(s.complete(&req).unwrap(), "{\"selected_id\": 1}");
        assert!(s.complete(&req).is_err());
    }

    #[test]
    fn fuzz_is_pure() {
        let f = FuzzVlm { seed: 5 };
        let req = VlmRequest {
            images: vec![],
            prompt: "abc".into(),
            schema: "spatial_v1".into(),
        };
        assert_eq!(f.complete(&req), f.complete(&req));
    }
}
