//! Provider contracts for the external models (2D masks, joint image/text
//! embeddings, vision-language completion), an HTTP JSON transport, and
//! deterministic offline implementations.

mod http;
pub mod mock;
pub mod wire;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpEmbeddingProvider, HttpGateway, HttpMaskProvider, HttpVlmProvider, ProviderConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider returned HTTP status {0}")]
    BadStatus(u16),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("request payload of {size} bytes exceeds the {limit} byte limit")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub type ProviderResult<T> = std::result::Result<T, ProviderError>;

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width * height) as usize],
        }
    }

    pub fn from_cells(width: u32, height: u32, cells: impl IntoIterator<Item = u32>) -> Self {
        let mut m = Self::new(width, height);
        for c in cells {
            m.bits[c as usize] = true;
        }
        m
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y * self.width + x) as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Inclusive `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let mut b: Option<(u32, u32, u32, u32)> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &v)| v) {
            let (x, y) = (i as u32 % self.width, i as u32 / self.width);
            b = Some(match b {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub u: u32,
    pub v: u32,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMask {
    pub mask: BinaryMask,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct VlmRequest {
    pub images: Vec<RgbImage>,
    pub prompt: String,
    pub schema: String,
}

pub trait MaskProvider: Send + Sync {
    /// Masks sorted by confidence, highest first.
    fn segment(&self, image: &RgbImage, prompts: &[PointPrompt]) -> ProviderResult<Vec<ScoredMask>>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed_image(&self, image: &RgbImage) -> ProviderResult<Vec<f64>>;
    fn embed_text(&self, text: &str) -> ProviderResult<Vec<f64>>;
}

pub trait VlmProvider: Send + Sync {
    fn complete(&self, request: &VlmRequest) -> ProviderResult<String>;

    fn max_images(&self) -> usize {
        32
    }
}

/// Bounds the number of concurrent calls through one gateway.
#[derive(Debug)]
pub struct InFlightLimit {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a>(&'a InFlightLimit);

impl InFlightLimit {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.cap {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        InFlightPermit(self)
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Default)]
pub struct Meter {
    calls: AtomicU64,
    images: AtomicU64,
    tokens: AtomicU64,
    failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub calls: u64,
    pub images: u64,
    /// Rough text-token estimate: characters / 4, prompt plus response.
    pub tokens: u64,
    pub failures: u64,
}

impl std::ops::Sub for UsageSnapshot {
    type Output = UsageSnapshot;
    fn sub(self, o: Self) -> Self {
        UsageSnapshot {
            calls: self.calls - o.calls,
            images: self.images - o.images,
            tokens: self.tokens - o.tokens,
            failures: self.failures - o.failures,
        }
    }
}

impl std::ops::Add for UsageSnapshot {
    type Output = UsageSnapshot;
    fn add(self, o: Self) -> Self {
        UsageSnapshot {
            calls: self.calls + o.calls,
            images: self.images + o.images,
            tokens: self.tokens + o.tokens,
            failures: self.failures + o.failures,
        }
    }
}

impl Meter {
    fn record<T>(&self, images: usize, chars: usize, out: &ProviderResult<T>, out_chars: impl Fn(&T) -> usize) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.images.fetch_add(images as u64, Ordering::Relaxed);
        let extra = out.as_ref().map(&out_chars).unwrap_or(0);
        self.tokens.fetch_add(((chars + extra) / 4) as u64, Ordering::Relaxed);
        if out.is_err() {
            self.failures.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        UsageSnapshot {
            calls: self.calls.load(Ordering::Relaxed),
            images: self.images.load(Ordering::Relaxed),
            tokens: self.tokens.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
        }
    }
}

/// Wraps a provider and counts calls, images and approximate tokens.
pub struct Metered<P: ?Sized> {
    pub meter: Meter,
    inner: Arc<P>,
}

impl<P: ?Sized> Metered<P> {
    pub fn new(inner: Arc<P>) -> Self {
        Self {
            meter: Meter::default(),
            inner,
        }
    }
}

impl<P: MaskProvider + ?Sized> MaskProvider for Metered<P> {
    fn segment(&self, image: &RgbImage, prompts: &[PointPrompt]) -> ProviderResult<Vec<ScoredMask>> {
        let out = self.inner.segment(image, prompts);
        self.meter.record(1, 0, &out, |_| 0);
        out
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Metered<P> {
    fn embed_image(&self, image: &RgbImage) -> ProviderResult<Vec<f64>> {
        let out = self.inner.embed_image(image);
        self.meter.record(1, 0, &out, |_| 0);
        out
    }

    fn embed_text(&self, text: &str) -> ProviderResult<Vec<f64>> {
        let out = self.inner.embed_text(text);
        self.meter.record(0, text.chars().count(), &out, |_| 0);
        out
    }
}

impl<P: VlmProvider + ?Sized> VlmProvider for Metered<P> {
    fn complete(&self, request: &VlmRequest) -> ProviderResult<String> {
        let out = self.inner.complete(request);
        self.meter
            .record(request.images.len(), request.prompt.chars().count(), &out, |s| s.chars().count());
        out
    }

    fn max_images(&self) -> usize {
        self.inner.max_images()
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mask_bbox_and_count() {
        let m = BinaryMask::from_cells(10, 10, [12, 13, 45]);
        assert_eq!(m.count(), 3);
        assert_eq!(m.bbox(), Some((2, 1, 5, 4)));
        assert_eq!(BinaryMask::new(3, 3).bbox(), None);
    }

    #[test]
    fn in_flight_cap_is_respected() {
        let limit = InFlightLimit::new(2);
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..6 {
                s.spawn(|| {
                    let _p = limit.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(20));
                    live.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    struct Echo;
    impl VlmProvider for Echo {
        fn complete(&self, r: &VlmRequest) -> ProviderResult<String> {
            Ok(r.prompt.clone())
        }
    }

    #[test]
    fn meter_counts_calls_images_and_tokens() {
        let m = Metered::new(Arc::new(Echo));
        let req = VlmRequest {
            images: vec![RgbImage::new(2, 2); 3],
            prompt: "x".repeat(40),
            schema: "s".into(),
        };
        m.complete(&req).unwrap();
        let s = m.meter.snapshot();
        assert_eq!((s.calls, s.images, s.tokens), (1, 3, 20));
    }
}
