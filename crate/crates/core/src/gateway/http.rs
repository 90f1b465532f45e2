use std::io::{ErrorKind, Read};
use std::time::Duration;

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{self, EmbedWireRequest, EmbedWireResponse, MaskWireResponse, VlmWireResponse};
use super::{
    EmbeddingProvider, InFlightLimit, MaskProvider, PointPrompt, ProviderError, ProviderResult, ScoredMask,
    VlmProvider, VlmRequest,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Name of the environment variable holding a bearer token.
    pub token_env: Option<String>,
    pub max_payload: usize,
    /// First backoff delay; doubles on each retry.
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    pub max_images: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            timeout_secs: 60.0,
            max_retries: 3,
            token_env: Some("UG_API_TOKEN".into()),
            max_payload: 32 << 20,
            backoff_base_ms: 1000,
            max_in_flight: 8,
            max_images: 16,
        }
    }
}

impl ProviderConfig {
    pub fn with_endpoint(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            ..Self::default()
        }
    }

    /// Reads the endpoint from `var`, keeping every other default.
    pub fn from_env(var: &str) -> Option<Self> {
        std::env::var(var).ok().filter(|s| !s.is_empty()).map(Self::with_endpoint)
    }

    pub fn validate(&self) -> ProviderResult<()> {
        if !(self.timeout_secs > 0.0) {
            return Err(ProviderError::InvalidRequest("timeout must be positive".into()));
        }
        if self.endpoint.is_empty() {
            return Err(ProviderError::InvalidRequest("empty endpoint".into()));
        }
        Ok(())
    }
}

/// JSON-over-HTTP client with retries and an in-flight cap.
pub struct HttpGateway {
    config: ProviderConfig,
    agent: ureq::Agent,
    limit: InFlightLimit,
}

fn is_timeout(e: &ureq::Transport) -> bool {
    let mut src: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(e);
    while let Some(s) = src {
        if let Some(io) = s.downcast_ref::<std::io::Error>() {
            return matches!(io.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock);
        }
        src = s.source();
    }
    false
}

enum Attempt {
    Done(ProviderResult<Vec<u8>>),
    Retry(ProviderError),
}

impl HttpGateway {
    pub fn new(config: ProviderConfig) -> ProviderResult<Self> {
        config.validate()?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build();
        let limit = InFlightLimit::new(config.max_in_flight);
        Ok(Self { config, agent, limit })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn attempt(&self, body: &[u8]) -> Attempt {
        let mut req = self.agent.post(&self.config.endpoint).set("Content-Type", "application/json");
        if let Some(token) = self.config.token_env.as_deref().and_then(|v| std::env::var(v).ok()) {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_bytes(body) {
            Ok(resp) => {
                let mut buf = Vec::new();
                match resp.into_reader().read_to_end(&mut buf) {
                    Ok(_) => Attempt::Done(Ok(buf)),
                    Err(e) if matches!(e.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => {
                        Attempt::Retry(ProviderError::Timeout)
                    }
                    Err(e) => Attempt::Done(Err(ProviderError::Transport(e.to_string()))),
                }
            }
            Err(ureq::Error::Status(code, _)) if code >= 500 => Attempt::Retry(ProviderError::BadStatus(code)),
            Err(ureq::Error::Status(code, _)) => Attempt::Done(Err(ProviderError::BadStatus(code))),
            Err(ureq::Error::Transport(t)) if is_timeout(&t) => Attempt::Retry(ProviderError::Timeout),
            Err(ureq::Error::Transport(t)) => Attempt::Done(Err(ProviderError::Transport(t.to_string()))),
        }
    }

    /// Posts `request` as JSON and parses the JSON reply. Server errors and
    /// timeouts are retried with exponential backoff; client errors are not.
    pub fn call<Q: Serialize, R: DeserializeOwned>(&self, request: &Q) -> ProviderResult<R> {
        let body = serde_json::to_vec(request).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        if body.len() > self.config.max_payload {
            return Err(ProviderError::PayloadTooLarge {
                size: body.len(),
                limit: self.config.max_payload,
            });
        }
        let _permit = self.limit.acquire();
        let mut attempt = 0u32;
        loop {
            match self.attempt(&body) {
                Attempt::Done(Ok(bytes)) => {
                    return serde_json::from_slice(&bytes).map_err(|e| ProviderError::MalformedResponse(e.to_string()))
                }
                Attempt::Done(Err(e)) => return Err(e),
                Attempt::Retry(e) if attempt >= self.config.max_retries => return Err(e),
                Attempt::Retry(e) => {
                    let delay = self.config.backoff_base_ms.saturating_mul(1 << attempt.min(20));
                    log::warn!("{} failed ({e}); retrying in {delay} ms", self.config.endpoint);
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
            }
        }
    }
}

pub struct HttpMaskProvider(pub HttpGateway);
pub struct HttpEmbeddingProvider(pub HttpGateway);
pub struct HttpVlmProvider(pub HttpGateway);

impl MaskProvider for HttpMaskProvider {
    fn segment(&self, image: &RgbImage, prompts: &[PointPrompt]) -> ProviderResult<Vec<ScoredMask>> {
        let resp: MaskWireResponse = self.0.call(&wire::encode_mask_request(image, prompts))?;
        wire::decode_mask_response(&resp, image.width(), image.height())
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed_image(&self, image: &RgbImage) -> ProviderResult<Vec<f64>> {
        let resp: EmbedWireResponse = self.0.call(&EmbedWireRequest::Image {
            image: wire::image_to_b64(image),
        })?;
        wire::decode_vector(&resp)
    }

    fn embed_text(&self, text: &str) -> ProviderResult<Vec<f64>> {
        let resp: EmbedWireResponse = self.0.call(&EmbedWireRequest::Text { text: text.to_string() })?;
        wire::decode_vector(&resp)
    }
}

impl VlmProvider for HttpVlmProvider {
    fn complete(&self, request: &VlmRequest) -> ProviderResult<String> {
        if request.images.len() > self.max_images() {
            return Err(ProviderError::InvalidRequest(format!(
                "{} images exceed the limit of {}",
                request.images.len(),
                self.max_images()
            )));
        }
        let resp: VlmWireResponse = self.0.call(&wire::encode_vlm_request(request))?;
        Ok(resp.text)
    }

    fn max_images(&self) -> usize {
        self.0.config.max_images
    }
}
