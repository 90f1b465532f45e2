//! JSON wire schema shared by the HTTP client and test servers.
//!
//! Images travel as base64 PNG. Masks travel run-length encoded in
//! row-major order as alternating run lengths starting with a run of
//! zeros (possibly of length 0).

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{BinaryMask, PointPrompt, ProviderError, ProviderResult, ScoredMask, VlmRequest};

pub fn encode_png(image: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    buf.into_inner()
}

pub fn image_to_b64(image: &RgbImage) -> String {
    STANDARD.encode(encode_png(image))
}

pub fn image_from_b64(s: &str) -> ProviderResult<RgbImage> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| ProviderError::MalformedResponse(format!("bad base64: {e}")))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| ProviderError::MalformedResponse(format!("bad png: {e}")))?;
    Ok(img.to_rgb8())
}

pub fn rle_encode(bits: &[bool]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in bits {
        if b == current {
            run += 1;
        } else {
            out.push(run);
            current = b;
            run = 1;
        }
    }
    out.push(run);
    out
}

pub fn rle_decode(counts: &[u32], len: usize) -> ProviderResult<Vec<bool>> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total != len as u64 {
        return Err(ProviderError::MalformedResponse(format!(
            "mask runs cover {total} pixels, expected {len}"
        )));
    }
    let mut out = Vec::with_capacity(len);
    for (k, &c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat(k % 2 == 1).take(c as usize));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmWireRequest {
    pub images: Vec<String>,
    pub prompt: String,
    pub schema: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmWireResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskWireRequest {
    pub image: String,
    /// `[u, v, label]` with label 1 for positive and 0 for negative prompts.
    pub points: Vec<[i64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMask {
    pub rle: Vec<u32>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskWireResponse {
    pub masks: Vec<WireMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmbedWireRequest {
    Image { image: String },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedWireResponse {
    pub vector: Vec<f64>,
}

pub fn encode_vlm_request(req: &VlmRequest) -> VlmWireRequest {
    VlmWireRequest {
        images: req.images.iter().map(image_to_b64).collect(),
        prompt: req.prompt.clone(),
        schema: req.schema.clone(),
    }
}

pub fn decode_vlm_request(w: &VlmWireRequest) -> ProviderResult<VlmRequest> {
    Ok(VlmRequest {
        images: w.images.iter().map(|s| image_from_b64(s)).collect::<ProviderResult<_>>()?,
        prompt: w.prompt.clone(),
        schema: w.schema.clone(),
    })
}

pub fn encode_mask_request(image: &RgbImage, prompts: &[PointPrompt]) -> MaskWireRequest {
    MaskWireRequest {
        image: image_to_b64(image),
        points: prompts
            .iter()
            .map(|p| [p.u as i64, p.v as i64, p.positive as i64])
            .collect(),
    }
}

pub fn decode_mask_request(w: &MaskWireRequest) -> ProviderResult<(RgbImage, Vec<PointPrompt>)> {
    let image = image_from_b64(&w.image)?;
    let prompts = w
        .points
        .iter()
        .map(|&[u, v, l]| {
            if u < 0 || v < 0 || u >= image.width() as i64 || v >= image.height() as i64 || !(l == 0 || l == 1) {
                return Err(ProviderError::MalformedResponse(format!("bad point prompt [{u}, {v}, {l}]")));
            }
            Ok(PointPrompt {
                u: u as u32,
                v: v as u32,
                positive: l == 1,
            })
        })
        .collect::<ProviderResult<_>>()?;
    Ok((image, prompts))
}

pub fn encode_mask_response(masks: &[ScoredMask]) -> MaskWireResponse {
    MaskWireResponse {
        masks: masks
            .iter()
            .map(|m| WireMask {
                rle: rle_encode(&m.mask.bits),
                confidence: m.confidence,
            })
            .collect(),
    }
}

/// Decodes masks against the request image size and re-sorts by
/// confidence so the contract holds even for sloppy servers.
pub fn decode_mask_response(w: &MaskWireResponse, width: u32, height: u32) -> ProviderResult<Vec<ScoredMask>> {
    let mut out = w
        .masks
        .iter()
        .map(|m| {
            if !(0.0..=1.0).contains(&m.confidence) {
                return Err(ProviderError::MalformedResponse(format!("confidence {} outside [0,1]", m.confidence)));
            }
            Ok(ScoredMask {
                mask: BinaryMask {
                    width,
                    height,
                    bits: rle_decode(&m.rle, (width * height) as usize)?,
                },
                confidence: m.confidence,
            })
        })
        .collect::<ProviderResult<Vec<_>>>()?;
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(out)
}

pub fn decode_vector(w: &EmbedWireResponse) -> ProviderResult<Vec<f64>> {
    if w.vector.is_empty() || w.vector.iter().all(|&x| x == 0.0) || w.vector.iter().any(|x| !x.is_finite()) {
        return Err(ProviderError::MalformedResponse("embedding vector empty, zero or non-finite".into()));
    }
    Ok(w.vector.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_image() -> impl Strategy<Value = RgbImage> {
        (1u32..6, 1u32..6).prop_flat_map(|(w, h)| {
            prop::collection::vec(any::<u8>(), (w * h * 3) as usize)
                .prop_map(move |px| RgbImage::from_raw(w, h, px).unwrap())
        })
    }

    #[test]
    fn rle_known_layout() {
        assert_eq!(rle_encode(&[true, true, false]), vec![0, 2, 1]);
        assert_eq!(rle_encode(&[false, false]), vec![2]);
        assert_eq!(rle_encode(&[]), vec![0]);
        assert!(rle_decode(&[1, 1], 3).is_err());
    }

    #[test]
    fn wire_json_shape() {
        let v = serde_json::to_value(EmbedWireRequest::Text { text: "chair".into() }).unwrap();
        assert_eq!(v, serde_json::json!({"text": "chair"}));
        let req = encode_mask_request(&RgbImage::new(2, 2), &[PointPrompt { u: 1, v: 0, positive: true }]);
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["points"], serde_json::json!([[1, 0, 1]]));
    }

    proptest! {
        #[test]
        fn rle_round_trips(bits in prop::collection::vec(any::<bool>(), 0..300)) {
            prop_assert_eq!(rle_decode(&rle_encode(&bits), bits.len()).unwrap(), bits);
        }

        #[test]
        fn vlm_request_round_trips(imgs in prop::collection::vec(arb_image(), 0..3), prompt in ".*", schema in "[a-z_0-9]{1,12}") {
            let req = VlmRequest { images: imgs, prompt, schema };
            let json = serde_json::to_string(&encode_vlm_request(&req)).unwrap();
            let back = decode_vlm_request(&serde_json::from_str(&json).unwrap()).unwrap();
            prop_assert_eq!(back.images, req.images);
            prop_assert_eq!(back.prompt, req.prompt);
            prop_assert_eq!(back.schema, req.schema);
            let resp = VlmWireResponse { text: back_text(&json) };
            let again: VlmWireResponse = serde_json::from_str(&serde_json::to_string(&resp).unwrap()).unwrap();
            prop_assert_eq!(again, resp);
        }

        #[test]
        fn mask_pair_round_trips(img in arb_image(), raw in prop::collection::vec((any::<u16>(), any::<u16>(), any::<bool>()), 0..5), seed in any::<u64>()) {
            let (w, h) = img.dimensions();
            let prompts: Vec<PointPrompt> = raw.iter().map(|&(u, v, p)| PointPrompt { u: u as u32 % w, v: v as u32 % h, positive: p }).collect();
            let json = serde_json::to_string(&encode_mask_request(&img, &prompts)).unwrap();
            let (img2, prompts2) = decode_mask_request(&serde_json::from_str(&json).unwrap()).unwrap();
            prop_assert_eq!(img2, img);
            prop_assert_eq!(prompts2, prompts);

            let mut s = seed;
            let masks: Vec<ScoredMask> = (0..3).map(|k| {
                let bits = (0..w * h).map(|_| { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); s >> 63 == 1 }).collect();
                ScoredMask { mask: BinaryMask { width: w, height: h, bits }, confidence: 1.0 - k as f64 * 0.25 }
            }).collect();
            let json = serde_json::to_string(&encode_mask_response(&masks)).unwrap();
            let back = decode_mask_response(&serde_json::from_str(&json).unwrap(), w, h).unwrap();
            prop_assert_eq!(back, masks);
        }

        #[test]
        fn embed_pair_round_trips(img in arb_image(), text in ".*", v in prop::collection::vec(-1e6f64..1e6, 1..64)) {
            let r = EmbedWireRequest::Image { image: image_to_b64(&img) };
            let back: EmbedWireRequest = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            match back {
                EmbedWireRequest::Image { image } => prop_assert_eq!(image_from_b64(&image).unwrap(), img),
                _ => prop_assert!(false),
            }
            let r = EmbedWireRequest::Text { text: text.clone() };
            let back: EmbedWireRequest = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            prop_assert_eq!(back, EmbedWireRequest::Text { text });
            let resp = EmbedWireResponse { vector: v.clone() };
            let back: EmbedWireResponse = serde_json::from_str(&serde_json::to_string(&resp).unwrap()).unwrap();
            prop_assume!(v.iter().any(|&x| x != 0.0));
            prop_assert_eq!(decode_vector(&back).unwrap(), v);
        }
    }

    fn back_text(s: &str) -> String {
        s.chars().rev().collect()
    }
}
