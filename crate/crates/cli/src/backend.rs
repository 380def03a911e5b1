//! HTTP client for a remote segmentation and editing service.
//!
//! Every body is JSON; images travel as base64-encoded PNG. Each request
//! carries a `request_id` that the service must echo back, and failures come
//! back as `{"error": {"code", "message"}}` with a non-2xx status.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use deda_core::diffusion::EditConfig;
use deda_core::expand::CdpEditor;
use deda_core::imagecore::{decode_mask_png, decode_png, encode_png, ClassId, Mask, Raster};
use deda_core::{Error, Result};
use log::debug;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Largest response body accepted, in bytes.
const MAX_RESPONSE_BYTES: u64 = 512 * 1024 * 1024;

/// Inversion parameters sent with `/invert`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvertParams {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for InvertParams {
    fn default() -> Self {
        Self { steps: 400, lr: 1e-4, batch: 32 }
    }
}

/// Server-side identifier for one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteHandle {
    pub class_id: ClassId,
    pub token: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Health {
    pub status: String,
    #[serde(default)]
    pub model_versions: Value,
}

#[derive(Serialize)]
struct SegmentRequest<'a> {
    request_id: &'a str,
    image: String,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct SegmentResponse {
    masks: Vec<String>,
}

#[derive(Serialize)]
struct InvertRequest<'a> {
    request_id: &'a str,
    class_id: ClassId,
    cdp_pngs: Vec<String>,
    strength: f64,
    steps: usize,
    lr: f64,
    batch: usize,
    seed: u64,
}

#[derive(Deserialize)]
struct InvertResponse {
    handle: String,
}

#[derive(Serialize)]
struct EditRequest<'a> {
    request_id: &'a str,
    cdp_png: String,
    handle: &'a str,
    strength: f64,
    guidance: f64,
    steps: usize,
    seed: u64,
}

#[derive(Deserialize)]
struct EditResponse {
    cdp_png: String,
}

pub struct HttpBackend {
    base: String,
    agent: ureq::Agent,
    invert: InvertParams,
    /// Sampler steps requested per edit.
    pub edit_steps: usize,
    next_request: AtomicU64,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
            invert: InvertParams::default(),
            edit_steps: 25,
            next_request: AtomicU64::new(0),
        }
    }

    pub fn with_invert_params(mut self, params: InvertParams) -> Self {
        self.invert = params;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request_id(&self) -> String {
        format!("req-{}", self.next_request.fetch_add(1, Ordering::Relaxed))
    }

    fn finish<T: DeserializeOwned>(
        &self,
        path: &str,
        request_id: Option<&str>,
        mut resp: ureq::http::Response<ureq::Body>,
    ) -> Result<T> {
        let status = resp.status();
        let text = resp
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_to_string()
            .map_err(|e| Error::Backend(format!("{path}: reading response: {e}")))?;
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Backend(format!("{path}: response is not JSON ({status}): {e}")))?;
        if let Some(want) = request_id {
            let got = body.get("request_id").and_then(Value::as_str);
            if got != Some(want) {
                return Err(Error::Backend(format!("{path}: response echoes request id {got:?}, expected {want}")));
            }
        }
        if !status.is_success() {
            let err = body.get("error");
            let code = err.and_then(|e| e.get("code")).and_then(Value::as_str).unwrap_or("unknown");
            let message = err.and_then(|e| e.get("message")).and_then(Value::as_str).unwrap_or("");
            return Err(Error::Backend(format!("{path}: {status} {code}: {message}")));
        }
        serde_json::from_value(body).map_err(|e| Error::Backend(format!("{path}: unexpected response: {e}")))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, request_id: &str, body: &B) -> Result<T> {
        debug!("POST {path} {request_id}");
        let resp = self
            .agent
            .post(format!("{}{path}", self.base))
            .send_json(body)
            .map_err(|e| Error::Backend(format!("{path}: {e}")))?;
        self.finish(path, Some(request_id), resp)
    }

    pub fn healthz(&self) -> Result<Health> {
        let resp = self
            .agent
            .get(format!("{}/healthz", self.base))
            .call()
            .map_err(|e| Error::Backend(format!("/healthz: {e}")))?;
        let health: Health = self.finish("/healthz", None, resp)?;
        if health.status != "ok" {
            return Err(Error::Backend(format!("backend reports status {:?}", health.status)));
        }
        Ok(health)
    }

    /// Prompt-guided masks for `image`, each at the image's resolution.
    pub fn segment(&self, image: &Raster, prompt: &str) -> Result<Vec<Mask>> {
        if prompt.trim().is_empty() {
            return Err(Error::InvalidInput("segmentation prompt is empty".into()));
        }
        let rid = self.request_id();
        let req = SegmentRequest { request_id: &rid, image: STANDARD.encode(encode_png(image)?), prompt };
        let resp: SegmentResponse = self.post("/segment", &rid, &req)?;
        resp.masks
            .iter()
            .map(|m| {
                let mask = decode_mask_png(&decode_b64(m)?)?;
                if !mask.matches(image) {
                    return Err(Error::Backend(format!(
                        "/segment returned a {}x{} mask for a {}x{} image",
                        mask.width(),
                        mask.height(),
                        image.width(),
                        image.height()
                    )));
                }
                Ok(mask)
            })
            .collect()
    }
}

fn decode_b64(s: &str) -> Result<Vec<u8>> {
    STANDARD.decode(s).map_err(|e| Error::Backend(format!("bad base64 payload: {e}")))
}

impl CdpEditor for HttpBackend {
    type Handle = RemoteHandle;

    fn learn_identifier(&self, class: ClassId, sprites: &[&Raster], strength: f64, seed: u64) -> Result<RemoteHandle> {
        if sprites.is_empty() {
            return Err(Error::InvalidInput(format!("no CDPs to learn class {class} from")));
        }
        let cdp_pngs = sprites
            .iter()
            .map(|s| {
                s.expect_channels(4)?;
                Ok(STANDARD.encode(encode_png(s)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let rid = self.request_id();
        let req = InvertRequest {
            request_id: &rid,
            class_id: class,
            cdp_pngs,
            strength,
            steps: self.invert.steps,
            lr: self.invert.lr,
            batch: self.invert.batch,
            seed,
        };
        let resp: InvertResponse = self.post("/invert", &rid, &req)?;
        Ok(RemoteHandle { class_id: class, token: resp.handle })
    }

    fn edit(&self, sprite: &Raster, id: &RemoteHandle, cfg: &EditConfig) -> Result<Raster> {
        cfg.validate()?;
        sprite.expect_channels(4)?;
        let rid = self.request_id();
        let req = EditRequest {
            request_id: &rid,
            cdp_png: STANDARD.encode(encode_png(sprite)?),
            handle: &id.token,
            strength: cfg.strength,
            guidance: cfg.guidance,
            steps: self.edit_steps,
            seed: cfg.seed,
        };
        let resp: EditResponse = self.post("/edit", &rid, &req)?;
        let out = decode_png(&decode_b64(&resp.cdp_png)?)?;
        if !out.is_rgba() || out.width() != sprite.width() || out.height() != sprite.height() {
            return Err(Error::Backend(format!(
                "/edit returned a {}x{}x{} image for a {}x{} RGBA sprite",
                out.width(),
                out.height(),
                out.channels(),
                sprite.width(),
                sprite.height()
            )));
        }
        Ok(out)
    }
}
