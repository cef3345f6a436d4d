//! Model-server adapter: each stage is a JSON `POST` carrying base64 PNGs.
//!
//! ```text
//! POST {base}/segment   {"image": png, "points": [[x,y],[x,y],[x,y]]} -> {"mask": png}
//! POST {base}/multiview {"image": png}                               -> {"views": [png; 4]}
//! POST {base}/gaussian  {"image": png, "views": [png; 4]}            -> {"ply": bytes}
//! ```

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::RgbaImage;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Mask, Point};
use crate::render::{decode_png, encode_png};

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: String,
    pub points: Vec<Point>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MultiviewRequest {
    pub image: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MultiviewResponse {
    pub views: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GaussianRequest {
    pub image: String,
    pub views: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GaussianResponse {
    pub ply: String,
}

pub fn png_b64(image: &RgbaImage) -> String {
    B64.encode(encode_png(image))
}

pub fn image_from_b64(data: &str) -> Result<RgbaImage, BackendError> {
    let bytes = B64.decode(data).map_err(|e| BackendError(format!("bad base64: {e}")))?;
    decode_png(&bytes).map_err(|e| BackendError(format!("bad png: {e}")))
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    base: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint_base: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { base: endpoint_base.trim_end_matches('/').to_owned(), agent }
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let url = format!("{}/{path}", self.base);
        let mut response = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| BackendError(format!("POST {url}: {e}")))?;
        response
            .body_mut()
            .read_json::<Resp>()
            .map_err(|e| BackendError(format!("POST {url}: bad response body: {e}")))
    }
}

impl Backend for HttpBackend {
    fn segment(&self, frame: &RgbaImage, points: &[Point; 3]) -> Result<Mask, BackendError> {
        let resp: SegmentResponse =
            self.post("segment", &SegmentRequest { image: png_b64(frame), points: points.to_vec() })?;
        let bytes = B64.decode(&resp.mask).map_err(|e| BackendError(format!("bad base64 mask: {e}")))?;
        let mask = Mask::from_png(&bytes).map_err(|e| BackendError(format!("bad mask png: {e}")))?;
        if mask.dimensions() != frame.dimensions() {
            return Err(BackendError(format!(
                "mask is {:?}, frame is {:?}",
                mask.dimensions(),
                frame.dimensions()
            )));
        }
        Ok(mask)
    }

    fn multiview(&self, cutout: &RgbaImage) -> Result<[RgbaImage; 4], BackendError> {
        let resp: MultiviewResponse = self.post("multiview", &MultiviewRequest { image: png_b64(cutout) })?;
        let views = resp.views.iter().map(|v| image_from_b64(v)).collect::<Result<Vec<_>, _>>()?;
        views
            .try_into()
            .map_err(|v: Vec<_>| BackendError(format!("expected 4 views, got {}", v.len())))
    }

    fn gaussian(&self, cutout: &RgbaImage, views: &[RgbaImage; 4]) -> Result<Vec<u8>, BackendError> {
        let req = GaussianRequest { image: png_b64(cutout), views: views.iter().map(png_b64).collect() };
        let resp: GaussianResponse = self.post("gaussian", &req)?;
        B64.decode(&resp.ply).map_err(|e| BackendError(format!("bad base64 ply: {e}")))
    }
}
