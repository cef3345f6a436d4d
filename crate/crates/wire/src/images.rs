//! Server-side renders attached to messages as base64 PNG.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use splatspace_core::render::{orbit_frames, render, view_camera, Camera, ViewSlot};
use splatspace_core::session::{PieMenu, PinImage, WhiteboardPin};
use splatspace_core::splat::AssetId;
use splatspace_core::store::AssetStore;

use crate::message::Attachment;

const BACKGROUND: [u8; 3] = [0, 0, 0];

/// Named PNG images, base64-encoded.
pub type Images = Arc<Vec<(String, String)>>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Key {
    Snapshot(AssetId, String),
    View(AssetId, ViewSlot, u32),
    Orbit(AssetId, u32, u32),
}

/// Memoized renders. Pin and view images are pure functions of immutable
/// assets and camera parameters, so entries never go stale.
pub struct RenderCache {
    assets: Arc<AssetStore>,
    entries: Mutex<HashMap<Key, Images>>,
}

fn b64_png(png: Vec<u8>) -> String {
    B64.encode(png)
}

impl RenderCache {
    pub fn new(assets: Arc<AssetStore>) -> Self {
        Self { assets, entries: Mutex::new(HashMap::new()) }
    }

    fn memo(&self, key: Key, make: impl FnOnce() -> Option<Vec<(String, String)>>) -> Option<Images> {
        if let Some(hit) = self.entries.lock().expect("render cache poisoned").get(&key) {
            return Some(hit.clone());
        }
        let images = Arc::new(make()?);
        self.entries.lock().expect("render cache poisoned").insert(key, images.clone());
        Some(images)
    }

    fn snapshot(&self, asset_id: &AssetId, camera: &Camera) -> Option<Images> {
        let key = Key::Snapshot(asset_id.clone(), serde_json::to_string(camera).expect("camera serializes"));
        self.memo(key, || {
            let asset = self.assets.get(asset_id)?;
            let image = render(&asset, camera, BACKGROUND).ok()?;
            Some(vec![("image".into(), b64_png(image.to_png()))])
        })
    }

    pub fn view(&self, asset_id: &AssetId, slot: ViewSlot, resolution: u32) -> Option<Images> {
        self.memo(Key::View(asset_id.clone(), slot, resolution), || {
            let asset = self.assets.get(asset_id)?;
            let camera = view_camera(&asset.bounds()?, slot, resolution);
            let image = render(&asset, &camera, BACKGROUND).ok()?;
            Some(vec![(slot.as_str().into(), b64_png(image.to_png()))])
        })
    }

    fn orbit(&self, asset_id: &AssetId, frames: u32, resolution: u32) -> Option<Images> {
        self.memo(Key::Orbit(asset_id.clone(), frames, resolution), || {
            let asset = self.assets.get(asset_id)?;
            let frames = orbit_frames(&asset, frames, resolution).ok()?;
            Some(frames.iter().enumerate().map(|(i, f)| (format!("frame-{i}"), b64_png(f.to_png()))).collect())
        })
    }

    pub fn pin(&self, pin: &WhiteboardPin) -> Vec<Attachment> {
        let images = match &pin.image {
            PinImage::Snapshot { asset_id, camera } => self.snapshot(asset_id, camera),
            PinImage::View { asset_id, slot, resolution } => self.view(asset_id, *slot, *resolution),
            PinImage::Orbit { asset_id, frame_count, resolution } => self.orbit(asset_id, *frame_count, *resolution),
        };
        let single = !matches!(pin.image, PinImage::Orbit { .. });
        let target = format!("pin:{}", pin.pin_id);
        images
            .map(|imgs| {
                imgs.iter()
                    .map(|(name, png)| Attachment {
                        target: target.clone(),
                        name: if single { "image".into() } else { name.clone() },
                        png: png.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// The four orthogonal views plus the center image. `source` is the
    /// generating cutout when known; otherwise the front view stands in.
    pub fn menu(&self, menu: &PieMenu, source: Option<&str>) -> Vec<Attachment> {
        let target = format!("menu:{}", menu.owner);
        let mut out = Vec::new();
        for slot in ViewSlot::ALL {
            if let Some(imgs) = self.view(&menu.asset_id, slot, menu.resolution) {
                out.extend(imgs.iter().map(|(name, png)| Attachment { target: target.clone(), name: name.clone(), png: png.clone() }));
            }
        }
        let center = source.map(str::to_owned).or_else(|| out.first().map(|a| a.png.clone()));
        if let Some(png) = center {
            out.push(Attachment { target, name: "center".into(), png });
        }
        out
    }

    /// Renders the menu views of an asset ahead of time.
    pub fn warm_menu(&self, asset_id: &AssetId, resolution: u32) {
        for slot in ViewSlot::ALL {
            self.view(asset_id, slot, resolution);
        }
    }
}
