use image::RgbaImage;
use serde::{Deserialize, Serialize};

use super::{render_with, Camera, Exec, RenderError, RenderedImage};
use crate::splat::{Aabb, GaussianSplatAsset};

/// Vertical field of view shared by orthogonal and orbit cameras.
pub const VIEW_FOV: f64 = 0.7;

/// Framing distance used when an asset's bounds collapse to a point.
const DEGENERATE_DIAGONAL: f64 = 0.5;

/// Views are rendered over black.
const VIEW_BACKGROUND: [u8; 3] = [0, 0, 0];

/// Slot of an orthogonal view on the menu ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSlot {
    Front,
    Left,
    Right,
    Back,
}

impl ViewSlot {
    pub const ALL: [ViewSlot; 4] = [ViewSlot::Front, ViewSlot::Left, ViewSlot::Right, ViewSlot::Back];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewSlot::Front => "front",
            ViewSlot::Left => "left",
            ViewSlot::Right => "right",
            ViewSlot::Back => "back",
        }
    }

    /// Unit offset from the bounds center to the camera.
    fn direction(self) -> [f64; 3] {
        match self {
            ViewSlot::Front => [0.0, 0.0, -1.0],
            ViewSlot::Left => [-1.0, 0.0, 0.0],
            ViewSlot::Right => [1.0, 0.0, 0.0],
            ViewSlot::Back => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalViewSet {
    pub front: RenderedImage,
    pub left: RenderedImage,
    pub right: RenderedImage,
    pub back: RenderedImage,
    /// The source 2D image shown in the middle of the ring.
    pub center: RgbaImage,
}

impl OrthogonalViewSet {
    pub fn get(&self, slot: ViewSlot) -> &RenderedImage {
        match slot {
            ViewSlot::Front => &self.front,
            ViewSlot::Left => &self.left,
            ViewSlot::Right => &self.right,
            ViewSlot::Back => &self.back,
        }
    }
}

fn framing_distance(bounds: &Aabb) -> f64 {
    let diagonal = bounds.diagonal();
    2.0 * if diagonal > 1e-6 { diagonal } else { DEGENERATE_DIAGONAL }
}

fn camera_at(bounds: &Aabb, direction: [f64; 3], resolution: u32) -> Camera {
    let center = bounds.center();
    let d = framing_distance(bounds);
    Camera {
        position: std::array::from_fn(|i| center[i] + d * direction[i]),
        look_at: center,
        up: [0.0, 1.0, 0.0],
        vertical_fov: VIEW_FOV,
        width: resolution,
        height: resolution,
        near: d * 1e-3,
    }
}

/// Camera for one orthogonal view: `2 × diagonal` from the bounds center
/// along the slot's axis, looking at the center with `+y` up.
pub fn view_camera(bounds: &Aabb, slot: ViewSlot, resolution: u32) -> Camera {
    camera_at(bounds, slot.direction(), resolution)
}

/// Camera for orbit frame `index` of `frame_count`, at azimuth
/// `2π·index/frame_count` around `+y`, starting at the front view and
/// sweeping through right, back and left.
pub fn orbit_camera(bounds: &Aabb, index: u32, frame_count: u32, resolution: u32) -> Camera {
    let frame_count = frame_count.max(1);
    let index = index % frame_count;
    // Quarter turns land exactly on the orthogonal axes.
    let direction = if (4 * index) % frame_count == 0 {
        match 4 * index / frame_count {
            0 => ViewSlot::Front.direction(),
            1 => ViewSlot::Right.direction(),
            2 => ViewSlot::Back.direction(),
            _ => ViewSlot::Left.direction(),
        }
    } else {
        let azimuth = std::f64::consts::TAU * index as f64 / frame_count as f64;
        [azimuth.sin(), 0.0, -azimuth.cos()]
    };
    camera_at(bounds, direction, resolution)
}

pub fn orthogonal_views(
    asset: &GaussianSplatAsset,
    source_image: RgbaImage,
    resolution: u32,
) -> Result<OrthogonalViewSet, RenderError> {
    let bounds = asset.bounds().ok_or(RenderError::EmptyAsset)?;
    let view = |slot| render_with(asset, &view_camera(&bounds, slot, resolution), VIEW_BACKGROUND, Exec::default());
    Ok(OrthogonalViewSet {
        front: view(ViewSlot::Front)?,
        left: view(ViewSlot::Left)?,
        right: view(ViewSlot::Right)?,
        back: view(ViewSlot::Back)?,
        center: source_image,
    })
}

pub fn orbit_frames(asset: &GaussianSplatAsset, frame_count: u32, resolution: u32) -> Result<Vec<RenderedImage>, RenderError> {
    orbit_frames_with(asset, frame_count, resolution, Exec::default())
}

/// Frames are independent, so the parallel strategy renders them
/// concurrently (each frame itself sequentially).
pub fn orbit_frames_with(
    asset: &GaussianSplatAsset,
    frame_count: u32,
    resolution: u32,
    exec: Exec,
) -> Result<Vec<RenderedImage>, RenderError> {
    let bounds = asset.bounds().ok_or(RenderError::EmptyAsset)?;
    let frame_count = frame_count.max(1);
    let frame = |i: u32| {
        render_with(asset, &orbit_camera(&bounds, i, frame_count, resolution), VIEW_BACKGROUND, Exec::Sequential)
    };
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..frame_count).into_par_iter().map(frame).collect()
        }
        _ => (0..frame_count).map(frame).collect(),
    }
}
