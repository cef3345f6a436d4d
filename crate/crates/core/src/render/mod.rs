//! CPU rendering of splat assets: arbitrary snapshots, the four orthogonal
//! menu views and orbit frame sequences.

mod camera;
mod raster;
mod views;

use std::io::Cursor;

use image::{ImageFormat, RgbaImage};

pub use camera::Camera;
pub use raster::{render, render_with, COVARIANCE_DILATION, MIN_CONTRIBUTION};
pub use views::{
    orbit_camera, orbit_frames, orbit_frames_with, orthogonal_views, view_camera, OrthogonalViewSet, ViewSlot,
    VIEW_FOV,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("InvalidCamera: {0}")]
    InvalidCamera(String),
    #[error("EmptyAsset: nothing to frame")]
    EmptyAsset,
}

/// Execution strategy for data-parallel work.
///
/// Without the `parallel` feature both variants run sequentially.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Row-major RGBA8 image together with the camera that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub camera: Camera,
}

impl RenderedImage {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let i = (y as usize * self.width as usize + x as usize) * 4;
        self.pixels[i..i + 4].try_into().expect("4 channels")
    }

    pub fn to_rgba_image(&self) -> RgbaImage {
        RgbaImage::from_raw(self.width, self.height, self.pixels.clone()).expect("buffer matches dimensions")
    }

    pub fn to_png(&self) -> Vec<u8> {
        encode_png(&self.to_rgba_image())
    }
}

/// PNG-encodes an RGBA image. The encoder is deterministic.
pub fn encode_png(image: &RgbaImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    image.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbaImage, image::ImageError> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgba8())
}
