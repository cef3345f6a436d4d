use std::sync::Arc;

use image::{GrayImage, Luma, RgbaImage};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::render::{decode_png, encode_png};

/// Pixel position in an image frame, serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

impl From<[u32; 2]> for Point {
    fn from([x, y]: [u32; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [u32; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    WebView,
    CameraFeed,
    #[default]
    File,
}

/// An image frame with the three points of a selection gesture.
#[derive(Debug, Clone)]
pub struct SegmentationPrompt {
    frame: Arc<RgbaImage>,
    points: [Point; 3],
    source: PromptSource,
}

impl SegmentationPrompt {
    pub fn new(frame: RgbaImage, points: &[Point], source: PromptSource) -> Result<Self, PipelineError> {
        let points: [Point; 3] = points
            .try_into()
            .map_err(|_| PipelineError::InvalidPrompt(format!("expected 3 points, got {}", points.len())))?;
        let (w, h) = frame.dimensions();
        if let Some(p) = points.iter().find(|p| p.x >= w || p.y >= h) {
            return Err(PipelineError::InvalidPrompt(format!("point ({}, {}) outside {w}x{h} frame", p.x, p.y)));
        }
        Ok(Self { frame: Arc::new(frame), points, source })
    }

    pub fn frame(&self) -> &RgbaImage {
        &self.frame
    }

    pub fn points(&self) -> &[Point; 3] {
        &self.points
    }

    pub fn source(&self) -> PromptSource {
        self.source
    }
}

/// Binary image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        Self { width, height, bits }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Inclusive `(x0, y0, x1, y1)` of set pixels.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let mut out: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out = Some(match out {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        out
    }

    pub fn union(&mut self, other: &Mask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Grayscale PNG, 255 for set pixels.
    pub fn to_png(&self) -> Vec<u8> {
        let img = GrayImage::from_fn(self.width, self.height, |x, y| Luma([if self.get(x, y) { 255 } else { 0 }]));
        let rgba = image::DynamicImage::ImageLuma8(img).to_rgba8();
        encode_png(&rgba)
    }

    /// Any PNG; pixels with luma of at least 128 are set.
    pub fn from_png(bytes: &[u8]) -> Result<Self, image::ImageError> {
        let img = image::DynamicImage::ImageRgba8(decode_png(bytes)?).to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self::from_bits(w, h, img.pixels().map(|p| p.0[0] >= 128).collect()))
    }
}

/// Segmentation result shown to the user before 3D creation.
#[derive(Debug, Clone)]
pub struct SegmentedObject {
    pub mask: Mask,
    /// The frame restricted to the mask, cropped to the mask bounds plus a
    /// 4-pixel margin, transparent outside the mask.
    pub cutout: Arc<RgbaImage>,
    /// Set when a backend returned a mask that misses a prompt point.
    pub points_outside_mask: bool,
}

/// The source cutout plus the four conditioned views.
#[derive(Debug, Clone)]
pub struct MultiviewSet {
    pub source: Arc<RgbaImage>,
    /// Front, left, right, back.
    pub views: Arc<[RgbaImage; 4]>,
}

pub const CUTOUT_MARGIN: u32 = 4;

pub fn cutout(frame: &RgbaImage, mask: &Mask) -> Option<RgbaImage> {
    let (x0, y0, x1, y1) = mask.bounds()?;
    let (w, h) = frame.dimensions();
    let x0 = x0.saturating_sub(CUTOUT_MARGIN);
    let y0 = y0.saturating_sub(CUTOUT_MARGIN);
    let x1 = (x1 + CUTOUT_MARGIN).min(w - 1);
    let y1 = (y1 + CUTOUT_MARGIN).min(h - 1);
    Some(RgbaImage::from_fn(x1 - x0 + 1, y1 - y0 + 1, |x, y| {
        let (fx, fy) = (x + x0, y + y0);
        if mask.get(fx, fy) {
            *frame.get_pixel(fx, fy)
        } else {
            image::Rgba([0, 0, 0, 0])
        }
    }))
}
