//! Deterministic stand-ins for the segmentation, multiview and splat
//! generation models. All arithmetic is integer or `f32` in a fixed order so
//! outputs are identical across runs and platforms.

use std::collections::VecDeque;

use image::{imageops, RgbaImage};

use super::{Backend, BackendError, Mask, MockConfig, Point};
use crate::splat::{logit, rgb_to_dc, serialize_ply, EmptyAsset, GaussianSplatAsset, Provenance, Splat};

/// Region growing from one seed: a 4-connected neighbour joins when its RGB
/// lies within Euclidean distance `threshold` (0..255 units) of the running
/// mean of the region.
fn grow_region(frame: &RgbaImage, seed: Point, threshold: f32) -> Mask {
    let (w, h) = frame.dimensions();
    let mut mask = Mask::new(w, h);
    let rgb = |x: u32, y: u32| {
        let p = frame.get_pixel(x, y).0;
        [p[0] as u64, p[1] as u64, p[2] as u64]
    };
    let mut sum = rgb(seed.x, seed.y);
    let mut count = 1u64;
    let limit = threshold * threshold;
    mask.set(seed.x, seed.y, true);
    let mut queue = VecDeque::from([(seed.x, seed.y)]);
    while let Some((x, y)) = queue.pop_front() {
        let neighbours = [
            (x.checked_sub(1), Some(y)),
            (Some(x), y.checked_sub(1)),
            ((x + 1 < w).then_some(x + 1), Some(y)),
            (Some(x), (y + 1 < h).then_some(y + 1)),
        ];
        for (nx, ny) in neighbours {
            let (Some(nx), Some(ny)) = (nx, ny) else { continue };
            if mask.get(nx, ny) {
                continue;
            }
            let p = rgb(nx, ny);
            let d2: f32 = (0..3)
                .map(|k| {
                    let mean = sum[k] as f32 / count as f32;
                    let d = p[k] as f32 - mean;
                    d * d
                })
                .sum();
            if d2 <= limit {
                mask.set(nx, ny, true);
                for k in 0..3 {
                    sum[k] += p[k];
                }
                count += 1;
                queue.push_back((nx, ny));
            }
        }
    }
    mask
}

/// Union of the regions grown from each prompt point.
pub fn mock_segment(frame: &RgbaImage, points: &[Point; 3], threshold: f32) -> Mask {
    let (w, h) = frame.dimensions();
    let mut mask = Mask::new(w, h);
    for &p in points {
        mask.union(&grow_region(frame, p, threshold));
    }
    mask
}

fn compress_horizontally(img: &RgbaImage) -> RgbaImage {
    let (w, h) = img.dimensions();
    let nw = ((0.75 * w as f64).round() as u32).max(1);
    // Nearest sample of the source column under each target pixel center.
    RgbaImage::from_fn(nw, h, |x, y| {
        let sx = ((2 * x as u64 + 1) * w as u64 / (2 * nw as u64)) as u32;
        *img.get_pixel(sx.min(w - 1), y)
    })
}

/// Front is the cutout itself; the side views are the cutout compressed to
/// 75% width (right additionally mirrored); the back is the mirrored cutout
/// darkened to 80%.
pub fn mock_multiview(cutout: &RgbaImage) -> [RgbaImage; 4] {
    let left = compress_horizontally(cutout);
    let right = imageops::flip_horizontal(&left);
    let mut back = imageops::flip_horizontal(cutout);
    for p in back.pixels_mut() {
        for k in 0..3 {
            p.0[k] = (p.0[k] as f32 * 0.8).round() as u8;
        }
    }
    [cutout.clone(), left, right, back]
}

/// Block-averaged cell: un-premultiplied color and mean alpha, both in [0, 1].
#[derive(Clone, Copy)]
struct Cell {
    rgb: [f32; 3],
    alpha: f32,
}

fn downsample(img: &RgbaImage, stride: u32) -> (u32, u32, Vec<Cell>) {
    let (w, h) = img.dimensions();
    let (cw, ch) = (w.div_ceil(stride), h.div_ceil(stride));
    let mut cells = Vec::with_capacity((cw * ch) as usize);
    for cy in 0..ch {
        for cx in 0..cw {
            let mut premul = [0u64; 3];
            let mut alpha = 0u64;
            let mut n = 0u64;
            for y in cy * stride..((cy + 1) * stride).min(h) {
                for x in cx * stride..((cx + 1) * stride).min(w) {
                    let p = img.get_pixel(x, y).0;
                    for k in 0..3 {
                        premul[k] += p[k] as u64 * p[3] as u64;
                    }
                    alpha += p[3] as u64;
                    n += 1;
                }
            }
            let rgb = if alpha == 0 {
                [0.0; 3]
            } else {
                premul.map(|c| c as f32 / (alpha as f32 * 255.0))
            };
            cells.push(Cell { rgb, alpha: alpha as f32 / (n as f32 * 255.0) });
        }
    }
    (cw, ch, cells)
}

fn opaque_cells(img: &RgbaImage, stride: u32) -> usize {
    let (w, h) = img.dimensions();
    let (cw, ch) = (w.div_ceil(stride), h.div_ceil(stride));
    let mut n = 0;
    for cy in 0..ch {
        for cx in 0..cw {
            let any = (cy * stride..((cy + 1) * stride).min(h))
                .any(|y| (cx * stride..((cx + 1) * stride).min(w)).any(|x| img.get_pixel(x, y).0[3] > 0));
            n += any as usize;
        }
    }
    n
}

/// Billboard extrusion of a cutout into splats.
///
/// Every opaque cell of the (block-downsampled) cutout becomes a front splat
/// on the `z = 0` plane, scaled so the image is one meter tall, and every
/// opaque cell of the back view becomes a back splat `0.1` m behind it. The
/// stride is the smallest that keeps the total within `splat_budget`.
pub fn mock_gaussian(cutout: &RgbaImage, views: &[RgbaImage; 4], splat_budget: usize) -> Result<Vec<u8>, EmptyAsset> {
    Ok(serialize_ply(&billboard_asset(cutout, views, splat_budget)?))
}

pub fn billboard_asset(cutout: &RgbaImage, views: &[RgbaImage; 4], splat_budget: usize) -> Result<GaussianSplatAsset, EmptyAsset> {
    let (w, h) = cutout.dimensions();
    let back = if views[3].dimensions() == (w, h) {
        views[3].clone()
    } else {
        imageops::resize(&views[3], w, h, imageops::FilterType::Nearest)
    };
    if opaque_cells(cutout, 1) == 0 {
        return Err(EmptyAsset);
    }
    let mut stride = 1;
    while stride < w.max(h) && opaque_cells(cutout, stride) + opaque_cells(&back, stride) > splat_budget {
        stride += 1;
    }

    let (cw, ch, front_cells) = downsample(cutout, stride);
    let (_, _, back_cells) = downsample(&back, stride);
    let pitch = 1.0f32 / ch as f32;
    let log_pitch = pitch.ln();
    let half_w = cw as f32 * 0.5;
    let half_h = ch as f32 * 0.5;
    let depth = 0.1f32;
    let make = |cell: &Cell, x: f32, y: f32, z: f32| {
        Splat::new(
            [x, y, z],
            [1.0, 0.0, 0.0, 0.0],
            [log_pitch; 3],
            logit(cell.alpha.clamp(0.01, 0.99)),
            rgb_to_dc(cell.rgb),
        )
    };

    let mut splats = Vec::new();
    // The front camera looks along +z, so image columns run toward -x.
    for cy in 0..ch {
        for cx in 0..cw {
            let cell = &front_cells[(cy * cw + cx) as usize];
            if cell.alpha > 0.0 {
                let x = -(cx as f32 + 0.5 - half_w) * pitch;
                let y = (half_h - cy as f32 - 0.5) * pitch;
                splats.push(make(cell, x, y, 0.0));
            }
        }
    }
    // The back view is seen from +z, where image columns run toward +x.
    for cy in 0..ch {
        for cx in 0..cw {
            let cell = &back_cells[(cy * cw + cx) as usize];
            if cell.alpha > 0.0 {
                let x = (cx as f32 + 0.5 - half_w) * pitch;
                let y = (half_h - cy as f32 - 0.5) * pitch;
                splats.push(make(cell, x, y, depth));
            }
        }
    }
    Ok(GaussianSplatAsset::new(splats, Provenance::Mock))
}

/// All three stages backed by the mocks above.
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub config: MockConfig,
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        Self { config }
    }
}

impl Backend for MockBackend {
    fn segment(&self, frame: &RgbaImage, points: &[Point; 3]) -> Result<Mask, BackendError> {
        Ok(mock_segment(frame, points, self.config.threshold))
    }

    fn multiview(&self, cutout: &RgbaImage) -> Result<[RgbaImage; 4], BackendError> {
        Ok(mock_multiview(cutout))
    }

    fn gaussian(&self, cutout: &RgbaImage, views: &[RgbaImage; 4]) -> Result<Vec<u8>, BackendError> {
        mock_gaussian(cutout, views, self.config.splat_budget).map_err(|e| BackendError(e.to_string()))
    }

    fn provenance(&self) -> Provenance {
        Provenance::Mock
    }
}
