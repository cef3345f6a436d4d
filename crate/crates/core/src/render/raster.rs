//! Per-pixel splat rasterizer.
//!
//! Splats are projected once, sorted front to back by camera-space depth
//! (ties in asset order) and binned into the rows their screen-space extent
//! covers. Each row is then composited independently, which is what the
//! `parallel` feature distributes across threads.

use nalgebra::{Matrix2x3, Matrix3, Vector3};

use super::camera::CameraFrame;
use super::{Camera, Exec, RenderError, RenderedImage};
use crate::splat::GaussianSplatAsset;

/// Low-pass dilation added to the projected covariance diagonal, in px².
pub const COVARIANCE_DILATION: f64 = 0.3;

/// A splat whose Gaussian falls below this value at a pixel contributes
/// nothing there.
pub const MIN_CONTRIBUTION: f32 = 1.0 / 255.0;

/// Compositing for a pixel stops once the remaining transmittance is below
/// this value; the error it introduces is far under one quantization step.
const MIN_TRANSMITTANCE: f32 = 1e-4;

/// Mahalanobis radius at which a Gaussian decays to [`MIN_CONTRIBUTION`]:
/// `sqrt(2 ln 255)`, about 3.33 sigma.
fn cutoff_radius() -> f64 {
    (2.0 * 255f64.ln()).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ProjectedSplat {
    pub depth: f64,
    pub center: [f32; 2],
    /// Inverse 2D covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f32; 3],
    pub color: [f32; 3],
    pub alpha: f32,
    /// Inclusive pixel ranges covered by the cutoff ellipse.
    pub x_range: (u32, u32),
    pub y_range: (u32, u32),
}

/// Projected 2D covariance `J W Σ Wᵀ Jᵀ` (before dilation) for a point at
/// camera-space position `c`.
pub(crate) fn project_covariance(frame: &CameraFrame, cov3: &Matrix3<f64>, c: Vector3<f64>) -> [f64; 3] {
    let w = Matrix3::from_rows(&[frame.right.transpose(), frame.down.transpose(), frame.forward.transpose()]);
    let f = frame.focal;
    let j = Matrix2x3::new(f / c.z, 0.0, -f * c.x / (c.z * c.z), 0.0, f / c.z, -f * c.y / (c.z * c.z));
    let t = j * w;
    let cov2 = t * cov3 * t.transpose();
    [cov2[(0, 0)], 0.5 * (cov2[(0, 1)] + cov2[(1, 0)]), cov2[(1, 1)]]
}

fn pixel_range(center: f64, radius: f64, size: u32) -> Option<(u32, u32)> {
    // Pixel i has its center at i + 0.5.
    let lo = (center - radius - 0.5).ceil().max(0.0);
    let hi = (center + radius - 0.5).floor().min(size as f64 - 1.0);
    (lo <= hi).then_some((lo as u32, hi as u32))
}

pub(crate) fn project_all(asset: &GaussianSplatAsset, camera: &Camera) -> Result<Vec<ProjectedSplat>, RenderError> {
    let frame = camera.frame()?;
    let cutoff = cutoff_radius() * (1.0 + 1e-6);
    let mut out = Vec::with_capacity(asset.splat_count());
    for splat in asset.splats() {
        let c = frame.to_camera_space(Vector3::from(splat.position.map(f64::from)));
        if c.z <= frame.near {
            continue;
        }
        let [a, b, cc] = project_covariance(&frame, &splat.covariance(), c);
        let (a, cc) = (a + COVARIANCE_DILATION, cc + COVARIANCE_DILATION);
        let det = a * cc - b * b;
        if !(det > 0.0) || !det.is_finite() {
            continue;
        }
        let u = frame.focal * c.x / c.z + frame.cx;
        let v = frame.focal * c.y / c.z + frame.cy;
        let (Some(x_range), Some(y_range)) = (
            pixel_range(u, cutoff * a.sqrt(), camera.width),
            pixel_range(v, cutoff * cc.sqrt(), camera.height),
        ) else {
            continue;
        };
        out.push(ProjectedSplat {
            depth: c.z,
            center: [u as f32, v as f32],
            conic: [(cc / det) as f32, (-b / det) as f32, (a / det) as f32],
            color: splat.rgb(),
            alpha: splat.opacity(),
            x_range,
            y_range,
        });
    }
    // Stable: equal depths keep ascending asset index.
    out.sort_by(|p, q| p.depth.total_cmp(&q.depth));
    Ok(out)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn render_row(row: u32, splats: &[&ProjectedSplat], background: [f32; 3], out: &mut [u8]) {
    let py = row as f32 + 0.5;
    for (x, pixel) in out.chunks_exact_mut(4).enumerate() {
        let px = x as f32 + 0.5;
        let mut color = [0f32; 3];
        let mut transmittance = 1f32;
        for s in splats {
            if (x as u32) < s.x_range.0 || (x as u32) > s.x_range.1 {
                continue;
            }
            let dx = px - s.center[0];
            let dy = py - s.center[1];
            let [a, b, c] = s.conic;
            let g = (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp();
            if g < MIN_CONTRIBUTION {
                continue;
            }
            let weight = s.alpha * g;
            for k in 0..3 {
                color[k] += s.color[k] * weight * transmittance;
            }
            transmittance *= 1.0 - weight;
            if transmittance < MIN_TRANSMITTANCE {
                break;
            }
        }
        for k in 0..3 {
            pixel[k] = quantize(color[k] + transmittance * background[k]);
        }
        pixel[3] = 255;
    }
}

/// Renders `asset` from `camera` over an opaque `background`.
///
/// An empty asset yields a background-only image.
pub fn render(asset: &GaussianSplatAsset, camera: &Camera, background: [u8; 3]) -> Result<RenderedImage, RenderError> {
    render_with(asset, camera, background, Exec::default())
}

pub fn render_with(
    asset: &GaussianSplatAsset,
    camera: &Camera,
    background: [u8; 3],
    exec: Exec,
) -> Result<RenderedImage, RenderError> {
    let projected = project_all(asset, camera)?;
    let (width, height) = (camera.width, camera.height);
    let bg = background.map(|c| c as f32 / 255.0);
    let row_bytes = width as usize * 4;
    let mut pixels = vec![0u8; row_bytes * height as usize];

    let shade = |(row, out): (usize, &mut [u8])| {
        let row = row as u32;
        let active: Vec<&ProjectedSplat> =
            projected.iter().filter(|s| s.y_range.0 <= row && row <= s.y_range.1).collect();
        render_row(row, &active, bg, out);
    };
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            pixels.par_chunks_exact_mut(row_bytes).enumerate().for_each(shade);
        }
        _ => pixels.chunks_exact_mut(row_bytes).enumerate().for_each(shade),
    }
    Ok(RenderedImage { width, height, pixels, camera: *camera })
}
