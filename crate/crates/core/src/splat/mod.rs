//! Gaussian splat data model.
//!
//! A [`Splat`] stores its parameters exactly as they appear in a splat `.ply`
//! file: log-space scale, pre-sigmoid opacity and degree-0 spherical harmonic
//! color. Derived quantities (effective scale, opacity, RGB color, covariance)
//! are computed on demand.

mod ply;

use std::fmt;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use ply::{parse_ply, parse_ply_with, serialize_ply, PlyError, PLY_PROPERTIES, PLY_RECORD_SIZE};

/// Degree-0 spherical harmonic basis constant.
pub const SH_C0: f32 = 0.282_094_8;

/// Norm deviation below which a stored quaternion is considered normalized.
///
/// Renormalizing in `f64` and rounding back to `f32` leaves the norm within
/// about 1.2e-7 of one, so a second pass is a no-op and parsing an emitted
/// file is bit-exact.
const UNIT_NORM_TOLERANCE: f64 = 2.5e-7;

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f32) -> f32 {
    (p / (1.0 - p)).ln()
}

/// Maps DC spherical-harmonic coefficients to a display color in `[0, 1]`.
pub fn dc_to_rgb(color_dc: [f32; 3]) -> [f32; 3] {
    color_dc.map(|c| (0.5 + SH_C0 * c).clamp(0.0, 1.0))
}

/// Inverse of [`dc_to_rgb`] for colors inside `[0, 1]`.
pub fn rgb_to_dc(rgb: [f32; 3]) -> [f32; 3] {
    rgb.map(|c| (c - 0.5) / SH_C0)
}

/// Returns `q` scaled to unit length, or the identity for a degenerate input.
///
/// Quaternions already within [`UNIT_NORM_TOLERANCE`] of unit length are
/// returned untouched.
pub fn normalize_quaternion(q: [f32; 4]) -> [f32; 4] {
    let norm = q.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt();
    if !norm.is_finite() || norm < 1e-12 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    if (norm - 1.0).abs() <= UNIT_NORM_TOLERANCE {
        return q;
    }
    q.map(|c| (c as f64 / norm) as f32)
}

/// A single 3D Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Splat {
    pub position: [f32; 3],
    /// Unit quaternion in `(w, x, y, z)` order.
    pub rotation: [f32; 4],
    pub log_scale: [f32; 3],
    pub raw_opacity: f32,
    pub color_dc: [f32; 3],
}

impl Splat {
    /// Builds a splat, normalizing `rotation`.
    pub fn new(
        position: [f32; 3],
        rotation: [f32; 4],
        log_scale: [f32; 3],
        raw_opacity: f32,
        color_dc: [f32; 3],
    ) -> Self {
        Self {
            position,
            rotation: normalize_quaternion(rotation),
            log_scale,
            raw_opacity,
            color_dc,
        }
    }

    pub fn opacity(&self) -> f32 {
        sigmoid(self.raw_opacity)
    }

    pub fn scale(&self) -> [f32; 3] {
        self.log_scale.map(f32::exp)
    }

    pub fn rgb(&self) -> [f32; 3] {
        dc_to_rgb(self.color_dc)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance3d(self.rotation, self.log_scale)
    }
}

/// World-space covariance `R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
///
/// `rotation` is `(w, x, y, z)` and is expected to be normalized.
pub fn covariance3d(rotation: [f32; 4], log_scale: [f32; 3]) -> Matrix3<f64> {
    let [w, x, y, z] = rotation.map(f64::from);
    let r = UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)).to_rotation_matrix();
    let s = Matrix3::from_diagonal(&Vector3::from(log_scale.map(|v| (v as f64).exp())));
    let m = r.matrix() * s;
    let cov = m * m.transpose();
    // Symmetrize away rounding noise in the off-diagonal terms.
    (cov + cov.transpose()) * 0.5
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl Aabb {
    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|i| (self.min[i] as f64 + self.max[i] as f64) * 0.5)
    }

    pub fn diagonal(&self) -> f64 {
        (0..3)
            .map(|i| {
                let d = self.max[i] as f64 - self.min[i] as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, p: [f32; 3]) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("asset has no splats")]
pub struct EmptyAsset;

/// Per-axis min/max over all splat positions.
pub fn compute_bounds(splats: &[Splat]) -> Result<Aabb, EmptyAsset> {
    let first = splats.first().ok_or(EmptyAsset)?;
    let mut bounds = Aabb { min: first.position, max: first.position };
    for s in &splats[1..] {
        for i in 0..3 {
            bounds.min[i] = bounds.min[i].min(s.position[i]);
            bounds.max[i] = bounds.max[i].max(s.position[i]);
        }
    }
    Ok(bounds)
}

/// Content hash of an asset's serialized `.ply` bytes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssetId(String);

impl AssetId {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let mut hex = String::with_capacity(40);
        for b in &digest[..20] {
            hex.push_str(&format!("{b:02x}"));
        }
        AssetId(hex)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for AssetId {
    fn from(s: String) -> Self {
        AssetId(s)
    }
}

impl From<&str> for AssetId {
    fn from(s: &str) -> Self {
        AssetId(s.to_owned())
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Mock,
    Backend,
    File,
}

/// An immutable collection of splats, identified by the hash of its `.ply`
/// encoding.
#[derive(Debug, Clone)]
pub struct GaussianSplatAsset {
    id: AssetId,
    splats: Vec<Splat>,
    bounds: Option<Aabb>,
    provenance: Provenance,
}

impl GaussianSplatAsset {
    pub fn new(splats: Vec<Splat>, provenance: Provenance) -> Self {
        let splats: Vec<Splat> = splats
            .into_iter()
            .map(|s| Splat { rotation: normalize_quaternion(s.rotation), ..s })
            .collect();
        let bounds = compute_bounds(&splats).ok();
        let id = AssetId::of_bytes(&ply::encode(&splats));
        Self { id, splats, bounds, provenance }
    }

    pub fn id(&self) -> &AssetId {
        &self.id
    }

    pub fn splats(&self) -> &[Splat] {
        &self.splats
    }

    pub fn splat_count(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// `None` for an empty asset.
    pub fn bounds(&self) -> Option<Aabb> {
        self.bounds
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

/// Numeric equality: ids and provenance are not compared.
impl PartialEq for GaussianSplatAsset {
    fn eq(&self, other: &Self) -> bool {
        self.splats.len() == other.splats.len()
            && self
                .splats
                .iter()
                .zip(&other.splats)
                .all(|(a, b)| splat_bits(a) == splat_bits(b))
    }
}

fn splat_bits(s: &Splat) -> [u32; 14] {
    let mut out = [0u32; 14];
    let fields = s
        .position
        .iter()
        .chain(&s.rotation)
        .chain(&s.log_scale)
        .chain(std::iter::once(&s.raw_opacity))
        .chain(&s.color_dc);
    for (o, v) in out.iter_mut().zip(fields) {
        *o = v.to_bits();
    }
    out
}
