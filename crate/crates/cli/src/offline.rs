//! `render` and `views`: splat assets to PNG files without a server.

use std::path::{Path, PathBuf};

use splatspace_core::render::{self, encode_png, orbit_frames_with, view_camera, Camera, Exec, ViewSlot};
use splatspace_core::splat::{parse_ply, GaussianSplatAsset};

#[derive(Debug, thiserror::Error)]
pub enum OfflineError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Ply { path: PathBuf, source: splatspace_core::splat::PlyError },
    #[error("{0}")]
    Render(#[from] render::RenderError),
}

impl OfflineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            OfflineError::Usage(_) => crate::exit::USAGE,
            _ => crate::exit::FAILURE,
        }
    }
}

fn floats<const N: usize>(s: &str, what: &str) -> Result<[f64; N], OfflineError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(OfflineError::Usage(format!("{what} needs {N} comma-separated numbers, got {s:?}")));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| OfflineError::Usage(format!("{what}: {p:?} is not a number")))?;
    }
    Ok(out)
}

/// Parses `"px,py,pz;lx,ly,lz;fov;WxH"`; `fov` is the vertical field of
/// view in radians and up is `+y`.
pub fn parse_camera(text: &str) -> Result<Camera, OfflineError> {
    let parts: Vec<&str> = text.split(';').collect();
    let [position, look_at, fov, size] = parts[..] else {
        return Err(OfflineError::Usage(format!("camera must look like \"px,py,pz;lx,ly,lz;fov;WxH\", got {text:?}")));
    };
    let [fov] = floats::<1>(fov, "fov")?;
    let (w, h) = size
        .trim()
        .split_once(['x', 'X'])
        .and_then(|(w, h)| Some((w.parse::<u32>().ok()?, h.parse::<u32>().ok()?)))
        .ok_or_else(|| OfflineError::Usage(format!("image size must look like WxH, got {size:?}")))?;
    let camera = Camera::new(floats(position, "position")?, floats(look_at, "look_at")?, fov, w, h);
    camera.validate().map_err(|e| OfflineError::Usage(e.to_string()))?;
    Ok(camera)
}

/// Parses a `RRGGBB` hex color, with or without a leading `#`.
pub fn parse_color(s: &str) -> Result<[u8; 3], OfflineError> {
    let hex = s.strip_prefix('#').unwrap_or(s);
    let bad = || OfflineError::Usage(format!("color must be RRGGBB hex, got {s:?}"));
    if hex.len() != 6 || !hex.is_ascii() {
        return Err(bad());
    }
    let channel = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad());
    Ok([channel(0)?, channel(2)?, channel(4)?])
}

pub fn load_asset(path: &Path) -> Result<GaussianSplatAsset, OfflineError> {
    let bytes = std::fs::read(path).map_err(|source| OfflineError::Read { path: path.to_owned(), source })?;
    parse_ply(&bytes).map_err(|source| OfflineError::Ply { path: path.to_owned(), source })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), OfflineError> {
    std::fs::write(path, bytes).map_err(|source| OfflineError::Write { path: path.to_owned(), source })
}

/// Renders one snapshot to `out`, optionally writing the camera record to
/// `sidecar` as JSON.
pub fn render_cmd(ply: &Path, camera: &Camera, background: [u8; 3], out: &Path, sidecar: Option<&Path>) -> Result<(), OfflineError> {
    let asset = load_asset(ply)?;
    let image = render::render_with(&asset, camera, background, Exec::Sequential)?;
    write(out, &image.to_png())?;
    if let Some(path) = sidecar {
        write(path, &serde_json::to_vec_pretty(camera).expect("cameras serialize"))?;
    }
    Ok(())
}

pub fn orbit_file_name(index: u32) -> String {
    format!("orbit-{index:03}.png")
}

/// Writes `front.png`, `left.png`, `right.png`, `back.png` and
/// `frames` orbit frames into `dir`, returning the written paths.
pub fn views_cmd(ply: &Path, dir: &Path, frames: u32, resolution: u32) -> Result<Vec<PathBuf>, OfflineError> {
    if frames == 0 || resolution == 0 {
        return Err(OfflineError::Usage("frames and resolution must be at least 1".into()));
    }
    let asset = load_asset(ply)?;
    let bounds = asset.bounds().ok_or(render::RenderError::EmptyAsset)?;
    std::fs::create_dir_all(dir).map_err(|source| OfflineError::Write { path: dir.to_owned(), source })?;
    let mut written = Vec::new();
    for slot in ViewSlot::ALL {
        let image = render::render_with(&asset, &view_camera(&bounds, slot, resolution), [0, 0, 0], Exec::Sequential)?;
        let path = dir.join(format!("{}.png", slot.as_str()));
        write(&path, &image.to_png())?;
        written.push(path);
    }
    for (i, frame) in orbit_frames_with(&asset, frames, resolution, Exec::Sequential)?.iter().enumerate() {
        let path = dir.join(orbit_file_name(i as u32));
        write(&path, &encode_png(&frame.to_rgba_image()))?;
        written.push(path);
    }
    Ok(written)
}
