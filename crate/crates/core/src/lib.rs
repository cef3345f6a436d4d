//! Core of the shared splat space: splat assets and their `.ply` encoding,
//! the CPU rasterizer, the 2D-to-3D generation pipeline and the
//! server-authoritative session model.

pub mod pipeline;
pub mod render;
pub mod splat;
pub mod session;
pub mod store;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
