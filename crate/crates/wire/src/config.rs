use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splatspace_core::pipeline::PipelineConfig;
use splatspace_core::session::SessionSettings;

/// Server config file (TOML).
///
/// ```toml
/// listen = "127.0.0.1:7878"
/// snapshot_dir = "state"
/// resync_depth = 1024
/// queue_depth = 1024
/// lease_tick_ms = 1000
///
/// [session]
/// view_resolution = 256
/// orbit_frames = 36
///
/// [pipeline]
/// timeout_ms = 30000
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
    /// Where session snapshots are restored from at startup and written to
    /// on shutdown. No persistence when unset.
    pub snapshot_dir: Option<PathBuf>,
    /// Deltas retained per session for resync.
    pub resync_depth: usize,
    /// Frames queued per connection before it is dropped as too slow.
    pub queue_depth: usize,
    pub lease_tick_ms: u64,
    pub session: SessionSection,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    pub view_resolution: u32,
    pub orbit_frames: u32,
}

impl Default for SessionSection {
    fn default() -> Self {
        let s = SessionSettings::default();
        Self { view_resolution: s.view_resolution, orbit_frames: s.orbit_frames }
    }
}

impl From<SessionSection> for SessionSettings {
    fn from(s: SessionSection) -> Self {
        SessionSettings { view_resolution: s.view_resolution, orbit_frames: s.orbit_frames }
    }
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7878".into(),
            snapshot_dir: None,
            resync_depth: 1024,
            queue_depth: 1024,
            lease_tick_ms: 1000,
            session: SessionSection::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ServerConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.queue_depth == 0 {
            return bad("queue_depth must be positive");
        }
        if self.lease_tick_ms == 0 {
            return bad("lease_tick_ms must be positive");
        }
        let edge = splatspace_core::session::MAX_IMAGE_EDGE;
        if self.session.view_resolution == 0 || self.session.view_resolution > edge {
            return bad("session.view_resolution out of range");
        }
        if self.session.orbit_frames == 0 || self.session.orbit_frames > 360 {
            return bad("session.orbit_frames must lie in 1..=360");
        }
        self.pipeline.validate().map_err(ConfigError::Invalid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = ServerConfig::from_toml("").unwrap();
        assert_eq!(c, ServerConfig::default());
        let c = ServerConfig::from_toml("listen = \"0.0.0.0:1\"\n[session]\norbit_frames = 8\n[pipeline.mock]\nsplat_budget = 64\n").unwrap();
        assert_eq!(c.listen, "0.0.0.0:1");
        assert_eq!(c.session.orbit_frames, 8);
        assert_eq!(c.session.view_resolution, 256);
        assert_eq!(c.pipeline.mock.splat_budget, 64);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ServerConfig::from_toml("lissen = 1").is_err());
        assert!(ServerConfig::from_toml("queue_depth = 0").is_err());
        assert!(ServerConfig::from_toml("[session]\nview_resolution = 0").is_err());
    }
}
