use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, HttpBackend, MockBackend};

/// Knobs of the deterministic mock backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    /// Region-growing threshold: Euclidean RGB distance in 0..255 units.
    pub threshold: f32,
    /// Upper bound on the number of splats the billboard mock emits.
    pub splat_budget: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self { threshold: 30.0, splat_budget: 4096 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageBackendConfig {
    #[default]
    Mock,
    Http {
        endpoint: String,
    },
}

/// Pipeline section of the server config file.
///
/// ```toml
/// [pipeline]
/// timeout_ms = 30000
/// retries = 1
///
/// [pipeline.mock]
/// threshold = 30.0
/// splat_budget = 4096
///
/// [pipeline.segment]
/// backend = "http"
/// endpoint = "http://127.0.0.1:5000"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub segment: StageBackendConfig,
    pub multiview: StageBackendConfig,
    pub gaussian: StageBackendConfig,
    /// Per-call timeout for every backend stage.
    pub timeout_ms: u64,
    /// Extra attempts after a failed or timed-out call.
    pub retries: u32,
    pub mock: MockConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segment: StageBackendConfig::Mock,
            multiview: StageBackendConfig::Mock,
            gaussian: StageBackendConfig::Mock,
            timeout_ms: 30_000,
            retries: 1,
            mock: MockConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.mock.splat_budget < 2 {
            return Err("pipeline.mock.splat_budget must be at least 2".into());
        }
        if !(self.mock.threshold >= 0.0) {
            return Err("pipeline.mock.threshold must be non-negative".into());
        }
        if self.timeout_ms == 0 {
            return Err("pipeline.timeout_ms must be positive".into());
        }
        Ok(())
    }

    fn build(&self, stage: &StageBackendConfig) -> Arc<dyn Backend> {
        match stage {
            StageBackendConfig::Mock => Arc::new(MockBackend::new(self.mock.clone())),
            StageBackendConfig::Http { endpoint } => Arc::new(HttpBackend::new(endpoint, self.timeout())),
        }
    }

    pub fn backends(&self) -> StageBackends {
        StageBackends {
            segment: self.build(&self.segment),
            multiview: self.build(&self.multiview),
            gaussian: self.build(&self.gaussian),
        }
    }
}

/// One backend per stage.
#[derive(Clone)]
pub struct StageBackends {
    pub segment: Arc<dyn Backend>,
    pub multiview: Arc<dyn Backend>,
    pub gaussian: Arc<dyn Backend>,
}

impl StageBackends {
    pub fn uniform(backend: Arc<dyn Backend>) -> Self {
        Self { segment: backend.clone(), multiview: backend.clone(), gaussian: backend }
    }
}
