use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::fixtures::{FixtureBackend, FixtureStore};
use super::http::{HttpBackend, HttpSettings};
use super::protocol::DEFAULT_MAX_SIDE;
use super::{Backends, Capability, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    #[default]
    Live,
    Replay,
    Record,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{capability} backend: {message}")]
pub struct ConfigError {
    pub capability: Capability,
    pub message: String,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_retries() -> u32 {
    2
}

fn default_backoff() -> u64 {
    500
}

fn default_max_side() -> u32 {
    DEFAULT_MAX_SIDE
}

/// How to reach one capability. Tokens are never stored here, only the
/// name of the environment variable that holds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
    #[serde(default)]
    pub mode: BackendMode,
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default = "default_max_side")]
    pub max_side: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            token_env: None,
            model: None,
            timeout_secs: default_timeout(),
            retries: default_retries(),
            retry_backoff_ms: default_backoff(),
            mode: BackendMode::Live,
            fixtures: None,
            max_side: default_max_side(),
        }
    }
}

impl BackendConfig {
    pub fn replay(fixtures: impl Into<PathBuf>) -> Self {
        Self {
            mode: BackendMode::Replay,
            fixtures: Some(fixtures.into()),
            ..Self::default()
        }
    }

    pub fn live(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: Some(endpoint.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self, capability: Capability) -> Result<(), ConfigError> {
        let fail = |message: &str| {
            Err(ConfigError {
                capability,
                message: message.to_string(),
            })
        };
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return fail("timeout_secs must be positive");
        }
        if self.max_side == 0 {
            return fail("max_side must be positive");
        }
        match self.mode {
            BackendMode::Live if self.endpoint.is_none() => fail("live mode requires an endpoint"),
            BackendMode::Replay if self.fixtures.is_none() => {
                fail("replay mode requires a fixture directory")
            }
            BackendMode::Record if self.endpoint.is_none() || self.fixtures.is_none() => {
                fail("record mode requires an endpoint and a fixture directory")
            }
            _ => Ok(()),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            budget: self.retries,
            backoff_ms: self.retry_backoff_ms,
        }
    }

    fn http(&self) -> HttpBackend {
        HttpBackend::new(HttpSettings {
            endpoint: self.endpoint.clone().unwrap_or_default(),
            token_env: self.token_env.clone(),
            model: self.model.clone().unwrap_or_else(|| "default".into()),
            timeout: Duration::from_secs_f64(self.timeout_secs),
            max_side: self.max_side,
        })
    }

    fn build(&self, capability: Capability) -> Result<Built, ConfigError> {
        self.validate(capability)?;
        let store = || FixtureStore::new(self.fixtures.clone().unwrap_or_default());
        Ok(match self.mode {
            BackendMode::Live => Built::Http(Arc::new(self.http())),
            BackendMode::Replay => Built::Fixture(Arc::new(FixtureBackend::replay(store()))),
            BackendMode::Record => {
                Built::Fixture(Arc::new(FixtureBackend::record(store(), self.http())))
            }
        })
    }
}

enum Built {
    Http(Arc<HttpBackend>),
    Fixture(Arc<FixtureBackend<HttpBackend>>),
}

macro_rules! coerce {
    ($built:expr, $trait:path) => {
        match $built {
            Built::Http(b) => b as Arc<dyn $trait>,
            Built::Fixture(b) => b as Arc<dyn $trait>,
        }
    };
}

/// Per-capability backend configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    #[serde(default)]
    pub chat: Option<BackendConfig>,
    #[serde(default)]
    pub edit: Option<BackendConfig>,
    #[serde(default)]
    pub detect: Option<BackendConfig>,
    #[serde(default)]
    pub segment: Option<BackendConfig>,
}

impl BackendsConfig {
    /// The same replay directory for every capability.
    pub fn replay_all(fixtures: impl Into<PathBuf>) -> Self {
        let cfg = BackendConfig::replay(fixtures);
        Self {
            chat: Some(cfg.clone()),
            edit: Some(cfg.clone()),
            detect: Some(cfg.clone()),
            segment: Some(cfg),
        }
    }

    pub fn get(&self, capability: Capability) -> Option<&BackendConfig> {
        match capability {
            Capability::Chat => self.chat.as_ref(),
            Capability::Edit => self.edit.as_ref(),
            Capability::Detect => self.detect.as_ref(),
            Capability::Segment => self.segment.as_ref(),
        }
    }

    pub fn get_mut(&mut self, capability: Capability) -> Option<&mut BackendConfig> {
        match capability {
            Capability::Chat => self.chat.as_mut(),
            Capability::Edit => self.edit.as_mut(),
            Capability::Detect => self.detect.as_mut(),
            Capability::Segment => self.segment.as_mut(),
        }
    }

    /// Builds the configured subset of `wanted` capabilities.
    pub fn build(&self, wanted: &[Capability]) -> Result<Backends, ConfigError> {
        let mut backends = Backends::new();
        for &capability in wanted {
            let Some(cfg) = self.get(capability) else {
                continue;
            };
            let built = cfg.build(capability)?;
            let retry = cfg.retry_policy();
            backends = match capability {
                Capability::Chat => backends.with_chat(coerce!(built, super::ChatBackend), retry),
                Capability::Edit => backends.with_edit(coerce!(built, super::EditBackend), retry),
                Capability::Detect => {
                    backends.with_detect(coerce!(built, super::DetectBackend), retry)
                }
                Capability::Segment => {
                    backends.with_segment(coerce!(built, super::SegmentBackend), retry)
                }
            };
        }
        Ok(backends)
    }
}
