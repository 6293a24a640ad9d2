use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::BackendError;

/// Retries transient failures (timeouts, rate limits) up to `budget` extra
/// attempts, with doubling backoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub budget: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            budget: 2,
            backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            budget: 0,
            backoff_ms: 0,
        }
    }

    pub fn immediate(budget: u32) -> Self {
        Self {
            budget,
            backoff_ms: 0,
        }
    }

    pub fn run<T>(
        &self,
        mut attempt: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut retries = 0;
        loop {
            match attempt() {
                Err(e) if e.is_retryable() && retries < self.budget => {
                    let delay = self.backoff_ms.saturating_mul(1 << retries.min(16));
                    tracing::debug!(error = %e, retries, "retrying backend call");
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                    retries += 1;
                }
                other => return other,
            }
        }
    }
}
