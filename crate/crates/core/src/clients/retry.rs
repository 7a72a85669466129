use std::future::Future;
use std::time::Duration;

use crate::config::PipelineConfig;

use super::ClientError;

/// `retries` further attempts after the first, sleeping `base * 2^k` before
/// the k-th retry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base: Duration::from_millis(1000),
        }
    }
}

impl RetryPolicy {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            retries: cfg.runtime.retries,
            base: Duration::from_millis(cfg.runtime.backoff_base_ms),
        }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        self.base.saturating_mul(1u32 << retry.min(16))
    }

    pub async fn run<T, F, Fut>(&self, mut attempt: F) -> Result<T, ClientError>
    where
        F: FnMut() -> Fut,
        Fut: Future<Output = Result<T, ClientError>>,
    {
        let mut tries = 0u32;
        loop {
            match attempt().await {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => {
                    if tries == self.retries {
                        return Err(ClientError::RetryExhausted {
                            attempts: tries + 1,
                            last: Box::new(e),
                        });
                    }
                    let wait = self.delay(tries);
                    tracing::debug!(error = %e, ?wait, "retrying");
                    tokio::time::sleep(wait).await;
                    tries += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn fast(retries: u32) -> RetryPolicy {
        RetryPolicy {
            retries,
            base: Duration::from_millis(1),
        }
    }

    #[test]
    fn delays_double() {
        let p = RetryPolicy::default();
        let d: Vec<_> = (0..3).map(|k| p.delay(k).as_millis()).collect();
        assert_eq!(d, [1000, 2000, 4000]);
    }

    #[tokio::test]
    async fn succeeds_after_transient_failures() {
        let n = AtomicU32::new(0);
        let out = fast(3)
            .run(|| async {
                if n.fetch_add(1, Ordering::SeqCst) < 3 {
                    Err(ClientError::Service { status: 429, body: String::new() })
                } else {
                    Ok(7)
                }
            })
            .await
            .unwrap();
        assert_eq!(out, 7);
        assert_eq!(n.load(Ordering::SeqCst), 4);
    }

    #[tokio::test]
    async fn exhausts_and_skips_client_errors() {
        let n = AtomicU32::new(0);
        let err = fast(2)
            .run(|| async {
                n.fetch_add(1, Ordering::SeqCst);
                Err::<(), _>(ClientError::Service { status: 500, body: String::new() })
            })
            .await
            .unwrap_err();
        assert!(matches!(err, ClientError::RetryExhausted { attempts: 3, .. }));
        assert_eq!(n.load(Ordering::SeqCst), 3);

        let n = AtomicU32::new(0);
        let err = fast(3)
            .run(|| async {
                n.fetch_add(1, Ordering::SeqCst);
                Err::<(), _>(ClientError::Service { status: 400, body: String::new() })
            })
            .await
            .unwrap_err();
        assert!(matches!(err, ClientError::Service { status: 400, .. }));
        assert_eq!(n.load(Ordering::SeqCst), 1);
    }
}
