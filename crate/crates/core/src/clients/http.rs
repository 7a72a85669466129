use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::Semaphore;

use super::{
    ChatReply, ChatRequest, ChatResponse, ChatService, ClientError, RetryPolicy, SegmentRequest,
    SegmentResponse, SegmentService,
};

/// JSON POST with bearer auth, retries and a shared in-flight limit.
struct JsonPoster {
    client: reqwest::Client,
    url: String,
    api_key: Option<String>,
    policy: RetryPolicy,
    limiter: Arc<Semaphore>,
}

impl JsonPoster {
    fn new(
        endpoint: &str,
        path: &str,
        api_key: Option<String>,
        timeout: Duration,
        policy: RetryPolicy,
        limiter: Arc<Semaphore>,
    ) -> Result<Self, ClientError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}{}", endpoint.trim_end_matches('/'), path),
            api_key,
            policy,
            limiter,
        })
    }

    async fn post<B: Serialize + Sync, R: DeserializeOwned>(&self, body: &B) -> Result<R, ClientError> {
        self.policy.run(|| self.attempt(body)).await
    }

    async fn attempt<B: Serialize + Sync, R: DeserializeOwned>(&self, body: &B) -> Result<R, ClientError> {
        let _permit = self
            .limiter
            .acquire()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Service {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::InvalidResponse(e.to_string()))
    }
}

pub struct HttpChat {
    inner: JsonPoster,
}

impl HttpChat {
    pub fn new(
        endpoint: &str,
        api_key: Option<String>,
        timeout: Duration,
        policy: RetryPolicy,
        limiter: Arc<Semaphore>,
    ) -> Result<Self, ClientError> {
        Ok(Self {
            inner: JsonPoster::new(endpoint, "/v1/chat/completions", api_key, timeout, policy, limiter)?,
        })
    }
}

#[async_trait]
impl ChatService for HttpChat {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatReply, ClientError> {
        let resp: ChatResponse = self.inner.post(req).await?;
        ChatReply::from_response(resp)
    }
}

pub struct HttpSegment {
    inner: JsonPoster,
}

impl HttpSegment {
    pub fn new(
        endpoint: &str,
        api_key: Option<String>,
        timeout: Duration,
        policy: RetryPolicy,
        limiter: Arc<Semaphore>,
    ) -> Result<Self, ClientError> {
        Ok(Self {
            inner: JsonPoster::new(endpoint, "/v1/segment", api_key, timeout, policy, limiter)?,
        })
    }
}

#[async_trait]
impl SegmentService for HttpSegment {
    async fn segment(&self, req: &SegmentRequest) -> Result<SegmentResponse, ClientError> {
        self.inner.post(req).await
    }
}
