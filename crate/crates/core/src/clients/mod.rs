//! Transport to the remote agents: the chat protocol for describers and the
//! translator, the segmentation protocol for the segmenter, and in-process
//! mock backends speaking the same types.

mod http;
pub mod mock;
mod retry;
pub mod server;

use std::collections::HashMap;
use std::sync::Arc;

use async_trait::async_trait;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::dataset::{self, FrameImage};
use crate::model::{AgentKind, BinaryMask, Description, TokenUsage};
use crate::prompt::{media_prompt, AssembledRequest, PromptError};

pub use http::{HttpChat, HttpSegment};
pub use mock::{CallCounts, MockBackend, MockMode};
pub use retry::RetryPolicy;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("service returned {status}: {body}")]
    Service { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetryExhausted { attempts: u32, last: Box<ClientError> },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("no scripted reply for digest {0}")]
    UnknownFixture(String),
    #[error("mask for `{phrase}` is {found:?}, frame is {expected:?}")]
    MaskShapeMismatch {
        phrase: String,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl ClientError {
    /// Timeouts, connection failures, 429 and 5xx are worth another try.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Service { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

/// A describer failure tagged with the call that produced it.
#[derive(Debug, Error)]
#[error("{kind} call for frame {frame_index} (model {model_id}, variant {variant}) failed: {source}")]
pub struct CallError {
    pub frame_index: usize,
    pub kind: AgentKind,
    pub model_id: String,
    pub variant: usize,
    #[source]
    pub source: ClientError,
}

// ---- chat protocol ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
    InputAudio { input_audio: InputAudio },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputAudio {
    pub data: String,
    pub format: String,
}

impl ContentPart {
    pub fn text(t: impl Into<String>) -> Self {
        ContentPart::Text { text: t.into() }
    }

    pub fn png(bytes: &[u8]) -> Self {
        ContentPart::ImageUrl {
            image_url: ImageUrl {
                url: format!("data:image/png;base64,{}", B64.encode(bytes)),
            },
        }
    }

    pub fn wav(bytes: &[u8]) -> Self {
        ContentPart::InputAudio {
            input_audio: InputAudio {
                data: B64.encode(bytes),
                format: "wav".to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MessageContent {
    Text(String),
    Parts(Vec<ContentPart>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: MessageContent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    /// Always zero; serialized as the integer `0`.
    pub temperature: u8,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(model: &str, system: &str, user_parts: Vec<ContentPart>) -> Self {
        Self {
            model: model.to_string(),
            temperature: 0,
            messages: vec![
                ChatMessage {
                    role: "system".to_string(),
                    content: MessageContent::Text(system.to_string()),
                },
                ChatMessage {
                    role: "user".to_string(),
                    content: MessageContent::Parts(user_parts),
                },
            ],
        }
    }

    pub fn system_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == "system")
            .map(|m| match &m.content {
                MessageContent::Text(t) => t.clone(),
                MessageContent::Parts(parts) => parts_text(parts),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn user_parts(&self) -> Vec<ContentPart> {
        self.messages
            .iter()
            .filter(|m| m.role == "user")
            .flat_map(|m| match &m.content {
                MessageContent::Text(t) => vec![ContentPart::text(t.clone())],
                MessageContent::Parts(p) => p.clone(),
            })
            .collect()
    }

    pub fn user_text(&self) -> String {
        parts_text(&self.user_parts())
    }

    /// Characters of text content, for usage estimation.
    pub fn text_chars(&self) -> usize {
        self.system_text().chars().count() + self.user_text().chars().count()
    }
}

fn parts_text(parts: &[ContentPart]) -> String {
    parts
        .iter()
        .filter_map(|p| match p {
            ContentPart::Text { text } => Some(text.as_str()),
            _ => None,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
    #[serde(default)]
    pub usage: Option<WireUsage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ChoiceMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceMessage {
    #[serde(default)]
    pub role: Option<String>,
    #[serde(default)]
    pub content: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl ChatResponse {
    pub fn from_text(content: &str, usage: Option<WireUsage>) -> Self {
        Self {
            choices: vec![ChatChoice {
                message: ChoiceMessage {
                    role: Some("assistant".to_string()),
                    content: Some(content.to_string()),
                },
            }],
            usage,
        }
    }
}

/// Reply text plus the usage the service reported, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub content: String,
    pub usage: Option<WireUsage>,
}

impl ChatReply {
    pub fn from_response(resp: ChatResponse) -> Result<Self, ClientError> {
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ClientError::InvalidResponse("no choices".to_string()))?;
        Ok(Self {
            content: choice.message.content.unwrap_or_default(),
            usage: resp.usage,
        })
    }

    /// Reported usage, or `ceil(chars / 4)` estimates flagged as such.
    pub fn token_usage(&self, req: &ChatRequest) -> TokenUsage {
        match self.usage {
            Some(u) => TokenUsage::new(&req.model, u.prompt_tokens, u.completion_tokens),
            None => TokenUsage {
                prompt_tokens: req.text_chars().div_ceil(4) as u64,
                completion_tokens: self.content.chars().count().div_ceil(4) as u64,
                model_id: req.model.clone(),
                estimated: true,
            },
        }
    }
}

#[async_trait]
pub trait ChatService: Send + Sync {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatReply, ClientError>;
}

// ---- segmentation protocol ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image_png_b64: String,
    pub phrases: Vec<String>,
    pub box_threshold: f64,
    pub text_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub phrase: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub mask_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub detections: Vec<WireDetection>,
}

#[async_trait]
pub trait SegmentService: Send + Sync {
    async fn segment(&self, req: &SegmentRequest) -> Result<SegmentResponse, ClientError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub phrase: String,
    pub score: f64,
    pub bbox: [f64; 4],
    pub mask: BinaryMask,
}

/// Media handed to a describer.
#[derive(Debug, Clone, Copy, Default)]
pub struct Media<'a> {
    pub image: Option<&'a FrameImage>,
    pub audio: Option<&'a [u8]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentThresholds {
    pub box_threshold: f64,
    pub text_threshold: f64,
    pub detection_score: f64,
}

/// One chat service per agent kind plus the segmenter.
#[derive(Clone)]
pub struct AgentClients {
    chat: HashMap<AgentKind, Arc<dyn ChatService>>,
    segmenter: Arc<dyn SegmentService>,
    thresholds: SegmentThresholds,
}

impl AgentClients {
    pub fn new(
        chat: HashMap<AgentKind, Arc<dyn ChatService>>,
        segmenter: Arc<dyn SegmentService>,
        thresholds: SegmentThresholds,
    ) -> Self {
        Self {
            chat,
            segmenter,
            thresholds,
        }
    }

    /// Same chat service behind every chat agent.
    pub fn uniform(
        chat: Arc<dyn ChatService>,
        segmenter: Arc<dyn SegmentService>,
        thresholds: SegmentThresholds,
    ) -> Self {
        let chat = [
            AgentKind::AudioDescriber,
            AgentKind::VisualDescriber,
            AgentKind::MultimodalDescriber,
            AgentKind::Translator,
        ]
        .into_iter()
        .map(|k| (k, chat.clone()))
        .collect();
        Self::new(chat, segmenter, thresholds)
    }

    /// Clients for every endpoint in the config. `mock://derived` and
    /// `mock://scripted?fixtures=<path>` endpoints share `mock`, or a fresh
    /// backend when none is given.
    pub fn from_config(
        cfg: &PipelineConfig,
        mock: Option<Arc<MockBackend>>,
    ) -> Result<Self, ClientError> {
        let policy = RetryPolicy::from_config(cfg);
        let api_key = std::env::var(crate::config::API_KEY_ENV).ok();
        let mut http_pool: HashMap<String, (Arc<HttpChat>, Arc<HttpSegment>)> = HashMap::new();
        let mut shared_mock = mock;
        let mut get = |url: &str| -> Result<Endpoint, ClientError> {
            if let Some(rest) = url.strip_prefix("mock://") {
                let backend = match &shared_mock {
                    Some(b) => b.clone(),
                    None => {
                        let b = Arc::new(MockBackend::from_spec(rest)?);
                        shared_mock = Some(b.clone());
                        b
                    }
                };
                return Ok(Endpoint::Mock(backend));
            }
            let entry = match http_pool.get(url) {
                Some(e) => e.clone(),
                None => {
                    let limiter = Arc::new(tokio::sync::Semaphore::new(cfg.runtime.max_inflight));
                    let chat = Arc::new(HttpChat::new(
                        url,
                        api_key.clone(),
                        cfg.timeout(),
                        policy,
                        limiter.clone(),
                    )?);
                    let seg = Arc::new(HttpSegment::new(
                        url,
                        api_key.clone(),
                        cfg.timeout(),
                        policy,
                        limiter,
                    )?);
                    http_pool.insert(url.to_string(), (chat.clone(), seg.clone()));
                    (chat, seg)
                }
            };
            Ok(Endpoint::Http(entry.0, entry.1))
        };
        let mut chat: HashMap<AgentKind, Arc<dyn ChatService>> = HashMap::new();
        for kind in [
            AgentKind::AudioDescriber,
            AgentKind::VisualDescriber,
            AgentKind::MultimodalDescriber,
            AgentKind::Translator,
        ] {
            let service: Arc<dyn ChatService> = match get(cfg.endpoints.for_kind(kind))? {
                Endpoint::Mock(b) => b,
                Endpoint::Http(c, _) => c,
            };
            chat.insert(kind, service);
        }
        let segmenter: Arc<dyn SegmentService> = match get(&cfg.endpoints.segmenter)? {
            Endpoint::Mock(b) => b,
            Endpoint::Http(_, s) => s,
        };
        Ok(Self::new(
            chat,
            segmenter,
            SegmentThresholds {
                box_threshold: cfg.thresholds.box_threshold,
                text_threshold: cfg.thresholds.text_threshold,
                detection_score: cfg.thresholds.detection_score,
            },
        ))
    }

    fn chat_for(&self, kind: AgentKind) -> Result<&Arc<dyn ChatService>, ClientError> {
        self.chat
            .get(&kind)
            .ok_or_else(|| ClientError::InvalidRequest(format!("no endpoint for {kind}")))
    }

    /// One describer call: empty system prompt, the catalog prompt as text,
    /// then the media parts the kind consumes.
    pub async fn describe(
        &self,
        video_id: &str,
        frame_index: usize,
        kind: AgentKind,
        model_id: &str,
        variant: usize,
        media: Media<'_>,
    ) -> Result<(Description, TokenUsage), CallError> {
        let tag = |source: ClientError| CallError {
            frame_index,
            kind,
            model_id: model_id.to_string(),
            variant,
            source,
        };
        let prompt = media_prompt(kind, variant).map_err(|e| tag(e.into()))?;
        let mut parts = vec![ContentPart::text(prompt)];
        let missing = |what: &str| tag(ClientError::InvalidRequest(format!("{kind} needs {what}")));
        if matches!(kind, AgentKind::VisualDescriber | AgentKind::MultimodalDescriber) {
            let image = media.image.ok_or_else(|| missing("an image"))?;
            parts.push(ContentPart::png(&image.png));
        }
        if matches!(kind, AgentKind::AudioDescriber | AgentKind::MultimodalDescriber) {
            let audio = media.audio.ok_or_else(|| missing("an audio segment"))?;
            parts.push(ContentPart::wav(audio));
        }
        let req = ChatRequest::new(model_id, "", parts);
        let service = self.chat_for(kind).map_err(tag)?;
        let reply = service.complete(&req).await.map_err(tag)?;
        let usage = reply.token_usage(&req);
        let d = Description::new(video_id, frame_index, kind, model_id, variant, &reply.content);
        Ok((d, usage))
    }

    pub fn translator_request(request: &AssembledRequest, model_id: &str) -> ChatRequest {
        ChatRequest::new(
            model_id,
            &request.system_prompt,
            vec![ContentPart::text(request.user_input.clone())],
        )
    }

    /// Sends an assembled request to the translator; the reply is returned raw.
    pub async fn translate(
        &self,
        request: &AssembledRequest,
        model_id: &str,
    ) -> Result<(String, TokenUsage), ClientError> {
        if request.user_input.trim().is_empty() {
            return Err(ClientError::InvalidRequest("empty user input".to_string()));
        }
        let req = Self::translator_request(request, model_id);
        let reply = self.chat_for(AgentKind::Translator)?.complete(&req).await?;
        let usage = reply.token_usage(&req);
        Ok((reply.content, usage))
    }

    /// Detections for `phrases` on `frame`, filtered by the score threshold,
    /// in service order.
    pub async fn segment(
        &self,
        frame: &FrameImage,
        phrases: &[String],
    ) -> Result<Vec<Detection>, ClientError> {
        if phrases.is_empty() {
            return Err(ClientError::InvalidRequest("no phrases".to_string()));
        }
        let req = SegmentRequest {
            image_png_b64: B64.encode(&frame.png),
            phrases: phrases.to_vec(),
            box_threshold: self.thresholds.box_threshold,
            text_threshold: self.thresholds.text_threshold,
        };
        let resp = self.segmenter.segment(&req).await?;
        let mut out = Vec::new();
        for d in resp.detections {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(ClientError::InvalidResponse(format!(
                    "score {} outside [0, 1]",
                    d.score
                )));
            }
            let [x0, y0, x1, y1] = d.bbox;
            if x0 > x1 || y0 > y1 {
                return Err(ClientError::InvalidResponse(format!("malformed box {:?}", d.bbox)));
            }
            if d.score < self.thresholds.detection_score {
                continue;
            }
            let bytes = B64
                .decode(&d.mask_png_b64)
                .map_err(|e| ClientError::InvalidResponse(format!("mask base64: {e}")))?;
            let mask = dataset::mask_from_png(&bytes, "<mask>")
                .map_err(|e| ClientError::InvalidResponse(e.to_string()))?;
            if mask.dims() != frame.dims() {
                return Err(ClientError::MaskShapeMismatch {
                    phrase: d.phrase,
                    expected: frame.dims(),
                    found: mask.dims(),
                });
            }
            out.push(Detection {
                phrase: d.phrase,
                score: d.score,
                bbox: d.bbox,
                mask,
            });
        }
        Ok(out)
    }
}

enum Endpoint {
    Mock(Arc<MockBackend>),
    Http(Arc<HttpChat>, Arc<HttpSegment>),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_request_wire_shape() {
        let req = ChatRequest::new(
            "pengi",
            "",
            vec![ContentPart::text("Generate audio caption"), ContentPart::wav(b"RIFF")],
        );
        let json = serde_json::to_value(&req).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "model": "pengi",
                "temperature": 0,
                "messages": [
                    {"role": "system", "content": ""},
                    {"role": "user", "content": [
                        {"type": "text", "text": "Generate audio caption"},
                        {"type": "input_audio", "input_audio": {"data": "UklGRg==", "format": "wav"}}
                    ]}
                ]
            })
        );
        let img = ContentPart::png(&[1, 2, 3]);
        assert_eq!(
            serde_json::to_value(&img).unwrap(),
            serde_json::json!({"type": "image_url", "image_url": {"url": "data:image/png;base64,AQID"}})
        );
    }

    #[test]
    fn usage_pass_through_and_estimate() {
        let req = ChatRequest::new("gpt-4o-mini", "abcd", vec![ContentPart::text("efghi")]);
        let reply = ChatReply {
            content: "x".into(),
            usage: Some(WireUsage {
                prompt_tokens: 1200,
                completion_tokens: 40,
            }),
        };
        assert_eq!(reply.token_usage(&req), TokenUsage::new("gpt-4o-mini", 1200, 40));
        let reply = ChatReply {
            content: "hello".into(),
            usage: None,
        };
        let u = reply.token_usage(&req);
        assert_eq!((u.prompt_tokens, u.completion_tokens, u.estimated), (3, 2, true));
    }

    #[test]
    fn response_parsing() {
        let resp: ChatResponse = serde_json::from_str(
            r#"{"choices":[{"message":{"role":"assistant","content":"<answer>engine</answer>"}}],"usage":{"prompt_tokens":5,"completion_tokens":2,"total_tokens":7}}"#,
        )
        .unwrap();
        let reply = ChatReply::from_response(resp).unwrap();
        assert_eq!(reply.content, "<answer>engine</answer>");
        let empty: ChatResponse = serde_json::from_str(r#"{"choices":[]}"#).unwrap();
        assert!(ChatReply::from_response(empty).is_err());
    }

    #[test]
    fn retryable_classification() {
        let s = |status| ClientError::Service {
            status,
            body: String::new(),
        };
        assert!(s(429).is_retryable());
        assert!(s(503).is_retryable());
        assert!(!s(400).is_retryable());
        assert!(!s(404).is_retryable());
        assert!(ClientError::Transport("timeout".into()).is_retryable());
    }
}
