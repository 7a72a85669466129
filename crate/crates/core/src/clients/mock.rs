//! Deterministic stand-ins for the remote agents.
//!
//! Every reply is a pure function of the request content. The digest of a
//! chat request is SHA-256 over the system text followed by each user part
//! payload (text, image data URL, or base64 audio), each preceded by a NUL
//! byte.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset;
use crate::model::{AgentKind, BinaryMask};
use crate::prompt::parse_user_input;

use super::{
    ChatReply, ChatRequest, ChatResponse, ChatService, ClientError, ContentPart, SegmentRequest,
    SegmentResponse, SegmentService, WireDetection, WireUsage,
};

pub const MOCK_SCORE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub enum MockMode {
    Derived,
    /// Replies looked up by request digest (lowercase hex).
    Scripted(HashMap<String, String>),
}

/// Per-kind request counters.
#[derive(Debug, Default)]
pub struct CallCounts {
    audio: AtomicUsize,
    visual: AtomicUsize,
    multimodal: AtomicUsize,
    translator: AtomicUsize,
    segmenter: AtomicUsize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSnapshot {
    pub audio: usize,
    pub visual: usize,
    pub multimodal: usize,
    pub translator: usize,
    pub segmenter: usize,
}

impl CallSnapshot {
    pub fn describers(&self) -> usize {
        self.audio + self.visual + self.multimodal
    }
}

impl CallCounts {
    fn slot(&self, kind: AgentKind) -> &AtomicUsize {
        match kind {
            AgentKind::AudioDescriber => &self.audio,
            AgentKind::VisualDescriber => &self.visual,
            AgentKind::MultimodalDescriber => &self.multimodal,
            AgentKind::Translator => &self.translator,
            AgentKind::Segmenter => &self.segmenter,
        }
    }

    pub fn bump(&self, kind: AgentKind) {
        self.slot(kind).fetch_add(1, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> CallSnapshot {
        CallSnapshot {
            audio: self.audio.load(Ordering::SeqCst),
            visual: self.visual.load(Ordering::SeqCst),
            multimodal: self.multimodal.load(Ordering::SeqCst),
            translator: self.translator.load(Ordering::SeqCst),
            segmenter: self.segmenter.load(Ordering::SeqCst),
        }
    }
}

#[derive(Debug)]
pub struct MockBackend {
    mode: MockMode,
    counts: CallCounts,
}

impl MockBackend {
    pub fn derived() -> Self {
        Self::new(MockMode::Derived)
    }

    pub fn new(mode: MockMode) -> Self {
        Self {
            mode,
            counts: CallCounts::default(),
        }
    }

    pub fn scripted_from_file(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::InvalidRequest(format!("{}: {e}", path.display())))?;
        let map: HashMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| ClientError::InvalidRequest(format!("{}: {e}", path.display())))?;
        Ok(Self::new(MockMode::Scripted(map)))
    }

    /// `derived` or `scripted?fixtures=<path>`, the part after `mock://`.
    pub fn from_spec(spec: &str) -> Result<Self, ClientError> {
        if spec == "derived" {
            return Ok(Self::derived());
        }
        if let Some(path) = spec.strip_prefix("scripted?fixtures=") {
            return Self::scripted_from_file(Path::new(path));
        }
        Err(ClientError::InvalidRequest(format!("unknown mock endpoint `mock://{spec}`")))
    }

    pub fn counts(&self) -> CallSnapshot {
        self.counts.snapshot()
    }

    pub fn mode(&self) -> &MockMode {
        &self.mode
    }

    /// Answers a chat request and counts it under the kind it looks like.
    pub fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ClientError> {
        self.counts.bump(classify(req));
        let content = match &self.mode {
            MockMode::Derived => derived_reply(req),
            MockMode::Scripted(map) => {
                let d = request_digest(req);
                map.get(&d).cloned().ok_or(ClientError::UnknownFixture(d))?
            }
        };
        let usage = WireUsage {
            prompt_tokens: req.text_chars().div_ceil(4) as u64,
            completion_tokens: content.chars().count().div_ceil(4) as u64,
        };
        Ok(ChatResponse::from_text(&content, Some(usage)))
    }

    pub fn segment_request(&self, req: &SegmentRequest) -> Result<SegmentResponse, ClientError> {
        self.counts.bump(AgentKind::Segmenter);
        let png = B64
            .decode(&req.image_png_b64)
            .map_err(|e| ClientError::InvalidRequest(format!("image base64: {e}")))?;
        let (h, w) = dataset::png_dims(&png).map_err(|e| ClientError::InvalidRequest(e.to_string()))?;
        let detections = req
            .phrases
            .iter()
            .map(|p| {
                let (mask, bbox) = phrase_rectangle(p, h, w);
                WireDetection {
                    phrase: p.clone(),
                    score: MOCK_SCORE,
                    bbox: bbox.map(f64::from),
                    mask_png_b64: B64.encode(dataset::mask_to_png(&mask)),
                }
            })
            .collect();
        Ok(SegmentResponse { detections })
    }
}

#[async_trait]
impl ChatService for MockBackend {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatReply, ClientError> {
        ChatReply::from_response(self.chat(req)?)
    }
}

#[async_trait]
impl SegmentService for MockBackend {
    async fn segment(&self, req: &SegmentRequest) -> Result<SegmentResponse, ClientError> {
        self.segment_request(req)
    }
}

fn classify(req: &ChatRequest) -> AgentKind {
    if !req.system_text().is_empty() {
        return AgentKind::Translator;
    }
    let parts = req.user_parts();
    let image = parts.iter().any(|p| matches!(p, ContentPart::ImageUrl { .. }));
    let audio = parts.iter().any(|p| matches!(p, ContentPart::InputAudio { .. }));
    match (image, audio) {
        (true, true) => AgentKind::MultimodalDescriber,
        (true, false) => AgentKind::VisualDescriber,
        _ => AgentKind::AudioDescriber,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha_hex(chunks: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for (i, c) in chunks.iter().enumerate() {
        if i > 0 {
            h.update([0u8]);
        }
        h.update(c);
    }
    hex(&h.finalize())
}

fn part_payload(p: &ContentPart) -> &str {
    match p {
        ContentPart::Text { text } => text,
        ContentPart::ImageUrl { image_url } => &image_url.url,
        ContentPart::InputAudio { input_audio } => &input_audio.data,
    }
}

pub fn request_digest(req: &ChatRequest) -> String {
    let system = req.system_text();
    let parts = req.user_parts();
    let mut chunks: Vec<&[u8]> = vec![system.as_bytes()];
    chunks.extend(parts.iter().map(|p| part_payload(p).as_bytes()));
    sha_hex(&chunks)
}

/// Describers answer `sound of object-<h>`; the translator answers one
/// `<answer>` span per frame block, or a single final span when the input
/// carries no frame blocks.
pub fn derived_reply(req: &ChatRequest) -> String {
    let system = req.system_text();
    let digest = request_digest(req);
    if system.is_empty() {
        return format!("sound of object-{}", &digest[..4]);
    }
    let frames = parse_user_input(&req.user_text());
    if frames.is_empty() {
        return format!(
            "Both agents describe the same source.\n<answer>object-{}</answer>",
            &digest[..4]
        );
    }
    frames
        .iter()
        .map(|texts| {
            let block = texts.join("\n");
            let h = sha_hex(&[system.as_bytes(), block.as_bytes()]);
            format!("<answer>object-{}</answer>", &h[..4])
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Rectangle for `phrase` on an `h x w` frame and its `[x0, y0, x1, y1]` box.
pub fn phrase_rectangle(phrase: &str, h: u32, w: u32) -> (BinaryMask, [u32; 4]) {
    let d = Sha256::digest(phrase.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&d[..8]);
    let v = u64::from_be_bytes(head);
    let x0 = (v % u64::from((w / 2).max(1))) as u32;
    let y0 = ((v >> 16) % u64::from((h / 2).max(1))) as u32;
    let x1 = (x0 + (w / 4).max(1)).min(w);
    let y1 = (y0 + (h / 4).max(1)).min(h);
    let mut mask = BinaryMask::zeros(h, w);
    for y in y0..y1 {
        for x in x0..x1 {
            mask.set(y, x, true);
        }
    }
    (mask, [x0, y0, x1, y1])
}

/// Scripted fixture map for a set of requests answered by `reply`.
pub fn script_for<'a>(
    requests: impl IntoIterator<Item = (&'a ChatRequest, String)>,
) -> BTreeMap<String, String> {
    requests
        .into_iter()
        .map(|(r, reply)| (request_digest(r), reply))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::answer_spans;

    #[test]
    fn derived_translator_one_span_per_frame() {
        let user = (0..5)
            .map(|i| format!("<frame{i}>\n sound of {i}\n</frame{i}>"))
            .collect::<Vec<_>>()
            .join("\n");
        let req = ChatRequest::new("gpt-4o-mini", "system", vec![ContentPart::text(user)]);
        let reply = derived_reply(&req);
        assert_eq!(answer_spans(&reply).len(), 5);
        assert_eq!(reply, derived_reply(&req));
    }

    #[test]
    fn digest_is_sensitive_to_every_part() {
        let a = ChatRequest::new("m", "", vec![ContentPart::text("x"), ContentPart::wav(b"1")]);
        let b = ChatRequest::new("m", "", vec![ContentPart::text("x"), ContentPart::wav(b"2")]);
        let c = ChatRequest::new("other", "", vec![ContentPart::text("x"), ContentPart::wav(b"1")]);
        assert_ne!(request_digest(&a), request_digest(&b));
        assert_eq!(request_digest(&a), request_digest(&c));
        assert_eq!(request_digest(&a).len(), 64);
    }

    #[test]
    fn scripted_miss_reports_digest() {
        let req = ChatRequest::new("m", "", vec![ContentPart::text("x")]);
        let d = request_digest(&req);
        let mock = MockBackend::new(MockMode::Scripted(HashMap::new()));
        match mock.chat(&req) {
            Err(ClientError::UnknownFixture(got)) => assert_eq!(got, d),
            other => panic!("unexpected {other:?}"),
        }
        let mock = MockBackend::new(MockMode::Scripted(HashMap::from([(d, "hi".to_string())])));
        let resp = mock.chat(&req).unwrap();
        assert_eq!(resp.choices[0].message.content.as_deref(), Some("hi"));
    }

    #[test]
    fn rectangle_inside_frame() {
        for (h, w) in [(1, 1), (2, 3), (8, 8), (37, 91)] {
            let (mask, [x0, y0, x1, y1]) = phrase_rectangle("dog", h, w);
            assert!(x0 < x1 && x1 <= w && y0 < y1 && y1 <= h);
            assert_eq!(mask.count_ones() as u32, (x1 - x0) * (y1 - y0));
        }
    }

    #[test]
    fn counts_by_kind() {
        let mock = MockBackend::derived();
        let audio = ChatRequest::new("m", "", vec![ContentPart::text("p"), ContentPart::wav(b"a")]);
        let both = ChatRequest::new(
            "m",
            "",
            vec![ContentPart::text("p"), ContentPart::png(b"i"), ContentPart::wav(b"a")],
        );
        let tr = ChatRequest::new("m", "sys", vec![ContentPart::text("u")]);
        for r in [&audio, &audio, &both, &tr] {
            mock.chat(r).unwrap();
        }
        let c = mock.counts();
        assert_eq!((c.audio, c.multimodal, c.translator, c.visual), (2, 1, 1, 0));
    }
}
