#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use openavs_core::clients::{
    mock, AgentClients, ChatReply, ChatRequest, ChatService, ClientError, MockBackend,
};
use openavs_core::config::PipelineConfig;
use openavs_core::dataset::FrameImage;
use openavs_core::model::Variant;
use openavs_core::orchestrator::{LoadedClip, Orchestrator};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn clip_manifest() -> PathBuf {
    fixtures().join("clips/manifest.json")
}

pub fn mock_config(variant: Variant) -> PipelineConfig {
    let mut cfg = PipelineConfig::for_variant(variant);
    cfg.endpoints.set_all("mock://derived");
    cfg.runtime.backoff_base_ms = 1;
    cfg
}

pub fn orchestrator(cfg: PipelineConfig, backend: Arc<MockBackend>) -> Orchestrator {
    let clients = AgentClients::from_config(&cfg, Some(backend)).expect("mock clients");
    Orchestrator::new(cfg, clients).expect("valid config")
}

/// Orchestrator whose translator is `translator` and whose other agents are
/// the derived mock `backend`.
pub fn orchestrator_with_translator(
    cfg: PipelineConfig,
    backend: Arc<MockBackend>,
    translator: Arc<dyn ChatService>,
) -> Orchestrator {
    use openavs_core::clients::SegmentThresholds;
    use openavs_core::model::AgentKind;
    let mut chat: std::collections::HashMap<AgentKind, Arc<dyn ChatService>> = Default::default();
    for k in [
        AgentKind::AudioDescriber,
        AgentKind::VisualDescriber,
        AgentKind::MultimodalDescriber,
    ] {
        chat.insert(k, backend.clone());
    }
    chat.insert(AgentKind::Translator, translator);
    let thresholds = SegmentThresholds {
        box_threshold: cfg.thresholds.box_threshold,
        text_threshold: cfg.thresholds.text_threshold,
        detection_score: cfg.thresholds.detection_score,
    };
    let clients = AgentClients::new(chat, backend, thresholds);
    Orchestrator::new(cfg, clients).expect("valid config")
}

/// Translator answering every call from a fixed list, cycling on the last.
pub struct FixedTranslator {
    replies: Vec<String>,
    calls: parking_lot::Mutex<Vec<ChatRequest>>,
}

impl FixedTranslator {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Arc<Self> {
        Arc::new(Self {
            replies: replies.into_iter().map(Into::into).collect(),
            calls: Default::default(),
        })
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.calls.lock().clone()
    }
}

#[async_trait]
impl ChatService for FixedTranslator {
    async fn complete(&self, req: &ChatRequest) -> Result<ChatReply, ClientError> {
        let mut calls = self.calls.lock();
        let reply = self
            .replies
            .get(calls.len())
            .or(self.replies.last())
            .cloned()
            .unwrap_or_default();
        calls.push(req.clone());
        Ok(ChatReply {
            content: reply,
            usage: None,
        })
    }
}

/// A clip of `n` distinct synthetic frames of size `h x w`.
pub fn synthetic_clip(id: &str, n: usize, h: u32, w: u32) -> LoadedClip {
    let frames = (0..n)
        .map(|i| {
            let img = image::RgbImage::from_fn(w, h, |x, y| {
                image::Rgb([(x * 9 + i as u32) as u8, (y * 5) as u8, (i * 40) as u8])
            });
            FrameImage::from_rgb(&img)
        })
        .collect();
    let audio = (0..n).map(|i| format!("RIFF-{id}-{i}").into_bytes()).collect();
    LoadedClip {
        video_id: id.to_string(),
        frames,
        audio,
        warnings: Vec::new(),
    }
}

/// Relative path to bytes for every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn mask_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    tree(root)
        .into_iter()
        .filter(|(k, _)| k.ends_with(".png"))
        .collect()
}

/// Compares `actual` with the golden tree at `golden`; with
/// `OPENAVS_BLESS=1` the golden tree is rewritten instead.
pub fn check_golden(golden: &Path, actual: &BTreeMap<String, Vec<u8>>) -> Result<(), String> {
    if std::env::var("OPENAVS_BLESS").as_deref() == Ok("1") {
        if golden.exists() {
            std::fs::remove_dir_all(golden).unwrap();
        }
        for (rel, bytes) in actual {
            let p = golden.join(rel);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, bytes).unwrap();
        }
        return Ok(());
    }
    if !golden.exists() {
        return Err(format!("missing golden tree {}", golden.display()));
    }
    let expected = tree(golden);
    if expected.keys().ne(actual.keys()) {
        return Err(format!(
            "file sets differ: golden {:?} vs actual {:?}",
            expected.keys().collect::<Vec<_>>(),
            actual.keys().collect::<Vec<_>>()
        ));
    }
    for (rel, bytes) in actual {
        if expected[rel] != *bytes {
            return Err(format!("{rel} differs from golden"));
        }
    }
    Ok(())
}

pub fn derived_reply_for(req: &ChatRequest) -> String {
    mock::derived_reply(req)
}
