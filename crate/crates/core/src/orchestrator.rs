//! Runs one clip through perception, understanding and execution.

use std::path::Path;

use futures::stream::{self, StreamExt, TryStreamExt};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{AgentClients, CallError, ClientError, Media};
use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{self, DatasetError, FrameImage};
use crate::model::{
    AgentKind, BinaryMask, KnowledgeBank, ModelError, SegmentationDirective, SharedBank, TokenUsage,
    VideoSample,
};
use crate::prompt::{self, AssembledRequest, PromptError, TranslatorMode, REASK_LINE};

pub const STAGE_PERCEPTION: &str = "perception";
pub const STAGE_UNDERSTANDING: &str = "understanding";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Describe(#[from] CallError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("translator call for {} failed: {source}", frames_label(.frame))]
    Translate {
        frame: Option<usize>,
        #[source]
        source: ClientError,
    },
    #[error("translator reply for {} had no <answer> tags after a re-ask", frames_label(.frame))]
    NoAnswer { frame: Option<usize>, reply: String },
    #[error("segmenter call for frame {frame} failed: {source}")]
    Segment {
        frame: usize,
        #[source]
        source: ClientError,
    },
}

fn frames_label(frame: &Option<usize>) -> String {
    match frame {
        Some(i) => format!("frame {i}"),
        None => "the clip".to_string(),
    }
}

/// A clip with its media in memory.
#[derive(Debug, Clone)]
pub struct LoadedClip {
    pub video_id: String,
    pub frames: Vec<FrameImage>,
    pub audio: Vec<Vec<u8>>,
    pub warnings: Vec<String>,
}

impl LoadedClip {
    pub fn load(sample: &VideoSample) -> Result<Self, DatasetError> {
        let mut warnings = Vec::new();
        let frames = sample
            .frames
            .iter()
            .map(|p| dataset::load_frame(p))
            .collect::<Result<Vec<_>, _>>()?;
        let mut audio = Vec::with_capacity(sample.audio_segments.len());
        for p in &sample.audio_segments {
            let (bytes, warning) = dataset::load_audio(p)?;
            warnings.extend(warning);
            audio.push(bytes);
        }
        Ok(Self {
            video_id: sample.id.clone(),
            frames,
            audio,
            warnings,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len().min(self.audio.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Token usage of one call, with the key it is ordered by.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEntry {
    pub stage_rank: u8,
    pub frame_index: usize,
    pub agent_kind: AgentKind,
    pub prompt_variant: usize,
    pub attempt: u8,
    pub stage: String,
    pub usage: TokenUsage,
}

impl UsageEntry {
    fn order_key(&self) -> (u8, usize, AgentKind, &str, usize, u8) {
        (
            self.stage_rank,
            self.frame_index,
            self.agent_kind,
            &self.usage.model_id,
            self.prompt_variant,
            self.attempt,
        )
    }
}

/// Usage collected as calls finish, so a failed clip still accounts for
/// the calls it paid for.
#[derive(Debug, Default)]
pub struct UsageSink(Mutex<Vec<UsageEntry>>);

impl UsageSink {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, e: UsageEntry) {
        self.0.lock().push(e);
    }

    pub fn sorted(&self) -> Vec<UsageEntry> {
        let mut v = self.0.lock().clone();
        v.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub video_id: String,
    pub mode: TranslatorMode,
    #[serde(skip)]
    pub masks: Vec<BinaryMask>,
    pub directives: Vec<SegmentationDirective>,
    pub translator_replies: Vec<String>,
    pub warnings: Vec<String>,
    pub usages: Vec<UsageEntry>,
    pub bank: KnowledgeBank,
}

impl PipelineResult {
    pub fn write_masks(&self, out: &Path) -> Result<(), DatasetError> {
        for (i, m) in self.masks.iter().enumerate() {
            dataset::save_mask(m, &dataset::prediction_path(out, &self.video_id, i))?;
        }
        Ok(())
    }
}

/// Translator output for a clip: directives in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct Understanding {
    pub directives: Vec<SegmentationDirective>,
    pub replies: Vec<String>,
    pub warnings: Vec<String>,
}

pub struct Orchestrator {
    cfg: PipelineConfig,
    clients: AgentClients,
}

impl Orchestrator {
    pub fn new(cfg: PipelineConfig, clients: AgentClients) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self { cfg, clients })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn inflight(&self) -> usize {
        self.cfg.runtime.max_inflight.max(1)
    }

    /// Every describer call for every frame.
    pub async fn run_perception(
        &self,
        clip: &LoadedClip,
        sink: &UsageSink,
    ) -> Result<KnowledgeBank, PipelineError> {
        let n = clip.len();
        let mut calls: Vec<(usize, AgentKind, String, usize)> = Vec::new();
        let pairs = self.cfg.audio_pairs();
        for i in 0..n {
            for (model, k) in &pairs {
                calls.push((i, AgentKind::AudioDescriber, model.clone(), *k));
            }
            if self.cfg.uses_visual() {
                calls.push((
                    i,
                    self.cfg.pipeline.visual_agent,
                    self.cfg.visual_model().to_string(),
                    self.cfg.prompts.visual_variant,
                ));
            }
        }
        let bank = SharedBank::new(clip.video_id.clone());
        stream::iter(calls)
            .map(|(i, kind, model, k)| {
                let bank = &bank;
                async move {
                    let media = Media {
                        image: kind.sees_image().then(|| &clip.frames[i]),
                        audio: (kind != AgentKind::VisualDescriber).then(|| clip.audio[i].as_slice()),
                    };
                    let (d, usage) = self
                        .clients
                        .describe(&clip.video_id, i, kind, &model, k, media)
                        .await?;
                    sink.push(UsageEntry {
                        stage_rank: 0,
                        frame_index: i,
                        agent_kind: kind,
                        prompt_variant: k,
                        attempt: 0,
                        stage: STAGE_PERCEPTION.to_string(),
                        usage,
                    });
                    bank.insert(d)?;
                    Ok::<_, PipelineError>(())
                }
            })
            .buffer_unordered(self.inflight())
            .try_collect::<Vec<()>>()
            .await?;
        Ok(bank.freeze())
    }

    async fn ask(
        &self,
        request: &AssembledRequest,
        frame: Option<usize>,
        sink: &UsageSink,
    ) -> Result<(String, Vec<String>), PipelineError> {
        let model = &self.cfg.models.translator;
        let mut req = request.clone();
        let mut replies = Vec::new();
        for attempt in 0..2u8 {
            if attempt == 1 {
                req.user_input = format!("{}\n{REASK_LINE}", request.user_input);
            }
            let (reply, usage) = self
                .clients
                .translate(&req, model)
                .await
                .map_err(|source| PipelineError::Translate { frame, source })?;
            sink.push(UsageEntry {
                stage_rank: 1,
                frame_index: frame.unwrap_or(0),
                agent_kind: AgentKind::Translator,
                prompt_variant: 0,
                attempt,
                stage: STAGE_UNDERSTANDING.to_string(),
                usage,
            });
            replies.push(reply.clone());
            if !prompt::answer_spans(&reply).is_empty() {
                return Ok((reply, replies));
            }
            tracing::warn!(?frame, "translator reply without answer tags");
        }
        Err(PipelineError::NoAnswer {
            frame,
            reply: replies.pop().unwrap_or_default(),
        })
    }

    /// Translator calls: one per clip in the frame-tagged modes, one per
    /// frame under model consistency.
    pub async fn run_understanding(
        &self,
        bank: &KnowledgeBank,
        n_frames: usize,
        sink: &UsageSink,
    ) -> Result<Understanding, PipelineError> {
        let video_id = bank.video_id();
        let mode = self.cfg.translator_mode();
        if mode.is_frame_tagged() {
            let request = prompt::assemble_clip(bank, n_frames, mode)?;
            let (reply, replies) = self.ask(&request, None, sink).await?;
            let parsed = prompt::parse_frame_answers(&reply, n_frames, video_id)?;
            return Ok(Understanding {
                directives: parsed.directives,
                replies,
                warnings: parsed.warnings,
            });
        }
        let requests = (0..n_frames)
            .map(|i| prompt::assemble_frame(bank, i))
            .collect::<Result<Vec<_>, _>>()?;
        let mut per_frame: Vec<(usize, SegmentationDirective, Vec<String>)> =
            stream::iter(requests.iter().enumerate())
                .map(|(i, request)| async move {
                    let (reply, replies) = self.ask(request, Some(i), sink).await?;
                    let d = prompt::parse_final_answer(&reply, video_id, i)?;
                    Ok::<_, PipelineError>((i, d, replies))
                })
                .buffer_unordered(self.inflight())
                .try_collect()
                .await?;
        per_frame.sort_by_key(|(i, _, _)| *i);
        let mut directives = Vec::with_capacity(n_frames);
        let mut replies = Vec::new();
        for (_, d, r) in per_frame {
            directives.push(d);
            replies.extend(r);
        }
        Ok(Understanding {
            directives,
            replies,
            warnings: Vec::new(),
        })
    }

    /// One mask per directive: all-zero for silence, otherwise the union of
    /// the returned detection masks.
    pub async fn run_execution(
        &self,
        clip: &LoadedClip,
        directives: &[SegmentationDirective],
    ) -> Result<(Vec<BinaryMask>, Vec<String>), PipelineError> {
        let mut out: Vec<(usize, BinaryMask, Option<String>)> = stream::iter(directives)
            .map(|d| async move {
                let frame = &clip.frames[d.frame_index];
                let (h, w) = frame.dims();
                let mut mask = BinaryMask::zeros(h, w);
                if d.silent {
                    return Ok((d.frame_index, mask, None));
                }
                let detections = self
                    .clients
                    .segment(frame, &d.phrases)
                    .await
                    .map_err(|source| PipelineError::Segment {
                        frame: d.frame_index,
                        source,
                    })?;
                let warning = detections.is_empty().then(|| {
                    format!(
                        "{}: no detections for frame {} ({})",
                        d.video_id,
                        d.frame_index,
                        d.phrases.join(", ")
                    )
                });
                for det in &detections {
                    mask.union_with(&det.mask);
                }
                Ok::<_, PipelineError>((d.frame_index, mask, warning))
            })
            .buffer_unordered(self.inflight())
            .try_collect()
            .await?;
        out.sort_by_key(|(i, _, _)| *i);
        let warnings = out.iter().filter_map(|(_, _, w)| w.clone()).collect();
        Ok((out.into_iter().map(|(_, m, _)| m).collect(), warnings))
    }

    pub async fn run_clip(
        &self,
        clip: &LoadedClip,
        sink: &UsageSink,
    ) -> Result<PipelineResult, PipelineError> {
        let n = clip.len();
        if n == 0 {
            return Err(ModelError::EmptySample(clip.video_id.clone()).into());
        }
        let bank = self.run_perception(clip, sink).await?;
        let understanding = self.run_understanding(&bank, n, sink).await?;
        let (masks, exec_warnings) = self.run_execution(clip, &understanding.directives).await?;
        let mut warnings = clip.warnings.clone();
        warnings.extend(understanding.warnings);
        warnings.extend(exec_warnings);
        for w in &warnings {
            tracing::warn!("{w}");
        }
        Ok(PipelineResult {
            video_id: clip.video_id.clone(),
            mode: self.cfg.translator_mode(),
            masks,
            directives: understanding.directives,
            translator_replies: understanding.replies,
            warnings,
            usages: sink.sorted(),
            bank,
        })
    }

    /// Loads and runs one sample.
    pub async fn run_pipeline(&self, sample: &VideoSample) -> Result<PipelineResult, PipelineError> {
        let clip = LoadedClip::load(sample)?;
        self.run_clip(&clip, &UsageSink::new()).await
    }
}
