//! Prompt construction for every agent, and parsing of translator replies
//! back into segmentation directives.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentKind, KnowledgeBank, SegmentationDirective};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no prompt variant {variant} for {kind}")]
    UnknownVariant { kind: AgentKind, variant: usize },
    #[error("frame {0} has no audio description")]
    MissingFrame(usize),
    #[error("frame {frame} has no {side} description")]
    MissingModality { frame: usize, side: &'static str },
    #[error("reply contains no <answer></answer> span")]
    NoAnswerTags,
    #[error("model-consistency assembly needs a frame index")]
    FrameRequired,
}

/// Fixed audio-to-text prompts, indexed by variant.
pub const AUDIO_PROMPTS: [&str; 4] = [
    "This is a sound of",
    "Generate metadata",
    "Generate audio caption",
    "Please describe the audio in detail",
];

pub const VISUAL_PROMPTS: [&str; 1] = ["Please describe the image in detail"];

pub const MULTIMODAL_PROMPTS: [&str; 1] = ["Please describe the audio and the image in detail"];

/// Appended as an extra user line when a reply carried no answer tags.
pub const REASK_LINE: &str = "Remember to enclose each answer in <answer></answer> tags.";

pub fn media_prompt(kind: AgentKind, variant: usize) -> Result<&'static str, PromptError> {
    let catalog: &[&str] = match kind {
        AgentKind::AudioDescriber => &AUDIO_PROMPTS,
        AgentKind::VisualDescriber => &VISUAL_PROMPTS,
        AgentKind::MultimodalDescriber => &MULTIMODAL_PROMPTS,
        AgentKind::Translator | AgentKind::Segmenter => &[],
    };
    catalog
        .get(variant)
        .copied()
        .ok_or(PromptError::UnknownVariant { kind, variant })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslatorMode {
    Basic,
    PromptConsistency,
    FrameConsistency,
    PromptAndFrame,
    ModelConsistency,
}

impl TranslatorMode {
    pub const ALL: [TranslatorMode; 5] = [
        TranslatorMode::Basic,
        TranslatorMode::PromptConsistency,
        TranslatorMode::FrameConsistency,
        TranslatorMode::PromptAndFrame,
        TranslatorMode::ModelConsistency,
    ];

    /// Model consistency dominates; otherwise the two remaining flags pick
    /// one of the four frame-tagged modes.
    pub fn from_flags(prompt: bool, frame: bool, model: bool) -> Self {
        match (model, prompt, frame) {
            (true, _, _) => TranslatorMode::ModelConsistency,
            (false, false, false) => TranslatorMode::Basic,
            (false, true, false) => TranslatorMode::PromptConsistency,
            (false, false, true) => TranslatorMode::FrameConsistency,
            (false, true, true) => TranslatorMode::PromptAndFrame,
        }
    }

    /// Short name used on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            TranslatorMode::Basic => "basic",
            TranslatorMode::PromptConsistency => "prompt",
            TranslatorMode::FrameConsistency => "frame",
            TranslatorMode::PromptAndFrame => "prompt+frame",
            TranslatorMode::ModelConsistency => "model",
        }
    }

    pub fn is_frame_tagged(self) -> bool {
        self != TranslatorMode::ModelConsistency
    }

    pub fn uses_exp_tags(self) -> bool {
        matches!(
            self,
            TranslatorMode::PromptConsistency | TranslatorMode::PromptAndFrame
        )
    }
}

impl fmt::Display for TranslatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for TranslatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TranslatorMode::ALL
            .into_iter()
            .find(|m| m.cli_name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = TranslatorMode::ALL.iter().map(|m| m.cli_name()).collect();
                format!("unknown mode `{s}`; valid modes: {}", valid.join(", "))
            })
    }
}

const TRANSLATOR_INTRO: &str = "You are participating in a competitive game where your goal is to \
identify the most likely abstract source(s) (e.g., human, instrumental, etc.) that is/are producing \
sound in a given audio clip. This clip was broken down into several frames, each containing multiple \
audio outputs generated by different AIs, representing sounds at a specific timestamp.";

const TRANSLATOR_CONTEXT: &str = "Each frame corresponds to a different moment in the same video clip \
and some frames may contain no sound-producing objects at all, or the text output could provide \
misleading information.";

const PROMPT_CONSISTENCY_LINE: &str = "- Analyze the outputs from all audio AIs in each frame together.";
const FRAME_CONSISTENCY_LINE: &str = "- Consider the relationships among frames.";

const TASK_LINES: [&str; 2] = [
    "- Identify and output only the object(s) producing sound in each frame.",
    "- For each frame, provide your guess in one line, (seperate by comma if multiple objects), \
enclosed in with <answer> and </answer> tag pair.",
];

const MODEL_CONSISTENCY_PARAGRAPHS: [&str; 14] = [
    "You are participating in a competitive game: identify the most likely abstract source(s) \
(e.g., human, animal, instrumental, mechanical) producing sound in a video clip - based only on \
textual descriptions.",
    "You are given:",
    "- Multiple image descriptions (Image 0, Image 1, ...). Each is a frame caption or visual \
summary generated by a separate agent; they do NOT share information.",
    "- Multiple audio descriptions (Audio 0, Audio 1, ...). Each describes what the sound is \
approximately like (e.g., \"sounds like a motorcycle idling\") and is generated by a separate \
agent; they do NOT share information.",
    "Your required procedure:",
    "- Extract visual evidence: For each image description, identify and list the explicit or \
clearly implied objects.",
    "- Extract acoustic evidence: For each audio description, identify the key acoustic cues.",
    "- Within- and cross-modality synthesis.",
    "- From all audio agents, compare and consolidate the cues into an overall audio profile. This \
synthesized audio profile does not need to be a verbatim phrase from the given descriptions; it \
should capture the best generalization of the sound.",
    "- Final decision: Use the synthesized audio profile and visual profile to decide which objects \
are most likely producing the sound.",
    "Output:",
    "- First give a clear, concise, step-by-step reasoning that references description labels \
(e.g., \"Image 2 shows a lawnmower; Audio 1 describes a low rumble similar to lawnmower idling - \
supports lawnmower\").",
    "- After that reasoning, output the final decision on a single line only, listing the object(s) \
most likely producing the sound separated by commas when necessary.",
    "- Enclose the single-line final answer in `<answer>` and `</answer>` tags and place nothing \
else on that line.",
];

/// System prompt for the translator. Paragraphs are separated by one blank
/// line; there is no trailing newline.
pub fn translator_system_prompt(mode: TranslatorMode) -> String {
    if mode == TranslatorMode::ModelConsistency {
        return MODEL_CONSISTENCY_PARAGRAPHS.join("\n\n");
    }
    let mut paragraphs = vec![TRANSLATOR_INTRO, TRANSLATOR_CONTEXT, "Your task:"];
    if matches!(
        mode,
        TranslatorMode::PromptConsistency | TranslatorMode::PromptAndFrame
    ) {
        paragraphs.push(PROMPT_CONSISTENCY_LINE);
    }
    if matches!(
        mode,
        TranslatorMode::FrameConsistency | TranslatorMode::PromptAndFrame
    ) {
        paragraphs.push(FRAME_CONSISTENCY_LINE);
    }
    paragraphs.extend(TASK_LINES);
    paragraphs.join("\n\n")
}

const TAG_PREFIXES: [&str; 6] = ["<answer", "</answer", "<frame", "</frame", "<exp", "</exp"];

/// Flattens a description onto one line and neutralises anything that could
/// be read back as one of our tags.
pub fn sanitize(text: &str) -> Cow<'_, str> {
    let mut out = Cow::Borrowed(text);
    if out.contains(['\n', '\r']) {
        out = Cow::Owned(out.replace("\r\n", " ").replace(['\n', '\r'], " "));
    }
    let lower = out.to_ascii_lowercase();
    if TAG_PREFIXES.iter().any(|t| lower.contains(t)) {
        out = Cow::Owned(out.replace('<', "\u{2039}"));
    }
    out
}

/// Builds the `<frameN>` user input over frames `0..n_frames`, using the
/// audio descriptions stored in the bank.
pub fn frame_tagged_user_input(
    bank: &KnowledgeBank,
    n_frames: usize,
    use_exp_tags: bool,
) -> Result<String, PromptError> {
    let mut blocks = Vec::with_capacity(n_frames);
    for frame in 0..n_frames {
        let audio = bank.query(frame, AgentKind::AudioDescriber);
        let first = audio.first().ok_or(PromptError::MissingFrame(frame))?;
        let mut block = format!("<frame{frame}>\n");
        if use_exp_tags {
            for (k, d) in audio.iter().enumerate() {
                let k = k + 1;
                block.push_str(&format!(" <exp{k}>{}</exp{k}>\n", sanitize(&d.text)));
            }
        } else {
            block.push_str(&format!(" {}\n", sanitize(&first.text)));
        }
        block.push_str(&format!("</frame{frame}>"));
        blocks.push(block);
    }
    Ok(blocks.join("\n"))
}

/// Per-frame user input for the model-consistency translator.
pub fn model_consistency_user_input(
    bank: &KnowledgeBank,
    frame_index: usize,
) -> Result<String, PromptError> {
    let images: Vec<_> = bank
        .iter()
        .filter(|d| d.frame_index == frame_index && d.agent_kind.sees_image())
        .collect();
    let audio = bank.query(frame_index, AgentKind::AudioDescriber);
    if images.is_empty() {
        return Err(PromptError::MissingModality {
            frame: frame_index,
            side: "visual",
        });
    }
    if audio.is_empty() {
        return Err(PromptError::MissingModality {
            frame: frame_index,
            side: "audio",
        });
    }
    let lines: Vec<String> = images
        .iter()
        .enumerate()
        .map(|(j, d)| format!("Image agent {j}: {}", sanitize(&d.text)))
        .chain(
            audio
                .iter()
                .enumerate()
                .map(|(j, d)| format!("Audio agent {j}: {}", sanitize(&d.text))),
        )
        .collect();
    Ok(lines.join("\n\n"))
}

/// A fully assembled translator call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledRequest {
    pub system_prompt: String,
    pub user_input: String,
    pub mode: TranslatorMode,
    pub covered_frames: Vec<usize>,
}

/// Assembles the clip-level request for a frame-tagged mode.
pub fn assemble_clip(
    bank: &KnowledgeBank,
    n_frames: usize,
    mode: TranslatorMode,
) -> Result<AssembledRequest, PromptError> {
    if !mode.is_frame_tagged() {
        return Err(PromptError::FrameRequired);
    }
    Ok(AssembledRequest {
        system_prompt: translator_system_prompt(mode),
        user_input: frame_tagged_user_input(bank, n_frames, mode.uses_exp_tags())?,
        mode,
        covered_frames: (0..n_frames).collect(),
    })
}

/// Assembles the single-frame model-consistency request.
pub fn assemble_frame(bank: &KnowledgeBank, frame_index: usize) -> Result<AssembledRequest, PromptError> {
    Ok(AssembledRequest {
        system_prompt: translator_system_prompt(TranslatorMode::ModelConsistency),
        user_input: model_consistency_user_input(bank, frame_index)?,
        mode: TranslatorMode::ModelConsistency,
        covered_frames: vec![frame_index],
    })
}

/// Reads a frame-tagged user input back into per-frame text lists. Frames
/// without `<expK>` lines yield a single text.
pub fn parse_user_input(input: &str) -> Vec<Vec<String>> {
    let mut frames = Vec::new();
    let mut current: Option<Vec<String>> = None;
    for line in input.lines() {
        if let Some(rest) = line.strip_prefix("<frame") {
            if rest.ends_with('>') && rest[..rest.len() - 1].parse::<usize>().is_ok() {
                current = Some(Vec::new());
                continue;
            }
        }
        if line.starts_with("</frame") {
            if let Some(texts) = current.take() {
                frames.push(texts);
            }
            continue;
        }
        let Some(texts) = current.as_mut() else {
            continue;
        };
        let body = line.strip_prefix(' ').unwrap_or(line);
        match EXP_LINE.captures(body) {
            Some(c) => texts.push(c[2].to_string()),
            None => texts.push(body.to_string()),
        }
    }
    frames
}

static EXP_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^<exp(\d+)>(.*)</exp(\d+)>$").expect("valid regex"));

static ANSWER_SPAN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<answer>(.*?)</answer>").expect("valid regex"));

const SILENCE_SENTINELS: [&str; 6] = ["none", "silence", "no sound", "nothing", "n/a", ""];

fn is_silence(span: &str) -> bool {
    let lower = span.trim().to_lowercase();
    let norm = lower.strip_suffix('.').unwrap_or(&lower).trim();
    SILENCE_SENTINELS.contains(&norm)
}

fn span_to_directive(video_id: &str, frame_index: usize, span: &str) -> SegmentationDirective {
    if is_silence(span) {
        return SegmentationDirective::silent(video_id, frame_index);
    }
    SegmentationDirective::new(video_id, frame_index, span.split(','))
}

pub fn answer_spans(reply: &str) -> Vec<&str> {
    ANSWER_SPAN
        .captures_iter(reply)
        .map(|c| c.get(1).map_or("", |m| m.as_str()))
        .collect()
}

/// Directives for a whole clip plus any count-mismatch warnings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswers {
    pub directives: Vec<SegmentationDirective>,
    pub warnings: Vec<String>,
}

/// Maps the j-th `<answer>` span to frame j. Missing frames repeat the last
/// answer; surplus spans are dropped. Both cases are reported as warnings.
pub fn parse_frame_answers(
    reply: &str,
    n_frames: usize,
    video_id: &str,
) -> Result<ParsedAnswers, PromptError> {
    let spans = answer_spans(reply);
    let Some(&last) = spans.last() else {
        return Err(PromptError::NoAnswerTags);
    };
    let mut warnings = Vec::new();
    if spans.len() < n_frames {
        warnings.push(format!(
            "{video_id}: translator answered {} of {n_frames} frames; repeating the last answer",
            spans.len()
        ));
    } else if spans.len() > n_frames {
        warnings.push(format!(
            "{video_id}: translator gave {} answers for {n_frames} frames; extras dropped",
            spans.len()
        ));
    }
    let directives = (0..n_frames)
        .map(|i| span_to_directive(video_id, i, spans.get(i).copied().unwrap_or(last)))
        .collect();
    Ok(ParsedAnswers {
        directives,
        warnings,
    })
}

/// Uses the last `<answer>` span; earlier reasoning may quote the tags.
pub fn parse_final_answer(
    reply: &str,
    video_id: &str,
    frame_index: usize,
) -> Result<SegmentationDirective, PromptError> {
    let spans = answer_spans(reply);
    let last = spans.last().ok_or(PromptError::NoAnswerTags)?;
    Ok(span_to_directive(video_id, frame_index, last))
}
