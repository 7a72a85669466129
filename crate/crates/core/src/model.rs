//! Domain types shared by every stage of the pipeline, plus the knowledge
//! bank that buffers perception outputs for the translator.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Text recorded in place of an empty model response.
pub const NO_DESCRIPTION: &str = "(no description)";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("duplicate knowledge bank key {0}")]
    DuplicateKey(BankKey),
    #[error("description belongs to video `{found}`, bank holds `{expected}`")]
    VideoMismatch { expected: String, found: String },
    #[error("sample `{0}` has no frames")]
    EmptySample(String),
    #[error("sample `{id}`: ground-truth mask {index} is {found:?}, frame is {expected:?}")]
    GtShape {
        id: String,
        index: usize,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("mask buffer holds {len} cells, expected {height}x{width}")]
    MaskSize { height: u32, width: u32, len: usize },
    #[error("mask dimensions must be positive, got {height}x{width}")]
    MaskZero { height: u32, width: u32 },
    #[error("mask cell {index} is {value}, expected 0 or 1")]
    MaskValue { index: usize, value: u8 },
}

/// The agents taking part in a run. Declaration order is the ordering rank
/// used by the knowledge bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    AudioDescriber,
    VisualDescriber,
    MultimodalDescriber,
    Translator,
    Segmenter,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::AudioDescriber,
        AgentKind::VisualDescriber,
        AgentKind::MultimodalDescriber,
        AgentKind::Translator,
        AgentKind::Segmenter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::AudioDescriber => "audio_describer",
            AgentKind::VisualDescriber => "visual_describer",
            AgentKind::MultimodalDescriber => "multimodal_describer",
            AgentKind::Translator => "translator",
            AgentKind::Segmenter => "segmenter",
        }
    }

    pub fn is_describer(self) -> bool {
        matches!(
            self,
            AgentKind::AudioDescriber | AgentKind::VisualDescriber | AgentKind::MultimodalDescriber
        )
    }

    /// Describers whose output is image-grounded.
    pub fn sees_image(self) -> bool {
        matches!(self, AgentKind::VisualDescriber | AgentKind::MultimodalDescriber)
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown agent kind `{s}`"))
    }
}

/// Token counts reported by a chat service for one call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub model_id: String,
    /// True when the service omitted usage and counts were estimated.
    #[serde(default)]
    pub estimated: bool,
}

impl TokenUsage {
    pub fn new(model_id: impl Into<String>, prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
            model_id: model_id.into(),
            estimated: false,
        }
    }
}

/// One clip: frames sampled once per second with their aligned audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSample {
    pub id: String,
    pub frames: Vec<PathBuf>,
    pub audio_segments: Vec<PathBuf>,
    pub gt_masks: Option<Vec<PathBuf>>,
    pub clip_label: Option<String>,
}

impl VideoSample {
    /// Applies the ingestion rules: frame and audio lists are cut to the
    /// shorter length (ground truth follows the frames). Returns the warnings
    /// produced, or an error if nothing is left.
    pub fn normalize(&mut self) -> Result<Vec<String>, ModelError> {
        let mut warnings = Vec::new();
        let (nf, na) = (self.frames.len(), self.audio_segments.len());
        if nf != na {
            let n = nf.min(na);
            warnings.push(format!(
                "sample `{}`: {nf} frames vs {na} audio segments, truncated to {n}",
                self.id
            ));
            self.frames.truncate(n);
            self.audio_segments.truncate(n);
        }
        if let Some(gt) = self.gt_masks.as_mut() {
            if gt.len() != self.frames.len() {
                warnings.push(format!(
                    "sample `{}`: {} ground-truth masks for {} frames",
                    self.id,
                    gt.len(),
                    self.frames.len()
                ));
                gt.truncate(self.frames.len());
            }
        }
        if self.frames.is_empty() {
            return Err(ModelError::EmptySample(self.id.clone()));
        }
        Ok(warnings)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// One text output of one media agent for one frame under one prompt variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub video_id: String,
    pub frame_index: usize,
    pub agent_kind: AgentKind,
    pub model_id: String,
    pub prompt_variant: usize,
    pub text: String,
}

impl Description {
    /// Builds a description, trimming the text and substituting the
    /// `(no description)` sentinel for empty replies.
    pub fn new(
        video_id: impl Into<String>,
        frame_index: usize,
        agent_kind: AgentKind,
        model_id: impl Into<String>,
        prompt_variant: usize,
        text: &str,
    ) -> Self {
        let trimmed = text.trim();
        let text = if trimmed.is_empty() { NO_DESCRIPTION } else { trimmed };
        Self {
            video_id: video_id.into(),
            frame_index,
            agent_kind,
            model_id: model_id.into(),
            prompt_variant,
            text: text.to_string(),
        }
    }

    pub fn key(&self) -> BankKey {
        BankKey {
            frame_index: self.frame_index,
            agent_kind: self.agent_kind,
            model_id: self.model_id.clone(),
            prompt_variant: self.prompt_variant,
        }
    }
}

/// Field order defines the bank's iteration order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BankKey {
    pub frame_index: usize,
    pub agent_kind: AgentKind,
    pub model_id: String,
    pub prompt_variant: usize,
}

impl fmt::Display for BankKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(frame {}, {}, {}, variant {})",
            self.frame_index, self.agent_kind, self.model_id, self.prompt_variant
        )
    }
}

/// The translator's store of every description produced for one clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "BankRepr", try_from = "BankRepr")]
pub struct KnowledgeBank {
    video_id: String,
    entries: BTreeMap<BankKey, Description>,
}

#[derive(Serialize, Deserialize)]
struct BankRepr {
    video_id: String,
    descriptions: Vec<Description>,
}

impl From<KnowledgeBank> for BankRepr {
    fn from(bank: KnowledgeBank) -> Self {
        BankRepr {
            video_id: bank.video_id,
            descriptions: bank.entries.into_values().collect(),
        }
    }
}

impl TryFrom<BankRepr> for KnowledgeBank {
    type Error = ModelError;

    fn try_from(repr: BankRepr) -> Result<Self, Self::Error> {
        let mut bank = KnowledgeBank::new(repr.video_id);
        for d in repr.descriptions {
            bank.insert(d)?;
        }
        Ok(bank)
    }
}

impl KnowledgeBank {
    pub fn new(video_id: impl Into<String>) -> Self {
        Self {
            video_id: video_id.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn insert(&mut self, d: Description) -> Result<(), ModelError> {
        if d.video_id != self.video_id {
            return Err(ModelError::VideoMismatch {
                expected: self.video_id.clone(),
                found: d.video_id,
            });
        }
        let key = d.key();
        if self.entries.contains_key(&key) {
            return Err(ModelError::DuplicateKey(key));
        }
        self.entries.insert(key, d);
        Ok(())
    }

    /// All descriptions for `frame_index` produced by `kind`, in bank order.
    pub fn query(&self, frame_index: usize, kind: AgentKind) -> Vec<&Description> {
        self.entries
            .values()
            .filter(|d| d.frame_index == frame_index && d.agent_kind == kind)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Description> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One past the highest frame index present, or 0 for an empty bank.
    pub fn frame_count(&self) -> usize {
        self.entries
            .keys()
            .next_back()
            .map_or(0, |k| k.frame_index + 1)
    }
}

/// Bank wrapper accepting inserts from concurrent perception workers.
/// Freezing hands back the plain (immutable by ownership) bank.
#[derive(Debug)]
pub struct SharedBank(Mutex<KnowledgeBank>);

impl SharedBank {
    pub fn new(video_id: impl Into<String>) -> Self {
        Self(Mutex::new(KnowledgeBank::new(video_id)))
    }

    pub fn insert(&self, d: Description) -> Result<(), ModelError> {
        self.0.lock().insert(d)
    }

    pub fn freeze(self) -> KnowledgeBank {
        self.0.into_inner()
    }
}

/// Refined phrase list for one frame, as produced by the translator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationDirective {
    pub video_id: String,
    pub frame_index: usize,
    pub phrases: Vec<String>,
    pub silent: bool,
}

impl SegmentationDirective {
    /// Cleans phrases (newlines flattened, trimmed, empties dropped). An empty
    /// result makes the directive silent.
    pub fn new<I, S>(video_id: impl Into<String>, frame_index: usize, phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let phrases: Vec<String> = phrases
            .into_iter()
            .map(|p| p.as_ref().replace(['\r', '\n'], " ").trim().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        let silent = phrases.is_empty();
        Self {
            video_id: video_id.into(),
            frame_index,
            phrases,
            silent,
        }
    }

    pub fn silent(video_id: impl Into<String>, frame_index: usize) -> Self {
        Self::new(video_id, frame_index, std::iter::empty::<&str>())
    }
}

/// H×W grid of {0,1}, row-major. 1 marks a sounding-object pixel.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    height: u32,
    width: u32,
    bits: Vec<u8>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryMask({}x{}, {} on)", self.height, self.width, self.count_ones())
    }
}

impl BinaryMask {
    pub fn zeros(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height as usize * width as usize],
        }
    }

    pub fn from_bits(height: u32, width: u32, bits: Vec<u8>) -> Result<Self, ModelError> {
        if height == 0 || width == 0 {
            return Err(ModelError::MaskZero { height, width });
        }
        if bits.len() != height as usize * width as usize {
            return Err(ModelError::MaskSize {
                height,
                width,
                len: bits.len(),
            });
        }
        if let Some((index, &value)) = bits.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(ModelError::MaskValue { index, value });
        }
        Ok(Self { height, width, bits })
    }

    /// Builds from nested rows; convenient in tests.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self, ModelError> {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.len()) as u32;
        Self::from_bits(height, width, rows.concat())
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: u32, x: u32) -> bool {
        self.bits[(y * self.width + x) as usize] == 1
    }

    pub fn set(&mut self, y: u32, x: u32, on: bool) {
        self.bits[(y * self.width + x) as usize] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn invert(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| 1 - b).collect(),
        }
    }

    /// Pixelwise OR. Panics on shape mismatch; callers check dims first.
    pub fn union_with(&mut self, other: &BinaryMask) {
        assert_eq!(self.dims(), other.dims(), "mask union shape mismatch");
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }
}

/// Raw integer label grid as read from a ground-truth image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    pub height: u32,
    pub width: u32,
    pub labels: Vec<u32>,
}

impl LabelGrid {
    pub fn from_rows(rows: &[&[u32]]) -> Self {
        Self {
            height: rows.len() as u32,
            width: rows.first().map_or(0, |r| r.len()) as u32,
            labels: rows.concat(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Lite,
    Standard,
    Large,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Lite => "lite",
            Variant::Standard => "standard",
            Variant::Large => "large",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lite" => Ok(Variant::Lite),
            "standard" => Ok(Variant::Standard),
            "large" => Ok(Variant::Large),
            other => Err(format!(
                "unknown variant `{other}` (expected lite, standard or large)"
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(frame: usize, kind: AgentKind, model: &str, k: usize, text: &str) -> Description {
        Description::new("v1", frame, kind, model, k, text)
    }

    #[test]
    fn insert_single_description() {
        let mut bank = KnowledgeBank::new("v1");
        bank.insert(desc(0, AgentKind::AudioDescriber, "pengi", 0, "a drum loop is being played."))
            .unwrap();
        assert_eq!(bank.len(), 1);
        let got = bank.query(0, AgentKind::AudioDescriber);
        assert_eq!(got[0].text, "a drum loop is being played.");
    }

    #[test]
    fn duplicate_key_rejected() {
        let mut bank = KnowledgeBank::new("v1");
        let d = desc(0, AgentKind::AudioDescriber, "pengi", 0, "x");
        bank.insert(d.clone()).unwrap();
        assert_eq!(bank.insert(d.clone()), Err(ModelError::DuplicateKey(d.key())));
    }

    #[test]
    fn video_mismatch_rejected() {
        let mut bank = KnowledgeBank::new("other");
        let err = bank
            .insert(desc(0, AgentKind::AudioDescriber, "pengi", 0, "x"))
            .unwrap_err();
        assert!(matches!(err, ModelError::VideoMismatch { .. }));
    }

    #[test]
    fn fifteen_entries_sorted_by_frame_then_variant() {
        let mut bank = KnowledgeBank::new("v1");
        let mut expected = Vec::new();
        for k in [2, 0, 1] {
            for f in [4, 1, 3, 0, 2] {
                bank.insert(desc(f, AgentKind::AudioDescriber, "pengi", k, "t")).unwrap();
                expected.push((f, k));
            }
        }
        expected.sort();
        let got: Vec<_> = bank.iter().map(|d| (d.frame_index, d.prompt_variant)).collect();
        assert_eq!(bank.len(), 15);
        assert_eq!(got, expected);
    }

    #[test]
    fn query_orders_by_variant_and_handles_absent_kind() {
        let mut bank = KnowledgeBank::new("v1");
        for k in [2, 0, 1] {
            bank.insert(desc(2, AgentKind::AudioDescriber, "pengi", k, "t")).unwrap();
        }
        let variants: Vec<_> = bank
            .query(2, AgentKind::AudioDescriber)
            .iter()
            .map(|d| d.prompt_variant)
            .collect();
        assert_eq!(variants, vec![0, 1, 2]);
        assert!(bank.query(9, AgentKind::VisualDescriber).is_empty());
    }

    #[test]
    fn query_orders_by_model_then_variant() {
        let mut bank = KnowledgeBank::new("v1");
        for (m, k) in [("qwen", 1), ("pengi", 1), ("qwen", 0), ("pengi", 0)] {
            bank.insert(desc(0, AgentKind::AudioDescriber, m, k, "t")).unwrap();
        }
        let mut oracle = vec![("qwen", 1), ("pengi", 1), ("qwen", 0), ("pengi", 0)];
        oracle.sort();
        let got: Vec<_> = bank
            .query(0, AgentKind::AudioDescriber)
            .iter()
            .map(|d| (d.model_id.clone(), d.prompt_variant))
            .collect();
        let oracle: Vec<_> = oracle.into_iter().map(|(m, k)| (m.to_string(), k)).collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn empty_text_becomes_sentinel() {
        let d = desc(0, AgentKind::AudioDescriber, "pengi", 0, "   \n");
        assert_eq!(d.text, NO_DESCRIPTION);
    }

    #[test]
    fn normalize_truncates_to_shorter() {
        let mut s = VideoSample {
            id: "a".into(),
            frames: (0..5).map(|i| PathBuf::from(format!("{i}.png"))).collect(),
            audio_segments: (0..4).map(|i| PathBuf::from(format!("{i}.wav"))).collect(),
            gt_masks: None,
            clip_label: None,
        };
        let warnings = s.normalize().unwrap();
        assert_eq!(s.frames.len(), 4);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn normalize_rejects_empty() {
        let mut s = VideoSample {
            id: "a".into(),
            frames: vec![],
            audio_segments: vec![],
            gt_masks: None,
            clip_label: None,
        };
        assert_eq!(s.normalize(), Err(ModelError::EmptySample("a".into())));
    }

    #[test]
    fn directive_silence_iff_no_phrases() {
        let d = SegmentationDirective::new("v", 0, [" a\nwoman ", "", "  "]);
        assert_eq!(d.phrases, vec!["a woman"]);
        assert!(!d.silent);
        assert!(SegmentationDirective::new("v", 0, [" "]).silent);
    }

    #[test]
    fn mask_validation() {
        assert!(BinaryMask::from_bits(2, 2, vec![0, 1, 1]).is_err());
        assert!(BinaryMask::from_bits(2, 2, vec![0, 1, 2, 0]).is_err());
        assert!(BinaryMask::from_bits(0, 2, vec![]).is_err());
        let m = BinaryMask::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        assert_eq!(m.invert().bits(), &[0, 1, 1, 0]);
    }

    #[test]
    fn bank_serde_round_trip() {
        let mut bank = KnowledgeBank::new("v1");
        bank.insert(desc(1, AgentKind::VisualDescriber, "qwen", 0, "a man")).unwrap();
        bank.insert(desc(0, AgentKind::AudioDescriber, "pengi", 2, "speech")).unwrap();
        let json = serde_json::to_string(&bank).unwrap();
        let back: KnowledgeBank = serde_json::from_str(&json).unwrap();
        assert_eq!(back, bank);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_desc() -> impl Strategy<Value = Description> {
            (0usize..5, 0usize..3, prop::sample::select(vec!["a", "b", "c"]), 0usize..4)
                .prop_map(|(f, kind, m, k)| {
                    let kind = [
                        AgentKind::AudioDescriber,
                        AgentKind::VisualDescriber,
                        AgentKind::MultimodalDescriber,
                    ][kind];
                    Description::new("v", f, kind, m, k, "t")
                })
        }

        fn build(descs: &[Description]) -> KnowledgeBank {
            let mut bank = KnowledgeBank::new("v");
            for d in descs {
                let _ = bank.insert(d.clone());
            }
            bank
        }

        proptest! {
            #[test]
            fn iteration_independent_of_insert_order(
                descs in prop::collection::vec(arb_desc(), 0..100),
                seed in any::<u64>(),
            ) {
                let a = build(&descs);
                let mut shuffled = descs.clone();
                // deterministic permutation from the seed
                let n = shuffled.len();
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    shuffled.swap(i, (s >> 33) as usize % (i + 1));
                }
                let b = build(&shuffled);
                let ka: Vec<_> = a.iter().map(|d| d.key()).collect();
                let kb: Vec<_> = b.iter().map(|d| d.key()).collect();
                prop_assert_eq!(ka, kb);
            }

            #[test]
            fn query_matches_brute_force_filter(
                descs in prop::collection::vec(arb_desc(), 0..100),
                frame in 0usize..6,
                kind in 0usize..3,
            ) {
                let kind = [AgentKind::AudioDescriber, AgentKind::VisualDescriber, AgentKind::MultimodalDescriber][kind];
                let bank = build(&descs);
                let mut oracle: Vec<BankKey> = bank
                    .iter()
                    .filter(|d| d.frame_index == frame && d.agent_kind == kind)
                    .map(|d| d.key())
                    .collect();
                oracle.sort();
                let got: Vec<BankKey> = bank.query(frame, kind).into_iter().map(|d| d.key()).collect();
                prop_assert_eq!(got, oracle);
            }
        }
    }
}
