//! Pipeline configuration: the TOML document, its defaults, and validation.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::PriceTable;
use crate::model::{AgentKind, Variant};
use crate::prompt::{media_prompt, TranslatorMode};

/// Environment variable holding the bearer token for every endpoint.
pub const API_KEY_ENV: &str = "OPENAVS_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub variant: Variant,
    pub prompt_consistency: bool,
    pub frame_consistency: bool,
    /// Derived from the variant when absent.
    pub model_consistency: Option<bool>,
    /// Which describer supplies the image side in Standard/Large runs.
    pub visual_agent: AgentKind,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            variant: Variant::Lite,
            prompt_consistency: true,
            frame_consistency: true,
            model_consistency: None,
            visual_agent: AgentKind::VisualDescriber,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    /// Indices into the audio prompt catalog.
    pub audio_variants: Vec<usize>,
    pub visual_variant: usize,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            audio_variants: vec![0, 1, 2],
            visual_variant: 0,
        }
    }
}

/// Base URLs per agent. `mock://derived` selects the in-process mock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointSection {
    pub audio: String,
    pub visual: String,
    pub multimodal: String,
    pub translator: String,
    pub segmenter: String,
}

impl Default for EndpointSection {
    fn default() -> Self {
        let local = "http://127.0.0.1:8089".to_string();
        Self {
            audio: local.clone(),
            visual: local.clone(),
            multimodal: local.clone(),
            translator: local.clone(),
            segmenter: local,
        }
    }
}

impl EndpointSection {
    pub fn for_kind(&self, kind: AgentKind) -> &str {
        match kind {
            AgentKind::AudioDescriber => &self.audio,
            AgentKind::VisualDescriber => &self.visual,
            AgentKind::MultimodalDescriber => &self.multimodal,
            AgentKind::Translator => &self.translator,
            AgentKind::Segmenter => &self.segmenter,
        }
    }

    pub fn set_all(&mut self, url: &str) {
        for slot in [
            &mut self.audio,
            &mut self.visual,
            &mut self.multimodal,
            &mut self.translator,
            &mut self.segmenter,
        ] {
            *slot = url.to_string();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub audio: Vec<String>,
    pub visual: String,
    pub multimodal: String,
    pub translator: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            audio: vec!["pengi".to_string()],
            visual: "qwen2.5-omni".to_string(),
            multimodal: "qwen2.5-omni".to_string(),
            translator: "gpt-4o-mini".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSection {
    #[serde(rename = "box")]
    pub box_threshold: f64,
    #[serde(rename = "text")]
    pub text_threshold: f64,
    pub detection_score: f64,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        Self {
            box_threshold: 0.35,
            text_threshold: 0.25,
            detection_score: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeSection {
    pub timeout_secs: u64,
    /// Retries after the first attempt.
    pub retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff_base_ms: u64,
    /// Outstanding requests allowed per endpoint.
    pub max_inflight: usize,
    /// Clips processed in parallel. 0 picks the processor count, capped at 8.
    pub workers: usize,
}

impl Default for RuntimeSection {
    fn default() -> Self {
        Self {
            timeout_secs: 120,
            retries: 3,
            backoff_base_ms: 1000,
            max_inflight: 8,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pipeline: PipelineSection,
    pub prompts: PromptSection,
    pub endpoints: EndpointSection,
    pub models: ModelSection,
    pub thresholds: ThresholdSection,
    pub runtime: RuntimeSection,
    pub pricing: Option<PriceTable>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Sensible defaults for a variant: Large gets a second audio model.
    pub fn for_variant(variant: Variant) -> Self {
        let mut cfg = Self::default();
        cfg.pipeline.variant = variant;
        if variant == Variant::Large {
            cfg.models.audio.push("qwen2.5-omni-audio".to_string());
        }
        cfg
    }

    pub fn variant(&self) -> Variant {
        self.pipeline.variant
    }

    pub fn model_consistency(&self) -> bool {
        self.pipeline
            .model_consistency
            .unwrap_or(self.pipeline.variant != Variant::Lite)
    }

    pub fn translator_mode(&self) -> TranslatorMode {
        TranslatorMode::from_flags(
            self.pipeline.prompt_consistency,
            self.pipeline.frame_consistency,
            self.model_consistency(),
        )
    }

    /// Audio prompt variants actually queried: all configured ones with
    /// prompt consistency, otherwise only the first.
    pub fn effective_audio_variants(&self) -> Vec<usize> {
        if self.pipeline.prompt_consistency {
            self.prompts.audio_variants.clone()
        } else {
            self.prompts.audio_variants.iter().take(1).copied().collect()
        }
    }

    /// Audio models queried: Large ensembles all of them, the others use the first.
    pub fn effective_audio_models(&self) -> Vec<String> {
        match self.pipeline.variant {
            Variant::Large => self.models.audio.clone(),
            _ => self.models.audio.iter().take(1).cloned().collect(),
        }
    }

    /// Every (model, variant) pair sent to the audio describer.
    pub fn audio_pairs(&self) -> Vec<(String, usize)> {
        let variants = self.effective_audio_variants();
        self.effective_audio_models()
            .into_iter()
            .flat_map(|m| variants.iter().map(move |&k| (m.clone(), k)))
            .collect()
    }

    pub fn uses_visual(&self) -> bool {
        self.pipeline.variant != Variant::Lite
    }

    pub fn visual_model(&self) -> &str {
        match self.pipeline.visual_agent {
            AgentKind::MultimodalDescriber => &self.models.multimodal,
            _ => &self.models.visual,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.runtime.timeout_secs)
    }

    pub fn workers(&self) -> usize {
        match self.runtime.workers {
            0 => std::thread::available_parallelism()
                .map_or(1, |n| n.get())
                .min(8),
            n => n,
        }
    }

    /// Default table, then config overrides, then zero rates for describer
    /// models that remain unpriced.
    pub fn price_table(&self) -> PriceTable {
        let mut table = PriceTable::default();
        if let Some(p) = &self.pricing {
            table.extend(p);
        }
        for m in &self.models.audio {
            table.insert_free(m.clone());
        }
        table.insert_free(self.models.visual.clone());
        table.insert_free(self.models.multimodal.clone());
        table
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let variant = self.pipeline.variant;
        let model = self.model_consistency();
        match variant {
            Variant::Lite if model => {
                return Err(invalid("the lite variant cannot enable model consistency"));
            }
            Variant::Standard | Variant::Large if !model => {
                return Err(invalid(format!(
                    "the {variant} variant requires model consistency"
                )));
            }
            _ => {}
        }
        if variant == Variant::Large {
            let mut distinct = self.models.audio.clone();
            distinct.sort();
            distinct.dedup();
            if distinct.len() < 2 {
                return Err(invalid(
                    "the large variant needs at least two distinct audio models in [models].audio",
                ));
            }
        }
        if self.models.audio.is_empty() {
            return Err(invalid("[models].audio must name at least one model"));
        }
        if self.prompts.audio_variants.is_empty() {
            return Err(invalid("[prompts].audio_variants must not be empty"));
        }
        for &k in &self.prompts.audio_variants {
            media_prompt(AgentKind::AudioDescriber, k).map_err(|e| invalid(e.to_string()))?;
        }
        if !self.pipeline.visual_agent.sees_image() {
            return Err(invalid(
                "[pipeline].visual_agent must be visual_describer or multimodal_describer",
            ));
        }
        media_prompt(self.pipeline.visual_agent, self.prompts.visual_variant)
            .map_err(|e| invalid(e.to_string()))?;
        for (name, v) in [
            ("box", self.thresholds.box_threshold),
            ("text", self.thresholds.text_threshold),
            ("detection_score", self.thresholds.detection_score),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("threshold `{name}` = {v} is outside [0, 1]")));
            }
        }
        if self.runtime.max_inflight == 0 {
            return Err(invalid("[runtime].max_inflight must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_lite() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.translator_mode(), TranslatorMode::PromptAndFrame);
        assert_eq!(cfg.audio_pairs().len(), 3);
        assert!(!cfg.uses_visual());
    }

    #[test]
    fn variant_defaults() {
        for v in [Variant::Lite, Variant::Standard, Variant::Large] {
            PipelineConfig::for_variant(v).validate().unwrap();
        }
        let large = PipelineConfig::for_variant(Variant::Large);
        assert_eq!(large.translator_mode(), TranslatorMode::ModelConsistency);
        assert_eq!(large.audio_pairs().len(), 6);
    }

    #[test]
    fn large_needs_two_audio_models() {
        let mut cfg = PipelineConfig::for_variant(Variant::Standard);
        cfg.pipeline.variant = Variant::Large;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("two distinct audio models"), "{err}");
        cfg.models.audio = vec!["pengi".into(), "pengi".into()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn lite_rejects_model_consistency() {
        let mut cfg = PipelineConfig::default();
        cfg.pipeline.model_consistency = Some(true);
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::for_variant(Variant::Standard);
        cfg.pipeline.model_consistency = Some(false);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn prompt_consistency_off_uses_first_variant() {
        let mut cfg = PipelineConfig::default();
        cfg.pipeline.prompt_consistency = false;
        cfg.prompts.audio_variants = vec![2, 0, 1];
        assert_eq!(cfg.effective_audio_variants(), vec![2]);
        assert_eq!(cfg.translator_mode(), TranslatorMode::FrameConsistency);
    }

    #[test]
    fn parse_toml_sections() {
        let cfg = PipelineConfig::from_toml(
            r#"
[pipeline]
variant = "standard"
frame_consistency = false

[prompts]
audio_variants = [2]

[endpoints]
translator = "http://llm:9000"

[thresholds]
box = 0.4
detection_score = 0.5

[runtime]
retries = 5

[pricing.local-llm]
input_per_1m = 0.0
output_per_1m = 0.0
"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.variant(), Variant::Standard);
        assert_eq!(cfg.endpoints.translator, "http://llm:9000");
        assert_eq!(cfg.thresholds.box_threshold, 0.4);
        assert_eq!(cfg.thresholds.text_threshold, 0.25);
        assert_eq!(cfg.runtime.retries, 5);
        let prices = cfg.price_table();
        assert!(prices.get("local-llm").is_some());
        assert!(prices.get("pengi").is_some());
        assert!(prices.get("gpt-4o-mini").is_some());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::from_toml("[pipeline]\nvariant = \"huge\"\n").is_err());
        assert!(PipelineConfig::from_toml("[runtime]\napi_key = \"x\"\n").is_err());
        let mut cfg = PipelineConfig::default();
        cfg.thresholds.box_threshold = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.prompts.audio_variants = vec![9];
        assert!(cfg.validate().is_err());
    }
}
