//! Prompt construction and LLM backends.
//!
//! [`build_prompt`] fuses detector and grounder output into an image-context
//! prompt for a given engine. Backends sit behind [`GenerationBackend`]; the
//! wire contract is `{system, prompt, temperature, max_tokens} -> {text}`,
//! where `prompt` is the image context followed by the user prompt.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BackendError, Error, Result};
use crate::grounding::{GroundingOutcome, Side};
use crate::types::{ConfidenceScore, DetectionMap, FindingsReport};
use crate::uncertainty::ThresholdBands;

pub const FLASH_SYSTEM_PROMPT: &str = "You are a helpful assistant, specialising in radiology and interpreting Chest X-rays. Please answer CONCISELY and professionally as a radiologist would.";

const SIMPLE_SYSTEM_PROMPT: &str = "You are a radiologist. Write the findings section of a chest X-ray report.";

const INSTRUCTION_RICH_SYSTEM_PROMPT: &str = "You are an experienced radiologist writing the findings section of a chest X-ray report from the output of automated image analysis tools. You MUST answer CONCISELY and professionally as a radiologist would.";

const NORMAL_SYSTEM_PROMPT: &str = "You are a radiologist reporting a chest X-ray on which no abnormality was detected. Answer in one or two short sentences.";

const NORMAL_IMAGE_CONTEXT: &str =
    "Image analysis: the pathology detection tool found no pathologies on this chest X-ray.";

const INSTRUCTION_POINTERS: [&str; 4] = [
    "A pathology and its side (for example Edema and left Edema) are one finding; the side only says where it is, it is not a second pathology.",
    "Combine the detection and localisation information into a single description rather than reporting the two tools separately.",
    "Detection confidences and localisation confidences come from different tools and cannot be compared with each other.",
    "When a pathology has no side listed its position could not be determined confidently; it is still present.",
];

/// Name to text of the shipped user prompts.
pub fn default_user_prompts() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("findings", "What are the findings?"),
        (
            "list",
            "Just list the findings on the chest x-ray, nothing else. If there are no findings, just say that.",
        ),
    ])
}

pub fn user_prompt(name: &str) -> Result<&'static str> {
    default_user_prompts()
        .get(name)
        .copied()
        .ok_or_else(|| Error::NotFound(format!("no user prompt named {name:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineStyle {
    /// Short prompts, no thresholds, for small domain-tuned models.
    Simple,
    /// Long prompt with explicit instructions on fusing the tool outputs.
    InstructionRich,
    /// Short prompt with a strong brevity system prompt.
    Flash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// Confidences are replaced by hedged phrases before prompting.
    PreMappedPhrases,
    /// Raw confidences plus the band table as instructions.
    RawWithInstructions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub engine_id: String,
    pub style: EngineStyle,
    pub system_prompt: String,
    /// System prompt used when no pathology survives filtering.
    pub normal_system_prompt: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    pub confidence_mode: ConfidenceMode,
    /// Longest prompt, in characters, the backend accepts.
    #[serde(default)]
    pub max_prompt_chars: Option<usize>,
    /// Base URL of an HTTP backend; absent for in-process engines.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API credential.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_max_tokens() -> u32 {
    512
}

impl EngineConfig {
    pub fn preset(engine_id: impl Into<String>, style: EngineStyle) -> Self {
        let system_prompt = match style {
            EngineStyle::Simple => SIMPLE_SYSTEM_PROMPT,
            EngineStyle::InstructionRich => INSTRUCTION_RICH_SYSTEM_PROMPT,
            EngineStyle::Flash => FLASH_SYSTEM_PROMPT,
        };
        Self {
            engine_id: engine_id.into(),
            style,
            system_prompt: system_prompt.to_string(),
            normal_system_prompt: NORMAL_SYSTEM_PROMPT.to_string(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            confidence_mode: ConfidenceMode::PreMappedPhrases,
            max_prompt_chars: None,
            endpoint: None,
            api_key_env: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "engine {:?}: temperature must be >= 0",
                self.engine_id
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::invalid(format!(
                "engine {:?}: max_tokens must be positive",
                self.engine_id
            )));
        }
        Ok(())
    }
}

/// Engines listed in a TOML registry file under `[[engines]]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineRegistry {
    #[serde(default)]
    pub engines: Vec<EngineConfig>,
}

impl EngineRegistry {
    pub fn from_toml(text: &str) -> Result<Self> {
        let r: Self = toml::from_str(text)?;
        for e in &r.engines {
            e.validate()?;
        }
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn get(&self, engine_id: &str) -> Result<&EngineConfig> {
        self.engines
            .iter()
            .find(|e| e.engine_id == engine_id)
            .ok_or_else(|| Error::NotFound(format!("engine {engine_id:?} is not registered")))
    }
}

/// Separate band tables for detector and grounder confidences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BandSet {
    pub detector: ThresholdBands,
    pub grounder: ThresholdBands,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub image_context: String,
    pub user: String,
    /// True when the normal-case prompts were used.
    pub normal: bool,
}

impl PromptBundle {
    /// Image context followed by the user prompt.
    pub fn full_prompt(&self) -> String {
        format!("{}\n\n{}", self.image_context, self.user)
    }
}

/// A pathology that passed filtering, with its detector confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survivor {
    pub label: String,
    pub confidence: ConfidenceScore,
}

/// Pathologies worth reporting: not suppressed, not the no-finding class,
/// and at or above the detector band floor. Label-set order.
pub fn survivors(detections: &DetectionMap, bands: &ThresholdBands) -> Vec<Survivor> {
    let set = detections.label_set();
    detections
        .iter()
        .filter(|(l, s)| !set.is_no_finding(l) && !set.is_suppressed(l) && !bands.is_suppressed(s.value()))
        .map(|(l, s)| Survivor {
            label: l.to_string(),
            confidence: s,
        })
        .collect()
}

/// Hedged phrase for every survivor, in order.
pub fn detection_phrases(found: &[Survivor], bands: &ThresholdBands) -> Vec<String> {
    found
        .iter()
        .filter_map(|s| bands.phrase(s.confidence, &s.label))
        .collect()
}

/// Hedged "<side> <pathology>" phrase for every decided grounding above the
/// grounder floor.
pub fn location_phrases(groundings: &[GroundingOutcome], bands: &ThresholdBands) -> Vec<String> {
    groundings
        .iter()
        .filter_map(|g| {
            let side = g.location.word()?;
            bands.phrase(g.confidence, &format!("{side} {}", g.pathology))
        })
        .collect()
}

pub fn build_prompt(
    detections: &DetectionMap,
    groundings: &[GroundingOutcome],
    user_prompt: &str,
    engine: &EngineConfig,
    bands: &BandSet,
) -> Result<PromptBundle> {
    if user_prompt.trim().is_empty() {
        return Err(Error::invalid("user prompt is empty"));
    }
    let set = detections.label_set();
    let found = survivors(detections, &bands.detector);
    for g in groundings {
        if !found.iter().any(|s| s.label == g.pathology) {
            return Err(Error::Consistency(format!(
                "grounding for {:?} which is not a surviving detection",
                g.pathology
            )));
        }
        if !set.is_lateralizable(&g.pathology) {
            return Err(Error::Consistency(format!(
                "grounding for non-lateralizable {:?}",
                g.pathology
            )));
        }
    }

    if found.is_empty() {
        return Ok(PromptBundle {
            system: engine.normal_system_prompt.clone(),
            image_context: NORMAL_IMAGE_CONTEXT.to_string(),
            user: user_prompt.to_string(),
            normal: true,
        });
    }

    let mut ctx = String::new();
    match engine.confidence_mode {
        ConfidenceMode::PreMappedPhrases => {
            ctx.push_str("Pathology detection results:\n");
            for p in detection_phrases(&found, &bands.detector) {
                ctx.push_str(&format!("- {p}\n"));
            }
            let located = location_phrases(groundings, &bands.grounder);
            if !located.is_empty() {
                ctx.push_str("Localisation results:\n");
                for p in located {
                    ctx.push_str(&format!("- {p}\n"));
                }
            }
        }
        ConfidenceMode::RawWithInstructions => {
            ctx.push_str("Pathology detection confidences (0 to 1):\n");
            for s in &found {
                ctx.push_str(&format!("- {}: {:.2}\n", s.label, s.confidence.value()));
            }
            let located: Vec<&GroundingOutcome> = groundings.iter().filter(|g| g.location != Side::Abstain).collect();
            if !located.is_empty() {
                ctx.push_str("Localisation confidences (0 to 1):\n");
                for g in located {
                    let side = g.location.word().unwrap_or_default();
                    ctx.push_str(&format!("- {}: {side}, {:.2}\n", g.pathology, g.confidence.value()));
                }
            }
            ctx.push_str("Describe each confidence with these phrases:\n");
            let b = bands.detector.bands();
            for (i, band) in b.iter().enumerate() {
                let upper = b.get(i + 1).map_or("1.00".to_string(), |n| format!("{:.2}", n.lower));
                ctx.push_str(&format!("  {:.2} to {upper}: \"{}\"\n", band.lower, band.template));
            }
        }
    }
    if engine.style == EngineStyle::InstructionRich {
        ctx.push_str("Instructions:\n");
        for (i, p) in INSTRUCTION_POINTERS.iter().enumerate() {
            ctx.push_str(&format!("{}. {p}\n", i + 1));
        }
    }
    Ok(PromptBundle {
        system: engine.system_prompt.clone(),
        image_context: ctx.trim_end().to_string(),
        user: user_prompt.to_string(),
        normal: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub system: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GenerateRequest {
    pub fn new(bundle: &PromptBundle, engine: &EngineConfig) -> Self {
        Self {
            system: bundle.system.clone(),
            prompt: bundle.full_prompt(),
            temperature: engine.temperature,
            max_tokens: engine.max_tokens,
        }
    }

    /// SHA-256 over the canonical JSON encoding of the request.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

pub trait GenerationBackend: Send + Sync {
    fn complete(&self, request: &GenerateRequest) -> Result<String, BackendError>;
}

impl<T: GenerationBackend + ?Sized> GenerationBackend for Arc<T> {
    fn complete(&self, request: &GenerateRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_attempts: 1,
            base_delay: Duration::ZERO,
        }
    }
}

/// Runs one generation, retrying transient failures with exponential backoff.
pub fn generate(
    bundle: &PromptBundle,
    engine: &EngineConfig,
    backend: &dyn GenerationBackend,
    scan: &str,
    retry: RetryPolicy,
) -> Result<FindingsReport> {
    if bundle.user.trim().is_empty() {
        return Err(Error::invalid("user prompt is empty"));
    }
    let request = GenerateRequest::new(bundle, engine);
    if let Some(limit) = engine.max_prompt_chars {
        let len = request.system.chars().count() + request.prompt.chars().count();
        if len > limit {
            return Err(BackendError::OverLength { len, limit }.into());
        }
    }
    let attempts = retry.max_attempts.max(1);
    let mut attempt = 0;
    let text = loop {
        attempt += 1;
        match backend.complete(&request) {
            Ok(t) => break t,
            Err(e) if e.is_transient() && attempt < attempts => {
                std::thread::sleep(retry.base_delay * 2u32.pow(attempt - 1));
            }
            Err(e) => return Err(e.into()),
        }
    };
    if text.trim().is_empty() {
        return Err(BackendError::Protocol("backend returned an empty generation".into()).into());
    }
    Ok(FindingsReport {
        text,
        engine_id: engine.engine_id.clone(),
        scan: scan.to_string(),
        prompt_fingerprint: request.fingerprint(),
    })
}

/// Deterministic in-process engine: turns every `- ` bullet of the image
/// context into a sentence, or reports a normal study when there are none.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateEngine;

pub const TEMPLATE_NORMAL_REPORT: &str = "No acute cardiopulmonary abnormality.";

impl GenerationBackend for TemplateEngine {
    fn complete(&self, request: &GenerateRequest) -> Result<String, BackendError> {
        let sentences: Vec<String> = request
            .prompt
            .lines()
            .filter_map(|l| l.strip_prefix("- "))
            .map(|b| {
                let mut c = b.trim().chars();
                let first = c
                    .next()
                    .map(|f| f.to_uppercase().collect::<String>())
                    .unwrap_or_default();
                format!("{first}{}.", c.as_str().trim_end_matches('.'))
            })
            .collect();
        if sentences.is_empty() {
            Ok(TEMPLATE_NORMAL_REPORT.to_string())
        } else {
            Ok(sentences.join(" "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub fingerprint: String,
    pub request: GenerateRequest,
    pub text: String,
}

/// Replays captured generations keyed by request fingerprint.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    entries: BTreeMap<String, String>,
}

impl ReplayBackend {
    pub fn from_recordings(recs: impl IntoIterator<Item = Recording>) -> Self {
        Self {
            entries: recs.into_iter().map(|r| (r.fingerprint, r.text)).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let recs: Vec<Recording> = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(Self::from_recordings(recs))
    }
}

impl GenerationBackend for ReplayBackend {
    fn complete(&self, request: &GenerateRequest) -> Result<String, BackendError> {
        let fp = request.fingerprint();
        self.entries
            .get(&fp)
            .cloned()
            .ok_or_else(|| BackendError::NotFound(format!("no recording for request {fp}")))
    }
}

/// Wraps a backend and keeps every successful exchange for later replay.
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<Vec<Recording>>,
}

impl<B: GenerationBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn recordings(&self) -> Vec<Recording> {
        self.log.lock().clone()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.recordings())?)?;
        Ok(())
    }
}

impl<B: GenerationBackend> GenerationBackend for RecordingBackend<B> {
    fn complete(&self, request: &GenerateRequest) -> Result<String, BackendError> {
        let text = self.inner.complete(request)?;
        self.log.lock().push(Recording {
            fingerprint: request.fingerprint(),
            request: request.clone(),
            text: text.clone(),
        });
        Ok(text)
    }
}
