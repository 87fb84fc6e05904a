//! End-to-end orchestration: detect, filter, ground, prompt, generate.
//!
//! Tools run in a fixed order. Every intermediate value lands in a [`Trace`]
//! so a report can be audited back to the scores that produced it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::generation::{
    self, build_prompt, detection_phrases, location_phrases, survivors, BandSet, EngineConfig, EngineRegistry,
    EngineStyle, GenerateRequest, GenerationBackend, PromptBundle, RetryPolicy, Survivor,
};
use crate::grounding::{
    benchmark_position, benchmark_two_option, lateralize, CoordinateConvention, GroundingBackend, GroundingOutcome,
    Side, TwoOptionChoice,
};
use crate::par::{self, Execution};
use crate::probe::ProbeWeights;
use crate::report_text::{ExtractionResult, Extractor, Synonyms};
use crate::types::{FindingsReport, LabelSet, Labels, DEFAULT_DECISION_THRESHOLD};
use crate::uncertainty::ThresholdBands;

/// Engine id served by the in-process [`generation::TemplateEngine`].
pub const TEMPLATE_ENGINE_ID: &str = "template";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundingSource {
    Stub {
        fixture: PathBuf,
    },
    Http {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// Edits applied on top of the label metadata stored with the probe.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSetOverrides {
    #[serde(default)]
    pub no_finding_label: Option<String>,
    #[serde(default)]
    pub non_lateralizable: Option<Vec<String>>,
    #[serde(default)]
    pub suppressed: Option<Vec<String>>,
}

impl LabelSetOverrides {
    pub fn apply(&self, base: &LabelSet) -> Result<LabelSet> {
        LabelSet::new(base.name(), base.labels().to_vec())?
            .with_no_finding(
                self.no_finding_label
                    .clone()
                    .or_else(|| base.no_finding_label().map(String::from)),
            )?
            .with_non_lateralizable(
                self.non_lateralizable
                    .clone()
                    .unwrap_or_else(|| base.non_lateralizable().to_vec()),
            )?
            .with_suppressed(self.suppressed.clone().unwrap_or_else(|| base.suppressed().to_vec()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        let d = RetryPolicy::default();
        Self {
            max_attempts: d.max_attempts,
            base_delay_ms: d.base_delay.as_millis() as u64,
        }
    }
}

impl From<RetryConfig> for RetryPolicy {
    fn from(c: RetryConfig) -> Self {
        RetryPolicy {
            max_attempts: c.max_attempts.max(1),
            base_delay: Duration::from_millis(c.base_delay_ms),
        }
    }
}

/// Agent configuration, read from TOML. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub probe_weights: PathBuf,
    pub engine_id: String,
    #[serde(default)]
    pub engine_registry: Option<PathBuf>,
    pub grounding: GroundingSource,
    #[serde(default)]
    pub detector_bands: ThresholdBands,
    #[serde(default)]
    pub grounder_bands: ThresholdBands,
    #[serde(default = "default_threshold")]
    pub decision_threshold: f64,
    #[serde(default)]
    pub coordinate_convention: CoordinateConvention,
    #[serde(default)]
    pub label_set: LabelSetOverrides,
    /// Synonym table for report parsing; the shipped table when absent.
    #[serde(default)]
    pub synonyms: Option<PathBuf>,
    #[serde(default)]
    pub retry: RetryConfig,
}

fn default_threshold() -> f64 {
    DEFAULT_DECISION_THRESHOLD
}

impl AgentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut c = Self::from_toml(&fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            c.resolve_paths(dir);
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "decision_threshold {} must lie in (0, 1)",
                self.decision_threshold
            )));
        }
        if self.engine_id.trim().is_empty() {
            return Err(Error::invalid("engine_id is empty"));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        join(&mut self.probe_weights);
        if let Some(p) = self.engine_registry.as_mut() {
            join(p);
        }
        if let Some(p) = self.synonyms.as_mut() {
            join(p);
        }
        if let GroundingSource::Stub { fixture } = &mut self.grounding {
            join(fixture);
        }
    }

    /// Loads the probe and applies the label overrides.
    pub fn load_weights(&self) -> Result<ProbeWeights> {
        let w = ProbeWeights::load(&self.probe_weights)?;
        let set = self.label_set.apply(w.label_set())?;
        w.with_label_set(Arc::new(set))
    }

    /// The configured engine from the registry, falling back to the built-in
    /// template engine.
    pub fn resolve_engine(&self) -> Result<EngineConfig> {
        if let Some(path) = &self.engine_registry {
            let reg = EngineRegistry::load(path)?;
            if let Ok(e) = reg.get(&self.engine_id) {
                return Ok(e.clone());
            }
        }
        if self.engine_id == TEMPLATE_ENGINE_ID {
            return Ok(EngineConfig::preset(TEMPLATE_ENGINE_ID, EngineStyle::Simple));
        }
        Err(Error::NotFound(format!(
            "engine {:?} is not registered",
            self.engine_id
        )))
    }

    pub fn bands(&self) -> BandSet {
        BandSet {
            detector: self.detector_bands.clone(),
            grounder: self.grounder_bands.clone(),
        }
    }

    pub fn load_synonyms(&self) -> Result<Synonyms> {
        match &self.synonyms {
            Some(p) => Synonyms::load(p),
            None => Ok(Synonyms::defaults()),
        }
    }
}

/// A named user prompt, or the argument itself when no prompt has that name.
pub fn resolve_user_prompt(name_or_text: &str) -> String {
    generation::user_prompt(name_or_text)
        .map(String::from)
        .unwrap_or_else(|_| name_or_text.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub image_id: String,
    pub engine_id: String,
    pub detections: BTreeMap<String, f64>,
    /// Labels at or above the decision threshold.
    pub predicted: Labels,
    pub survivors: Vec<Survivor>,
    pub detection_phrases: Vec<String>,
    pub groundings: Vec<GroundingOutcome>,
    pub location_phrases: Vec<String>,
    pub bundle: PromptBundle,
    pub request_fingerprint: String,
}

impl Trace {
    /// Every phrase handed to the engine, detection phrases first.
    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.detection_phrases
            .iter()
            .chain(&self.location_phrases)
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Listing {
    pub extraction: ExtractionResult,
    pub report: FindingsReport,
    pub trace: Trace,
}

pub struct Agent {
    weights: ProbeWeights,
    grounder: Arc<dyn GroundingBackend>,
    engine: EngineConfig,
    generator: Arc<dyn GenerationBackend>,
    bands: BandSet,
    decision_threshold: f64,
    extractor: Extractor,
    retry: RetryPolicy,
    exec: Execution,
}

impl Agent {
    pub fn new(
        weights: ProbeWeights,
        grounder: Arc<dyn GroundingBackend>,
        engine: EngineConfig,
        generator: Arc<dyn GenerationBackend>,
    ) -> Result<Self> {
        engine.validate()?;
        let extractor = Extractor::new(weights.label_set(), &Synonyms::defaults());
        Ok(Self {
            weights,
            grounder,
            engine,
            generator,
            bands: BandSet::default(),
            decision_threshold: DEFAULT_DECISION_THRESHOLD,
            extractor,
            retry: RetryPolicy::default(),
            exec: Execution::default(),
        })
    }

    /// Builds an agent from a config whose backends were constructed by the
    /// caller.
    pub fn from_config(
        config: &AgentConfig,
        grounder: Arc<dyn GroundingBackend>,
        generator: Arc<dyn GenerationBackend>,
    ) -> Result<Self> {
        config.validate()?;
        let weights = config.load_weights()?;
        let synonyms = config.load_synonyms()?;
        Ok(Self::new(weights, grounder, config.resolve_engine()?, generator)?
            .with_bands(config.bands())
            .with_decision_threshold(config.decision_threshold)?
            .with_synonyms(&synonyms)
            .with_retry(config.retry.into()))
    }

    pub fn with_bands(mut self, bands: BandSet) -> Self {
        self.bands = bands;
        self
    }

    pub fn with_decision_threshold(mut self, t: f64) -> Result<Self> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::invalid(format!("decision threshold {t} must lie in (0, 1)")));
        }
        self.decision_threshold = t;
        Ok(self)
    }

    pub fn with_synonyms(mut self, synonyms: &Synonyms) -> Self {
        self.extractor = Extractor::new(self.weights.label_set(), synonyms);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn engine(&self) -> &EngineConfig {
        &self.engine
    }

    pub fn label_set(&self) -> &LabelSet {
        self.weights.label_set()
    }

    pub fn run_findings(
        &self,
        image_id: &str,
        embedding: &[f32],
        user_prompt: &str,
    ) -> Result<(FindingsReport, Trace)> {
        let detections = self.weights.predict(embedding).map_err(|e| e.at(Stage::Detect))?;
        let set = detections.label_set().clone();

        let found = survivors(&detections, &self.bands.detector);
        if found.iter().any(|s| set.is_suppressed(&s.label)) {
            return Err(Error::Consistency("suppressed label survived filtering".into()).at(Stage::Filter));
        }

        let mut groundings = Vec::new();
        for s in found.iter().filter(|s| set.is_lateralizable(&s.label)) {
            let g = lateralize(self.grounder.as_ref(), &set, &s.label, image_id, self.exec)
                .map_err(|e| e.at(Stage::Ground))?;
            groundings.push(g);
        }

        let bundle = build_prompt(&detections, &groundings, user_prompt, &self.engine, &self.bands)
            .map_err(|e| e.at(Stage::Prompt))?;
        let report = generation::generate(&bundle, &self.engine, self.generator.as_ref(), image_id, self.retry)
            .map_err(|e| e.at(Stage::Generate))?;

        let trace = Trace {
            image_id: image_id.to_string(),
            engine_id: self.engine.engine_id.clone(),
            detections: detections.to_map(),
            predicted: detections.binary_prediction_set(self.decision_threshold),
            detection_phrases: detection_phrases(&found, &self.bands.detector),
            location_phrases: location_phrases(&groundings, &self.bands.grounder),
            survivors: found,
            groundings,
            request_fingerprint: GenerateRequest::new(&bundle, &self.engine).fingerprint(),
            bundle,
        };
        Ok((report, trace))
    }

    /// Runs the agent with the listing prompt and parses its own output.
    pub fn run_detection_listing(&self, image_id: &str, embedding: &[f32]) -> Result<Listing> {
        let prompt = generation::user_prompt("list")?;
        let (report, trace) = self.run_findings(image_id, embedding, prompt)?;
        let extraction = self.extractor.extract(&report.text);
        Ok(Listing {
            extraction,
            report,
            trace,
        })
    }

    /// Independent runs over many scans; results keep input order.
    pub fn run_batch(&self, scans: &[(String, Vec<f32>)], user_prompt: &str) -> Vec<Result<(FindingsReport, Trace)>> {
        par::map(self.exec, scans, |(id, emb)| self.run_findings(id, emb, user_prompt))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalisationCase {
    pub question: String,
    pub option_1: String,
    pub option_2: String,
    pub image_ref: String,
    /// 1 or 2.
    pub answer: u8,
    /// False when the detector missed the pathology; such cases are never
    /// grounded and count against overall accuracy only.
    #[serde(default = "yes")]
    pub detected: bool,
}

fn yes() -> bool {
    true
}

impl LocalisationCase {
    pub fn validate(&self) -> Result<()> {
        if self.answer != 1 && self.answer != 2 {
            return Err(Error::validation(format!(
                "case {:?}: answer must be 1 or 2, got {}",
                self.question, self.answer
            )));
        }
        Ok(())
    }

    /// The shared phrase with its side word removed, plus the side of each
    /// option.
    fn sideless(&self) -> Result<(String, Side, Side)> {
        let split = |o: &str| -> Option<(Side, String)> {
            let lower = o.trim().to_lowercase();
            let (head, rest) = lower.split_once(' ')?;
            let side = match head {
                "left" => Side::Left,
                "right" => Side::Right,
                _ => return None,
            };
            Some((side, rest.trim().to_string()))
        };
        match (split(&self.option_1), split(&self.option_2)) {
            (Some((s1, p1)), Some((s2, p2))) if p1 == p2 && s1 != s2 => Ok((p1, s1, s2)),
            _ => Err(Error::validation(format!(
                "case {:?}: options must be the same phrase prefixed by left and right",
                self.question
            ))),
        }
    }
}

pub fn load_localisation_cases(path: impl AsRef<Path>) -> Result<Vec<LocalisationCase>> {
    let cases: Vec<LocalisationCase> = serde_json::from_str(&fs::read_to_string(path)?)?;
    for c in &cases {
        c.validate()?;
    }
    Ok(cases)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Ground both options and keep the stronger one.
    TwoOption,
    /// Ground the side-less phrase and read the side off the peak.
    Position,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-option" => Ok(Strategy::TwoOption),
            "position" => Ok(Strategy::Position),
            _ => Err(Error::invalid(format!(
                "unknown strategy {s:?}, expected two-option or position"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseDecision {
    Option1,
    Option2,
    Abstain,
    Undetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalisationReport {
    pub strategy: Strategy,
    pub cases: usize,
    pub undetected: usize,
    pub abstained: usize,
    pub decided: usize,
    pub correct: usize,
    /// Over cases with a positive activation; absent when none.
    pub accuracy_decided: Option<f64>,
    /// Over every case; abstentions and undetected cases count as wrong.
    pub accuracy_overall: Option<f64>,
    pub decisions: Vec<CaseDecision>,
}

fn decide_case(
    case: &LocalisationCase,
    strategy: Strategy,
    backend: &dyn GroundingBackend,
    convention: CoordinateConvention,
) -> Result<CaseDecision> {
    if !case.detected {
        return Ok(CaseDecision::Undetected);
    }
    Ok(match strategy {
        Strategy::TwoOption => match benchmark_two_option(backend, &case.option_1, &case.option_2, &case.image_ref)? {
            TwoOptionChoice::A => CaseDecision::Option1,
            TwoOptionChoice::B => CaseDecision::Option2,
            TwoOptionChoice::Abstain => CaseDecision::Abstain,
        },
        Strategy::Position => {
            let (phrase, side_1, _) = case.sideless()?;
            match benchmark_position(backend, &phrase, &case.image_ref, convention)? {
                Side::Abstain => CaseDecision::Abstain,
                s if s == side_1 => CaseDecision::Option1,
                _ => CaseDecision::Option2,
            }
        }
    })
}

pub fn run_localisation_benchmark(
    cases: &[LocalisationCase],
    strategy: Strategy,
    backend: &dyn GroundingBackend,
    convention: CoordinateConvention,
    exec: Execution,
) -> Result<LocalisationReport> {
    for c in cases {
        c.validate()?;
    }
    let decisions = par::map(exec, cases, |c| decide_case(c, strategy, backend, convention))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let count = |d: CaseDecision| decisions.iter().filter(|&&x| x == d).count();
    let undetected = count(CaseDecision::Undetected);
    let abstained = count(CaseDecision::Abstain);
    let decided = cases.len() - undetected - abstained;
    let correct = cases
        .iter()
        .zip(&decisions)
        .filter(|(c, d)| matches!((c.answer, d), (1, CaseDecision::Option1) | (2, CaseDecision::Option2)))
        .count();
    let ratio = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    Ok(LocalisationReport {
        strategy,
        cases: cases.len(),
        undetected,
        abstained,
        decided,
        correct,
        accuracy_decided: ratio(correct, decided),
        accuracy_overall: ratio(correct, cases.len()),
        decisions,
    })
}

/// The question and options as one prompt, for engines asked to answer the
/// benchmark directly.
pub fn localisation_prompt(case: &LocalisationCase) -> String {
    format!(
        "{}\nOption 1: {}\nOption 2: {}\nAnswer with 1 or 2.",
        case.question.trim(),
        case.option_1.trim(),
        case.option_2.trim()
    )
}
