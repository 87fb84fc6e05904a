//! Shared domain vocabulary: label sets, confidences, detection maps, scan
//! records and generated reports.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision threshold applied to probe probabilities when none is configured.
pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

/// A set of pathology labels as produced by one dataset's annotations.
pub type LabelSetRef = Arc<LabelSet>;

/// Unordered set of label names, used for predictions and references.
pub type Labels = BTreeSet<String>;

#[derive(Debug, Clone, Deserialize)]
struct RawLabelSet {
    name: String,
    labels: Vec<String>,
    #[serde(default)]
    no_finding_label: Option<String>,
    #[serde(default)]
    non_lateralizable: Vec<String>,
    #[serde(default)]
    suppressed: Vec<String>,
}

/// Ordered pathology vocabulary. Order defines the probe's output-neuron order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSet")]
pub struct LabelSet {
    name: String,
    labels: Vec<String>,
    no_finding_label: Option<String>,
    non_lateralizable: Vec<String>,
    suppressed: Vec<String>,
}

impl TryFrom<RawLabelSet> for LabelSet {
    type Error = Error;

    fn try_from(raw: RawLabelSet) -> Result<Self> {
        LabelSet::new(raw.name, raw.labels)?
            .with_no_finding(raw.no_finding_label)?
            .with_non_lateralizable(raw.non_lateralizable)?
            .with_suppressed(raw.suppressed)
    }
}

impl LabelSet {
    pub fn new(name: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("label set must contain at least one label"));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.trim().is_empty() {
                return Err(Error::invalid("label names must be non-empty"));
            }
            if !seen.insert(l.as_str()) {
                return Err(Error::invalid(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self {
            name: name.into(),
            labels,
            no_finding_label: None,
            non_lateralizable: Vec::new(),
            suppressed: Vec::new(),
        })
    }

    pub fn with_no_finding(mut self, label: Option<String>) -> Result<Self> {
        if let Some(l) = &label {
            self.require_member(l, "no_finding_label")?;
        }
        self.no_finding_label = label;
        Ok(self)
    }

    pub fn with_non_lateralizable(mut self, labels: Vec<String>) -> Result<Self> {
        for l in &labels {
            self.require_member(l, "non_lateralizable")?;
        }
        self.non_lateralizable = dedup(labels);
        Ok(self)
    }

    pub fn with_suppressed(mut self, labels: Vec<String>) -> Result<Self> {
        for l in &labels {
            self.require_member(l, "suppressed")?;
        }
        self.suppressed = dedup(labels);
        Ok(self)
    }

    fn require_member(&self, label: &str, field: &str) -> Result<()> {
        if self.index_of(label).is_none() {
            return Err(Error::invalid(format!(
                "{field} entry {label:?} is not a label of set {:?}",
                self.name
            )));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn no_finding_label(&self) -> Option<&str> {
        self.no_finding_label.as_deref()
    }

    pub fn non_lateralizable(&self) -> &[String] {
        &self.non_lateralizable
    }

    pub fn suppressed(&self) -> &[String] {
        &self.suppressed
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn is_no_finding(&self, label: &str) -> bool {
        self.no_finding_label.as_deref() == Some(label)
    }

    pub fn is_suppressed(&self, label: &str) -> bool {
        self.suppressed.iter().any(|l| l == label)
    }

    pub fn is_lateralizable(&self, label: &str) -> bool {
        !self.non_lateralizable.iter().any(|l| l == label)
    }

    /// Labels that denote a pathology, i.e. everything but the no-finding class.
    pub fn pathologies(&self) -> impl Iterator<Item = (usize, &str)> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| !self.is_no_finding(l))
            .map(|(i, l)| (i, l.as_str()))
    }
}

fn dedup(labels: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    labels.into_iter().filter(|l| seen.insert(l.clone())).collect()
}

/// Probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ConfidenceScore(f64);

impl ConfidenceScore {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::invalid(format!("confidence {value} outside [0, 1]")))
        }
    }

    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            Self(0.0)
        } else {
            Self(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ConfidenceScore {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ConfidenceScore> for f64 {
    fn from(c: ConfidenceScore) -> f64 {
        c.0
    }
}

impl fmt::Display for ConfidenceScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.0)
    }
}

/// One confidence per label of a label set.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMap {
    label_set: LabelSetRef,
    scores: Vec<ConfidenceScore>,
}

impl DetectionMap {
    pub fn new(label_set: LabelSetRef, scores: Vec<ConfidenceScore>) -> Result<Self> {
        if scores.len() != label_set.len() {
            return Err(Error::Consistency(format!(
                "{} scores for {} labels",
                scores.len(),
                label_set.len()
            )));
        }
        Ok(Self { label_set, scores })
    }

    pub fn from_values(label_set: LabelSetRef, values: &[f64]) -> Result<Self> {
        let scores = values
            .iter()
            .map(|&v| ConfidenceScore::new(v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(label_set, scores)
    }

    /// Builds a map from `(label, value)` pairs; every label must be covered.
    pub fn from_pairs<'a>(label_set: LabelSetRef, pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self> {
        let mut values = vec![None; label_set.len()];
        for (label, v) in pairs {
            let i = label_set
                .index_of(label)
                .ok_or_else(|| Error::invalid(format!("unknown label {label:?}")))?;
            values[i] = Some(ConfidenceScore::new(v)?);
        }
        let scores = values
            .into_iter()
            .zip(label_set.labels())
            .map(|(v, l)| v.ok_or_else(|| Error::Consistency(format!("missing score for {l:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(label_set, scores)
    }

    pub fn label_set(&self) -> &LabelSetRef {
        &self.label_set
    }

    pub fn scores(&self) -> &[ConfidenceScore] {
        &self.scores
    }

    pub fn score(&self, label: &str) -> Option<ConfidenceScore> {
        self.label_set.index_of(label).map(|i| self.scores[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ConfidenceScore)> {
        self.label_set
            .labels()
            .iter()
            .map(String::as_str)
            .zip(self.scores.iter().copied())
    }

    /// Labels scoring at or above `threshold`, never including the no-finding label.
    pub fn binary_prediction_set(&self, threshold: f64) -> Labels {
        self.iter()
            .filter(|(l, s)| !self.label_set.is_no_finding(l) && s.value() >= threshold)
            .map(|(l, _)| l.to_string())
            .collect()
    }

    /// True when no pathology reaches `threshold`.
    pub fn is_no_finding(&self, threshold: f64) -> bool {
        self.iter()
            .filter(|(l, _)| !self.label_set.is_no_finding(l))
            .all(|(_, s)| s.value() < threshold)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.iter().map(|(l, s)| (l.to_string(), s.value())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub labels: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_uri: Option<String>,
}

impl ScanRecord {
    pub fn validate(&self, label_set: &LabelSet) -> Result<()> {
        if self.labels.len() != label_set.len() {
            return Err(Error::Consistency(format!(
                "record {:?} has {} labels, label set {:?} has {}",
                self.image_id,
                self.labels.len(),
                label_set.name(),
                label_set.len()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&v| v > 1) {
            return Err(Error::Consistency(format!(
                "record {:?} has non-binary label value {bad}",
                self.image_id
            )));
        }
        Ok(())
    }

    /// Positive pathology labels (no-finding excluded).
    pub fn positive_set(&self, label_set: &LabelSet) -> Labels {
        label_set
            .pathologies()
            .filter(|(i, _)| self.labels.get(*i) == Some(&1))
            .map(|(_, l)| l.to_string())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingsReport {
    pub text: String,
    pub engine_id: String,
    pub scan: String,
    pub prompt_fingerprint: String,
}
