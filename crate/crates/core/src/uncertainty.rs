//! Confidence-to-language mapping.
//!
//! A [`ThresholdBands`] table turns a probability into a hedged radiology
//! phrase. Bands are lower-inclusive and upper-exclusive; anything below the
//! suppression floor is not mentioned at all. Detector and grounder scores
//! come from different models, so each component gets its own table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ConfidenceScore;

pub const PLACEHOLDER: &str = "<pathology>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: f64,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBands")]
pub struct ThresholdBands {
    suppression_floor: f64,
    bands: Vec<Band>,
}

#[derive(Deserialize)]
struct RawBands {
    suppression_floor: f64,
    bands: Vec<Band>,
}

impl TryFrom<RawBands> for ThresholdBands {
    type Error = Error;
    fn try_from(raw: RawBands) -> Result<Self> {
        ThresholdBands::new(raw.suppression_floor, raw.bands)
    }
}

impl Default for ThresholdBands {
    fn default() -> Self {
        default_bands()
    }
}

/// Four bands from "cannot exclude" up to "there is", floor at 0.3.
pub fn default_bands() -> ThresholdBands {
    let bands = [
        (0.3, "cannot exclude <pathology>"),
        (0.5, "possible <pathology>"),
        (0.7, "probable <pathology>"),
        (0.9, "there is <pathology>"),
    ]
    .into_iter()
    .map(|(lower, t)| Band {
        lower,
        template: t.to_string(),
    })
    .collect();
    ThresholdBands::new(0.3, bands).expect("default bands are valid")
}

impl ThresholdBands {
    pub fn new(suppression_floor: f64, bands: Vec<Band>) -> Result<Self> {
        let first = bands
            .first()
            .ok_or_else(|| Error::invalid("threshold bands must not be empty"))?;
        if first.lower != suppression_floor {
            return Err(Error::invalid(format!(
                "first band starts at {} but the suppression floor is {suppression_floor}",
                first.lower
            )));
        }
        for b in &bands {
            if !(0.0..=1.0).contains(&b.lower) {
                return Err(Error::invalid(format!("band bound {} outside [0, 1]", b.lower)));
            }
            if b.template.matches(PLACEHOLDER).count() != 1 {
                return Err(Error::invalid(format!(
                    "template {:?} must contain {PLACEHOLDER} exactly once",
                    b.template
                )));
            }
        }
        if bands.windows(2).any(|w| w[0].lower >= w[1].lower) {
            return Err(Error::invalid("band bounds must be strictly increasing"));
        }
        Ok(Self {
            suppression_floor,
            bands,
        })
    }

    pub fn suppression_floor(&self) -> f64 {
        self.suppression_floor
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn is_suppressed(&self, confidence: f64) -> bool {
        confidence < self.suppression_floor
    }

    /// Index of the highest band whose lower bound is at or below `confidence`.
    pub fn band_index(&self, confidence: f64) -> Option<usize> {
        self.bands.iter().rposition(|b| b.lower <= confidence)
    }

    pub fn phrase(&self, confidence: ConfidenceScore, pathology: &str) -> Option<String> {
        self.band_index(confidence.value())
            .map(|i| self.bands[i].template.replacen(PLACEHOLDER, pathology, 1))
    }
}

/// Phrase for `pathology` at `confidence`, or `None` below the floor.
pub fn phrase_for(confidence: ConfidenceScore, pathology: &str, bands: &ThresholdBands) -> Option<String> {
    bands.phrase(confidence, pathology)
}
