//! Phrase-grounding backends and the lateralisation logic built on them.
//!
//! A backend scores one phrase against one image and reports the peak
//! activation together with the horizontal position of that peak. Nothing is
//! decided from a non-positive activation: such responses abstain.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, Error, Result};
use crate::par::{self, Execution};
use crate::types::{ConfidenceScore, LabelSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingResponse {
    pub max_activation: f64,
    /// Horizontal position of the peak in image coordinates, image-left = 0.
    /// Only present when `max_activation > 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid_x_fraction: Option<f64>,
}

impl GroundingResponse {
    /// Validates the fields and drops a centroid attached to a non-positive
    /// activation.
    pub fn new(max_activation: f64, centroid_x_fraction: Option<f64>) -> Result<Self, BackendError> {
        if !max_activation.is_finite() {
            return Err(BackendError::Protocol(format!(
                "non-finite activation {max_activation}"
            )));
        }
        if let Some(c) = centroid_x_fraction {
            if !(0.0..=1.0).contains(&c) {
                return Err(BackendError::Protocol(format!("centroid {c} outside [0, 1]")));
            }
        }
        Ok(Self {
            max_activation,
            centroid_x_fraction: centroid_x_fraction.filter(|_| max_activation > 0.0),
        })
    }

    pub fn silent() -> Self {
        Self {
            max_activation: 0.0,
            centroid_x_fraction: None,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.max_activation > 0.0
    }
}

pub trait GroundingBackend: Send + Sync {
    fn ground(&self, image_id: &str, phrase: &str) -> Result<GroundingResponse, BackendError>;
}

impl<T: GroundingBackend + ?Sized> GroundingBackend for std::sync::Arc<T> {
    fn ground(&self, image_id: &str, phrase: &str) -> Result<GroundingResponse, BackendError> {
        (**self).ground(image_id, phrase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubEntry {
    pub image_id: String,
    pub phrase: String,
    pub max_activation: f64,
    #[serde(default)]
    pub centroid_x_fraction: Option<f64>,
}

fn normalize_phrase(p: &str) -> String {
    p.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Deterministic backend answering from a table of planted responses.
/// Unknown images are not-found errors; unplanted phrases on known images
/// get a zero activation.
#[derive(Debug, Clone, Default)]
pub struct StubGrounder {
    images: HashSet<String>,
    table: HashMap<(String, String), GroundingResponse>,
}

impl StubGrounder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = StubEntry>) -> Result<Self> {
        let mut s = Self::new();
        for e in entries {
            s.plant(&e.image_id, &e.phrase, e.max_activation, e.centroid_x_fraction)?;
        }
        Ok(s)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let entries: Vec<StubEntry> = serde_json::from_str(json)?;
        Self::from_entries(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn add_image(&mut self, image_id: &str) -> &mut Self {
        self.images.insert(image_id.to_string());
        self
    }

    pub fn plant(&mut self, image_id: &str, phrase: &str, activation: f64, centroid: Option<f64>) -> Result<&mut Self> {
        let r = GroundingResponse::new(activation, centroid)?;
        self.images.insert(image_id.to_string());
        self.table.insert((image_id.to_string(), normalize_phrase(phrase)), r);
        Ok(self)
    }
}

impl GroundingBackend for StubGrounder {
    fn ground(&self, image_id: &str, phrase: &str) -> Result<GroundingResponse, BackendError> {
        if !self.images.contains(image_id) {
            return Err(BackendError::NotFound(format!("image {image_id:?}")));
        }
        Ok(self
            .table
            .get(&(image_id.to_string(), normalize_phrase(phrase)))
            .copied()
            .unwrap_or_else(GroundingResponse::silent))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Abstain,
}

impl Side {
    pub fn word(self) -> Option<&'static str> {
        match self {
            Side::Left => Some("left"),
            Side::Right => Some("right"),
            Side::Abstain => None,
        }
    }
}

/// How backend image coordinates relate to the patient's sides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateConvention {
    /// Image-left is reported as left.
    #[default]
    ImageSide,
    /// Radiological display: image-left is the patient's right.
    PatientSide,
}

/// The single place where a horizontal centroid becomes a side.
pub fn side_from_centroid(centroid_x_fraction: f64, convention: CoordinateConvention) -> Side {
    let image_left = centroid_x_fraction < 0.5;
    match (convention, image_left) {
        (CoordinateConvention::ImageSide, true) | (CoordinateConvention::PatientSide, false) => Side::Left,
        _ => Side::Right,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingOutcome {
    pub pathology: String,
    pub location: Side,
    /// Winning activation clamped to `[0, 1]`; zero when abstaining.
    pub confidence: ConfidenceScore,
    pub left: GroundingResponse,
    pub right: GroundingResponse,
}

impl GroundingOutcome {
    pub fn winning(&self) -> Option<&GroundingResponse> {
        match self.location {
            Side::Left => Some(&self.left),
            Side::Right => Some(&self.right),
            Side::Abstain => None,
        }
    }
}

/// Chooses between a left and a right response. Equal positive activations
/// resolve to left.
pub fn decide_side(left: &GroundingResponse, right: &GroundingResponse) -> (Side, ConfidenceScore) {
    let best = left.max_activation.max(right.max_activation);
    if best <= 0.0 {
        return (Side::Abstain, ConfidenceScore::clamped(0.0));
    }
    let side = if left.max_activation >= right.max_activation {
        Side::Left
    } else {
        Side::Right
    };
    (side, ConfidenceScore::clamped(best))
}

/// Grounds "left <pathology>" and "right <pathology>" and keeps the stronger
/// positive side.
pub fn lateralize(
    backend: &dyn GroundingBackend,
    label_set: &LabelSet,
    pathology: &str,
    image_id: &str,
    exec: Execution,
) -> Result<GroundingOutcome> {
    if label_set.index_of(pathology).is_none() {
        return Err(Error::invalid(format!("unknown pathology {pathology:?}")));
    }
    if !label_set.is_lateralizable(pathology) {
        return Err(Error::invalid(format!("{pathology:?} is not lateralizable")));
    }
    let term = pathology.to_lowercase();
    let (left, right) = par::join(
        exec,
        || backend.ground(image_id, &format!("left {term}")),
        || backend.ground(image_id, &format!("right {term}")),
    );
    let (left, right) = (left?, right?);
    let (location, confidence) = decide_side(&left, &right);
    Ok(GroundingOutcome {
        pathology: pathology.to_string(),
        location,
        confidence,
        left,
        right,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TwoOptionChoice {
    A,
    B,
    Abstain,
}

/// Grounds both phrasings and picks the one with the higher positive
/// activation; ties go to `a`.
pub fn benchmark_two_option(
    backend: &dyn GroundingBackend,
    option_a: &str,
    option_b: &str,
    image_id: &str,
) -> Result<TwoOptionChoice, BackendError> {
    let a = backend.ground(image_id, option_a)?;
    let b = backend.ground(image_id, option_b)?;
    Ok(match decide_side(&a, &b).0 {
        Side::Left => TwoOptionChoice::A,
        Side::Right => TwoOptionChoice::B,
        Side::Abstain => TwoOptionChoice::Abstain,
    })
}

/// Grounds a side-less phrase and reads the side off the peak position.
pub fn benchmark_position(
    backend: &dyn GroundingBackend,
    phrase_without_side: &str,
    image_id: &str,
    convention: CoordinateConvention,
) -> Result<Side, BackendError> {
    let r = backend.ground(image_id, phrase_without_side)?;
    Ok(match r.centroid_x_fraction {
        Some(c) if r.is_positive() => side_from_centroid(c, convention),
        _ => Side::Abstain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::fixtures::small_set;

    fn stub() -> StubGrounder {
        let mut s = StubGrounder::new();
        s.plant("img1", "left pleural effusion", 0.4, Some(0.3)).unwrap();
        s.plant("img1", "right pleural effusion", 0.7, Some(0.8)).unwrap();
        s.plant("img2", "left pleural effusion", -0.1, None).unwrap();
        s.plant("img3", "left pleural effusion", 0.5, Some(0.2)).unwrap();
        s.plant("img3", "right pleural effusion", 0.5, Some(0.7)).unwrap();
        s.plant("img4", "pleural effusion", 0.6, Some(0.2)).unwrap();
        s.plant("img4", "edema", 0.6, Some(0.5)).unwrap();
        s.plant("img4", "opacity", 0.0, Some(0.9)).unwrap();
        s
    }

    #[test]
    fn stub_echo_and_defaults() {
        let s = stub();
        let r = s.ground("img1", "Left  Pleural Effusion").unwrap();
        assert_eq!((r.max_activation, r.centroid_x_fraction), (0.4, Some(0.3)));
        assert_eq!(s.ground("img1", "cardiomegaly").unwrap(), GroundingResponse::silent());
        assert!(matches!(s.ground("nope", "x"), Err(BackendError::NotFound(_))));
    }

    #[test]
    fn response_validation() {
        assert!(GroundingResponse::new(f64::NAN, None).is_err());
        assert!(GroundingResponse::new(0.5, Some(1.5)).is_err());
        assert_eq!(
            GroundingResponse::new(-0.2, Some(0.3)).unwrap().centroid_x_fraction,
            None
        );
    }

    #[test]
    fn lateralize_examples() {
        let set = small_set();
        let s = stub();
        let o = lateralize(&s, &set, "Pleural Effusion", "img1", Execution::Sequential).unwrap();
        assert_eq!((o.location, o.confidence.value()), (Side::Right, 0.7));
        let o = lateralize(&s, &set, "Pleural Effusion", "img2", Execution::Parallel).unwrap();
        assert_eq!(o.location, Side::Abstain);
        assert!(o.winning().is_none());
        let o = lateralize(&s, &set, "Pleural Effusion", "img3", Execution::Sequential).unwrap();
        assert_eq!(o.location, Side::Left);
        assert!(lateralize(&s, &set, "Cardiomegaly", "img1", Execution::Sequential).is_err());
        assert!(matches!(
            lateralize(&s, &set, "Edema", "missing", Execution::Sequential),
            Err(Error::Backend(BackendError::NotFound(_)))
        ));
    }

    #[test]
    fn two_option_examples() {
        let mut s = StubGrounder::new();
        s.plant("i", "a", 0.9, Some(0.1))
            .unwrap()
            .plant("i", "b", 0.1, Some(0.9))
            .unwrap();
        s.plant("j", "a", -0.3, None).unwrap();
        s.plant("k", "b", 0.2, Some(0.4)).unwrap();
        assert_eq!(benchmark_two_option(&s, "a", "b", "i").unwrap(), TwoOptionChoice::A);
        assert_eq!(
            benchmark_two_option(&s, "a", "b", "j").unwrap(),
            TwoOptionChoice::Abstain
        );
        assert_eq!(benchmark_two_option(&s, "a", "b", "k").unwrap(), TwoOptionChoice::B);
    }

    #[test]
    fn position_examples() {
        let s = stub();
        let conv = CoordinateConvention::ImageSide;
        assert_eq!(
            benchmark_position(&s, "pleural effusion", "img4", conv).unwrap(),
            Side::Left
        );
        assert_eq!(benchmark_position(&s, "edema", "img4", conv).unwrap(), Side::Right);
        assert_eq!(benchmark_position(&s, "opacity", "img4", conv).unwrap(), Side::Abstain);
    }

    #[test]
    fn patient_side_convention_mirrors() {
        assert_eq!(side_from_centroid(0.2, CoordinateConvention::ImageSide), Side::Left);
        assert_eq!(side_from_centroid(0.2, CoordinateConvention::PatientSide), Side::Right);
        assert_eq!(side_from_centroid(0.5, CoordinateConvention::ImageSide), Side::Right);
        assert_eq!(side_from_centroid(0.5, CoordinateConvention::PatientSide), Side::Left);
    }

    #[test]
    fn fixture_json() {
        let json = r#"[{"image_id":"a","phrase":"left edema","max_activation":0.8,"centroid_x_fraction":0.2}]"#;
        let s = StubGrounder::from_json(json).unwrap();
        assert_eq!(s.ground("a", "left edema").unwrap().max_activation, 0.8);
    }
}
