//! Mappings from clinician ratings to numbers that can be averaged.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Brevity {
    TooConcise,
    Good,
    TooVerbose,
}

impl FromStr for Brevity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .chars()
            .map(|c| {
                if c == ' ' || c == '-' {
                    '_'
                } else {
                    c.to_ascii_lowercase()
                }
            })
            .collect();
        match norm.as_str() {
            "too_concise" => Ok(Brevity::TooConcise),
            "good" => Ok(Brevity::Good),
            "too_verbose" => Ok(Brevity::TooVerbose),
            _ => Err(Error::invalid(format!("unknown brevity tag {s:?}"))),
        }
    }
}

impl fmt::Display for Brevity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Brevity::TooConcise => "too_concise",
            Brevity::Good => "good",
            Brevity::TooVerbose => "too_verbose",
        })
    }
}

/// One raw rating as entered by a clinician.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawScore {
    Rubric(String),
    Brevity(Brevity),
    Rank(u32),
    Accuracy(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricMaps {
    /// Reference-comparison rubric letter to score.
    pub rubric: BTreeMap<String, i32>,
    pub brevity: BTreeMap<Brevity, i32>,
    pub rank_to_score: BTreeMap<u32, i32>,
    pub accuracy_min: u8,
    pub accuracy_max: u8,
}

impl Default for RubricMaps {
    fn default() -> Self {
        // X and C both map to 0, and C2 (not A2) carries +2; kept as published
        let rubric = [("X", 0), ("B2", -2), ("B1", -1), ("C", 0), ("A1", 1), ("C2", 2)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let brevity = [(Brevity::TooConcise, -1), (Brevity::Good, 0), (Brevity::TooVerbose, 1)]
            .into_iter()
            .collect();
        let rank_to_score = [(1, 3), (2, 2), (3, 1), (4, 1)].into_iter().collect();
        Self {
            rubric,
            brevity,
            rank_to_score,
            accuracy_min: 1,
            accuracy_max: 5,
        }
    }
}

impl RubricMaps {
    pub fn apply(&self, raw: &RawScore) -> Result<i32> {
        match raw {
            RawScore::Rubric(letter) => self.rubric_score(letter),
            RawScore::Brevity(b) => self.brevity_score(*b),
            RawScore::Rank(r) => self.rank_score(*r),
            RawScore::Accuracy(a) => self.accuracy_score(*a),
        }
    }

    pub fn rubric_score(&self, letter: &str) -> Result<i32> {
        self.rubric
            .get(letter.trim())
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown rubric letter {letter:?}")))
    }

    pub fn brevity_score(&self, b: Brevity) -> Result<i32> {
        self.brevity
            .get(&b)
            .copied()
            .ok_or_else(|| Error::invalid(format!("brevity tag {b} is not mapped")))
    }

    pub fn rank_score(&self, rank: u32) -> Result<i32> {
        self.rank_to_score
            .get(&rank)
            .copied()
            .ok_or_else(|| Error::invalid(format!("rank {rank} has no score mapping")))
    }

    pub fn accuracy_score(&self, a: u8) -> Result<i32> {
        if (self.accuracy_min..=self.accuracy_max).contains(&a) {
            Ok(a as i32)
        } else {
            Err(Error::invalid(format!(
                "accuracy {a} outside {}..={}",
                self.accuracy_min, self.accuracy_max
            )))
        }
    }

    pub fn is_rubric_letter(&self, letter: &str) -> bool {
        self.rubric.contains_key(letter.trim())
    }
}

/// Meaning of each point on the 1-5 accuracy scale.
pub const ACCURACY_SCALE: [(u8, &str); 5] = [
    (5, "Perfect report, accurate and detailed, no hallucinations"),
    (4, "Generally accurate, a few missing details"),
    (
        3,
        "Key details present but needs further interpretation; no patient-management issues",
    ),
    (2, "Missing key details, not dangerous"),
    (1, "Dangerous (would lead to mismanagement)"),
];
