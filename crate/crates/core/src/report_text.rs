//! Parsing of generated report text.
//!
//! Sentences are split after `.` or `?` followed by whitespace, unless the
//! period closes an initialism such as `e.g.` or a title-case abbreviation
//! such as `Dr.`. Within each sentence, label terms are matched as whole
//! word sequences. A mention is negated when a negation keyword (`no`, `not`,
//! `without`, `absent`) occurs earlier in the same sentence with no contrast
//! word (`but`, `however`, ...) in between, so the scope of `no` runs across
//! `or`/`and` chains like "no effusion, edema or pneumothorax".
//!
//! A label asserted anywhere in a report is positive even if it is negated
//! elsewhere; only labels that are never asserted end up in `negated`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::{LabelSet, Labels};

pub const NEGATION_KEYWORDS: [&str; 4] = ["no", "not", "without", "absent"];
pub const SCOPE_TERMINATORS: [&str; 5] = ["but", "however", "although", "though", "except"];

const DEFAULT_SYNONYMS: &str = include_str!("../data/synonyms.json");
const DEFAULT_TRIGGERS: &str = include_str!("../data/temporal_triggers.json");

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Splits report text into sentences. Concatenating the result with the
/// single separating whitespace characters restored gives back the input.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    for k in 0..chars.len() {
        let (pos, c) = chars[k];
        if !c.is_whitespace() || k == 0 {
            continue;
        }
        let prev = chars[k - 1].1;
        if prev != '.' && prev != '?' {
            continue;
        }
        // initialism such as "e.g." or "i.e."
        if k >= 4
            && is_word_char(chars[k - 4].1)
            && chars[k - 3].1 == '.'
            && is_word_char(chars[k - 2].1)
            && chars[k - 1].1 != '\n'
        {
            continue;
        }
        // title-case abbreviation such as "Dr." or "Mr."
        if k >= 3 && chars[k - 3].1.is_ascii_uppercase() && chars[k - 2].1.is_ascii_lowercase() && chars[k - 1].1 == '.'
        {
            continue;
        }
        out.push(&text[start..pos]);
        start = pos + c.len_utf8();
    }
    out.push(&text[start..]);
    out.retain(|s| !s.is_empty());
    out
}

/// A word with its byte span in the (lowercased) sentence.
#[derive(Debug, Clone)]
struct Word {
    text: String,
    start: usize,
    end: usize,
}

fn words(sentence: &str) -> Vec<Word> {
    let mut out = Vec::new();
    let mut cur: Option<usize> = None;
    for (i, c) in sentence.char_indices() {
        match (c.is_alphanumeric(), cur) {
            (true, None) => cur = Some(i),
            (false, Some(s)) => {
                out.push(Word {
                    text: sentence[s..i].to_string(),
                    start: s,
                    end: i,
                });
                cur = None;
            }
            _ => {}
        }
    }
    if let Some(s) = cur {
        out.push(Word {
            text: sentence[s..].to_string(),
            start: s,
            end: sentence.len(),
        });
    }
    out
}

fn term_words(term: &str) -> Vec<String> {
    words(&term.to_lowercase()).into_iter().map(|w| w.text).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synonym {
    pub term: String,
    pub label: String,
}

/// Extra surface forms for labels, e.g. "effusion" for "Pleural Effusion".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Synonyms(pub Vec<Synonym>);

impl Synonyms {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The shipped synonym table.
    pub fn defaults() -> Self {
        Self::from_json(DEFAULT_SYNONYMS).expect("bundled synonyms parse")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub sentence: usize,
    /// Byte span in the lowercased sentence.
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub negated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub positive: Labels,
    pub negated: Labels,
    pub evidence: BTreeMap<String, Evidence>,
}

/// Compiled matcher for one label set plus synonyms.
#[derive(Debug, Clone)]
pub struct Extractor {
    /// (term words, label), longest terms first.
    terms: Vec<(Vec<String>, String)>,
}

#[derive(Debug, Clone)]
struct Mention {
    label: String,
    first_word: usize,
    start: usize,
    end: usize,
}

impl Extractor {
    /// Synonyms pointing at labels outside the set are ignored, so one table
    /// can serve several label sets. The no-finding label is never matched.
    pub fn new(label_set: &LabelSet, synonyms: &Synonyms) -> Self {
        let mut terms: Vec<(Vec<String>, String)> = label_set
            .pathologies()
            .map(|(_, l)| (term_words(l), l.to_string()))
            .collect();
        for s in &synonyms.0 {
            if label_set.index_of(&s.label).is_some() && !label_set.is_no_finding(&s.label) {
                terms.push((term_words(&s.term), s.label.clone()));
            }
        }
        terms.retain(|(w, _)| !w.is_empty());
        terms.sort_by_key(|t| std::cmp::Reverse(t.0.len()));
        let mut seen = BTreeSet::new();
        terms.retain(|(w, l)| seen.insert((w.clone(), l.clone())));
        Self { terms }
    }

    fn mentions(&self, ws: &[Word]) -> Vec<Mention> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < ws.len() {
            let hit = self
                .terms
                .iter()
                .find(|(tw, _)| tw.len() <= ws.len() - i && tw.iter().zip(&ws[i..]).all(|(t, w)| *t == w.text));
            match hit {
                Some((tw, label)) => {
                    out.push(Mention {
                        label: label.clone(),
                        first_word: i,
                        start: ws[i].start,
                        end: ws[i + tw.len() - 1].end,
                    });
                    i += tw.len();
                }
                None => i += 1,
            }
        }
        out
    }

    pub fn extract(&self, text: &str) -> ExtractionResult {
        let mut asserted: BTreeMap<String, Evidence> = BTreeMap::new();
        let mut denied: BTreeMap<String, Evidence> = BTreeMap::new();
        for (si, sentence) in split_sentences(text).into_iter().enumerate() {
            let lower = sentence.to_lowercase();
            let ws = words(&lower);
            let mentions = self.mentions(&ws);
            // whether a negation is in scope after each word
            let mut scope: Vec<bool> = Vec::with_capacity(ws.len());
            let mut in_scope = false;
            for w in &ws {
                if NEGATION_KEYWORDS.contains(&w.text.as_str()) {
                    in_scope = true;
                } else if SCOPE_TERMINATORS.contains(&w.text.as_str()) {
                    in_scope = false;
                }
                scope.push(in_scope);
            }
            for m in mentions {
                let negated = m.first_word > 0 && scope[m.first_word - 1];
                let ev = Evidence {
                    sentence: si,
                    start: m.start,
                    end: m.end,
                    text: lower[m.start..m.end].to_string(),
                    negated,
                };
                let bucket = if negated { &mut denied } else { &mut asserted };
                bucket.entry(m.label).or_insert(ev);
            }
        }
        let positive: Labels = asserted.keys().cloned().collect();
        let negated: Labels = denied.keys().filter(|l| !positive.contains(*l)).cloned().collect();
        let mut evidence = asserted;
        for l in &negated {
            evidence.insert(l.clone(), denied[l].clone());
        }
        ExtractionResult {
            positive,
            negated,
            evidence,
        }
    }
}

pub fn extract_pathologies(text: &str, label_set: &LabelSet, synonyms: &Synonyms) -> ExtractionResult {
    Extractor::new(label_set, synonyms).extract(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalTrigger {
    pub phrase: String,
    pub sentence: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalFlag {
    pub flagged: bool,
    pub triggers: Vec<TemporalTrigger>,
}

/// Phrases that suggest comparison with a prior study or change over time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemporalTriggers(pub Vec<String>);

impl Default for TemporalTriggers {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TRIGGERS).expect("bundled triggers parse")
    }
}

impl TemporalTriggers {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn detect_temporal_language(text: &str) -> TemporalFlag {
    detect_temporal_language_with(text, &TemporalTriggers::default())
}

/// Advisory flag only; the clinician's judgement is authoritative.
pub fn detect_temporal_language_with(text: &str, triggers: &TemporalTriggers) -> TemporalFlag {
    let compiled: Vec<(Vec<String>, &str)> = triggers
        .0
        .iter()
        .map(|t| (term_words(t), t.as_str()))
        .filter(|(w, _)| !w.is_empty())
        .collect();
    let mut found = Vec::new();
    for (si, sentence) in split_sentences(text).into_iter().enumerate() {
        let ws: Vec<String> = words(&sentence.to_lowercase()).into_iter().map(|w| w.text).collect();
        for (tw, phrase) in &compiled {
            if ws.windows(tw.len()).any(|win| win == tw.as_slice()) {
                found.push(TemporalTrigger {
                    phrase: phrase.to_string(),
                    sentence: si,
                });
            }
        }
    }
    TemporalFlag {
        flagged: !found.is_empty(),
        triggers: found,
    }
}
