//! Dictionary lookup of concept mentions in token sequences.
//!
//! A window is a candidate when it neither starts nor ends on a stop word and
//! its non-stop tokens, lowercased, equal a canonical form or synonym of some
//! concept (dictionary entries are normalized the same way). Candidates are
//! then filtered in three passes:
//!
//! 1. maximality: drop a candidate when another candidate starts at the same
//!    position and ends later;
//! 2. agglomeration: drop a candidate when it overlaps a candidate for one of
//!    its descendants in the hierarchy;
//! 3. left priority: greedily keep candidates ordered by start, then longer
//!    span, then smaller concept id, skipping any that overlap a kept one.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::ontology::Ontology;
use crate::{files, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mention {
    pub concept_id: String,
    pub start: usize,
    pub end: usize,
    /// Normalized dictionary entry that matched.
    pub matched_via: Vec<String>,
}

impl Mention {
    pub fn overlaps(&self, other: &Mention) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StopWordSet {
    words: BTreeSet<String>,
}

impl StopWordSet {
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        StopWordSet {
            words: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    /// One token per line.
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(files::read_to_string(path)?.lines()))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(&token.to_lowercase())
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Lowercases and removes stop words.
fn normalize(tokens: &[String], stops: &StopWordSet) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !stops.contains(t))
        .map(|t| t.to_lowercase())
        .collect()
}

/// Precomputed dictionary for repeated recognition against one ontology.
pub struct Recognizer<'a> {
    ontology: &'a Ontology,
    stops: StopWordSet,
    entries: HashMap<Vec<String>, Vec<String>>,
    longest: usize,
}

impl<'a> Recognizer<'a> {
    pub fn new(ontology: &'a Ontology, stops: &StopWordSet) -> Self {
        let mut entries: HashMap<Vec<String>, Vec<String>> = HashMap::new();
        for concept in ontology.concepts() {
            for form in concept.surface_forms() {
                let key = normalize(form, stops);
                if key.is_empty() {
                    continue;
                }
                let ids = entries.entry(key).or_default();
                if !ids.contains(&concept.id) {
                    ids.push(concept.id.clone());
                }
            }
        }
        let longest = entries.keys().map(Vec::len).max().unwrap_or(0);
        Recognizer {
            ontology,
            stops: stops.clone(),
            entries,
            longest,
        }
    }

    pub fn ontology(&self) -> &Ontology {
        self.ontology
    }

    pub fn stops(&self) -> &StopWordSet {
        &self.stops
    }

    pub fn recognize<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Mention> {
        let lowered: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
        let is_stop: Vec<bool> = lowered.iter().map(|t| self.stops.contains(t)).collect();
        let mut candidates = Vec::new();
        for start in 0..lowered.len() {
            if is_stop[start] {
                continue;
            }
            let mut key: Vec<String> = Vec::new();
            for end in start + 1..=lowered.len() {
                if is_stop[end - 1] {
                    continue;
                }
                key.push(lowered[end - 1].clone());
                if key.len() > self.longest {
                    break;
                }
                if let Some(ids) = self.entries.get(&key) {
                    for id in ids {
                        candidates.push(Mention {
                            concept_id: id.clone(),
                            start,
                            end,
                            matched_via: key.clone(),
                        });
                    }
                }
            }
        }
        resolve(candidates, self.ontology)
    }

    /// Non-stop tokens covered by a mention, in their original casing.
    pub fn content_tokens<'t, S: AsRef<str>>(&self, tokens: &'t [S], m: &Mention) -> Vec<&'t str> {
        tokens[m.start..m.end]
            .iter()
            .map(AsRef::as_ref)
            .filter(|t| !self.stops.contains(t))
            .collect()
    }
}

fn resolve(candidates: Vec<Mention>, ontology: &Ontology) -> Vec<Mention> {
    let maximal: Vec<Mention> = candidates
        .iter()
        .filter(|m| {
            !candidates
                .iter()
                .any(|o| o.start == m.start && o.end > m.end)
        })
        .cloned()
        .collect();
    let mut specific: Vec<Mention> = maximal
        .iter()
        .filter(|m| {
            !maximal.iter().any(|o| {
                o.concept_id != m.concept_id
                    && o.overlaps(m)
                    && ontology.is_ancestor(&m.concept_id, &o.concept_id)
            })
        })
        .cloned()
        .collect();
    specific.sort_by(|a, b| {
        a.start
            .cmp(&b.start)
            .then((b.end - b.start).cmp(&(a.end - a.start)))
            .then_with(|| a.concept_id.cmp(&b.concept_id))
    });
    let mut kept: Vec<Mention> = Vec::new();
    for m in specific {
        if !kept.iter().any(|k| k.overlaps(&m)) {
            kept.push(m);
        }
    }
    kept
}

/// One-shot recognition; prefer [`Recognizer`] for many sequences.
pub fn recognize<S: AsRef<str>>(
    tokens: &[S],
    ontology: &Ontology,
    stops: &StopWordSet,
) -> Vec<Mention> {
    Recognizer::new(ontology, stops).recognize(tokens)
}

pub fn concept_set(mentions: &[Mention]) -> BTreeSet<String> {
    mentions.iter().map(|m| m.concept_id.clone()).collect()
}
