//! Utilization rates per equivalence class, reference marginals, the
//! high-utilization concept set, and semantic relative error.
//!
//! For a class `E`, the numerator counts (concept, pair) events where a
//! selected concept `c` with `φ(c) = E` occurs in both source and reference;
//! the denominator counts events where it occurs in the source. Occurrence is
//! set membership: repeated mentions inside one sequence count once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::corpus::ParallelPair;
use crate::ontology::{EquivalenceMap, Ontology};
use crate::recognizer::concept_set;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub numerator: u64,
    pub denominator: u64,
}

impl ClassCounts {
    /// `None` when the class never occurs in a source.
    pub fn rate(&self) -> Option<f64> {
        (self.denominator > 0).then(|| self.numerator as f64 / self.denominator as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtilizationTable {
    classes: BTreeMap<String, ClassCounts>,
    concept_class: BTreeMap<String, String>,
    reference_hits: BTreeMap<String, u64>,
    n_pairs: u64,
}

impl UtilizationTable {
    pub fn classes(&self) -> &BTreeMap<String, ClassCounts> {
        &self.classes
    }

    pub fn class_of(&self, concept_id: &str) -> Option<&str> {
        self.concept_class.get(concept_id).map(String::as_str)
    }

    pub fn class_rate(&self, class: &str) -> Option<f64> {
        self.classes.get(class).and_then(ClassCounts::rate)
    }

    /// r_φ(c): the rate of the class the concept belongs to.
    pub fn concept_rate(&self, concept_id: &str) -> Option<f64> {
        self.class_of(concept_id).and_then(|c| self.class_rate(c))
    }

    /// p̂(c ∈ y): fraction of references that contain the concept.
    pub fn marginal(&self, concept_id: &str) -> Option<f64> {
        if self.n_pairs == 0 {
            return None;
        }
        self.concept_class
            .contains_key(concept_id)
            .then(|| self.reference_hits.get(concept_id).copied().unwrap_or(0) as f64 / self.n_pairs as f64)
    }

    /// Mean reference marginal over a class's member concepts.
    pub fn class_marginal(&self, class: &str) -> Option<f64> {
        let members: Vec<f64> = self
            .concept_class
            .iter()
            .filter(|(_, c)| c.as_str() == class)
            .filter_map(|(id, _)| self.marginal(id))
            .collect();
        (!members.is_empty()).then(|| members.iter().sum::<f64>() / members.len() as f64)
    }

    pub fn n_pairs(&self) -> u64 {
        self.n_pairs
    }

    /// Header `class,numerator,denominator,rate,marginal`; undefined values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,numerator,denominator,rate,marginal\n");
        for (class, counts) in &self.classes {
            let rate = counts.rate().map(|r| r.to_string()).unwrap_or_default();
            let marginal = self
                .class_marginal(class)
                .map(|m| m.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{class},{},{},{rate},{marginal}",
                counts.numerator, counts.denominator
            );
        }
        out
    }
}

/// Counts over explicit (source concepts, reference concepts) sets.
pub fn estimate_from_sets<'a>(
    sets: impl IntoIterator<Item = (&'a BTreeSet<String>, &'a BTreeSet<String>)>,
    ontology: &Ontology,
    map: &EquivalenceMap,
) -> Result<UtilizationTable> {
    let mut concept_class = BTreeMap::new();
    let mut classes: BTreeMap<String, ClassCounts> = BTreeMap::new();
    for id in ontology.selected() {
        let class = map.apply(ontology, id)?;
        classes.entry(class.clone()).or_default();
        concept_class.insert(id.clone(), class);
    }
    let mut reference_hits: BTreeMap<String, u64> = BTreeMap::new();
    let mut n_pairs = 0;
    for (src, reference) in sets {
        n_pairs += 1;
        for c in reference {
            if concept_class.contains_key(c) {
                *reference_hits.entry(c.clone()).or_default() += 1;
            }
        }
        for c in src {
            let Some(class) = concept_class.get(c) else {
                continue;
            };
            let counts = classes.get_mut(class).expect("class registered");
            counts.denominator += 1;
            if reference.contains(c) {
                counts.numerator += 1;
            }
        }
    }
    Ok(UtilizationTable {
        classes,
        concept_class,
        reference_hits,
        n_pairs,
    })
}

/// Estimates the table from annotated pairs.
pub fn estimate(
    pairs: &[ParallelPair],
    ontology: &Ontology,
    map: &EquivalenceMap,
) -> Result<UtilizationTable> {
    let sets: Vec<(BTreeSet<String>, BTreeSet<String>)> = pairs
        .iter()
        .map(|p| {
            (
                concept_set(&p.source_mentions),
                concept_set(&p.reference_mentions),
            )
        })
        .collect();
    estimate_from_sets(sets.iter().map(|(s, r)| (s, r)), ontology, map)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HighUtilSet {
    pub concepts: BTreeSet<String>,
    /// `None` when every selected concept was taken.
    pub lift_threshold: Option<f64>,
}

impl HighUtilSet {
    /// C_HU = C_sel.
    pub fn all_selected(ontology: &Ontology) -> Self {
        HighUtilSet {
            concepts: ontology.selected().clone(),
            lift_threshold: None,
        }
    }

    pub fn contains(&self, concept_id: &str) -> bool {
        self.concepts.contains(concept_id)
    }
}

/// Concepts whose class rate exceeds their reference marginal by at least
/// `lift_threshold`. A zero marginal with a positive rate counts as infinite lift.
pub fn identify_high_utilization(
    table: &UtilizationTable,
    lift_threshold: f64,
) -> Result<HighUtilSet> {
    if !(lift_threshold > 1.0) {
        return Err(Error::Domain(format!(
            "lift threshold must exceed 1, got {lift_threshold}"
        )));
    }
    let concepts = table
        .concept_class
        .keys()
        .filter(|id| {
            let (Some(rate), Some(marginal)) = (table.concept_rate(id), table.marginal(id)) else {
                return false;
            };
            passes_lift(rate, marginal, lift_threshold)
        })
        .cloned()
        .collect();
    Ok(HighUtilSet {
        concepts,
        lift_threshold: Some(lift_threshold),
    })
}

pub(crate) fn passes_lift(rate: f64, marginal: f64, threshold: f64) -> bool {
    if marginal == 0.0 {
        rate > 0.0
    } else {
        rate / marginal >= threshold
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelativeErrors {
    pub per_class: BTreeMap<String, f64>,
    /// Classes whose reference rate is zero or undefined (or model rate undefined).
    pub skipped: Vec<String>,
}

impl RelativeErrors {
    pub fn mean(&self) -> Option<f64> {
        (!self.per_class.is_empty())
            .then(|| self.per_class.values().sum::<f64>() / self.per_class.len() as f64)
    }
}

pub fn relative_error(model_rate: f64, reference_rate: f64) -> f64 {
    (model_rate - reference_rate).abs() / reference_rate
}

/// ε_s = |r̂ − r| / r for every class with a positive reference rate.
pub fn semantic_relative_error(
    model: &UtilizationTable,
    reference: &UtilizationTable,
) -> RelativeErrors {
    let mut out = RelativeErrors::default();
    for class in reference.classes.keys() {
        match (reference.class_rate(class), model.class_rate(class)) {
            (Some(r), Some(m)) if r > 0.0 => {
                out.per_class.insert(class.clone(), relative_error(m, r));
            }
            _ => out.skipped.push(class.clone()),
        }
    }
    out
}
