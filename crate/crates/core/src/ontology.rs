//! The external concept universe: concepts, synonyms, semantic types and the
//! concept hierarchy, plus the equivalence-class map used to pool rates.
//!
//! Ontology files hold one JSON object per line:
//!
//! ```text
//! {"id":"C1","canonical":"warfarin","synonyms":["coumadin"],"semantic_type":"MEDICATION","parents":[]}
//! ```
//!
//! `selected` is optional and defaults to `true`. Token sequences are written
//! as whitespace-separated strings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{files, Error, Result};

fn default_selected() -> bool {
    true
}

/// One line of an ontology file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptRecord {
    pub id: String,
    pub canonical: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    pub semantic_type: String,
    #[serde(default)]
    pub parents: Vec<String>,
    #[serde(default = "default_selected")]
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Concept {
    pub id: String,
    pub canonical: Vec<String>,
    pub synonyms: Vec<Vec<String>>,
    pub semantic_type: String,
    pub parents: Vec<String>,
    pub selected: bool,
}

impl Concept {
    /// Canonical form followed by every synonym.
    pub fn surface_forms(&self) -> impl Iterator<Item = &[String]> {
        std::iter::once(self.canonical.as_slice()).chain(self.synonyms.iter().map(Vec::as_slice))
    }

    fn to_record(&self) -> ConceptRecord {
        ConceptRecord {
            id: self.id.clone(),
            canonical: self.canonical.join(" "),
            synonyms: self.synonyms.iter().map(|s| s.join(" ")).collect(),
            semantic_type: self.semantic_type.clone(),
            parents: self.parents.clone(),
            selected: self.selected,
        }
    }
}

pub(crate) fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ontology {
    concepts: BTreeMap<String, Concept>,
    semantic_types: BTreeSet<String>,
    selected: BTreeSet<String>,
    ancestors: BTreeMap<String, BTreeSet<String>>,
}

impl Ontology {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&files::read_to_string(path)?, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ConceptRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Self::from_records(records)
    }

    /// Validates and indexes a set of records.
    pub fn from_records(records: impl IntoIterator<Item = ConceptRecord>) -> Result<Self> {
        let mut concepts = BTreeMap::new();
        for rec in records {
            let canonical = tokenize(&rec.canonical);
            if canonical.is_empty() {
                return Err(Error::Validation(format!(
                    "concept {} has an empty canonical form",
                    rec.id
                )));
            }
            let concept = Concept {
                canonical,
                synonyms: rec
                    .synonyms
                    .iter()
                    .map(|s| tokenize(s))
                    .filter(|s| !s.is_empty())
                    .collect(),
                semantic_type: rec.semantic_type,
                parents: rec.parents,
                selected: rec.selected,
                id: rec.id.clone(),
            };
            if concepts.insert(rec.id.clone(), concept).is_some() {
                return Err(Error::Validation(format!("duplicate concept id {}", rec.id)));
            }
        }
        for c in concepts.values() {
            if let Some(p) = c.parents.iter().find(|p| !concepts.contains_key(*p)) {
                return Err(Error::Validation(format!(
                    "concept {} has dangling parent {p}",
                    c.id
                )));
            }
        }
        check_acyclic(&concepts)?;
        let ancestors = concepts
            .keys()
            .map(|id| (id.clone(), collect_ancestors(&concepts, id)))
            .collect();
        let semantic_types = concepts.values().map(|c| c.semantic_type.clone()).collect();
        let selected = concepts
            .values()
            .filter(|c| c.selected)
            .map(|c| c.id.clone())
            .collect();
        Ok(Ontology {
            concepts,
            semantic_types,
            selected,
            ancestors,
        })
    }

    pub fn to_jsonl(&self) -> String {
        self.concepts
            .values()
            .map(|c| serde_json::to_string(&c.to_record()).expect("record serializes") + "\n")
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        files::write(path, self.to_jsonl())
    }

    pub fn get(&self, id: &str) -> Option<&Concept> {
        self.concepts.get(id)
    }

    /// Concepts in id order.
    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn semantic_types(&self) -> &BTreeSet<String> {
        &self.semantic_types
    }

    pub fn selected(&self) -> &BTreeSet<String> {
        &self.selected
    }

    pub fn is_selected(&self, id: &str) -> bool {
        self.selected.contains(id)
    }

    /// True when `ancestor` is reachable from `id` through parent links.
    pub fn is_ancestor(&self, ancestor: &str, id: &str) -> bool {
        self.ancestors
            .get(id)
            .is_some_and(|set| set.contains(ancestor))
    }
}

fn collect_ancestors(concepts: &BTreeMap<String, Concept>, id: &str) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<&str> = concepts[id].parents.iter().map(String::as_str).collect();
    while let Some(p) = stack.pop() {
        if seen.insert(p.to_string()) {
            stack.extend(concepts[p].parents.iter().map(String::as_str));
        }
    }
    seen
}

fn check_acyclic(concepts: &BTreeMap<String, Concept>) -> Result<()> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
    for root in concepts.keys() {
        if marks.contains_key(root.as_str()) {
            continue;
        }
        // (node, next parent index)
        let mut stack = vec![(root.as_str(), 0usize)];
        marks.insert(root, Mark::Open);
        while let Some((node, next)) = stack.pop() {
            let parents = &concepts[node].parents;
            if next == parents.len() {
                marks.insert(node, Mark::Done);
                continue;
            }
            stack.push((node, next + 1));
            let p = parents[next].as_str();
            match marks.get(p) {
                Some(Mark::Open) => {
                    return Err(Error::Validation(format!(
                        "hierarchy cycle through {node} -> {p}"
                    )))
                }
                Some(Mark::Done) => {}
                None => {
                    marks.insert(p, Mark::Open);
                    stack.push((p, 0));
                }
            }
        }
    }
    Ok(())
}

/// The map φ from selected concepts to equivalence classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EquivalenceMap {
    Identity,
    SemanticType,
    Custom(BTreeMap<String, String>),
}

impl EquivalenceMap {
    /// A custom map; must cover every selected concept.
    pub fn custom(table: BTreeMap<String, String>, ontology: &Ontology) -> Result<Self> {
        if let Some(missing) = ontology.selected().iter().find(|id| !table.contains_key(*id)) {
            return Err(Error::Validation(format!(
                "custom equivalence map has no entry for {missing}"
            )));
        }
        Ok(EquivalenceMap::Custom(table))
    }

    /// Reads `concept_id,label` lines.
    pub fn load_custom(path: &Path, ontology: &Ontology) -> Result<Self> {
        let text = files::read_to_string(path)?;
        let mut table = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (id, label) = line.split_once(',').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected concept_id,label".into(),
            })?;
            table.insert(id.trim().to_string(), label.trim().to_string());
        }
        Self::custom(table, ontology)
    }

    /// Parses the CLI form `identity`, `semantic` or `custom:<path>`.
    pub fn from_arg(arg: &str, ontology: &Ontology) -> Result<Self> {
        match arg {
            "identity" | "id" => Ok(EquivalenceMap::Identity),
            "semantic" | "semantic_type" => Ok(EquivalenceMap::SemanticType),
            other => match other.strip_prefix("custom:") {
                Some(path) => Self::load_custom(Path::new(path), ontology),
                None => Err(Error::Config(format!("unknown equivalence map {other:?}"))),
            },
        }
    }

    pub fn apply(&self, ontology: &Ontology, concept_id: &str) -> Result<String> {
        if !ontology.is_selected(concept_id) {
            return Err(Error::Domain(format!(
                "{concept_id} is not a selected concept"
            )));
        }
        Ok(match self {
            EquivalenceMap::Identity => concept_id.to_string(),
            EquivalenceMap::SemanticType => ontology.concepts[concept_id].semantic_type.clone(),
            EquivalenceMap::Custom(table) => table[concept_id].clone(),
        })
    }
}
