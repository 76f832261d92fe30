//! Synthetic parallel corpora with planted utilization rates.
//!
//! Every source holds Zipf-distributed filler tokens with one to three concept
//! mentions spliced in. Each distinct source concept is copied into the
//! reference independently with its semantic type's rate. References list the
//! copied concepts first, in source order, then their own filler. Surface forms
//! are the canonical form with probability `1 - synonym_prob`, otherwise the
//! synonym, on both sides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::corpus::{Corpus, ParallelPair, Split, Vocab};
use crate::ontology::{ConceptRecord, Ontology};
use crate::recognizer::{Recognizer, StopWordSet};
use crate::{files, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TypeSpec {
    pub label: String,
    pub rate: f64,
    pub n_concepts: usize,
    /// Relative frequency of this type among source mentions.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_pairs: usize,
    pub types: Vec<TypeSpec>,
    pub filler_vocab_size: usize,
    pub source_len: (usize, usize),
    pub reference_len: (usize, usize),
    pub synonym_prob: f64,
    pub filler_zipf: f64,
    pub concept_zipf: f64,
    pub multi_token_fraction: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        let types = [("MEDICATION", 0.9), ("FINDING", 0.7), ("PROCEDURE", 0.4), ("ACTIVITY", 0.1)]
            .into_iter()
            .map(|(label, rate)| TypeSpec {
                label: label.into(),
                rate,
                n_concepts: 10,
                weight: 1.0,
            })
            .collect();
        GeneratorSpec {
            seed: 17,
            n_pairs: 5000,
            types,
            filler_vocab_size: 60,
            source_len: (6, 12),
            reference_len: (2, 5),
            synonym_prob: 0.2,
            filler_zipf: 1.1,
            concept_zipf: 1.0,
            multi_token_fraction: 0.25,
        }
    }
}

fn parse_range(raw: &str, key: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("bad range for {key}: {raw:?} (want lo..hi)"));
    let (lo, hi) = raw.split_once("..").ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.n_pairs < 3 {
            return fail(format!("n_pairs must be at least 3, got {}", self.n_pairs));
        }
        if self.types.is_empty() {
            return fail("at least one semantic type is required".into());
        }
        for t in &self.types {
            if !(0.0..=1.0).contains(&t.rate) {
                return fail(format!("rate of {} outside [0, 1]", t.label));
            }
            if t.n_concepts == 0 || !(t.weight > 0.0) {
                return fail(format!("type {} needs positive counts and weight", t.label));
            }
            if t.label.is_empty() || t.label.contains([',', ':', ' ']) {
                return fail(format!("bad type label {:?}", t.label));
            }
        }
        if self.filler_vocab_size == 0 {
            return fail("filler_vocab_size must be positive".into());
        }
        if self.source_len.0 > self.source_len.1 || self.reference_len.0 > self.reference_len.1 {
            return fail("length ranges must be nonempty".into());
        }
        if self.reference_len.0 == 0 {
            return fail("reference_len must start at 1 or more".into());
        }
        for (name, p) in [
            ("synonym_prob", self.synonym_prob),
            ("multi_token_fraction", self.multi_token_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("gen.seed", self.seed);
        c.set("gen.n_pairs", self.n_pairs);
        let types: Vec<String> = self
            .types
            .iter()
            .map(|t| format!("{}:{}:{}:{}", t.label, t.rate, t.n_concepts, t.weight))
            .collect();
        c.set("gen.types", types.join(","));
        c.set("gen.filler_vocab_size", self.filler_vocab_size);
        c.set("gen.source_len", format!("{}..{}", self.source_len.0, self.source_len.1));
        c.set(
            "gen.reference_len",
            format!("{}..{}", self.reference_len.0, self.reference_len.1),
        );
        c.set("gen.synonym_prob", self.synonym_prob);
        c.set("gen.filler_zipf", self.filler_zipf);
        c.set("gen.concept_zipf", self.concept_zipf);
        c.set("gen.multi_token_fraction", self.multi_token_fraction);
        c
    }

    /// Missing keys fall back to [`GeneratorSpec::default`].
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = GeneratorSpec::default();
        let types = match c.get_str("gen.types") {
            None => d.types.clone(),
            Some("") => vec![],
            Some(raw) => raw
                .split(',')
                .map(|item| {
                    let f: Vec<&str> = item.trim().split(':').collect();
                    let bad = || Error::Config(format!("bad type spec {item:?} (label:rate:n:weight)"));
                    if f.len() != 4 {
                        return Err(bad());
                    }
                    Ok(TypeSpec {
                        label: f[0].to_string(),
                        rate: f[1].parse().map_err(|_| bad())?,
                        n_concepts: f[2].parse().map_err(|_| bad())?,
                        weight: f[3].parse().map_err(|_| bad())?,
                    })
                })
                .collect::<Result<_>>()?,
        };
        let range = |key: &str, default| match c.get_str(key) {
            None => Ok(default),
            Some(raw) => parse_range(raw, key),
        };
        Ok(GeneratorSpec {
            seed: c.get_or("gen.seed", d.seed)?,
            n_pairs: c.get_or("gen.n_pairs", d.n_pairs)?,
            types,
            filler_vocab_size: c.get_or("gen.filler_vocab_size", d.filler_vocab_size)?,
            source_len: range("gen.source_len", d.source_len)?,
            reference_len: range("gen.reference_len", d.reference_len)?,
            synonym_prob: c.get_or("gen.synonym_prob", d.synonym_prob)?,
            filler_zipf: c.get_or("gen.filler_zipf", d.filler_zipf)?,
            concept_zipf: c.get_or("gen.concept_zipf", d.concept_zipf)?,
            multi_token_fraction: c.get_or("gen.multi_token_fraction", d.multi_token_fraction)?,
        })
    }

    /// Train/valid/test sizes in the ratio 44:1:3.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let n = self.n_pairs;
        let valid = ((n as f64 / 48.0).round() as usize).max(1);
        let test = ((3.0 * n as f64 / 48.0).round() as usize).max(1);
        (n - valid - test, valid, test)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub type_rates: BTreeMap<String, f64>,
    pub concept_type: BTreeMap<String, String>,
    /// Probability that a single source contains the concept.
    pub concept_source_prob: BTreeMap<String, f64>,
    /// Expected p(c ∈ y).
    pub concept_marginal: BTreeMap<String, f64>,
}

impl GroundTruth {
    /// Mean expected reference marginal over a type's concepts.
    pub fn type_marginal(&self, label: &str) -> Option<f64> {
        let ms: Vec<f64> = self
            .concept_type
            .iter()
            .filter(|(_, t)| t.as_str() == label)
            .map(|(id, _)| self.concept_marginal[id])
            .collect();
        (!ms.is_empty()).then(|| ms.iter().sum::<f64>() / ms.len() as f64)
    }
}

/// CSV `type,true_rate,expected_marginal`, one row per type, sorted by label.
pub fn describe(truth: &GroundTruth) -> String {
    let mut out = String::from("type,true_rate,expected_marginal\n");
    for (label, rate) in &truth.type_rates {
        let m = truth.type_marginal(label).unwrap_or(0.0);
        let _ = writeln!(out, "{label},{rate},{m}");
    }
    out
}

/// Location of a planted concept in a generated sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Planted {
    pub concept_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub spec: GeneratorSpec,
    pub ontology: Ontology,
    pub truth: GroundTruth,
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
    /// Planted (source, reference) mentions for every pair, in generation order
    /// (train pairs, then valid, then test).
    pub planted: Vec<(Vec<Planted>, Vec<Planted>)>,
}

impl Generated {
    pub fn split(&self, split: Split) -> &Corpus {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Writes ontology, corpora, vocab, ground truth, an empty stop-word list
    /// and the echoed spec into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.ontology.save(&dir.join("ontology.jsonl"))?;
        for split in Split::ALL {
            self.split(split)
                .save(&dir.join(format!("{}.jsonl", split.name())))?;
        }
        self.train.vocab.save(&dir.join("vocab.txt"))?;
        files::write(&dir.join("ground_truth.csv"), describe(&self.truth))?;
        files::write(&dir.join("stopwords.txt"), "")?;
        self.spec.to_config().save(&dir.join("spec.cfg"))
    }
}

struct SynthConcept {
    id: String,
    canonical: Vec<String>,
    synonym: Vec<String>,
}

fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (1..=n).map(|k| (k as f64).powf(-s)).collect()
}

fn label_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { 'x' })
        .collect()
}

pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut by_type: Vec<Vec<SynthConcept>> = Vec::new();
    let mut records = Vec::new();
    for t in &spec.types {
        let stem = label_stem(&t.label);
        let mut concepts = Vec::new();
        for i in 0..t.n_concepts {
            let two = rng.gen_bool(spec.multi_token_fraction);
            let head = format!("{stem}_{i}");
            let (canonical, synonym) = if two {
                (
                    vec![head.clone(), format!("{head}b")],
                    vec![format!("{head}s"), format!("{head}sb")],
                )
            } else {
                (vec![head.clone()], vec![format!("{head}s")])
            };
            let id = format!("{}:{i:03}", t.label);
            records.push(ConceptRecord {
                id: id.clone(),
                canonical: canonical.join(" "),
                synonyms: vec![synonym.join(" ")],
                semantic_type: t.label.clone(),
                parents: vec![],
                selected: true,
            });
            concepts.push(SynthConcept {
                id,
                canonical,
                synonym,
            });
        }
        by_type.push(concepts);
    }
    let ontology = Ontology::from_records(records)?;

    let type_dist = WeightedIndex::new(spec.types.iter().map(|t| t.weight))
        .map_err(|e| Error::Validation(e.to_string()))?;
    let concept_dists: Vec<WeightedIndex<f64>> = spec
        .types
        .iter()
        .map(|t| WeightedIndex::new(zipf_weights(t.n_concepts, spec.concept_zipf)).expect("positive"))
        .collect();
    let filler_dist = WeightedIndex::new(zipf_weights(spec.filler_vocab_size, spec.filler_zipf))
        .expect("positive");
    let filler = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
        (0..n).map(|_| format!("w{}", filler_dist.sample(rng))).collect()
    };

    let mut pairs = Vec::with_capacity(spec.n_pairs);
    let mut planted = Vec::with_capacity(spec.n_pairs);
    for _ in 0..spec.n_pairs {
        let k = rng.gen_range(1..=3);
        let mut chosen: Vec<(usize, usize)> = Vec::new();
        for _ in 0..k {
            let ty = type_dist.sample(&mut rng);
            let ci = concept_dists[ty].sample(&mut rng);
            if !chosen.contains(&(ty, ci)) {
                chosen.push((ty, ci));
            }
        }
        let n_fill = rng.gen_range(spec.source_len.0..=spec.source_len.1);
        let src_fill = filler(&mut rng, n_fill);
        let mut slots: Vec<(usize, usize)> = chosen
            .iter()
            .enumerate()
            .map(|(order, _)| (rng.gen_range(0..=n_fill), order))
            .collect();
        slots.sort();

        let mut source = Vec::new();
        let mut source_planted = Vec::new();
        let mut appearance = Vec::new();
        let mut next_slot = slots.iter().peekable();
        #[allow(clippy::needless_range_loop)]
        for pos in 0..=n_fill {
            while let Some(&&(slot, order)) = next_slot.peek() {
                if slot != pos {
                    break;
                }
                next_slot.next();
                let (ty, ci) = chosen[order];
                let c = &by_type[ty][ci];
                let form = if rng.gen_bool(spec.synonym_prob) { &c.synonym } else { &c.canonical };
                source_planted.push(Planted {
                    concept_id: c.id.clone(),
                    start: source.len(),
                    end: source.len() + form.len(),
                });
                source.extend(form.iter().cloned());
                appearance.push((ty, ci));
            }
            if pos < n_fill {
                source.push(src_fill[pos].clone());
            }
        }

        let mut reference = Vec::new();
        let mut reference_planted = Vec::new();
        for &(ty, ci) in &appearance {
            if rng.gen_bool(spec.types[ty].rate) {
                let c = &by_type[ty][ci];
                let form = if rng.gen_bool(spec.synonym_prob) { &c.synonym } else { &c.canonical };
                reference_planted.push(Planted {
                    concept_id: c.id.clone(),
                    start: reference.len(),
                    end: reference.len() + form.len(),
                });
                reference.extend(form.iter().cloned());
            }
        }
        let n_ref = rng.gen_range(spec.reference_len.0..=spec.reference_len.1);
        reference.extend(filler(&mut rng, n_ref));
        pairs.push(ParallelPair::new(source, reference));
        planted.push((source_planted, reference_planted));
    }

    let truth = ground_truth(spec, &by_type);
    let (n_train, n_valid, _) = spec.split_sizes();
    let test_pairs = pairs.split_off(n_train + n_valid);
    let valid_pairs = pairs.split_off(n_train);
    let vocab = Vocab::from_pairs(&pairs);
    let recognizer = Recognizer::new(&ontology, &StopWordSet::default());
    let make = |ps, split| {
        let mut c = Corpus::new(ps, split, vocab.clone());
        c.annotate(&recognizer);
        c
    };
    let train = make(pairs, Split::Train);
    let valid = make(valid_pairs, Split::Valid);
    let test = make(test_pairs, Split::Test);
    Ok(Generated {
        spec: spec.clone(),
        ontology,
        truth,
        train,
        valid,
        test,
        planted,
    })
}

fn ground_truth(spec: &GeneratorSpec, by_type: &[Vec<SynthConcept>]) -> GroundTruth {
    let total_weight: f64 = spec.types.iter().map(|t| t.weight).sum();
    let mut truth = GroundTruth {
        type_rates: BTreeMap::new(),
        concept_type: BTreeMap::new(),
        concept_source_prob: BTreeMap::new(),
        concept_marginal: BTreeMap::new(),
    };
    for (t, concepts) in spec.types.iter().zip(by_type) {
        truth.type_rates.insert(t.label.clone(), t.rate);
        let w = zipf_weights(t.n_concepts, spec.concept_zipf);
        let wsum: f64 = w.iter().sum();
        for (c, wi) in concepts.iter().zip(&w) {
            // One draw hits c with probability q; a source makes 1, 2 or 3 draws.
            let q = t.weight / total_weight * wi / wsum;
            let in_source = (1..=3).map(|k| 1.0 - (1.0 - q).powi(k)).sum::<f64>() / 3.0;
            truth.concept_type.insert(c.id.clone(), t.label.clone());
            truth.concept_source_prob.insert(c.id.clone(), in_source);
            truth.concept_marginal.insert(c.id.clone(), in_source * t.rate);
        }
    }
    truth
}
