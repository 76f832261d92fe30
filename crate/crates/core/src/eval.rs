//! Diagnostics over decoded outputs and teacher-forced distributions.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use utilreg_tensor::Tensor;

use crate::corpus::{Corpus, UNK};
use crate::model::{ParamSet, Seq2Seq};
use crate::ontology::EquivalenceMap;
use crate::recognizer::{concept_set, Recognizer};
use crate::trainer::Example;
use crate::utilization::{estimate_from_sets, semantic_relative_error, RelativeErrors, UtilizationTable};
use crate::{Error, Result};

/// Model-side and reference-side tables over the same sources.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedUtilization {
    pub model: UtilizationTable,
    pub reference: UtilizationTable,
}

impl GeneratedUtilization {
    pub fn relative_errors(&self) -> RelativeErrors {
        semantic_relative_error(&self.model, &self.reference)
    }
}

/// Concept sets of each output under the recognizer.
pub fn output_concepts<S: AsRef<str>>(outputs: &[Vec<S>], recognizer: &Recognizer) -> Vec<BTreeSet<String>> {
    outputs
        .iter()
        .map(|o| concept_set(&recognizer.recognize(o)))
        .collect()
}

/// Eq. 2 with each reference replaced by the model output.
pub fn generated_utilization<S: AsRef<str>>(
    outputs: &[Vec<S>],
    corpus: &Corpus,
    recognizer: &Recognizer,
    map: &EquivalenceMap,
) -> Result<GeneratedUtilization> {
    if outputs.len() != corpus.pairs.len() {
        return Err(Error::Validation(format!(
            "{} outputs for {} test pairs",
            outputs.len(),
            corpus.pairs.len()
        )));
    }
    let ontology = recognizer.ontology();
    let sources: Vec<BTreeSet<String>> = corpus.pairs.iter().map(|p| concept_set(&p.source_mentions)).collect();
    let references: Vec<BTreeSet<String>> = corpus.pairs.iter().map(|p| concept_set(&p.reference_mentions)).collect();
    let generated = output_concepts(outputs, recognizer);
    Ok(GeneratedUtilization {
        model: estimate_from_sets(sources.iter().zip(&generated), ontology, map)?,
        reference: estimate_from_sets(sources.iter().zip(&references), ontology, map)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConceptF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged over pairs. Undefined ratios (zero denominators) are 0.
pub fn concept_f1(outputs: &[BTreeSet<String>], references: &[BTreeSet<String>]) -> Result<ConceptF1> {
    if outputs.len() != references.len() {
        return Err(Error::Validation(format!(
            "{} outputs for {} references",
            outputs.len(),
            references.len()
        )));
    }
    let (mut hit, mut out_total, mut ref_total) = (0usize, 0usize, 0usize);
    for (o, r) in outputs.iter().zip(references) {
        hit += o.intersection(r).count();
        out_total += o.len();
        ref_total += r.len();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(hit, out_total);
    let recall = ratio(hit, ref_total);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ConceptF1 { precision, recall, f1 })
}

/// Evaluation-mode teacher-forced rows for each example.
pub fn teacher_forced_rows(model: &Seq2Seq, params: &ParamSet, examples: &[Example]) -> Result<Vec<Tensor>> {
    examples
        .iter()
        .map(|ex| model.log_prob_rows(params, &ex.source, &ex.target))
        .collect()
}

/// `-Σ p ln p` of one log-probability row.
pub fn row_entropy(row: &[f64]) -> f64 {
    let h: f64 = row
        .iter()
        .map(|&lp| {
            let p = lp.exp();
            if p > 0.0 {
                -p * lp
            } else {
                0.0
            }
        })
        .sum();
    h.max(0.0)
}

/// `H_t` for `t = 1..=max_t`, averaged over sequences with at least `t` rows.
pub fn stepwise_entropy(rows: &[Tensor], max_t: usize) -> Vec<Option<f64>> {
    (0..max_t)
        .map(|t| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.rows() > t)
                .map(|r| row_entropy(r.row(t)))
                .collect();
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
        })
        .collect()
}

/// 1-based rank of `token` in a row sorted by probability, ties by lower id.
pub fn token_rank(row: &[f64], token: u32) -> usize {
    let target = row[token as usize];
    1 + row
        .iter()
        .enumerate()
        .filter(|&(v, &p)| p > target || (p == target && v < token as usize))
        .count()
}

/// Mean rank of reference tokens inside concept mentions.
pub fn average_concept_rank(rows: &[Tensor], corpus: &Corpus, recognizer: &Recognizer) -> Result<Option<f64>> {
    if rows.len() != corpus.pairs.len() {
        return Err(Error::Validation("row count does not match corpus".into()));
    }
    let (mut total, mut n) = (0usize, 0usize);
    for (r, pair) in rows.iter().zip(&corpus.pairs) {
        for m in &pair.reference_mentions {
            for pos in m.start..m.end {
                let tok = &pair.reference[pos];
                if recognizer.stops().contains(tok) {
                    continue;
                }
                let id = corpus.vocab.id(tok);
                if id == UNK || pos >= r.rows() {
                    continue;
                }
                total += token_rank(r.row(pos), id);
                n += 1;
            }
        }
    }
    Ok((n > 0).then(|| total as f64 / n as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Degeneracy {
    pub empty: usize,
    /// Stopped by the length bound instead of eos.
    pub truncated: usize,
    /// Contain one token repeated four or more times in a row.
    pub repetitive: usize,
}

pub fn longest_run(tokens: &[u32]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for (i, t) in tokens.iter().enumerate() {
        run = if i > 0 && tokens[i - 1] == *t { run + 1 } else { 1 };
        best = best.max(run);
    }
    best
}

/// `outputs` pairs each token sequence with whether it ended with eos.
pub fn degeneracy(outputs: &[(Vec<u32>, bool)]) -> Degeneracy {
    let mut d = Degeneracy::default();
    for (tokens, eos) in outputs {
        d.empty += usize::from(tokens.is_empty());
        d.truncated += usize::from(!eos);
        d.repetitive += usize::from(longest_run(tokens) >= 4);
    }
    d
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Scalar metrics for one decoded test split.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub relative_errors: RelativeErrors,
    pub class_frequency: Vec<(String, u64)>,
    pub concept: ConceptF1,
    pub entropy: Vec<Option<f64>>,
    pub average_concept_rank: Option<f64>,
    pub beam_size: usize,
    pub degeneracy: Degeneracy,
    pub n_outputs: usize,
    pub partial_outputs: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn mean_relative_error(&self) -> Option<f64> {
        self.relative_errors.mean()
    }

    /// Mean `H_t` over the first `t` steps that are defined.
    pub fn early_entropy(&self, t: usize) -> Option<f64> {
        let v: Vec<f64> = self.entropy.iter().take(t).flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let rows: Vec<(&str, String)> = vec![
            ("mean_relative_error", opt(self.mean_relative_error())),
            ("concept_precision", self.concept.precision.to_string()),
            ("concept_recall", self.concept.recall.to_string()),
            ("concept_f1", self.concept.f1.to_string()),
            ("early_entropy_t3", opt(self.early_entropy(3))),
            ("average_concept_rank", opt(self.average_concept_rank)),
            ("beam_size", self.beam_size.to_string()),
            ("outputs", self.n_outputs.to_string()),
            ("empty_outputs", self.degeneracy.empty.to_string()),
            ("truncated_outputs", self.degeneracy.truncated.to_string()),
            ("repetitive_outputs", self.degeneracy.repetitive.to_string()),
            ("partial_constrained_outputs", self.partial_outputs.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn relative_error_csv(&self) -> String {
        let mut out = String::from("class,source_events,relative_error\n");
        for (class, freq) in &self.class_frequency {
            let e = self.relative_errors.per_class.get(class).copied();
            let _ = writeln!(out, "{class},{freq},{}", opt(e));
        }
        out
    }

    pub fn entropy_csv(&self) -> String {
        let mut out = String::from("t,entropy\n");
        for (t, h) in self.entropy.iter().enumerate() {
            let _ = writeln!(out, "{},{}", t + 1, opt(*h));
        }
        out
    }

    pub fn rank_csv(&self) -> String {
        format!(
            "beam_size,average_concept_rank,oversmoothed\n{},{},{}\n",
            self.beam_size,
            opt(self.average_concept_rank),
            self.average_concept_rank.map(|r| (r > self.beam_size as f64).to_string()).unwrap_or_default()
        )
    }
}

/// Source-event counts per class, from a table.
pub fn class_frequency(table: &UtilizationTable) -> Vec<(String, u64)> {
    table
        .classes()
        .iter()
        .map(|(k, c)| (k.clone(), c.denominator))
        .collect()
}
