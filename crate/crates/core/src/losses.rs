//! Training objective: label-smoothed NLL plus the utilization regularizer.
//!
//! The regularizer raises the approximate marginal probability
//! `m(ν) = (1/T) Σ_t p(ν | y_<t, x)` of tokens belonging to high-utilization
//! concepts found in the source. The unweighted form averages `-log m(ν)`
//! over indexed token occurrences; the weighted form weights each term by the
//! utilization rate of the concept's class.

use std::fmt;
use std::str::FromStr;

use utilreg_tensor::{Tape, Tensor, Var};

use crate::corpus::{ParallelPair, Vocab, PAD, UNK};
use crate::recognizer::StopWordSet;
use crate::utilization::{HighUtilSet, UtilizationTable};
use crate::{Error, Result};

/// Marginals are clamped here before the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Summed over steps: `-[(1-s) log p(y_t) + s · mean_v log p(v)]`.
/// Positions holding the padding id are excluded.
pub fn nll_loss(tape: &mut Tape, rows: Var, reference: &[u32], smoothing: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Domain(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    let shape = tape.shape(rows).to_vec();
    if shape.len() != 2 || shape[0] != reference.len() {
        return Err(Error::Domain(format!(
            "nll_loss: {} reference tokens for rows of shape {:?}",
            reference.len(),
            shape
        )));
    }
    let (t, v) = (shape[0], shape[1]);
    let has_pad = reference.contains(&PAD);
    let cols: Vec<usize> = reference.iter().map(|&id| id as usize).collect();
    let picked = tape.pick(rows, &cols)?;
    let picked = if has_pad {
        let mask = Tensor::vector(reference.iter().map(|&id| f64::from(id != PAD)).collect());
        let mask = tape.leaf(mask)?;
        tape.mul(picked, mask)?
    } else {
        picked
    };
    let picked_sum = tape.sum(picked)?;
    let loss = tape.scale(picked_sum, -(1.0 - smoothing))?;
    if smoothing == 0.0 {
        return Ok(loss);
    }
    let spread = if has_pad {
        let mut mask = Tensor::zeros(&[t, v]);
        for (i, &id) in reference.iter().enumerate() {
            if id != PAD {
                mask.data_mut()[i * v..(i + 1) * v].fill(1.0);
            }
        }
        let mask = tape.leaf(mask)?;
        tape.mul(rows, mask)?
    } else {
        rows
    };
    let spread = tape.sum(spread)?;
    let spread = tape.scale(spread, -smoothing / v as f64)?;
    Ok(tape.add(loss, spread)?)
}

/// `(1/T) Σ_t p(token | y_<t)` from log-probability rows.
pub fn marginal_probability(rows: &Tensor, token: u32) -> Result<f64> {
    if rows.rank() != 2 || rows.rows() == 0 {
        return Err(Error::Domain("marginal_probability: empty rows".into()));
    }
    let col = token as usize;
    if col >= rows.cols() {
        return Err(Error::Domain(format!("token {token} outside vocabulary")));
    }
    let total: f64 = (0..rows.rows()).map(|t| rows.get2(t, col).exp()).sum();
    Ok(total / rows.rows() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexedToken {
    pub token: u32,
    pub concept_id: String,
    pub weight: f64,
}

/// Token occurrences of high-utilization source concepts for one pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConceptTokenIndex {
    tokens: Vec<IndexedToken>,
}

impl ConceptTokenIndex {
    pub fn new(tokens: Vec<IndexedToken>) -> Result<Self> {
        if let Some(bad) = tokens.iter().find(|t| !(0.0..=1.0).contains(&t.weight)) {
            return Err(Error::Domain(format!(
                "weight {} for {} outside [0, 1]",
                bad.weight, bad.concept_id
            )));
        }
        Ok(ConceptTokenIndex { tokens })
    }

    pub fn tokens(&self) -> &[IndexedToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UtilLossMode {
    None,
    Unweighted,
    ConceptWeighted,
    SemanticWeighted,
}

impl UtilLossMode {
    pub const ALL: [UtilLossMode; 4] = [
        UtilLossMode::None,
        UtilLossMode::Unweighted,
        UtilLossMode::ConceptWeighted,
        UtilLossMode::SemanticWeighted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UtilLossMode::None => "none",
            UtilLossMode::Unweighted => "unweighted",
            UtilLossMode::ConceptWeighted => "concept",
            UtilLossMode::SemanticWeighted => "semantic",
        }
    }

    pub fn is_weighted(self) -> bool {
        matches!(self, UtilLossMode::ConceptWeighted | UtilLossMode::SemanticWeighted)
    }
}

impl fmt::Display for UtilLossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UtilLossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(UtilLossMode::None),
            "unweighted" => Ok(UtilLossMode::Unweighted),
            "concept" | "concept_weighted" => Ok(UtilLossMode::ConceptWeighted),
            "semantic" | "semantic_weighted" => Ok(UtilLossMode::SemanticWeighted),
            other => Err(Error::Config(format!(
                "unknown utilization loss {other:?} (none|unweighted|concept|semantic)"
            ))),
        }
    }
}

/// `table` must be the identity-φ table for concept weighting and the
/// semantic-type table for semantic weighting, both from the training split.
#[derive(Clone, Debug)]
pub struct UtilLossConfig {
    pub mode: UtilLossMode,
    pub alpha: f64,
    pub table: Option<UtilizationTable>,
    pub high_util: HighUtilSet,
}

impl UtilLossConfig {
    pub fn none(high_util: HighUtilSet) -> Self {
        UtilLossConfig {
            mode: UtilLossMode::None,
            alpha: 0.0,
            table: None,
            high_util,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.mode.is_weighted() && self.table.is_none() {
            return Err(Error::Config(format!(
                "{} loss needs a utilization table",
                self.mode
            )));
        }
        Ok(())
    }

    /// Whether the regularizer contributes at all.
    pub fn active(&self) -> bool {
        self.mode != UtilLossMode::None && self.alpha != 0.0
    }

    /// Index for one annotated pair; empty when the regularizer is inactive.
    pub fn index(&self, pair: &ParallelPair, vocab: &Vocab, stops: &StopWordSet) -> Result<ConceptTokenIndex> {
        if !self.active() {
            return Ok(ConceptTokenIndex::default());
        }
        let mut tokens = Vec::new();
        for m in &pair.source_mentions {
            if !self.high_util.contains(&m.concept_id) {
                continue;
            }
            let weight = if self.mode.is_weighted() {
                let table = self.table.as_ref().expect("validated");
                let class = table.class_of(&m.concept_id).ok_or_else(|| {
                    Error::Config(format!("concept {} has no class in the utilization table", m.concept_id))
                })?;
                table.class_rate(class).ok_or_else(|| {
                    Error::Config(format!("utilization rate undefined for class {class}"))
                })?
            } else {
                1.0
            };
            for tok in &pair.source[m.start..m.end] {
                if stops.contains(tok) {
                    continue;
                }
                let id = vocab.id(tok);
                if id == UNK {
                    continue;
                }
                tokens.push(IndexedToken {
                    token: id,
                    concept_id: m.concept_id.clone(),
                    weight,
                });
            }
        }
        ConceptTokenIndex::new(tokens)
    }
}

/// `-Σ w log m(ν) / Σ w` on the tape; a constant zero for an empty index or
/// zero total weight.
fn weighted_log_marginal(tape: &mut Tape, rows: Var, index: &ConceptTokenIndex, weights: &[f64]) -> Result<Var> {
    let total: f64 = weights.iter().sum();
    if index.is_empty() || total == 0.0 {
        return Ok(tape.leaf(Tensor::scalar(0.0))?);
    }
    let shape = tape.shape(rows).to_vec();
    let (t, v) = (shape[0], shape[1]);
    let k = index.len();
    let mut select = Tensor::zeros(&[v, k]);
    for (j, tok) in index.tokens.iter().enumerate() {
        let col = tok.token as usize;
        if col >= v {
            return Err(Error::Domain(format!("token {} outside vocabulary", tok.token)));
        }
        select.data_mut()[col * k + j] = 1.0;
    }
    let select = tape.leaf(select)?;
    let picked = tape.matmul(rows, select)?;
    let probs = tape.exp(picked)?;
    let average = tape.leaf(Tensor::full(&[1, t], 1.0 / t as f64))?;
    let marginals = tape.matmul(average, probs)?;
    let marginals = tape.clamp_min(marginals, LOG_FLOOR)?;
    let logs = tape.log(marginals)?;
    let w = tape.leaf(Tensor::new(vec![k, 1], weights.to_vec())?)?;
    let weighted = tape.matmul(logs, w)?;
    let weighted = tape.sum(weighted)?;
    Ok(tape.scale(weighted, -1.0 / total)?)
}

/// Unweighted form: `-(1/K) Σ log m(ν)` over the K indexed occurrences.
pub fn unweighted_utilization_loss(tape: &mut Tape, rows: Var, index: &ConceptTokenIndex) -> Result<Var> {
    let ones = vec![1.0; index.len()];
    weighted_log_marginal(tape, rows, index, &ones)
}

/// Weighted form: `-Σ r(c) log m(ν) / Σ r(c)`.
pub fn weighted_utilization_loss(tape: &mut Tape, rows: Var, index: &ConceptTokenIndex) -> Result<Var> {
    let weights: Vec<f64> = index.tokens.iter().map(|t| t.weight).collect();
    weighted_log_marginal(tape, rows, index, &weights)
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub nll: Var,
    /// Absent when the regularizer is inactive.
    pub util: Option<Var>,
}

/// `nll + α · util`. With α = 0 or mode none the result is the NLL node itself.
pub fn total_loss(
    tape: &mut Tape,
    rows: Var,
    target: &[u32],
    index: &ConceptTokenIndex,
    config: &UtilLossConfig,
    smoothing: f64,
) -> Result<LossTerms> {
    let nll = nll_loss(tape, rows, target, smoothing)?;
    if !config.active() {
        return Ok(LossTerms {
            total: nll,
            nll,
            util: None,
        });
    }
    let util = if config.mode.is_weighted() {
        weighted_utilization_loss(tape, rows, index)?
    } else {
        unweighted_utilization_loss(tape, rows, index)?
    };
    let scaled = tape.scale(util, config.alpha)?;
    let total = tape.add(nll, scaled)?;
    Ok(LossTerms {
        total,
        nll,
        util: Some(util),
    })
}
