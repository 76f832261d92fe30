//! Beam search and lexically constrained beam search (dynamic beam allocation).
//!
//! Both run the same search. A hypothesis sits in the bank given by how many
//! constraint tokens it has produced. Each step, every live hypothesis proposes
//! its best `b + 1` next tokens plus the first token of each unmet constraint.
//! The `b` live slots go first to the best candidate of every nonempty bank,
//! highest bank first, then to the remaining candidates by score. With no
//! constraints there is one bank and this is ordinary beam search.
//!
//! Scores are summed log-probabilities with no length normalization. Because
//! extending a hypothesis never raises its score, the search stops as soon as
//! the best finished hypothesis scores at least as well as every live one.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use utilreg_tensor::{Tape, Var};

use crate::config::Config;
use crate::corpus::{Vocab, BOS, EOS, PAD};
use crate::model::{Bound, ParamSet, SeedStream, Seq2Seq};
use crate::recognizer::{Mention, StopWordSet};
use crate::utilization::UtilizationTable;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Plain,
    Dba,
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMode::Plain => "plain",
            DecodeMode::Dba => "dba",
        })
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(DecodeMode::Plain),
            "dba" => Ok(DecodeMode::Dba),
            other => Err(Error::Config(format!("unknown decode mode {other:?} (plain|dba)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub min_len: usize,
    pub max_len_factor: f64,
    pub max_len_offset: usize,
    pub mode: DecodeMode,
    pub tau: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 5,
            min_len: 0,
            max_len_factor: 1.2,
            max_len_offset: 10,
            mode: DecodeMode::Plain,
            tau: 0.6,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if !(self.max_len_factor >= 0.0) {
            return Err(Error::Config("max_len_factor must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("decode.beam_size", self.beam_size);
        c.set("decode.min_len", self.min_len);
        c.set("decode.max_len_factor", self.max_len_factor);
        c.set("decode.max_len_offset", self.max_len_offset);
        c.set("decode.mode", self.mode);
        c.set("decode.tau", self.tau);
        c
    }

    pub fn from_config(c: &Config) -> Result<Self> {
        let d = DecodeConfig::default();
        Ok(DecodeConfig {
            beam_size: c.get_or("decode.beam_size", d.beam_size)?,
            min_len: c.get_or("decode.min_len", d.min_len)?,
            max_len_factor: c.get_or("decode.max_len_factor", d.max_len_factor)?,
            max_len_offset: c.get_or("decode.max_len_offset", d.max_len_offset)?,
            mode: c.get_or("decode.mode", d.mode)?,
            tau: c.get_or("decode.tau", d.tau)?,
        })
    }

    /// `⌊factor · source_len⌋ + offset`.
    pub fn max_len(&self, source_len: usize) -> usize {
        // the epsilon keeps products like 1.2 · 15 from flooring to 17
        (self.max_len_factor * source_len as f64 + 1e-9).floor() as usize + self.max_len_offset
    }
}

/// Next-token log-probabilities given the tokens generated so far.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    /// `prefix` excludes the implicit bos.
    fn next_log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>>;
    /// Upper bound on output length imposed by the scorer itself.
    fn length_cap(&self) -> Option<usize> {
        None
    }
}

/// Scores prefixes with a trained model, encoding the source once.
pub struct ModelScorer<'a> {
    model: &'a Seq2Seq,
    tape: Tape,
    bound: Bound,
    memory: Var,
    base: usize,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Seq2Seq, params: &ParamSet, source: &[u32]) -> Result<Self> {
        let mut tape = Tape::new(false);
        let bound = model.bind(&mut tape, params)?;
        let memory = model.encode(&mut tape, &bound, source, &mut SeedStream::new(0))?;
        let base = tape.len();
        Ok(ModelScorer {
            model,
            tape,
            bound,
            memory,
            base,
        })
    }

}

impl StepScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn next_log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
        self.tape.truncate(self.base);
        let input: Vec<u32> = std::iter::once(BOS).chain(prefix.iter().copied()).collect();
        let rows = self.model.decode(
            &mut self.tape,
            &self.bound,
            self.memory,
            &input,
            &mut SeedStream::new(0),
        )?;
        let rows = self.tape.value(rows);
        Ok(rows.row(rows.rows() - 1).to_vec())
    }

    /// The decoder input is bos plus the prefix, bounded by the position table.
    fn length_cap(&self) -> Option<usize> {
        Some(self.model.config().max_positions)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens; ends in eos when finished by eos.
    pub tokens: Vec<u32>,
    pub score: f64,
    pub finished: bool,
    /// Constraint tokens produced so far (the bank index).
    pub bank: usize,
    /// Every constraint appears in `tokens`.
    pub constraints_met: bool,
}

impl Hypothesis {
    /// Tokens without the trailing eos.
    pub fn output(&self) -> &[u32] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    pub fn ended_with_eos(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }
}

/// Result of a search; `partial` marks a constrained search that had to fall
/// back to a hypothesis missing some constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best: Hypothesis,
    pub partial: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct ConstraintState {
    met: Vec<bool>,
    /// Constraint being spelled out and how many of its tokens are done.
    in_progress: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
struct Live {
    hyp: Hypothesis,
    state: ConstraintState,
}

fn advance(constraints: &[Vec<u32>], state: &ConstraintState, token: u32) -> Option<ConstraintState> {
    let mut next = state.clone();
    if let Some((c, done)) = state.in_progress {
        if constraints[c][done] != token {
            return None;
        }
        if done + 1 == constraints[c].len() {
            next.met[c] = true;
            next.in_progress = None;
        } else {
            next.in_progress = Some((c, done + 1));
        }
        return Some(next);
    }
    if token == EOS {
        return state.met.iter().all(|&m| m).then_some(next);
    }
    if let Some(c) = (0..constraints.len()).find(|&c| !state.met[c] && constraints[c][0] == token) {
        if constraints[c].len() == 1 {
            next.met[c] = true;
        } else {
            next.in_progress = Some((c, 1));
        }
    }
    Some(next)
}

fn bank_of(constraints: &[Vec<u32>], state: &ConstraintState) -> usize {
    let met: usize = constraints
        .iter()
        .zip(&state.met)
        .filter(|(_, &m)| m)
        .map(|(c, _)| c.len())
        .sum();
    met + state.in_progress.map_or(0, |(_, done)| done)
}

fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Plain beam search.
pub fn beam_search(scorer: &mut dyn StepScorer, source_len: usize, config: &DecodeConfig) -> Result<Hypothesis> {
    Ok(search(scorer, source_len, &[], config)?.best)
}

/// Constrained search. Constraint tokens must be valid vocabulary ids.
pub fn dba_search(
    scorer: &mut dyn StepScorer,
    source_len: usize,
    constraints: &[Vec<u32>],
    config: &DecodeConfig,
) -> Result<SearchResult> {
    search(scorer, source_len, constraints, config)
}

fn search(
    scorer: &mut dyn StepScorer,
    source_len: usize,
    constraints: &[Vec<u32>],
    config: &DecodeConfig,
) -> Result<SearchResult> {
    config.validate()?;
    let vocab = scorer.vocab_size();
    for c in constraints {
        if c.is_empty() {
            return Err(Error::Config("empty constraint".into()));
        }
        if let Some(bad) = c.iter().find(|&&t| t as usize >= vocab || t == PAD || t == BOS || t == EOS) {
            return Err(Error::Config(format!("constraint token {bad} is not a generable vocabulary id")));
        }
    }
    let b = config.beam_size;
    let max_len = config
        .max_len(source_len)
        .min(scorer.length_cap().unwrap_or(usize::MAX));
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            score: 0.0,
            finished: false,
            bank: 0,
            constraints_met: constraints.is_empty(),
        },
        state: ConstraintState {
            met: vec![false; constraints.len()],
            in_progress: None,
        },
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut partial: Vec<Hypothesis> = Vec::new();
    if max_len == 0 {
        partial.push(live[0].hyp.clone());
        live.clear();
    }
    while !live.is_empty() {
        let mut candidates: Vec<Live> = Vec::new();
        for l in &live {
            let lp = scorer.next_log_probs(&l.hyp.tokens)?;
            if lp.len() != vocab {
                return Err(Error::Domain(format!("scorer returned {} scores for vocab {vocab}", lp.len())));
            }
            let len = l.hyp.tokens.len() + 1;
            let allowed = |t: u32| t != PAD && t != BOS && !(t == EOS && len <= config.min_len);
            let mut proposals: BTreeSet<u32> = BTreeSet::new();
            if let Some((c, done)) = l.state.in_progress {
                proposals.insert(constraints[c][done]);
            } else {
                let mut order: Vec<u32> = (0..vocab as u32).filter(|&t| allowed(t)).collect();
                order.sort_by(|&x, &y| lp[y as usize].partial_cmp(&lp[x as usize]).unwrap_or(Ordering::Equal).then(x.cmp(&y)));
                let mut taken = 0;
                for t in order {
                    if taken == b + 1 {
                        break;
                    }
                    if advance(constraints, &l.state, t).is_some() {
                        proposals.insert(t);
                        taken += 1;
                    }
                }
                for (c, tokens) in constraints.iter().enumerate() {
                    if !l.state.met[c] {
                        proposals.insert(tokens[0]);
                    }
                }
            }
            for t in proposals {
                if !allowed(t) {
                    continue;
                }
                let Some(state) = advance(constraints, &l.state, t) else {
                    continue;
                };
                let mut tokens = l.hyp.tokens.clone();
                tokens.push(t);
                let all_met = state.met.iter().all(|&m| m);
                let done = t == EOS || tokens.len() >= max_len;
                candidates.push(Live {
                    hyp: Hypothesis {
                        tokens,
                        score: l.hyp.score + lp[t as usize],
                        finished: done,
                        bank: bank_of(constraints, &state),
                        constraints_met: all_met,
                    },
                    state,
                });
            }
        }
        candidates.sort_by(|x, y| by_score(&x.hyp, &y.hyp));

        let (done, open): (Vec<Live>, Vec<Live>) = candidates.into_iter().partition(|c| c.hyp.finished);
        let mut chosen = vec![false; open.len()];
        let mut slots = 0;
        let top_bank = open.iter().map(|c| c.hyp.bank).max().unwrap_or(0);
        for bank in (0..=top_bank).rev() {
            if slots == b {
                break;
            }
            if let Some(i) = open.iter().position(|c| c.hyp.bank == bank) {
                chosen[i] = true;
                slots += 1;
            }
        }
        for c in chosen.iter_mut() {
            if slots == b {
                break;
            }
            if !*c {
                *c = true;
                slots += 1;
            }
        }
        let next: Vec<Live> = open
            .into_iter()
            .zip(chosen)
            .filter_map(|(c, keep)| keep.then_some(c))
            .collect();
        // a finished candidate ranked below a full beam would have been pruned
        let cutoff = (next.len() == b).then(|| next.iter().map(|c| c.hyp.score).fold(f64::INFINITY, f64::min));
        for c in done {
            if cutoff.is_none_or(|w| c.hyp.score >= w) {
                if c.hyp.constraints_met {
                    finished.push(c.hyp);
                } else {
                    partial.push(c.hyp);
                }
            }
        }
        finished.sort_by(by_score);
        finished.truncate(b);
        partial.sort_by(by_score);
        partial.truncate(b);
        live = next;
        live.sort_by(|x, y| by_score(&x.hyp, &y.hyp));
        if let (Some(best), Some(top)) = (finished.first(), live.first()) {
            if best.score >= top.hyp.score {
                break;
            }
        }
    }
    if let Some(best) = finished.into_iter().next() {
        return Ok(SearchResult { best, partial: false });
    }
    let best = partial
        .into_iter()
        .next()
        .ok_or_else(|| Error::Domain("search produced no hypothesis".into()))?;
    Ok(SearchResult { best, partial: true })
}

/// Surface token sequences of source concepts whose identity-φ rate is
/// strictly above `tau`, in source order without duplicates. Concepts with an
/// undefined rate are returned separately.
pub fn select_constraints<S: AsRef<str>>(
    source: &[S],
    mentions: &[Mention],
    identity_table: &UtilizationTable,
    tau: f64,
    stops: &StopWordSet,
) -> (Vec<Vec<String>>, Vec<String>) {
    let mut out: Vec<Vec<String>> = Vec::new();
    let mut undefined = Vec::new();
    for m in mentions {
        match identity_table.concept_rate(&m.concept_id) {
            Some(rate) if rate > tau => {
                let surface: Vec<String> = source[m.start..m.end]
                    .iter()
                    .map(|t| t.as_ref())
                    .filter(|t| !stops.contains(t))
                    .map(str::to_string)
                    .collect();
                if !surface.is_empty() && !out.contains(&surface) {
                    out.push(surface);
                }
            }
            Some(_) => {}
            None => undefined.push(m.concept_id.clone()),
        }
    }
    (out, undefined)
}

/// Constraint ids; unknown tokens are a configuration error.
pub fn encode_constraints(constraints: &[Vec<String>], vocab: &Vocab) -> Result<Vec<Vec<u32>>> {
    constraints
        .iter()
        .map(|c| {
            c.iter()
                .map(|t| {
                    if vocab.contains(t) {
                        Ok(vocab.id(t))
                    } else {
                        Err(Error::Config(format!("constraint token {t:?} not in vocabulary")))
                    }
                })
                .collect()
        })
        .collect()
}

/// Whether `needle` occurs contiguously in `haystack`.
pub fn contains_subsequence(haystack: &[u32], needle: &[u32]) -> bool {
    needle.is_empty() || haystack.windows(needle.len()).any(|w| w == needle)
}
