//! Pipeline glue shared by the command line and the end-to-end tests.

use std::fmt::Write as _;
use std::path::Path;

use utilreg_tensor::rng::mix64;

use crate::config::Config;
use crate::corpus::{Corpus, Split};
use crate::decode::{dba_search, encode_constraints, select_constraints, DecodeConfig, DecodeMode, ModelScorer};
use crate::eval::{
    average_concept_rank, class_frequency, concept_f1, degeneracy, generated_utilization, output_concepts,
    stepwise_entropy, teacher_forced_rows, MetricsReport,
};
use crate::losses::{UtilLossConfig, UtilLossMode};
use crate::model::{ModelConfig, ParamSet, Seq2Seq};
use crate::ontology::{EquivalenceMap, Ontology};
use crate::recognizer::{concept_set, Recognizer, StopWordSet};
use crate::synthgen::Generated;
use crate::trainer::{prepare, train, TrainConfig, TrainOutcome};
use crate::utilization::{estimate, identify_high_utilization, HighUtilSet, UtilizationTable};
use crate::{Error, Result};

/// Deterministic per-purpose seed derived from a run's root seed.
pub fn derive_seed(root: u64, purpose: &str) -> u64 {
    purpose
        .bytes()
        .fold(mix64(root), |h, b| mix64(h ^ u64::from(b)))
}

/// Ontology, stop words and the three annotated splits.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub ontology: Ontology,
    pub stops: StopWordSet,
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
}

impl Dataset {
    pub fn from_generated(g: &Generated) -> Self {
        Dataset {
            ontology: g.ontology.clone(),
            stops: StopWordSet::default(),
            train: g.train.clone(),
            valid: g.valid.clone(),
            test: g.test.clone(),
        }
    }

    /// Reads `ontology.jsonl`, optional `stopwords.txt`, and the split files
    /// `{train,valid,test}.jsonl` from `dir`, then annotates every split.
    pub fn load(dir: &Path) -> Result<Self> {
        let ontology = Ontology::load(&dir.join("ontology.jsonl"))?;
        let stop_path = dir.join("stopwords.txt");
        let stops = if stop_path.exists() {
            StopWordSet::load(&stop_path)?
        } else {
            StopWordSet::default()
        };
        let recognizer = Recognizer::new(&ontology, &stops);
        let load = |s: Split| -> Result<Corpus> {
            let mut c = Corpus::load(&dir.join(format!("{}.jsonl", s.name())))?;
            c.annotate(&recognizer);
            Ok(c)
        };
        let (train, valid, test) = (load(Split::Train)?, load(Split::Valid)?, load(Split::Test)?);
        Ok(Dataset {
            ontology,
            stops,
            train,
            valid,
            test,
        })
    }

    pub fn split(&self, s: Split) -> &Corpus {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn recognizer(&self) -> Recognizer<'_> {
        Recognizer::new(&self.ontology, &self.stops)
    }

    /// Training-split table under `map`.
    pub fn table(&self, map: &EquivalenceMap) -> Result<UtilizationTable> {
        estimate(&self.train.pairs, &self.ontology, map)
    }
}

/// Everything that determines one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mode: UtilLossMode,
    pub alpha: f64,
    /// `None` takes every selected concept as high-utilization.
    pub lift_threshold: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            mode: UtilLossMode::None,
            alpha: 0.0,
            lift_threshold: None,
        }
    }
}

impl RunConfig {
    pub fn to_config(&self) -> Config {
        let mut c = self.model.to_config().merged(&self.train.to_config());
        c.set("util.mode", self.mode);
        c.set("util.alpha", self.alpha);
        c.set(
            "util.high_util",
            self.lift_threshold.map_or("all".to_string(), |t| t.to_string()),
        );
        c
    }

    pub fn from_config(c: &Config) -> Result<Self> {
        let high = c.get_str("util.high_util").unwrap_or("all");
        let lift_threshold = if high == "all" {
            None
        } else {
            Some(high.parse().map_err(|_| {
                Error::Config(format!("util.high_util must be 'all' or a number, got {high:?}"))
            })?)
        };
        Ok(RunConfig {
            model: ModelConfig::from_config(c)?,
            train: TrainConfig::from_config(c)?,
            mode: c.get_or("util.mode", UtilLossMode::None)?,
            alpha: c.get_or("util.alpha", 0.0)?,
            lift_threshold,
        })
    }
}

/// Regularizer settings with tables from the training split.
pub fn util_config(data: &Dataset, run: &RunConfig) -> Result<UtilLossConfig> {
    let high_util = match run.lift_threshold {
        None => HighUtilSet::all_selected(&data.ontology),
        Some(t) => identify_high_utilization(&data.table(&EquivalenceMap::Identity)?, t)?,
    };
    let table = match run.mode {
        UtilLossMode::ConceptWeighted => Some(data.table(&EquivalenceMap::Identity)?),
        UtilLossMode::SemanticWeighted => Some(data.table(&EquivalenceMap::SemanticType)?),
        _ => None,
    };
    let config = UtilLossConfig {
        mode: run.mode,
        alpha: run.alpha,
        table,
        high_util,
    };
    config.validate()?;
    Ok(config)
}

/// Model config with the vocabulary size taken from the data.
pub fn model_config(data: &Dataset, run: &RunConfig) -> ModelConfig {
    ModelConfig {
        vocab_size: data.train.vocab.len(),
        ..run.model.clone()
    }
}

/// Trains from `init`, or from a fresh initialization seeded by the run seed.
pub fn train_run(data: &Dataset, run: &RunConfig, init: Option<ParamSet>) -> Result<TrainOutcome> {
    let util = util_config(data, run)?;
    let model_config = model_config(data, run);
    let params = match init {
        Some(p) => {
            if p.config() != &model_config {
                return Err(Error::Config("resumed checkpoint does not match the model config".into()));
            }
            p
        }
        None => ParamSet::init(&model_config, derive_seed(run.train.seed, "init"))?,
    };
    let train_set = prepare(&data.train, &util, &data.stops)?;
    let valid_set = prepare(&data.valid, &util, &data.stops)?;
    train(params, &train_set, &valid_set, &run.train, &util)
}

/// One decoded source.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeRecord {
    pub tokens: Vec<u32>,
    pub words: Vec<String>,
    pub log_prob: f64,
    pub ended_with_eos: bool,
    /// Constraints handed to the search.
    pub constraints: Vec<Vec<u32>>,
    /// Selected constraints dropped because a token is outside the vocabulary.
    pub dropped_constraints: usize,
    pub constraints_satisfied: bool,
    pub partial: bool,
}

/// Decodes every source of `corpus`. In constrained mode the constraints come
/// from the training-split identity table and `config.tau`.
pub fn decode_corpus(
    params: &ParamSet,
    corpus: &Corpus,
    identity_table: &UtilizationTable,
    stops: &StopWordSet,
    config: &DecodeConfig,
) -> Result<Vec<DecodeRecord>> {
    config.validate()?;
    let model = Seq2Seq::new(params.config())?;
    let vocab = &corpus.vocab;
    corpus
        .pairs
        .iter()
        .map(|pair| {
            let source = vocab.encode(&pair.source);
            let (constraints, dropped) = if config.mode == DecodeMode::Dba {
                let (selected, _) =
                    select_constraints(&pair.source, &pair.source_mentions, identity_table, config.tau, stops);
                let known: Vec<Vec<String>> = selected
                    .iter()
                    .filter(|c| c.iter().all(|t| vocab.contains(t)))
                    .cloned()
                    .collect();
                (encode_constraints(&known, vocab)?, selected.len() - known.len())
            } else {
                (Vec::new(), 0)
            };
            let mut scorer = ModelScorer::new(&model, params, &source)?;
            let result = dba_search(&mut scorer, source.len(), &constraints, config)?;
            let out = result.best.output().to_vec();
            Ok(DecodeRecord {
                words: vocab.decode(&out),
                tokens: out,
                log_prob: result.best.score,
                ended_with_eos: result.best.ended_with_eos(),
                constraints_satisfied: result.best.constraints_met,
                constraints,
                dropped_constraints: dropped,
                partial: result.partial,
            })
        })
        .collect()
}

pub fn outputs_text(records: &[DecodeRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.words.join(" "));
        out.push('\n');
    }
    out
}

pub fn decode_csv(records: &[DecodeRecord]) -> String {
    let mut out = String::from("index,log_prob,ended_with_eos,constraints,dropped_constraints,constraints_satisfied,partial\n");
    for (i, r) in records.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{}",
            r.log_prob,
            r.ended_with_eos,
            r.constraints.len(),
            r.dropped_constraints,
            r.constraints_satisfied,
            r.partial
        );
    }
    out
}

/// Steps reported by the entropy curve.
pub const ENTROPY_STEPS: usize = 8;

/// All diagnostics for decoded outputs of `corpus` (normally the test split).
pub fn evaluate(
    data: &Dataset,
    params: &ParamSet,
    corpus: &Corpus,
    records: &[DecodeRecord],
    beam_size: usize,
) -> Result<MetricsReport> {
    let recognizer = data.recognizer();
    let words: Vec<Vec<String>> = records.iter().map(|r| r.words.clone()).collect();
    let gen = generated_utilization(&words, corpus, &recognizer, &EquivalenceMap::SemanticType)?;
    let outputs = output_concepts(&words, &recognizer);
    let references: Vec<_> = corpus.pairs.iter().map(|p| concept_set(&p.reference_mentions)).collect();
    let model = Seq2Seq::new(params.config())?;
    let examples = prepare(corpus, &UtilLossConfig::none(HighUtilSet::all_selected(&data.ontology)), &data.stops)?;
    let rows = teacher_forced_rows(&model, params, &examples)?;
    let degenerate: Vec<(Vec<u32>, bool)> = records.iter().map(|r| (r.tokens.clone(), r.ended_with_eos)).collect();
    Ok(MetricsReport {
        relative_errors: gen.relative_errors(),
        class_frequency: class_frequency(&gen.reference),
        concept: concept_f1(&outputs, &references)?,
        entropy: stepwise_entropy(&rows, ENTROPY_STEPS),
        average_concept_rank: average_concept_rank(&rows, corpus, &recognizer)?,
        beam_size,
        degeneracy: degeneracy(&degenerate),
        n_outputs: records.len(),
        partial_outputs: records.iter().filter(|r| r.partial).count(),
    })
}

/// Reads decoded outputs written by [`outputs_text`].
pub fn parse_outputs(text: &str, corpus: &Corpus) -> Vec<DecodeRecord> {
    text.lines()
        .map(|line| {
            let words: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            DecodeRecord {
                tokens: corpus.vocab.encode(&words),
                words,
                log_prob: 0.0,
                ended_with_eos: true,
                constraints: Vec::new(),
                dropped_constraints: 0,
                constraints_satisfied: true,
                partial: false,
            }
        })
        .collect()
}
