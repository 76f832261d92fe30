//! Independent reference implementations shared by the integration tests
//! and the acceptance target.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use utilreg::corpus::{ParallelPair, BOS, EOS};
use utilreg::decode::StepScorer;
use utilreg::ontology::{ConceptRecord, EquivalenceMap, Ontology};
use utilreg::recognizer::{Mention, StopWordSet};
use utilreg::utilization::UtilizationTable;

pub const ALPHABET: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
pub const STOPS: [&str; 2] = ["of", "the"];

/// Up to `max_concepts` concepts over a tiny alphabet so that overlaps,
/// shared surface forms and hierarchies are common.
pub fn random_records(rng: &mut ChaCha8Rng, max_concepts: usize) -> Vec<ConceptRecord> {
    let n = rng.gen_range(1..=max_concepts);
    let types = ["T1", "T2", "T3"];
    let phrase = |rng: &mut ChaCha8Rng| -> String {
        let len = rng.gen_range(1..=3);
        let mut words: Vec<&str> = (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect();
        if len > 1 && rng.gen_bool(0.2) {
            words.insert(1, STOPS.choose(rng).unwrap());
        }
        words.join(" ")
    };
    (0..n)
        .map(|i| {
            let parents = if i > 0 && rng.gen_bool(0.4) {
                vec![format!("C{}", rng.gen_range(0..i))]
            } else {
                Vec::new()
            };
            ConceptRecord {
                id: format!("C{i}"),
                canonical: phrase(rng),
                synonyms: (0..rng.gen_range(0..=2)).map(|_| phrase(rng)).collect(),
                semantic_type: types.choose(rng).unwrap().to_string(),
                parents,
                selected: rng.gen_bool(0.85),
            }
        })
        .collect()
}

pub fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
    let len = rng.gen_range(1..=max_len);
    (0..len)
        .map(|_| {
            let w = if rng.gen_bool(0.15) {
                *STOPS.choose(rng).unwrap()
            } else {
                *ALPHABET.choose(rng).unwrap()
            };
            if rng.gen_bool(0.1) {
                w.to_uppercase()
            } else {
                w.to_string()
            }
        })
        .collect()
}

fn is_stop(stops: &[&str], w: &str) -> bool {
    stops.contains(&w.to_lowercase().as_str())
}

fn strip(words: &[String], stops: &[&str]) -> Vec<String> {
    words.iter().filter(|w| !is_stop(stops, w)).map(|w| w.to_lowercase()).collect()
}

fn ancestors(records: &[ConceptRecord], id: &str) -> BTreeSet<String> {
    let by_id: BTreeMap<&str, &ConceptRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out = BTreeSet::new();
    let mut frontier = vec![id.to_string()];
    while let Some(x) = frontier.pop() {
        for p in &by_id[x.as_str()].parents {
            if out.insert(p.clone()) {
                frontier.push(p.clone());
            }
        }
    }
    out
}

/// Enumerate every subspan, delete stop words, look up every surface form,
/// then apply maximality, agglomeration and left priority in that order.
pub fn oracle_recognize(tokens: &[String], records: &[ConceptRecord], stops: &[&str]) -> Vec<Mention> {
    let mut candidates = Vec::new();
    for start in 0..tokens.len() {
        for end in start + 1..=tokens.len() {
            if is_stop(stops, &tokens[start]) || is_stop(stops, &tokens[end - 1]) {
                continue;
            }
            let window = strip(&tokens[start..end], stops);
            for r in records {
                let forms = std::iter::once(&r.canonical).chain(&r.synonyms);
                let hit = forms.into_iter().find(|f| {
                    let words: Vec<String> = f.split_whitespace().map(str::to_string).collect();
                    let key = strip(&words, stops);
                    !key.is_empty() && key == window
                });
                if let Some(f) = hit {
                    let words: Vec<String> = f.split_whitespace().map(str::to_string).collect();
                    candidates.push(Mention {
                        concept_id: r.id.clone(),
                        start,
                        end,
                        matched_via: strip(&words, stops),
                    });
                }
            }
        }
    }
    let overlaps = |x: &Mention, y: &Mention| x.start < y.end && y.start < x.end;
    let maximal: Vec<Mention> = candidates
        .iter()
        .filter(|m| !candidates.iter().any(|o| o.start == m.start && o.end > m.end))
        .cloned()
        .collect();
    let specific: Vec<Mention> = maximal
        .iter()
        .filter(|m| {
            !maximal.iter().any(|o| {
                o.concept_id != m.concept_id && overlaps(o, m) && ancestors(records, &o.concept_id).contains(&m.concept_id)
            })
        })
        .cloned()
        .collect();
    let mut remaining = specific;
    let mut kept: Vec<Mention> = Vec::new();
    while !remaining.is_empty() {
        // leftmost start, then longer span, then smaller id
        let best = remaining
            .iter()
            .enumerate()
            .min_by(|(_, x), (_, y)| {
                x.start
                    .cmp(&y.start)
                    .then((y.end - y.start).cmp(&(x.end - x.start)))
                    .then(x.concept_id.cmp(&y.concept_id))
            })
            .map(|(i, _)| i)
            .unwrap();
        let m = remaining.remove(best);
        if !kept.iter().any(|k| overlaps(k, &m)) {
            kept.push(m);
        }
    }
    kept
}

pub fn stop_set() -> StopWordSet {
    StopWordSet::new(STOPS)
}

/// A random pair whose mention lists are drawn directly over concept ids.
pub fn random_annotated_pair(rng: &mut ChaCha8Rng, ids: &[String]) -> ParallelPair {
    let pick = |rng: &mut ChaCha8Rng| -> Vec<Mention> {
        (0..rng.gen_range(0..=5))
            .map(|i| Mention {
                concept_id: ids.choose(rng).unwrap().clone(),
                start: i,
                end: i + 1,
                matched_via: vec![],
            })
            .collect()
    };
    let mut pair = ParallelPair::new(vec!["x".into()], vec!["y".into()]);
    pair.source_mentions = pick(rng);
    pair.reference_mentions = pick(rng);
    pair
}

/// Literal per-class sums of indicator products over pairs and selected
/// concepts, using linear scans of the mention lists.
pub fn oracle_counts(
    pairs: &[ParallelPair],
    records: &[ConceptRecord],
    semantic: bool,
) -> BTreeMap<String, (u64, u64)> {
    let mut out: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.selected) {
        let class = if semantic { r.semantic_type.clone() } else { r.id.clone() };
        let entry = out.entry(class).or_insert((0, 0));
        for p in pairs {
            let in_x = p.source_mentions.iter().any(|m| m.concept_id == r.id);
            let in_y = p.reference_mentions.iter().any(|m| m.concept_id == r.id);
            entry.0 += u64::from(in_x && in_y);
            entry.1 += u64::from(in_x);
        }
    }
    out
}

pub fn table_counts(table: &UtilizationTable) -> BTreeMap<String, (u64, u64)> {
    table
        .classes()
        .iter()
        .map(|(k, c)| (k.clone(), (c.numerator, c.denominator)))
        .collect()
}

pub fn map_for(semantic: bool) -> EquivalenceMap {
    if semantic {
        EquivalenceMap::SemanticType
    } else {
        EquivalenceMap::Identity
    }
}

pub fn ontology(records: &[ConceptRecord]) -> Ontology {
    Ontology::from_records(records.to_vec()).expect("valid random ontology")
}

/// Toy next-token model whose distribution depends on the whole prefix.
pub struct HashScorer {
    pub vocab: usize,
    pub seed: u64,
    pub calls: Vec<Vec<u32>>,
}

impl HashScorer {
    pub fn new(vocab: usize, seed: u64) -> Self {
        HashScorer {
            vocab,
            seed,
            calls: Vec::new(),
        }
    }

    pub fn log_probs(&self, prefix: &[u32]) -> Vec<f64> {
        let mut h = utilreg_tensor::rng::mix64(self.seed);
        for &t in prefix {
            h = utilreg_tensor::rng::mix64(h ^ u64::from(t + 1));
        }
        let weights: Vec<f64> = (0..self.vocab)
            .map(|t| {
                if t as u32 == BOS || t == 0 {
                    1e-9
                } else {
                    let u = utilreg_tensor::rng::counter_uniform(h, t as u64);
                    (3.0 * u).exp()
                }
            })
            .collect();
        let z: f64 = weights.iter().sum();
        weights.iter().map(|w| (w / z).ln()).collect()
    }
}

impl StepScorer for HashScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_log_probs(&mut self, prefix: &[u32]) -> utilreg::Result<Vec<f64>> {
        self.calls.push(prefix.to_vec());
        Ok(self.log_probs(prefix))
    }
}

/// Best sequence under `scorer` among all outputs of length at most
/// `max_len` that either end in eos or reach `max_len`, restricted to those
/// accepted by `keep`. Ties go to the lexicographically smaller sequence.
pub fn exhaustive_best(
    scorer: &HashScorer,
    max_len: usize,
    keep: &dyn Fn(&[u32]) -> bool,
    eos_ok: &dyn Fn(&[u32]) -> bool,
) -> Option<(Vec<u32>, f64)> {
    let words: Vec<u32> = (EOS..scorer.vocab as u32).collect();
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut stack: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((prefix, score)) = stack.pop() {
        let lp = scorer.log_probs(&prefix);
        for &t in &words {
            if t == EOS && !eos_ok(&prefix) {
                continue;
            }
            let mut seq = prefix.clone();
            seq.push(t);
            let s = score + lp[t as usize];
            if t == EOS || seq.len() == max_len {
                if keep(&seq) {
                    let better = match &best {
                        None => true,
                        Some((b, bs)) => s > *bs || (s == *bs && seq < *b),
                    };
                    if better {
                        best = Some((seq, s));
                    }
                }
            } else {
                stack.push((seq, s));
            }
        }
    }
    best
}

pub fn contains(haystack: &[u32], needle: &[u32]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

pub mod grad {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use utilreg::losses::{total_loss, ConceptTokenIndex, IndexedToken, UtilLossConfig, UtilLossMode};
    use utilreg::model::{ModelConfig, ParamSet, SeedStream, Seq2Seq};
    use utilreg::utilization::HighUtilSet;
    use utilreg_tensor::check::{gradcheck, numeric_gradient, relative_error};
    use utilreg_tensor::{Tape, Tensor, Var};

    type Build = dyn Fn(&mut Tape, &[Var]) -> utilreg_tensor::Result<Var>;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], positive: bool) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                // keep clear of the kinks of relu and clamp
                let x = if x.abs() < 0.1 { x.signum() * 0.1 + x } else { x };
                if positive {
                    x.abs() + 0.1
                } else {
                    x
                }
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn project(t: &mut Tape, v: Var, seed: u64) -> utilreg_tensor::Result<Var> {
        let shape = t.shape(v).to_vec();
        let w = t.leaf(random(&mut ChaCha8Rng::seed_from_u64(seed), &shape, false))?;
        let p = t.mul(v, w)?;
        t.sum(p)
    }

    struct Op {
        name: &'static str,
        shapes: Vec<Vec<usize>>,
        positive: bool,
        training: bool,
        build: Box<Build>,
    }

    fn op(name: &'static str, shapes: &[&[usize]], build: impl Fn(&mut Tape, &[Var]) -> utilreg_tensor::Result<Var> + 'static) -> Op {
        Op {
            name,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            positive: false,
            training: false,
            build: Box::new(build),
        }
    }

    fn ops() -> Vec<Op> {
        let mut v = vec![
            op("add", &[&[3, 4], &[3, 4]], |t, v| { let o = t.add(v[0], v[1])?; project(t, o, 1) }),
            op("sub", &[&[3, 4], &[3, 4]], |t, v| { let o = t.sub(v[0], v[1])?; project(t, o, 2) }),
            op("mul", &[&[3, 4], &[3, 4]], |t, v| { let o = t.mul(v[0], v[1])?; project(t, o, 3) }),
            op("add_row", &[&[3, 4], &[4]], |t, v| { let o = t.add_row(v[0], v[1])?; project(t, o, 4) }),
            op("scale", &[&[5]], |t, v| { let o = t.scale(v[0], -2.5)?; project(t, o, 5) }),
            op("shift", &[&[5]], |t, v| { let o = t.shift(v[0], 0.75)?; let o = t.mul(o, o)?; project(t, o, 6) }),
            op("matmul", &[&[3, 4], &[4, 2]], |t, v| { let o = t.matmul(v[0], v[1])?; project(t, o, 7) }),
            op("transpose", &[&[3, 4]], |t, v| { let o = t.transpose(v[0])?; project(t, o, 8) }),
            op("concat", &[&[2, 3], &[1, 3], &[3, 2]], |t, v| {
                let a = t.concat(&[v[0], v[1]], 0)?;
                let b = t.concat(&[a, v[2]], 1)?;
                project(t, b, 9)
            }),
            op("slice", &[&[4, 5]], |t, v| { let o = t.slice(v[0], 1, 1, 4)?; project(t, o, 10) }),
            op("embedding", &[&[5, 3]], |t, v| { let o = t.embedding(v[0], &[4, 0, 4, 2])?; project(t, o, 11) }),
            op("softmax", &[&[3, 4]], |t, v| { let o = t.softmax(v[0], 1)?; project(t, o, 12) }),
            op("log_softmax", &[&[3, 5]], |t, v| { let o = t.log_softmax(v[0], 1)?; project(t, o, 13) }),
            op("exp", &[&[2, 3]], |t, v| { let o = t.exp(v[0])?; project(t, o, 15) }),
            op("relu", &[&[4, 3]], |t, v| { let o = t.relu(v[0])?; project(t, o, 16) }),
            op("sum", &[&[3, 4]], |t, v| { let o = t.exp(v[0])?; t.sum(o) }),
            op("mean", &[&[3, 4]], |t, v| { let o = t.exp(v[0])?; t.mean(o) }),
            op("pick", &[&[3, 4]], |t, v| { let o = t.pick(v[0], &[3, 0, 3])?; project(t, o, 17) }),
            op("clamp_min", &[&[4, 3]], |t, v| { let o = t.clamp_min(v[0], 0.0)?; project(t, o, 18) }),
            op("layer_norm", &[&[3, 6], &[6], &[6]], |t, v| { let o = t.layer_norm(v[0], v[1], v[2], 1e-5)?; project(t, o, 19) }),
        ];
        let mut log = op("log", &[&[2, 3]], |t, v| { let o = t.log(v[0])?; project(t, o, 14) });
        log.positive = true;
        v.push(log);
        let mut dropout = op("dropout", &[&[4, 5]], |t, v| { let o = t.dropout(v[0], 0.3, 99)?; project(t, o, 20) });
        dropout.training = true;
        v.push(dropout);
        v
    }

    /// Worst relative error per op over the given seed.
    pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
        ops()
            .into_iter()
            .map(|op| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(5));
                let inputs: Vec<Tensor> = op.shapes.iter().map(|s| random(&mut rng, s, op.positive)).collect();
                (op.name, gradcheck(&*op.build, &inputs, op.training, 1e-5).unwrap())
            })
            .collect()
    }

    pub fn tiny_model(seed: u64) -> (Seq2Seq, ParamSet) {
        let config = ModelConfig {
            vocab_size: 9,
            embed_dim: 4,
            hidden_dim: 6,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            n_heads: 2,
            dropout_rate: 0.0,
            share_embeddings: seed.is_multiple_of(2),
            max_positions: 8,
        };
        (Seq2Seq::new(&config).unwrap(), ParamSet::init(&config, seed).unwrap())
    }

    /// Source, target (ending in eos) and a concept index over source tokens.
    pub fn tiny_example(seed: u64) -> (Vec<u32>, Vec<u32>, ConceptTokenIndex) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let source: Vec<u32> = (0..5).map(|_| rng.gen_range(4..9)).collect();
        let mut target: Vec<u32> = (0..3).map(|_| rng.gen_range(3..9)).collect();
        target.push(utilreg::corpus::EOS);
        let index = ConceptTokenIndex::new(
            source[..3]
                .iter()
                .enumerate()
                .map(|(i, &token)| IndexedToken {
                    token,
                    concept_id: format!("C{i}"),
                    weight: rng.gen_range(0.1..1.0),
                })
                .collect(),
        )
        .unwrap();
        (source, target, index)
    }

    pub fn util(mode: UtilLossMode, alpha: f64) -> UtilLossConfig {
        UtilLossConfig {
            mode,
            alpha,
            table: None,
            high_util: HighUtilSet {
                concepts: Default::default(),
                lift_threshold: None,
            },
        }
    }

    fn objective(model: &Seq2Seq, params: &ParamSet, ex: &(Vec<u32>, Vec<u32>, ConceptTokenIndex), util: &UtilLossConfig) -> f64 {
        let mut tape = Tape::new(false);
        let b = model.bind(&mut tape, params).unwrap();
        let rows = model.forward(&mut tape, &b, &ex.0, &ex.1, &mut SeedStream::new(0)).unwrap();
        let terms = total_loss(&mut tape, rows, &ex.1, &ex.2, util, 0.1).unwrap();
        tape.value(terms.total).item()
    }

    /// Worst relative error of the full objective's gradient over every
    /// parameter scalar of a tiny model.
    pub fn objective_error(seed: u64, mode: UtilLossMode) -> f64 {
        let (model, params) = tiny_model(seed);
        let ex = tiny_example(seed);
        let util = util(mode, 0.7);
        let mut tape = Tape::new(false);
        let b = model.bind(&mut tape, &params).unwrap();
        let rows = model.forward(&mut tape, &b, &ex.0, &ex.1, &mut SeedStream::new(0)).unwrap();
        let terms = total_loss(&mut tape, rows, &ex.1, &ex.2, &util, 0.1).unwrap();
        let grads = tape.backward(terms.total).unwrap();
        let mut worst: f64 = 0.0;
        for (i, tensor) in params.tensors().iter().enumerate() {
            let analytic = grads.wrt(b.vars()[i], tensor);
            let numeric = numeric_gradient(tensor, 1e-5, |probe| {
                let mut p = params.clone();
                p.tensors_mut()[i] = probe.clone();
                objective(&model, &p, &ex, &util)
            });
            worst = worst.max(relative_error(&analytic, &numeric, 1e-6));
        }
        worst
    }

    /// One optimizer step written out by hand with nothing but the NLL.
    pub fn pure_nll_step(data: &utilreg::experiment::Dataset, params: &ParamSet, config: &utilreg::trainer::TrainConfig) -> ParamSet {
        let none = util(UtilLossMode::None, 0.0);
        let examples = utilreg::trainer::prepare(&data.train, &none, &data.stops).unwrap();
        let model = utilreg::model::Seq2Seq::new(params.config()).unwrap();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.sort_by_key(|&i| (examples[i].source.len(), i));
        let mut tape = Tape::new(true);
        let b = model.bind(&mut tape, params).unwrap();
        let mut seeds = SeedStream::new(utilreg_tensor::rng::mix64(config.seed.wrapping_add(utilreg_tensor::rng::mix64(1))));
        let mut sum = None;
        for &i in &order {
            let ex = &examples[i];
            let rows = model.forward(&mut tape, &b, &ex.source, &ex.target, &mut seeds).unwrap();
            let nll = utilreg::losses::nll_loss(&mut tape, rows, &ex.target, config.label_smoothing).unwrap();
            sum = Some(match sum {
                None => nll,
                Some(acc) => tape.add(acc, nll).unwrap(),
            });
        }
        let loss = tape.scale(sum.unwrap(), 1.0 / order.len() as f64).unwrap();
        let grads = tape.backward(loss).unwrap();
        let grads: Vec<Tensor> = b.vars().iter().zip(params.tensors()).map(|(&v, p)| grads.wrt(v, p)).collect();
        let mut out = params.clone();
        let mut adam = utilreg::trainer::Adam::new(out.tensors());
        adam.step(out.tensors_mut(), &grads, utilreg::trainer::lr_at(1, config).unwrap(), config);
        out
    }
}
