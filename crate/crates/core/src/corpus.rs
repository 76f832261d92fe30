//! Parallel source/reference corpora: vocabulary, persistence, and
//! embedding-based pairing of sources with references.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use utilreg_tensor::rng::mix64;

use crate::recognizer::{Mention, Recognizer};
use crate::{files, Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelPair {
    pub source: Vec<String>,
    pub reference: Vec<String>,
    pub source_mentions: Vec<Mention>,
    pub reference_mentions: Vec<Mention>,
}

impl ParallelPair {
    pub fn new(source: Vec<String>, reference: Vec<String>) -> Self {
        ParallelPair {
            source,
            reference,
            source_mentions: Vec::new(),
            reference_mentions: Vec::new(),
        }
    }

    pub fn annotate(&mut self, recognizer: &Recognizer) {
        self.source_mentions = recognizer.recognize(&self.source);
        self.reference_mentions = recognizer.recognize(&self.reference);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

/// Token to id table with ids 0..4 reserved for pad, bos, eos and unk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_tokens(Vec::<String>::new())
    }
}

impl Vocab {
    /// Non-reserved tokens in id order (first gets id 4).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let ids = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens: all, ids }
    }

    /// Orders tokens by descending frequency, ties broken lexicographically.
    pub fn build<'a>(sequences: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for seq in sequences {
            for t in seq {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ordered: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Vocab::from_tokens(ordered.into_iter().map(|(t, _)| t.to_string()))
    }

    pub fn from_pairs(pairs: &[ParallelPair]) -> Self {
        Vocab::build(
            pairs
                .iter()
                .flat_map(|p| [p.source.as_slice(), p.reference.as_slice()]),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map_or(RESERVED[UNK as usize], String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Drops a trailing eos and anything after it.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.tokens[RESERVED.len()..]
            .iter()
            .map(|t| format!("{t}\n"))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        files::write(path, self.to_text())
    }

    /// Line `n` (0-based) holds the token with id `n + 4`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = files::read_to_string(path)?;
        Ok(Vocab::from_tokens(text.lines().map(str::to_string)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub pairs: Vec<ParallelPair>,
    pub split: Split,
    pub vocab: Vocab,
}

const CORPUS_FORMAT: &str = "utilreg-corpus";
const CORPUS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    version: u32,
    split: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    source: Vec<String>,
    reference: Vec<String>,
}

/// Sidecar vocabulary file written next to a corpus file.
pub fn vocab_path(corpus_path: &Path) -> PathBuf {
    let mut name = corpus_path.as_os_str().to_owned();
    name.push(".vocab");
    PathBuf::from(name)
}

impl Corpus {
    pub fn new(pairs: Vec<ParallelPair>, split: Split, vocab: Vocab) -> Self {
        Corpus {
            pairs,
            split,
            vocab,
        }
    }

    pub fn annotate(&mut self, recognizer: &Recognizer) {
        for p in &mut self.pairs {
            p.annotate(recognizer);
        }
    }

    pub fn to_jsonl(&self) -> String {
        let header = CorpusHeader {
            format: CORPUS_FORMAT.into(),
            version: CORPUS_VERSION,
            split: self.split.name().into(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes") + "\n";
        for p in &self.pairs {
            let rec = PairRecord {
                source: p.source.clone(),
                reference: p.reference.clone(),
            };
            out += &(serde_json::to_string(&rec).expect("record serializes") + "\n");
        }
        out
    }

    /// Writes the corpus file and its `.vocab` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        files::write(path, self.to_jsonl())?;
        self.vocab.save(&vocab_path(path))
    }

    /// Reads a corpus and its sidecar vocab. Mentions are not persisted;
    /// call [`Corpus::annotate`] to recompute them.
    pub fn load(path: &Path) -> Result<Self> {
        let text = files::read_to_string(path)?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing corpus header".into()))?;
        let header: CorpusHeader =
            serde_json::from_str(head).map_err(|e| parse_err(1, e.to_string()))?;
        if header.format != CORPUS_FORMAT || header.version != CORPUS_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported corpus format {} version {}",
                path.display(),
                header.format,
                header.version
            )));
        }
        let split = header.split.parse()?;
        let mut pairs = Vec::new();
        for (i, line) in lines {
            let rec: PairRecord =
                serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string()))?;
            if rec.source.is_empty() || rec.reference.is_empty() {
                return Err(parse_err(i + 1, "empty source or reference".into()));
            }
            pairs.push(ParallelPair::new(rec.source, rec.reference));
        }
        let vocab = Vocab::load(&vocab_path(path))?;
        Ok(Corpus {
            pairs,
            split,
            vocab,
        })
    }
}

/// Token vectors: an explicit table, with a hashed fallback for other tokens.
#[derive(Clone, Debug)]
pub struct EmbeddingProvider {
    dimension: usize,
    seed: u64,
    table: HashMap<String, Vec<f64>>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl EmbeddingProvider {
    /// Hash-derived unit vectors for every token.
    pub fn hashed(dimension: usize, seed: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Domain("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingProvider {
            dimension,
            seed,
            table: HashMap::new(),
        })
    }

    pub fn with_vectors(dimension: usize, table: HashMap<String, Vec<f64>>) -> Result<Self> {
        let mut p = Self::hashed(dimension, 0)?;
        for (tok, v) in table {
            p.insert(tok, v)?;
        }
        Ok(p)
    }

    pub fn insert(&mut self, token: String, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dimension || vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "vector for {token:?} must have {} finite values",
                self.dimension
            )));
        }
        self.table.insert(token, vector);
        Ok(())
    }

    /// Text table with one `token v1 v2 ...` row per line.
    pub fn load_vectors(path: &Path, seed: u64) -> Result<Self> {
        let text = files::read_to_string(path)?;
        let mut provider: Option<EmbeddingProvider> = None;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let vec: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
            let vec = vec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("{e}"),
            })?;
            let p = match provider.as_mut() {
                Some(p) => p,
                None => provider.insert(Self::hashed(vec.len(), seed)?),
            };
            p.insert(tok.to_string(), vec).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        provider.ok_or_else(|| Error::Format(format!("{}: no vectors", path.display())))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn lookup(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.table.get(token) {
            return v.clone();
        }
        let base = mix64(self.seed ^ fnv1a(token.as_bytes()));
        let mut v: Vec<f64> = (0..self.dimension as u64)
            .map(|i| (mix64(base.wrapping_add(i)) >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

/// Mean of the token vectors.
pub fn sentence_embedding<S: AsRef<str>>(
    tokens: &[S],
    provider: &EmbeddingProvider,
) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::Domain("cannot embed an empty sequence".into()));
    }
    let mut acc = vec![0.0; provider.dimension()];
    for t in tokens {
        for (a, v) in acc.iter_mut().zip(provider.lookup(t.as_ref())) {
            *a += v;
        }
    }
    let n = tokens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "cosine of vectors with dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Pairs each source with its most similar reference when the cosine
/// similarity reaches `threshold`; ties go to the lower reference index.
pub fn pair_corpus<S: AsRef<str>>(
    sources: &[Vec<S>],
    references: &[Vec<S>],
    provider: &EmbeddingProvider,
    threshold: f64,
) -> Result<Vec<(usize, usize)>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Domain(format!("threshold {threshold} outside (0, 1]")));
    }
    let embed = |seqs: &[Vec<S>]| -> Result<Vec<Option<Vec<f64>>>> {
        seqs.iter()
            .map(|s| {
                if s.is_empty() {
                    return Ok(None);
                }
                let e = sentence_embedding(s, provider)?;
                Ok(e.iter().any(|&x| x != 0.0).then_some(e))
            })
            .collect()
    };
    let src = embed(sources)?;
    let refs = embed(references)?;
    let mut pairs = Vec::new();
    for (i, s) in src.iter().enumerate() {
        let Some(s) = s else { continue };
        let mut best: Option<(usize, f64)> = None;
        for (j, r) in refs.iter().enumerate() {
            let Some(r) = r else { continue };
            let c = cosine(s, r)?;
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((j, c));
            }
        }
        if let Some((j, c)) = best {
            if c >= threshold {
                pairs.push((i, j));
            }
        }
    }
    Ok(pairs)
}
