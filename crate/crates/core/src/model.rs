//! Pre-norm transformer encoder-decoder over word-level vocabularies.
//!
//! [`Seq2Seq::forward`] runs teacher forcing: for a target `y` of length `T`
//! the decoder reads `[bos, y_0, .., y_{T-2}]` and row `t` of the output is
//! `log p(· | y_<t, x)`.

use std::io::{BufRead, BufReader, Read, Write as _};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use utilreg_tensor::rng::mix64;
use utilreg_tensor::{Tape, Tensor, Var};

use crate::config::Config;
use crate::corpus::BOS;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub n_heads: usize,
    pub dropout_rate: f64,
    pub share_embeddings: bool,
    pub max_positions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: 32,
            hidden_dim: 64,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            n_heads: 1,
            dropout_rate: 0.3,
            share_embeddings: false,
            max_positions: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.embed_dim,
            self.hidden_dim,
            self.n_heads,
            self.max_positions,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate outside [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("model.vocab_size", self.vocab_size);
        c.set("model.embed_dim", self.embed_dim);
        c.set("model.hidden_dim", self.hidden_dim);
        c.set("model.n_encoder_layers", self.n_encoder_layers);
        c.set("model.n_decoder_layers", self.n_decoder_layers);
        c.set("model.n_heads", self.n_heads);
        c.set("model.dropout_rate", self.dropout_rate);
        c.set("model.share_embeddings", self.share_embeddings);
        c.set("model.max_positions", self.max_positions);
        c
    }

    pub fn from_config(c: &Config) -> Result<Self> {
        let d = ModelConfig::default();
        Ok(ModelConfig {
            vocab_size: c.get_or("model.vocab_size", d.vocab_size)?,
            embed_dim: c.get_or("model.embed_dim", d.embed_dim)?,
            hidden_dim: c.get_or("model.hidden_dim", d.hidden_dim)?,
            n_encoder_layers: c.get_or("model.n_encoder_layers", d.n_encoder_layers)?,
            n_decoder_layers: c.get_or("model.n_decoder_layers", d.n_decoder_layers)?,
            n_heads: c.get_or("model.n_heads", d.n_heads)?,
            dropout_rate: c.get_or("model.dropout_rate", d.dropout_rate)?,
            share_embeddings: c.get_or("model.share_embeddings", d.share_embeddings)?,
            max_positions: c.get_or("model.max_positions", d.max_positions)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Embedding,
    Xavier,
    Ones,
    Zeros,
}

#[derive(Clone, Copy, Debug)]
struct NormIdx {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug)]
struct AttnIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Clone, Copy, Debug)]
struct FfnIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    norm1: NormIdx,
    attn: AttnIdx,
    norm2: NormIdx,
    ffn: FfnIdx,
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayer {
    norm1: NormIdx,
    self_attn: AttnIdx,
    norm2: NormIdx,
    cross_attn: AttnIdx,
    norm3: NormIdx,
    ffn: FfnIdx,
}

/// Parameter indices into the declared parameter order.
#[derive(Clone, Debug)]
struct Layout {
    src_embed: usize,
    tgt_embed: usize,
    enc_pos: usize,
    dec_pos: usize,
    encoder: Vec<EncoderLayer>,
    enc_norm: NormIdx,
    decoder: Vec<DecoderLayer>,
    dec_norm: NormIdx,
    out_w: usize,
    out_b: usize,
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.specs.push((name, shape.to_vec(), init));
        self.specs.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.add(format!("{prefix}.gain"), &[d], Init::Ones),
            bias: self.add(format!("{prefix}.bias"), &[d], Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        AttnIdx {
            wq: self.add(format!("{prefix}.wq"), &[d, d], Init::Xavier),
            wk: self.add(format!("{prefix}.wk"), &[d, d], Init::Xavier),
            wv: self.add(format!("{prefix}.wv"), &[d, d], Init::Xavier),
            wo: self.add(format!("{prefix}.wo"), &[d, d], Init::Xavier),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, h: usize) -> FfnIdx {
        FfnIdx {
            w1: self.add(format!("{prefix}.w1"), &[d, h], Init::Xavier),
            b1: self.add(format!("{prefix}.b1"), &[h], Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), &[h, d], Init::Xavier),
            b2: self.add(format!("{prefix}.b2"), &[d], Init::Zeros),
        }
    }
}

impl Layout {
    fn new(c: &ModelConfig) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
        let (v, d, h, p) = (c.vocab_size, c.embed_dim, c.hidden_dim, c.max_positions);
        let mut b = LayoutBuilder::default();
        let src_embed = b.add("src_embed".into(), &[v, d], Init::Embedding);
        let tgt_embed = if c.share_embeddings {
            src_embed
        } else {
            b.add("tgt_embed".into(), &[v, d], Init::Embedding)
        };
        let enc_pos = b.add("enc_pos".into(), &[p, d], Init::Embedding);
        let dec_pos = b.add("dec_pos".into(), &[p, d], Init::Embedding);
        let encoder = (0..c.n_encoder_layers)
            .map(|i| {
                let pre = format!("enc{i}");
                EncoderLayer {
                    norm1: b.norm(&format!("{pre}.norm1"), d),
                    attn: b.attn(&format!("{pre}.attn"), d),
                    norm2: b.norm(&format!("{pre}.norm2"), d),
                    ffn: b.ffn(&format!("{pre}.ffn"), d, h),
                }
            })
            .collect();
        let enc_norm = b.norm("enc_norm", d);
        let decoder = (0..c.n_decoder_layers)
            .map(|i| {
                let pre = format!("dec{i}");
                DecoderLayer {
                    norm1: b.norm(&format!("{pre}.norm1"), d),
                    self_attn: b.attn(&format!("{pre}.self_attn"), d),
                    norm2: b.norm(&format!("{pre}.norm2"), d),
                    cross_attn: b.attn(&format!("{pre}.cross_attn"), d),
                    norm3: b.norm(&format!("{pre}.norm3"), d),
                    ffn: b.ffn(&format!("{pre}.ffn"), d, h),
                }
            })
            .collect();
        let dec_norm = b.norm("dec_norm", d);
        let out_w = b.add("out_w".into(), &[d, v], Init::Xavier);
        let out_b = b.add("out_b".into(), &[v], Init::Zeros);
        let layout = Layout {
            src_embed,
            tgt_embed,
            enc_pos,
            dec_pos,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
            out_w,
            out_b,
        };
        (layout, b.specs)
    }
}

/// Model parameters in declared order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

const CHECKPOINT_MAGIC: &str = "utilreg-checkpoint 1";

impl ParamSet {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (_, specs) = Layout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
                Init::Embedding => {
                    let a = (3.0 / shape[1] as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
                Init::Xavier => {
                    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(ParamSet {
            config: config.clone(),
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Text header (config echo and parameter shapes) followed by
    /// little-endian f64 blobs in declared order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(self.config.to_config().render().as_bytes());
        out.extend_from_slice(format!("params={}\n", self.tensors.len()).as_bytes());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            out.extend_from_slice(format!("{name} {}\n", dims.join("x")).as_bytes());
        }
        out.extend_from_slice(b"end\n");
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("checkpoint: {m}"));
        let mut reader = BufReader::new(bytes);
        let mut line = String::new();
        let mut next_line = |reader: &mut BufReader<&[u8]>| -> Result<String> {
            line.clear();
            reader
                .read_line(&mut line)
                .map_err(|e| bad(e.to_string()))?;
            if line.is_empty() {
                return Err(bad("truncated header".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut reader)? != CHECKPOINT_MAGIC {
            return Err(bad("unknown format or version".into()));
        }
        let mut header = String::new();
        let n_params: usize = loop {
            let l = next_line(&mut reader)?;
            if let Some(n) = l.strip_prefix("params=") {
                break n.parse().map_err(|_| bad(format!("bad count {n:?}")))?;
            }
            header.push_str(&l);
            header.push('\n');
        };
        let config = ModelConfig::from_config(&Config::parse(&header, Path::new("<checkpoint>"))?)?;
        config.validate()?;
        let (_, specs) = Layout::new(&config);
        if specs.len() != n_params {
            return Err(bad(format!(
                "{} parameters declared, config implies {}",
                n_params,
                specs.len()
            )));
        }
        for (name, shape, _) in &specs {
            let l = next_line(&mut reader)?;
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            if l != format!("{name} {}", dims.join("x")) {
                return Err(bad(format!("unexpected parameter line {l:?}")));
            }
        }
        if next_line(&mut reader)? != "end" {
            return Err(bad("missing end of header".into()));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut buf = [0u8; 8];
        for (name, shape, _) in specs {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                reader
                    .read_exact(&mut buf)
                    .map_err(|_| bad("truncated parameter data".into()))?;
                data.push(f64::from_le_bytes(buf));
            }
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        if reader.read(&mut buf).map_err(|e| bad(e.to_string()))? != 0 {
            return Err(bad("trailing bytes".into()));
        }
        Ok(ParamSet {
            config,
            names,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::files::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Writes a checkpoint, making sure the file is flushed before returning.
    pub fn save_synced(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        f.sync_all().map_err(|e| Error::io(path, e))
    }
}

/// Per-application dropout seeds derived from one base seed.
#[derive(Clone, Debug)]
pub struct SeedStream {
    base: u64,
    counter: u64,
}

impl SeedStream {
    pub fn new(base: u64) -> Self {
        SeedStream { base, counter: 0 }
    }

    pub fn next_seed(&mut self) -> u64 {
        self.counter += 1;
        mix64(self.base ^ mix64(self.counter))
    }
}

/// Parameters bound as leaves on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Debug)]
pub struct Seq2Seq {
    config: ModelConfig,
    layout: Layout,
}

const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e9;

impl Seq2Seq {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, _) = Layout::new(config);
        Ok(Seq2Seq {
            config: config.clone(),
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> Result<Bound> {
        if params.config != self.config {
            return Err(Error::Config("parameters were built for another model config".into()));
        }
        let vars = params
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Bound { vars })
    }

    fn check_ids(&self, ids: &[u32], what: &str) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Domain(format!("{what} is empty")));
        }
        if ids.len() > self.config.max_positions {
            return Err(Error::Domain(format!(
                "{what} length {} exceeds max_positions {}",
                ids.len(),
                self.config.max_positions
            )));
        }
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Domain(format!(
                "{what} id {bad} out of range for vocab of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embed(
        &self,
        tape: &mut Tape,
        b: &Bound,
        table: usize,
        pos: usize,
        ids: &[u32],
        seeds: &mut SeedStream,
    ) -> Result<Var> {
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let tok = tape.embedding(b.vars[table], &idx)?;
        let tok = tape.scale(tok, (self.config.embed_dim as f64).sqrt())?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let p = tape.embedding(b.vars[pos], &positions)?;
        let x = tape.add(tok, p)?;
        Ok(tape.dropout(x, self.config.dropout_rate, seeds.next_seed())?)
    }

    fn norm(&self, tape: &mut Tape, b: &Bound, n: NormIdx, x: Var) -> Result<Var> {
        Ok(tape.layer_norm(x, b.vars[n.gain], b.vars[n.bias], LN_EPS)?)
    }

    fn attention(
        &self,
        tape: &mut Tape,
        b: &Bound,
        w: AttnIdx,
        query: Var,
        memory: Var,
        mask: Option<Var>,
    ) -> Result<Var> {
        let q = tape.matmul(query, b.vars[w.wq])?;
        let k = tape.matmul(memory, b.vars[w.wk])?;
        let v = tape.matmul(memory, b.vars[w.wv])?;
        let heads = self.config.n_heads;
        let dh = self.config.embed_dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                (
                    tape.slice(q, 1, lo, hi)?,
                    tape.slice(k, 1, lo, hi)?,
                    tape.slice(v, 1, lo, hi)?,
                )
            };
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let mut scores = tape.scale(scores, scale)?;
            if let Some(m) = mask {
                scores = tape.add(scores, m)?;
            }
            let weights = tape.softmax(scores, 1)?;
            outs.push(tape.matmul(weights, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { tape.concat(&outs, 1)? };
        Ok(tape.matmul(joined, b.vars[w.wo])?)
    }

    fn feed_forward(&self, tape: &mut Tape, b: &Bound, f: FfnIdx, x: Var, seeds: &mut SeedStream) -> Result<Var> {
        let h = tape.matmul(x, b.vars[f.w1])?;
        let h = tape.add_row(h, b.vars[f.b1])?;
        let h = tape.relu(h)?;
        let h = tape.dropout(h, self.config.dropout_rate, seeds.next_seed())?;
        let o = tape.matmul(h, b.vars[f.w2])?;
        Ok(tape.add_row(o, b.vars[f.b2])?)
    }

    fn residual(&self, tape: &mut Tape, x: Var, sub: Var, seeds: &mut SeedStream) -> Result<Var> {
        let sub = tape.dropout(sub, self.config.dropout_rate, seeds.next_seed())?;
        Ok(tape.add(x, sub)?)
    }

    /// Encoder states `[len, embed_dim]` for a source sequence.
    pub fn encode(&self, tape: &mut Tape, b: &Bound, source: &[u32], seeds: &mut SeedStream) -> Result<Var> {
        self.check_ids(source, "source")?;
        let l = &self.layout;
        let mut x = self.embed(tape, b, l.src_embed, l.enc_pos, source, seeds)?;
        for layer in &l.encoder {
            let h = self.norm(tape, b, layer.norm1, x)?;
            let a = self.attention(tape, b, layer.attn, h, h, None)?;
            x = self.residual(tape, x, a, seeds)?;
            let h = self.norm(tape, b, layer.norm2, x)?;
            let f = self.feed_forward(tape, b, layer.ffn, h, seeds)?;
            x = self.residual(tape, x, f, seeds)?;
        }
        self.norm(tape, b, l.enc_norm, x)
    }

    /// Log-probability rows for a bos-prefixed decoder input.
    pub fn decode(
        &self,
        tape: &mut Tape,
        b: &Bound,
        memory: Var,
        input: &[u32],
        seeds: &mut SeedStream,
    ) -> Result<Var> {
        self.check_ids(input, "decoder input")?;
        let l = &self.layout;
        let t = input.len();
        let mut mask = Tensor::zeros(&[t, t]);
        for i in 0..t {
            for j in i + 1..t {
                mask.data_mut()[i * t + j] = MASKED;
            }
        }
        let mask = tape.leaf(mask)?;
        let mut x = self.embed(tape, b, l.tgt_embed, l.dec_pos, input, seeds)?;
        for layer in &l.decoder {
            let h = self.norm(tape, b, layer.norm1, x)?;
            let a = self.attention(tape, b, layer.self_attn, h, h, Some(mask))?;
            x = self.residual(tape, x, a, seeds)?;
            let h = self.norm(tape, b, layer.norm2, x)?;
            let a = self.attention(tape, b, layer.cross_attn, h, memory, None)?;
            x = self.residual(tape, x, a, seeds)?;
            let h = self.norm(tape, b, layer.norm3, x)?;
            let f = self.feed_forward(tape, b, layer.ffn, h, seeds)?;
            x = self.residual(tape, x, f, seeds)?;
        }
        let x = self.norm(tape, b, l.dec_norm, x)?;
        let logits = tape.matmul(x, b.vars[l.out_w])?;
        let logits = tape.add_row(logits, b.vars[l.out_b])?;
        Ok(tape.log_softmax(logits, 1)?)
    }

    /// Teacher-forced rows: row `t` is `log p(· | target[..t], source)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        source: &[u32],
        target: &[u32],
        seeds: &mut SeedStream,
    ) -> Result<Var> {
        self.check_ids(target, "target")?;
        let memory = self.encode(tape, b, source, seeds)?;
        let input = decoder_input(target);
        self.decode(tape, b, memory, &input, seeds)
    }

    /// Evaluation-mode teacher-forced rows as a plain tensor `[T, vocab]`.
    pub fn log_prob_rows(&self, params: &ParamSet, source: &[u32], target: &[u32]) -> Result<Tensor> {
        let mut tape = Tape::new(false);
        let b = self.bind(&mut tape, params)?;
        let rows = self.forward(&mut tape, &b, source, target, &mut SeedStream::new(0))?;
        Ok(tape.value(rows).clone())
    }
}

/// `[bos, target[0], .., target[T-2]]`.
pub fn decoder_input(target: &[u32]) -> Vec<u32> {
    std::iter::once(BOS)
        .chain(target[..target.len().saturating_sub(1)].iter().copied())
        .collect()
}
