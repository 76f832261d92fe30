//! Adam with inverse-square-root warmup, decoupled weight decay, and early
//! stopping on the validation objective.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use utilreg_tensor::rng::mix64;
use utilreg_tensor::{Tape, Tensor};

use crate::config::Config;
use crate::corpus::{Corpus, EOS};
use crate::losses::{total_loss, ConceptTokenIndex, UtilLossConfig};
use crate::model::{ParamSet, Seq2Seq, SeedStream};
use crate::recognizer::StopWordSet;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub patience: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-8,
            base_lr: 5e-4,
            warmup_steps: 400,
            weight_decay: 1e-4,
            label_smoothing: 0.1,
            batch_size: 32,
            max_steps: 4000,
            eval_every: 200,
            patience: 5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("adam betas must lie in (0, 1)".into()));
        }
        if !(self.base_lr > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("learning rate and eps must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label smoothing outside [0, 1)".into()));
        }
        if self.warmup_steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "warmup_steps, batch_size and eval_every must be positive".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("train.beta1", self.beta1);
        c.set("train.beta2", self.beta2);
        c.set("train.adam_eps", self.adam_eps);
        c.set("train.base_lr", self.base_lr);
        c.set("train.warmup_steps", self.warmup_steps);
        c.set("train.weight_decay", self.weight_decay);
        c.set("train.label_smoothing", self.label_smoothing);
        c.set("train.batch_size", self.batch_size);
        c.set("train.max_steps", self.max_steps);
        c.set("train.eval_every", self.eval_every);
        c.set("train.patience", self.patience);
        c.set("train.seed", self.seed);
        c
    }

    pub fn from_config(c: &Config) -> Result<Self> {
        let d = TrainConfig::default();
        Ok(TrainConfig {
            beta1: c.get_or("train.beta1", d.beta1)?,
            beta2: c.get_or("train.beta2", d.beta2)?,
            adam_eps: c.get_or("train.adam_eps", d.adam_eps)?,
            base_lr: c.get_or("train.base_lr", d.base_lr)?,
            warmup_steps: c.get_or("train.warmup_steps", d.warmup_steps)?,
            weight_decay: c.get_or("train.weight_decay", d.weight_decay)?,
            label_smoothing: c.get_or("train.label_smoothing", d.label_smoothing)?,
            batch_size: c.get_or("train.batch_size", d.batch_size)?,
            max_steps: c.get_or("train.max_steps", d.max_steps)?,
            eval_every: c.get_or("train.eval_every", d.eval_every)?,
            patience: c.get_or("train.patience", d.patience)?,
            seed: c.get_or("train.seed", d.seed)?,
        })
    }
}

/// Linear warmup to `base_lr` at `warmup_steps`, then `1/sqrt(step)` decay.
pub fn lr_at(step: u64, config: &TrainConfig) -> Result<f64> {
    if step == 0 {
        return Err(Error::Domain("learning-rate steps start at 1".into()));
    }
    let (s, w) = (step as f64, config.warmup_steps as f64);
    Ok(config.base_lr * (s / w).min((w / s).sqrt()))
}

/// Adam moments plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        Adam {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Weight decay shrinks the weights directly by `lr · wd`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64, config: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let decay = 1.0 - lr * config.weight_decay;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] = p[i] * decay - lr * mhat / (vhat.sqrt() + config.adam_eps);
            }
        }
    }
}

/// One encoded training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub source: Vec<u32>,
    /// Reference ids followed by eos.
    pub target: Vec<u32>,
    pub index: ConceptTokenIndex,
}

/// Encodes a corpus with the model vocabulary and builds utilization indices.
pub fn prepare(
    corpus: &Corpus,
    util: &UtilLossConfig,
    stops: &StopWordSet,
) -> Result<Vec<Example>> {
    corpus
        .pairs
        .iter()
        .map(|p| {
            let mut target = corpus.vocab.encode(&p.reference);
            target.push(EOS);
            Ok(Example {
                source: corpus.vocab.encode(&p.source),
                target,
                index: util.index(p, &corpus.vocab, stops)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub train_nll: f64,
    pub train_util: f64,
    pub valid_objective: Option<f64>,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("step,lr,train_loss,train_nll,train_util,valid_objective\n");
    for r in rows {
        let valid = r.valid_objective.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.lr, r.train_loss, r.train_nll, r.train_util, valid
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation evaluation.
    pub params: ParamSet,
    pub log: Vec<LogRow>,
    pub steps_run: u64,
    pub best_step: Option<u64>,
    pub best_objective: Option<f64>,
    pub stopped_early: bool,
}

/// Mean per-pair objective in evaluation mode.
pub fn objective(
    model: &Seq2Seq,
    params: &ParamSet,
    examples: &[Example],
    util: &UtilLossConfig,
    smoothing: f64,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Domain("objective over an empty split".into()));
    }
    let mut tape = Tape::new(false);
    let bound = model.bind(&mut tape, params)?;
    let base = tape.len();
    let mut total = 0.0;
    for ex in examples {
        tape.truncate(base);
        let rows = model.forward(&mut tape, &bound, &ex.source, &ex.target, &mut SeedStream::new(0))?;
        let terms = total_loss(&mut tape, rows, &ex.target, &ex.index, util, smoothing)?;
        total += tape.value(terms.total).item();
    }
    Ok(total / examples.len() as f64)
}

/// Source-length buckets of `batch_size` example indices.
fn buckets(examples: &[Example], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| (examples[i].source.len(), i));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

struct StepStats {
    loss: f64,
    nll: f64,
    util: f64,
}

/// Mean loss over a batch and its gradients, in training mode.
fn batch_gradients(
    model: &Seq2Seq,
    params: &ParamSet,
    examples: &[Example],
    batch: &[usize],
    util: &UtilLossConfig,
    config: &TrainConfig,
    dropout_seed: u64,
) -> Result<(StepStats, Vec<Tensor>)> {
    let mut tape = Tape::new(true);
    let bound = model.bind(&mut tape, params)?;
    let mut seeds = SeedStream::new(dropout_seed);
    let mut sum = None;
    let (mut nll, mut util_sum) = (0.0, 0.0);
    for &i in batch {
        let ex = &examples[i];
        let rows = model.forward(&mut tape, &bound, &ex.source, &ex.target, &mut seeds)?;
        let terms = total_loss(&mut tape, rows, &ex.target, &ex.index, util, config.label_smoothing)?;
        nll += tape.value(terms.nll).item();
        if let Some(u) = terms.util {
            util_sum += tape.value(u).item();
        }
        sum = Some(match sum {
            None => terms.total,
            Some(acc) => tape.add(acc, terms.total)?,
        });
    }
    let sum = sum.ok_or_else(|| Error::Domain("empty batch".into()))?;
    let n = batch.len() as f64;
    let loss = tape.scale(sum, 1.0 / n)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let grads = bound
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, p)| grads.wrt(v, p))
        .collect();
    Ok((
        StepStats {
            loss: value,
            nll: nll / n,
            util: util_sum / n,
        },
        grads,
    ))
}

/// Trains with the validation objective as the early-stopping signal.
pub fn train(
    params: ParamSet,
    train_set: &[Example],
    valid_set: &[Example],
    config: &TrainConfig,
    util: &UtilLossConfig,
) -> Result<TrainOutcome> {
    if valid_set.is_empty() {
        return Err(Error::Domain("validation split is empty".into()));
    }
    let model = Seq2Seq::new(params.config())?;
    let smoothing = config.label_smoothing;
    train_with(params, train_set, config, util, &mut |p: &ParamSet| {
        objective(&model, p, valid_set, util, smoothing)
    })
}

/// Trains with a caller-supplied validation objective (lower is better).
pub fn train_with(
    mut params: ParamSet,
    train_set: &[Example],
    config: &TrainConfig,
    util: &UtilLossConfig,
    validate: &mut dyn FnMut(&ParamSet) -> Result<f64>,
) -> Result<TrainOutcome> {
    config.validate()?;
    util.validate()?;
    let mut outcome = TrainOutcome {
        params: params.clone(),
        log: Vec::new(),
        steps_run: 0,
        best_step: None,
        best_objective: None,
        stopped_early: false,
    };
    if config.max_steps == 0 {
        return Ok(outcome);
    }
    if train_set.is_empty() {
        return Err(Error::Domain("training split is empty".into()));
    }
    let model = Seq2Seq::new(params.config())?;
    let batches = buckets(train_set, config.batch_size);
    let mut adam = Adam::new(params.tensors());
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut since_improvement = 0u32;
    for step in 1..=config.max_steps {
        if cursor == order.len() {
            order = (0..batches.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(config.seed ^ mix64(epoch)));
            order.shuffle(&mut rng);
            cursor = 0;
            epoch += 1;
        }
        let batch_id = order[cursor];
        cursor += 1;
        let numeric = |e: Error| {
            if e.is_numeric() {
                Error::NonFiniteLoss {
                    step,
                    batch: batch_id,
                }
            } else {
                e
            }
        };
        let dropout_seed = mix64(config.seed.wrapping_add(mix64(step)));
        let (stats, grads) = batch_gradients(
            &model,
            &params,
            train_set,
            &batches[batch_id],
            util,
            config,
            dropout_seed,
        )
        .map_err(numeric)?;
        if !stats.loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                batch: batch_id,
            });
        }
        let lr = lr_at(step, config)?;
        adam.step(params.tensors_mut(), &grads, lr, config);
        outcome.steps_run = step;
        let mut row = LogRow {
            step,
            lr,
            train_loss: stats.loss,
            train_nll: stats.nll,
            train_util: stats.util,
            valid_objective: None,
        };
        if step % config.eval_every == 0 || step == config.max_steps {
            let value = validate(&params)?;
            row.valid_objective = Some(value);
            if outcome.best_objective.is_none_or(|best| value < best) {
                outcome.best_objective = Some(value);
                outcome.best_step = Some(step);
                outcome.params = params.clone();
                since_improvement = 0;
            } else {
                since_improvement += 1;
            }
            outcome.log.push(row);
            if since_improvement >= config.patience {
                outcome.stopped_early = step < config.max_steps;
                break;
            }
        } else {
            outcome.log.push(row);
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_examples() {
        let c = TrainConfig {
            warmup_steps: 400,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(400, &c).unwrap(), 5e-4);
        assert!((lr_at(200, &c).unwrap() - 2.5e-4).abs() < 1e-18);
        assert!((lr_at(1600, &c).unwrap() - 2.5e-4).abs() < 1e-18);
        assert!(lr_at(0, &c).is_err());
    }

    #[test]
    fn adam_matches_hand_steps() {
        let c = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = vec![Tensor::scalar(1.0)];
        let mut adam = Adam::new(&p);
        // f(x) = x^2, gradient 2x.
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = 2.0 * x;
            adam.step(&mut p, &[Tensor::scalar(g)], 0.1, &c);
            m = 0.9 * m + (1.0 - 0.9) * g;
            v = 0.98 * v + (1.0 - 0.98) * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.98f64.powi(t));
            x -= 0.1 * mhat / (vhat.sqrt() + 1e-8);
            assert_eq!(p[0].item(), x);
        }
        // the first step moves by lr whatever the gradient scale
        let mut q = vec![Tensor::scalar(3.0)];
        Adam::new(&q).step(&mut q, &[Tensor::scalar(1e3)], 0.01, &c);
        assert!((q[0].item() - 2.99).abs() < 1e-9);
    }

    #[test]
    fn decoupled_decay_shrinks_weights_without_gradient() {
        let c = TrainConfig {
            weight_decay: 0.5,
            ..TrainConfig::default()
        };
        let mut p = vec![Tensor::scalar(2.0)];
        Adam::new(&p).step(&mut p, &[Tensor::scalar(0.0)], 0.1, &c);
        assert!((p[0].item() - 1.9).abs() < 1e-12);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let c = TrainConfig {
            seed: 9,
            max_steps: 12,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_config(&c.to_config()).unwrap(), c);
        for bad in [
            TrainConfig { beta1: 1.0, ..c.clone() },
            TrainConfig { base_lr: 0.0, ..c.clone() },
            TrainConfig { patience: 0, ..c.clone() },
            TrainConfig { warmup_steps: 0, ..c.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn log_csv_leaves_missing_validation_empty() {
        let rows = [LogRow {
            step: 1,
            lr: 0.5,
            train_loss: 2.0,
            train_nll: 2.0,
            train_util: 0.0,
            valid_objective: None,
        }];
        assert_eq!(
            log_csv(&rows),
            "step,lr,train_loss,train_nll,train_util,valid_objective\n1,0.5,2,2,0,\n"
        );
    }
}
