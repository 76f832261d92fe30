//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use utilreg::decode::{beam_search, contains_subsequence, dba_search, DecodeConfig, DecodeMode, ModelScorer};
use utilreg::eval::MetricsReport;
use utilreg::experiment::{
    decode_corpus, decode_csv, evaluate, outputs_text, train_run, Dataset, DecodeRecord, RunConfig,
};
use utilreg::losses::{unweighted_utilization_loss, weighted_utilization_loss, ConceptTokenIndex, IndexedToken, UtilLossMode};
use utilreg::model::{ModelConfig, ParamSet, Seq2Seq};
use utilreg::ontology::EquivalenceMap;
use utilreg::recognizer::Recognizer;
use utilreg::synthgen::{generate, Generated, GeneratorSpec};
use utilreg::trainer::{log_csv, TrainConfig};
use utilreg::utilization::estimate;
use utilreg_tensor::{Tape, Tensor};

/// Training steps per run in the synthetic experiment.
const EXPERIMENT_STEPS: u64 = 1600;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const REQUIRED_WINS: usize = 4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn eq2_oracle() -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0;
    for case in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + case);
        let records = random_records(&mut rng, 6);
        let onto = ontology(&records);
        let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        let pairs: Vec<_> = (0..rng.gen_range(0..=5)).map(|_| random_annotated_pair(&mut rng, &ids)).collect();
        for semantic in [false, true] {
            let table = estimate(&pairs, &onto, &map_for(semantic)).unwrap();
            if table_counts(&table) != oracle_counts(&pairs, &records, semantic) {
                mismatches += 1;
            }
        }
    }
    let t = start.elapsed();
    outcome(
        mismatches == 0 && within(t, 10),
        format!("1000 corpora x 2 maps, {mismatches} mismatches, {:.2}s", t.as_secs_f64()),
    )
}

fn recognizer_oracle() -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0;
    let mut agglomerated = 0;
    for case in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let records = random_records(&mut rng, 8);
        let onto = ontology(&records);
        let tokens = random_tokens(&mut rng, 12);
        let got = Recognizer::new(&onto, &stop_set()).recognize(&tokens);
        if got != oracle_recognize(&tokens, &records, &STOPS) {
            mismatches += 1;
        }
        // how often the hierarchy rule decides the outcome
        let mut flat = records.clone();
        for r in &mut flat {
            r.parents.clear();
        }
        if oracle_recognize(&tokens, &flat, &STOPS) != got {
            agglomerated += 1;
        }
    }
    let examples = worked_examples();
    let t = start.elapsed();
    outcome(
        mismatches == 0 && agglomerated > 0 && examples && within(t, 10),
        format!(
            "500 cases, {mismatches} mismatches, hierarchy decisive in {agglomerated}, worked examples {}, {:.2}s",
            if examples { "ok" } else { "WRONG" },
            t.as_secs_f64()
        ),
    )
}

/// Descendant wins, stop words are skipped inside a window, left wins.
fn worked_examples() -> bool {
    use utilreg::ontology::ConceptRecord;
    let rec = |id: &str, form: &str, parents: &[&str]| ConceptRecord {
        id: id.into(),
        canonical: form.into(),
        synonyms: vec![],
        semantic_type: "T".into(),
        parents: parents.iter().map(|p| p.to_string()).collect(),
        selected: true,
    };
    let spans = |records: Vec<ConceptRecord>, text: &str| -> Vec<(String, usize, usize)> {
        let onto = ontology(&records);
        let tokens: Vec<&str> = text.split(' ').collect();
        Recognizer::new(&onto, &stop_set())
            .recognize(&tokens)
            .into_iter()
            .map(|m| (m.concept_id, m.start, m.end))
            .collect()
    };
    let descendant = spans(
        vec![rec("C_A", "abdominal pain", &[]), rec("C_LA", "lower abdominal pain", &["C_A"])],
        "lower abdominal pain",
    );
    let stops = spans(vec![rec("C_S", "shortness breath", &[])], "shortness of the breath");
    let left = spans(vec![rec("C1", "a b", &[]), rec("C2", "b c", &[])], "a b c");
    descendant == [("C_LA".to_string(), 0, 3)]
        && stops == [("C_S".to_string(), 0, 4)]
        && left == [("C1".to_string(), 0, 2)]
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    for seed in 0..20 {
        for (name, err) in grad::op_errors(seed) {
            if err > worst.0 {
                worst = (err, format!("{name} seed {seed}"));
            }
        }
        for mode in [UtilLossMode::None, UtilLossMode::Unweighted, UtilLossMode::SemanticWeighted] {
            let err = grad::objective_error(seed, mode);
            if err > worst.0 {
                worst = (err, format!("objective {mode} seed {seed}"));
            }
        }
    }
    let t = start.elapsed();
    outcome(
        worst.0 < 1e-4 && within(t, 60),
        format!("20 seeds, worst relative error {:.2e} ({}), {:.2}s", worst.0, worst.1, t.as_secs_f64()),
    )
}

fn ground_truth(g: &Generated, elapsed: Duration) -> Outcome {
    let start = Instant::now();
    let pairs: Vec<_> = [&g.train, &g.valid, &g.test].iter().flat_map(|c| c.pairs.clone()).collect();
    let table = estimate(&pairs, &g.ontology, &EquivalenceMap::SemanticType).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, &planted) in &g.truth.type_rates {
        let c = &table.classes()[label];
        let rate = c.rate().unwrap_or(f64::NAN);
        if c.denominator >= 200 {
            pass &= (rate - planted).abs() <= 0.05;
        }
        parts.push(format!("{label} {rate:.3}/{planted} (n={})", c.denominator));
    }
    let t = elapsed + start.elapsed();
    outcome(pass && within(t, 30), format!("{}, {:.2}s", parts.join(", "), t.as_secs_f64()))
}

struct SeedResult {
    baseline: MetricsReport,
    dba: MetricsReport,
    dba_records: Vec<DecodeRecord>,
    semantic: Vec<(f64, MetricsReport)>,
    slowest_run: Duration,
}

fn experiment_run(seed: u64, mode: UtilLossMode, alpha: f64) -> RunConfig {
    RunConfig {
        model: ModelConfig::default(),
        train: TrainConfig {
            seed,
            max_steps: EXPERIMENT_STEPS,
            ..TrainConfig::default()
        },
        mode,
        alpha,
        lift_threshold: None,
    }
}

fn train_and_eval(data: &Dataset, run: &RunConfig, decode: &DecodeConfig) -> (ParamSet, MetricsReport, Vec<DecodeRecord>, Duration) {
    let start = Instant::now();
    let params = train_run(data, run, None).unwrap().params;
    let took = start.elapsed();
    let (report, records) = eval_with(data, &params, decode);
    (params, report, records, took)
}

fn eval_with(data: &Dataset, params: &ParamSet, decode: &DecodeConfig) -> (MetricsReport, Vec<DecodeRecord>) {
    let identity = data.table(&EquivalenceMap::Identity).unwrap();
    let records = decode_corpus(params, &data.test, &identity, &data.stops, decode).unwrap();
    let report = evaluate(data, params, &data.test, &records, decode.beam_size).unwrap();
    (report, records)
}

fn seed_result(data: &Dataset, seed: u64) -> SeedResult {
    let plain = DecodeConfig::default();
    let dba = DecodeConfig {
        mode: DecodeMode::Dba,
        ..DecodeConfig::default()
    };
    let (base_params, baseline, _, t0) = train_and_eval(data, &experiment_run(seed, UtilLossMode::None, 0.0), &plain);
    let (dba_report, dba_records) = eval_with(data, &base_params, &dba);
    let (_, sem, _, t1) = train_and_eval(data, &experiment_run(seed, UtilLossMode::SemanticWeighted, 1.0), &plain);
    let mut slowest = t0.max(t1);
    let mut semantic = vec![(1.0, sem)];
    // the criterion takes the best of three alphas; later ones only matter if
    // the earlier ones did not already beat the baseline
    for alpha in [0.75, 0.5] {
        if semantic.iter().any(|(_, r)| r.concept.f1 > baseline.concept.f1) {
            break;
        }
        let (_, r, _, t) = train_and_eval(data, &experiment_run(seed, UtilLossMode::SemanticWeighted, alpha), &plain);
        slowest = slowest.max(t);
        semantic.push((alpha, r));
    }
    eprintln!(
        "  seed {seed}: eps {:.3} -> {:.3}, f1 base {:.3} sem {:.3} dba {:.3}, H1-3 {:.3} -> {:.3}, rank {:.1} -> {:.1}",
        baseline.mean_relative_error().unwrap_or(f64::NAN),
        semantic[0].1.mean_relative_error().unwrap_or(f64::NAN),
        baseline.concept.f1,
        semantic.iter().map(|(_, r)| r.concept.f1).fold(f64::NEG_INFINITY, f64::max),
        dba_report.concept.f1,
        baseline.early_entropy(3).unwrap_or(f64::NAN),
        semantic[0].1.early_entropy(3).unwrap_or(f64::NAN),
        baseline.average_concept_rank.unwrap_or(f64::NAN),
        semantic[0].1.average_concept_rank.unwrap_or(f64::NAN),
    );
    SeedResult {
        baseline,
        dba: dba_report,
        dba_records,
        semantic,
        slowest_run: slowest,
    }
}

fn closes_gap(results: &[SeedResult]) -> Outcome {
    let wins = results
        .iter()
        .filter(|r| match (r.semantic[0].1.mean_relative_error(), r.baseline.mean_relative_error()) {
            (Some(sem), Some(base)) => sem < base,
            _ => false,
        })
        .count();
    let slowest = results.iter().map(|r| r.slowest_run).max().unwrap_or_default();
    outcome(
        wins >= REQUIRED_WINS && within(slowest, 600),
        format!("alpha=1 lower mean relative error in {wins}/5 seeds, slowest run {:.0}s", slowest.as_secs_f64()),
    )
}

fn f1_ordering(results: &[SeedResult]) -> Outcome {
    let sem_wins = results
        .iter()
        .filter(|r| r.semantic.iter().any(|(_, s)| s.concept.f1 > r.baseline.concept.f1))
        .count();
    let dba_wins = results.iter().filter(|r| r.dba.concept.f1 > r.baseline.concept.f1).count();
    outcome(
        sem_wins >= REQUIRED_WINS && dba_wins >= REQUIRED_WINS,
        format!("baseline < semantic in {sem_wins}/5, baseline < DBA in {dba_wins}/5"),
    )
}

fn early_entropy(results: &[SeedResult]) -> Outcome {
    let wins = results
        .iter()
        .filter(|r| match (r.semantic[0].1.early_entropy(3), r.baseline.early_entropy(3)) {
            (Some(sem), Some(base)) => sem < base,
            _ => false,
        })
        .count();
    outcome(wins >= REQUIRED_WINS, format!("alpha=1 lower mean H_1..3 in {wins}/5 seeds"))
}

fn dba_guarantee(results: &[SeedResult]) -> Outcome {
    let (mut finished, mut violations, mut flagged, mut total) = (0, 0, 0, 0);
    for r in results {
        for rec in &r.dba_records {
            total += 1;
            if rec.partial {
                flagged += 1;
                continue;
            }
            finished += 1;
            if !rec.constraints.iter().all(|c| contains_subsequence(&rec.tokens, c)) {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0 && total > 0,
        format!(
            "{finished} fully constrained outputs, {violations} violations, flagged partial {flagged}/{total} ({:.2}%)",
            100.0 * flagged as f64 / total.max(1) as f64
        ),
    )
}

fn reductions() -> Outcome {
    let mut notes = Vec::new();
    // zero alpha is the pure NLL step
    let g = generate(&GeneratorSpec {
        n_pairs: 40,
        ..GeneratorSpec::default()
    })
    .unwrap();
    let data = Dataset::from_generated(&g);
    let small = ModelConfig {
        embed_dim: 16,
        hidden_dim: 24,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        max_steps: 1,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let params = ParamSet::init(
        &ModelConfig {
            vocab_size: data.train.vocab.len(),
            ..small.clone()
        },
        5,
    )
    .unwrap();
    let expected = grad::pure_nll_step(&data, &params, &train).to_bytes();
    let step_ok = UtilLossMode::ALL.iter().all(|&mode| {
        let run = RunConfig {
            model: small.clone(),
            train: train.clone(),
            mode,
            alpha: 0.0,
            lift_threshold: None,
        };
        train_run(&data, &run, Some(params.clone())).unwrap().params.to_bytes() == expected
    });
    notes.push(format!("alpha=0 step bitwise {}", if step_ok { "equal" } else { "DIFFERENT" }));

    // equal weights collapse the weighted loss
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = 12;
        let logits: Vec<f64> = (0..5 * v).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let w = rng.gen_range(0.05..1.0);
        let index = ConceptTokenIndex::new(
            (0..rng.gen_range(1..6))
                .map(|i| IndexedToken {
                    token: rng.gen_range(3..v as u32),
                    concept_id: format!("C{i}"),
                    weight: w,
                })
                .collect(),
        )
        .unwrap();
        let mut tape = Tape::new(false);
        let x = tape.leaf(Tensor::new(vec![5, v], logits).unwrap()).unwrap();
        let rows = tape.log_softmax(x, 1).unwrap();
        let lu = unweighted_utilization_loss(&mut tape, rows, &index).unwrap();
        let lw = weighted_utilization_loss(&mut tape, rows, &index).unwrap();
        worst = worst.max((tape.value(lu).item() - tape.value(lw).item()).abs());
    }
    notes.push(format!("|l_w - l_u| max {worst:.1e}"));

    // empty constraint set
    let mut same = true;
    for seed in 0..100 {
        let c = DecodeConfig {
            beam_size: 1 + seed as usize % 5,
            ..DecodeConfig::default()
        };
        let plain = beam_search(&mut HashScorer::new(8, seed), 3, &c).unwrap();
        let dba = dba_search(&mut HashScorer::new(8, seed), 3, &[], &c).unwrap();
        same &= !dba.partial && plain == dba.best;
    }
    let model = Seq2Seq::new(params.config()).unwrap();
    for pair in data.test.pairs.iter().take(5) {
        let source = data.train.vocab.encode(&pair.source);
        let c = DecodeConfig::default();
        let plain = beam_search(&mut ModelScorer::new(&model, &params, &source).unwrap(), source.len(), &c).unwrap();
        let dba = dba_search(&mut ModelScorer::new(&model, &params, &source).unwrap(), source.len(), &[], &c).unwrap();
        same &= !dba.partial && plain == dba.best;
    }
    notes.push(format!("empty-constraint DBA {}", if same { "identical" } else { "DIFFERENT" }));
    outcome(step_ok && worst <= 1e-12 && same, notes.join(", "))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("utilreg-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn files_equal(a: &Path, b: &Path) -> bool {
    let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    !names.is_empty()
        && names
            .iter()
            .all(|n| std::fs::read(a.join(n)).ok() == std::fs::read(b.join(n)).ok())
}

fn reproducibility() -> Outcome {
    let spec = GeneratorSpec {
        n_pairs: 300,
        ..GeneratorSpec::default()
    };
    let (a, b) = (scratch("a"), scratch("b"));
    generate(&spec).unwrap().write(&a).unwrap();
    generate(&spec).unwrap().write(&b).unwrap();
    let data_same = files_equal(&a, &b);
    let data = Dataset::load(&a).unwrap();
    let run = RunConfig {
        model: ModelConfig {
            embed_dim: 16,
            hidden_dim: 32,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            max_steps: 30,
            eval_every: 10,
            ..TrainConfig::default()
        },
        mode: UtilLossMode::SemanticWeighted,
        alpha: 1.0,
        lift_threshold: None,
    };
    let artifacts = || {
        let out = train_run(&data, &run, None).unwrap();
        let mut files = vec![out.params.to_bytes(), log_csv(&out.log).into_bytes()];
        for mode in [DecodeMode::Plain, DecodeMode::Dba] {
            let config = DecodeConfig {
                mode,
                ..DecodeConfig::default()
            };
            let (report, records) = eval_with(&data, &out.params, &config);
            files.push(outputs_text(&records).into_bytes());
            files.push(decode_csv(&records).into_bytes());
            for csv in [report.metrics_csv(), report.relative_error_csv(), report.entropy_csv(), report.rank_csv()] {
                files.push(csv.into_bytes());
            }
        }
        files
    };
    let first = artifacts();
    let pipeline_same = first == artifacts();
    let _ = std::fs::remove_dir_all(&a);
    let _ = std::fs::remove_dir_all(&b);
    outcome(
        data_same && pipeline_same,
        format!(
            "generated data {}, {} checkpoint/log/decode/eval artifacts {}",
            if data_same { "identical" } else { "DIFFERENT" },
            first.len(),
            if pipeline_same { "identical" } else { "DIFFERENT" }
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags; a filter argument selects nothing here
    let mut lines = Vec::new();
    let mut report = |n: usize, name: &str, o: Outcome| {
        let line = format!("{} criterion {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        println!("{line}");
        lines.push((o.pass, line));
    };
    report(1, "utilization oracle", eq2_oracle());
    report(2, "recognizer oracle", recognizer_oracle());
    report(3, "gradients", gradients());
    let start = Instant::now();
    let generated = generate(&GeneratorSpec::default()).unwrap();
    let gen_time = start.elapsed();
    report(4, "ground-truth recovery", ground_truth(&generated, gen_time));

    let data = Dataset::from_generated(&generated);
    eprintln!(
        "synthetic experiment: {} train / {} test pairs, vocab {}, {EXPERIMENT_STEPS} steps per run",
        data.train.pairs.len(),
        data.test.pairs.len(),
        data.train.vocab.len()
    );
    let results: Vec<SeedResult> = SEEDS.iter().map(|&s| seed_result(&data, s)).collect();
    report(5, "relative error gap", closes_gap(&results));
    report(6, "concept-F1 ordering", f1_ordering(&results));
    report(7, "early entropy", early_entropy(&results));
    report(8, "DBA guarantee", dba_guarantee(&results));
    report(9, "reduction identities", reductions());
    report(10, "reproducibility", reproducibility());

    let failed = lines.iter().filter(|(pass, _)| !pass).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
