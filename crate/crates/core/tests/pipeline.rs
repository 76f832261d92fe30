mod common;

use std::collections::BTreeSet;

use utilreg::decode::{contains_subsequence, DecodeConfig, DecodeMode};
use utilreg::eval::{concept_f1, generated_utilization, row_entropy, stepwise_entropy};
use utilreg::experiment::{decode_corpus, decode_csv, evaluate, outputs_text, train_run, Dataset, RunConfig};
use utilreg::losses::UtilLossMode;
use utilreg::model::ModelConfig;
use utilreg::ontology::EquivalenceMap;
use utilreg::synthgen::{generate, GeneratorSpec};
use utilreg::trainer::TrainConfig;
use utilreg::utilization::estimate;

#[test]
fn planted_rates_are_recovered() {
    let g = generate(&GeneratorSpec::default()).unwrap();
    let pairs: Vec<_> = [&g.train, &g.valid, &g.test].iter().flat_map(|c| c.pairs.clone()).collect();
    let table = estimate(&pairs, &g.ontology, &EquivalenceMap::SemanticType).unwrap();
    for (label, &planted) in &g.truth.type_rates {
        let counts = &table.classes()[label];
        assert!(counts.denominator >= 200, "{label}: {} events", counts.denominator);
        let rate = counts.rate().unwrap();
        assert!((rate - planted).abs() <= 0.05, "{label}: {rate} vs {planted}");
    }
}

#[test]
fn references_as_outputs_reproduce_the_table() {
    let g = generate(&GeneratorSpec { n_pairs: 600, ..GeneratorSpec::default() }).unwrap();
    let data = Dataset::from_generated(&g);
    let outputs: Vec<Vec<String>> = data.test.pairs.iter().map(|p| p.reference.clone()).collect();
    let gen = generated_utilization(&outputs, &data.test, &data.recognizer(), &EquivalenceMap::SemanticType).unwrap();
    let direct = estimate(&data.test.pairs, &data.ontology, &EquivalenceMap::SemanticType).unwrap();
    assert_eq!(gen.model, direct);
    assert_eq!(gen.reference, direct);
    assert!(gen.relative_errors().per_class.values().all(|&e| e == 0.0));
}

#[test]
fn concept_f1_hand_cases_and_symmetry() {
    let set = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
    let f = concept_f1(&[set(&["a"])], &[set(&["a", "b"])]).unwrap();
    assert_eq!((f.precision, f.recall), (1.0, 0.5));
    assert!((f.f1 - 2.0 / 3.0).abs() < 1e-15);
    let outs = vec![set(&["a", "c"]), set(&[]), set(&["d"])];
    let refs = vec![set(&["a"]), set(&["b"]), set(&["d", "e"])];
    let fwd = concept_f1(&outs, &refs).unwrap();
    let rev = concept_f1(&refs, &outs).unwrap();
    assert_eq!((fwd.precision, fwd.recall), (rev.recall, rev.precision));
    assert!((fwd.f1 - rev.f1).abs() < 1e-15);
    assert_eq!(concept_f1(&[set(&["x"])], &[set(&["y"])]).unwrap().f1, 0.0);
}

#[test]
fn entropy_is_bounded_by_log_vocab() {
    let (model, params) = common::grad::tiny_model(7);
    let ex = common::grad::tiny_example(7);
    let rows = model.log_prob_rows(&params, &ex.0, &ex.1).unwrap();
    for t in 0..rows.rows() {
        let h = row_entropy(rows.row(t));
        assert!((0.0..=9f64.ln() + 1e-12).contains(&h));
    }
    let uniform = utilreg_tensor::Tensor::full(&[3, 4], -(4f64.ln()));
    for h in stepwise_entropy(&[uniform], 3) {
        assert!((h.unwrap() - 4f64.ln()).abs() < 1e-12);
    }
}

fn tiny_run(data: &Dataset) -> utilreg::model::ParamSet {
    let run = RunConfig {
        model: ModelConfig {
            embed_dim: 16,
            hidden_dim: 32,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            max_steps: 40,
            warmup_steps: 20,
            eval_every: 20,
            batch_size: 16,
            ..TrainConfig::default()
        },
        mode: UtilLossMode::SemanticWeighted,
        alpha: 1.0,
        lift_threshold: None,
    };
    train_run(data, &run, None).unwrap().params
}

#[test]
fn end_to_end_is_deterministic_and_constrained() {
    let g = generate(&GeneratorSpec { n_pairs: 400, ..GeneratorSpec::default() }).unwrap();
    let data = Dataset::from_generated(&g);
    let params = tiny_run(&data);
    assert_eq!(params.to_bytes(), tiny_run(&data).to_bytes());
    let identity = data.table(&EquivalenceMap::Identity).unwrap();
    for mode in [DecodeMode::Plain, DecodeMode::Dba] {
        let config = DecodeConfig { mode, beam_size: 3, ..DecodeConfig::default() };
        let records = decode_corpus(&params, &data.test, &identity, &data.stops, &config).unwrap();
        let again = decode_corpus(&params, &data.test, &identity, &data.stops, &config).unwrap();
        assert_eq!(outputs_text(&records), outputs_text(&again));
        assert_eq!(decode_csv(&records), decode_csv(&again));
        for r in &records {
            if mode == DecodeMode::Dba && !r.partial {
                assert!(r.constraints.iter().all(|c| contains_subsequence(&r.tokens, c)));
            }
            if mode == DecodeMode::Plain {
                assert!(r.constraints.is_empty() && !r.partial);
            }
        }
        let report = evaluate(&data, &params, &data.test, &records, 3).unwrap();
        assert_eq!(report.n_outputs, data.test.pairs.len());
        assert!((0.0..=1.0).contains(&report.concept.f1));
        assert!(report.relative_errors.per_class.values().all(|&e| e >= 0.0));
        assert!(report.entropy.iter().flatten().all(|&h| h >= 0.0));
        assert_eq!(report.metrics_csv(), evaluate(&data, &params, &data.test, &records, 3).unwrap().metrics_csv());
    }
}
