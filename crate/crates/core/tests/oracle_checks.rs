mod oracles;

use oracles::*;
use rand::Rng;
use rexloop_core::eval::metrics_from_predictions;
use rexloop_core::pipeline::{encode_all, initial_checkpoint};
use rexloop_core::synth::{generate, SynthConfig};
use rexloop_core::trigrams::attribute;
use rexloop_core::{align, evaluate, forward, predict, Hyperparams, OtherMode};

#[test]
fn analytic_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let model = micro_model(seed, 2, 10);
        for example in &model.examples {
            let check = gradient_check(&model.params, example, &model.hyper, 1e-4);
            assert!(check.checked > 0);
            assert!(
                check.max_relative_error <= 1e-4,
                "seed {seed}: relative error {}",
                check.max_relative_error
            );
        }
    }
}

#[test]
fn fixed_length_micro_model_gradient() {
    let mut model = micro_model(42, 0, 7);
    let mut r = rng(7);
    for gold in 0..5 {
        model.examples.push(random_encoded(&mut r, MICRO_VOCAB, 3, 7, gold));
    }
    for example in model.examples.iter_mut() {
        while example.len() < 7 {
            example.token_ids.push(1);
            example.pos1_ids.push(0);
            example.pos2_ids.push(6);
        }
        example.token_ids.truncate(7);
        example.pos1_ids.truncate(7);
        example.pos2_ids.truncate(7);
        let check = gradient_check(&model.params, example, &model.hyper, 1e-4);
        assert!(check.max_relative_error <= 1e-4, "{check:?}");
    }
}

#[test]
fn window_attributions_sum_to_class_scores() {
    for seed in 0..20 {
        let model = micro_model(seed, 5, 10);
        for example in &model.examples {
            let scores = forward(&model.params, example).unwrap().scores;
            for (class, score) in scores.iter().enumerate() {
                let windows = attribute(&model.params, example, class).unwrap();
                assert_eq!(windows.len(), example.len());
                let total: f64 = windows.iter().sum();
                assert!((total - score).abs() <= 1e-6, "seed {seed} class {class}: {total} vs {score}");
            }
        }
    }
}

#[test]
fn alignment_matches_brute_force_matcher() {
    for seed in 0..50 {
        let mut r = rng(1000 + seed);
        let (sentences, triples) = random_corpus(&mut r);
        let max_len = r.gen_range(4..=16);
        let expected = brute_force_align(&sentences, &triples, max_len);
        let actual: Vec<Match> = align(&sentences, &triples, max_len)
            .examples
            .into_iter()
            .map(|e| {
                let (sentence, triple) = e.id().rsplit_once('#').unwrap();
                (
                    sentence.to_string(),
                    triple.parse().unwrap(),
                    (e.e1.start, e.e1.end),
                    (e.e2.start, e.e2.end),
                    e.label.clone().unwrap(),
                )
            })
            .collect();
        assert_eq!(actual, expected, "corpus seed {seed}");
    }
}

#[test]
fn metrics_match_confusion_counts_on_random_predictions() {
    let mut r = rng(99);
    for _ in 0..100 {
        let classes = r.gen_range(2..=6);
        let n = r.gen_range(1..=40);
        let gold: Vec<usize> = (0..n).map(|_| r.gen_range(0..classes)).collect();
        let predicted: Vec<usize> = (0..n).map(|_| r.gen_range(0..classes)).collect();
        let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
        let report = metrics_from_predictions(&gold, &predicted, &names, classes - 1).unwrap();
        let oracle = confusion_oracle(&gold, &predicted, classes, classes - 1);
        assert_eq!(report.macro_f1, oracle.macro_f1);
        assert_eq!(report.macro_precision, oracle.macro_precision);
        assert_eq!(report.macro_recall, oracle.macro_recall);
        assert_eq!(report.accuracy, oracle.accuracy);
        for (m, o) in report.per_class.iter().zip(&oracle.per_class) {
            assert_eq!((m.tp, m.fp, m.fn_), (o.tp, o.fp, o.fn_));
            assert_eq!((m.precision, m.recall, m.f1), (o.precision, o.recall, o.f1));
        }
    }
}

#[test]
fn evaluate_matches_oracle_on_random_models() {
    let mut r = rng(5);
    for instance in 0..20u64 {
        let data = generate(&SynthConfig {
            relations: r.gen_range(1..=4),
            per_relation: 6,
            negatives: 6,
            seed: instance,
            ..SynthConfig::default()
        })
        .unwrap();
        let classes = data.schema.classes();
        let mode = if instance % 2 == 0 { OtherMode::Embedded } else { OtherMode::Omitted };
        let hyper = Hyperparams {
            word_dim: 6,
            pos_dim: 2,
            filters: 8,
            init_scale: 0.5,
            other_mode: mode,
            seed: instance,
            ..Hyperparams::desk()
        };
        let checkpoint = initial_checkpoint(&data.train, &classes, &hyper).unwrap();
        let report = evaluate(&checkpoint, &data.test).unwrap();
        let encoded = encode_all(&data.test, &checkpoint.vocab, &classes, &hyper).unwrap();
        let gold: Vec<usize> = encoded.iter().map(|e| e.gold.unwrap()).collect();
        let predicted: Vec<usize> = encoded
            .iter()
            .map(|e| predict(&checkpoint.params, e, mode).unwrap())
            .collect();
        let oracle = confusion_oracle(&gold, &predicted, classes.len(), classes.negative());
        assert_eq!(report.macro_f1, oracle.macro_f1, "instance {instance}");
        assert_eq!(report.accuracy, oracle.accuracy);
        for (m, o) in report.per_class.iter().zip(&oracle.per_class) {
            assert_eq!((m.tp, m.fp, m.fn_, m.f1), (o.tp, o.fp, o.fn_, o.f1));
        }
    }
}
