//! Independent reference implementations used to check the library:
//! central finite differences, a brute-force entity matcher and a
//! confusion-count metric calculator, plus random input generators.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rexloop_core::corpus::tokenize;
use rexloop_core::model::init_params;
use rexloop_core::train::{gradient, ranking_loss};
use rexloop_core::{forward, EncodedExample, Hyperparams, ModelParams, OtherMode, Sentence, Triple};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Micro-model dimensions: |V| = 20, d_w = 8, d_p = 4, K = 3, d_c = 16 and
/// five scored classes.
pub const MICRO_VOCAB: usize = 20;
pub const MICRO_SCORED: usize = 5;

pub fn micro_hyper(mode: OtherMode) -> Hyperparams {
    Hyperparams {
        word_dim: 8,
        pos_dim: 4,
        clip: 3,
        filters: 16,
        other_mode: mode,
        init_scale: 0.5,
        ..Hyperparams::desk()
    }
}

/// Random encoded sentence of length `1..=max_len` over the micro vocabulary.
pub fn random_encoded(rng: &mut ChaCha8Rng, vocab: usize, clip: usize, max_len: usize, gold: usize) -> EncodedExample {
    let len = rng.gen_range(1..=max_len);
    let positions = 2 * clip + 1;
    EncodedExample {
        token_ids: (0..len).map(|_| rng.gen_range(1..vocab)).collect(),
        pos1_ids: (0..len).map(|_| rng.gen_range(0..positions)).collect(),
        pos2_ids: (0..len).map(|_| rng.gen_range(0..positions)).collect(),
        gold: Some(gold),
    }
}

pub struct MicroModel {
    pub hyper: Hyperparams,
    pub params: ModelParams,
    pub examples: Vec<EncodedExample>,
}

/// A random micro-model with `n` examples. Even seeds use an embedded
/// negative row, odd seeds the omitted negative class.
pub fn micro_model(seed: u64, n: usize, max_len: usize) -> MicroModel {
    let mode = if seed.is_multiple_of(2) {
        OtherMode::Embedded
    } else {
        OtherMode::Omitted
    };
    let hyper = micro_hyper(mode);
    let params = init_params(&hyper, MICRO_VOCAB, MICRO_SCORED, seed);
    let classes = match mode {
        OtherMode::Embedded => MICRO_SCORED,
        OtherMode::Omitted => MICRO_SCORED + 1,
    };
    let mut r = rng(seed ^ 0x5eed);
    let examples = (0..n)
        .map(|_| {
            let gold = r.gen_range(0..classes);
            random_encoded(&mut r, MICRO_VOCAB, hyper.clip, max_len, gold)
        })
        .collect();
    MicroModel { hyper, params, examples }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates where a perturbation moved a pooling argmax or the
    /// chosen wrong class, so the loss is not differentiable there.
    pub skipped: usize,
}

/// `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

fn loss_and_branch(params: &ModelParams, example: &EncodedExample, hyper: &Hyperparams) -> (f64, Vec<usize>, Option<usize>) {
    let trace = forward(params, example).unwrap();
    let loss = ranking_loss(&trace.scores, example.gold.unwrap(), hyper).unwrap();
    (loss.value, trace.argmax_pos, loss.negative)
}

/// Compares the analytic gradient with central differences at step `eps`
/// on every parameter coordinate.
pub fn gradient_check(params: &ModelParams, example: &EncodedExample, hyper: &Hyperparams, eps: f64) -> GradCheck {
    let gold = example.gold.unwrap();
    let analytic = gradient(params, example, gold, hyper).unwrap().to_dense(params.activation);
    let (_, base_argmax, base_negative) = loss_and_branch(params, example, hyper);
    let analytic_arrays: Vec<Vec<f64>> = analytic.arrays().iter().map(|a| a.to_vec()).collect();

    let mut out = GradCheck::default();
    let mut probe = params.clone();
    for (a, grads) in analytic_arrays.iter().enumerate() {
        for (i, &g) in grads.iter().enumerate() {
            let original = probe.arrays_mut()[a][i];
            probe.arrays_mut()[a][i] = original + eps;
            let (plus, arg_p, neg_p) = loss_and_branch(&probe, example, hyper);
            probe.arrays_mut()[a][i] = original - eps;
            let (minus, arg_m, neg_m) = loss_and_branch(&probe, example, hyper);
            probe.arrays_mut()[a][i] = original;
            if arg_p != base_argmax || arg_m != base_argmax || neg_p != base_negative || neg_m != base_negative {
                out.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            out.max_relative_error = out.max_relative_error.max(relative_error(g, numeric));
            out.checked += 1;
        }
    }
    out
}

/// One alignment match: sentence id, triple index, inclusive head span,
/// inclusive tail span and relation.
pub type Match = (String, usize, (usize, usize), (usize, usize), String);

fn norms_of(text: &str) -> Vec<String> {
    tokenize(text)
        .map(|ts| ts.into_iter().map(|t| t.norm).collect())
        .unwrap_or_default()
}

/// Nested scan over every (head start, tail start) pair of each sentence.
/// The first non-overlapping pair in row-major order wins; repeated
/// (head, tail, relation) triples count once, at their first index.
pub fn brute_force_align(sentences: &[Sentence], triples: &[Triple], max_len: usize) -> Vec<Match> {
    let mut out = Vec::new();
    for sentence in sentences {
        if sentence.tokens.len() > max_len {
            continue;
        }
        let norms: Vec<String> = sentence.tokens.iter().map(|t| t.norm.clone()).collect();
        let mut seen = BTreeSet::new();
        for (index, triple) in triples.iter().enumerate() {
            let head = norms_of(&triple.head);
            let tail = norms_of(&triple.tail);
            if head.is_empty() || tail.is_empty() {
                continue;
            }
            if !seen.insert((head.clone(), tail.clone(), triple.relation.clone())) {
                continue;
            }
            let matches_at = |needle: &[String], at: usize| {
                at + needle.len() <= norms.len() && (0..needle.len()).all(|k| norms[at + k] == needle[k])
            };
            'scan: for h in 0..norms.len() {
                if !matches_at(&head, h) {
                    continue;
                }
                let h_end = h + head.len() - 1;
                for t in 0..norms.len() {
                    if !matches_at(&tail, t) {
                        continue;
                    }
                    let t_end = t + tail.len() - 1;
                    if t > h_end || t_end < h {
                        out.push((sentence.id.clone(), index, (h, h_end), (t, t_end), triple.relation.clone()));
                        break 'scan;
                    }
                }
            }
        }
    }
    out
}

const WORDS: [&str; 12] = [
    "alpha", "beta", "gamma", "delta", "new", "york", "city", "of", "the", "river", "Alpha", "YORK",
];

/// Random corpus of up to 200 sentences over a tiny vocabulary and up to 50
/// triples whose names reuse it, so matches, overlaps and duplicates are
/// frequent.
pub fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<Sentence>, Vec<Triple>) {
    let n_sentences = rng.gen_range(0..=200);
    let sentences = (0..n_sentences)
        .map(|i| {
            let len = rng.gen_range(1..=14);
            let text: Vec<&str> = (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect();
            Sentence::from_text(format!("s{i}"), &text.join(" ")).unwrap()
        })
        .collect();
    let relations = ["r0", "r1", "r2"];
    let name = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(1..=3);
        (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    let n_triples = rng.gen_range(0..=50);
    let mut triples: Vec<Triple> = Vec::new();
    for _ in 0..n_triples {
        if !triples.is_empty() && rng.gen_bool(0.1) {
            let copy = triples[rng.gen_range(0..triples.len())].clone();
            triples.push(copy);
            continue;
        }
        let head = name(rng);
        let tail = name(rng);
        triples.push(Triple::new(head, *relations.choose(rng).unwrap(), tail));
    }
    (sentences, triples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleClass {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMetrics {
    pub per_class: Vec<OracleClass>,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub accuracy: f64,
}

/// Per-class counts taken directly from the (gold, predicted) pairs.
/// Macro scores average the non-negative classes that occur in gold or
/// predictions.
pub fn confusion_oracle(gold: &[usize], predicted: &[usize], classes: usize, negative: usize) -> OracleMetrics {
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class: Vec<OracleClass> = (0..classes)
        .map(|c| {
            let pairs = gold.iter().zip(predicted);
            let tp = pairs.clone().filter(|(g, p)| **g == c && **p == c).count();
            let fp = pairs.clone().filter(|(g, p)| **g != c && **p == c).count();
            let fn_ = pairs.filter(|(g, p)| **g == c && **p != c).count();
            let precision = div(tp, tp + fp);
            let recall = div(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            OracleClass {
                tp,
                fp,
                fn_,
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let included: Vec<&OracleClass> = per_class
        .iter()
        .enumerate()
        .filter(|(c, m)| *c != negative && m.tp + m.fp + m.fn_ > 0)
        .map(|(_, m)| m)
        .collect();
    let mean = |f: &dyn Fn(&OracleClass) -> f64| {
        if included.is_empty() {
            0.0
        } else {
            included.iter().map(|m| f(m)).sum::<f64>() / included.len() as f64
        }
    };
    let correct = gold.iter().zip(predicted).filter(|(g, p)| g == p).count();
    OracleMetrics {
        macro_f1: mean(&|m| m.f1),
        macro_precision: mean(&|m| m.precision),
        macro_recall: mean(&|m| m.recall),
        accuracy: div(correct, gold.len()),
        per_class,
    }
}
