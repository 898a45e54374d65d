//! Precision/recall/F1, sentence-length error analysis and manual-effort
//! accounting.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{encode, TaggedExample};
use crate::error::{Error, Result};
use crate::model::predict;

/// Length buckets with fewer examples are flagged as low support.
pub const LOW_SUPPORT: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    /// Mean F1 over non-negative classes that occur in gold or predictions.
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub accuracy: f64,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub examples: usize,
}

impl MetricsReport {
    pub fn f1_of(&self, class: &str) -> Option<f64> {
        self.per_class.iter().find(|m| m.class == class).map(|m| m.f1)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Metrics from parallel gold/predicted class indices.
pub fn metrics_from_predictions(
    gold: &[usize],
    predicted: &[usize],
    class_names: &[String],
    negative: usize,
) -> Result<MetricsReport> {
    if gold.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    if gold.len() != predicted.len() {
        return Err(Error::contract("gold and predicted lengths differ"));
    }
    let n = class_names.len();
    let mut confusion = vec![vec![0usize; n]; n];
    for (&g, &p) in gold.iter().zip(predicted) {
        if g >= n || p >= n {
            return Err(Error::contract("class index out of range"));
        }
        confusion[g][p] += 1;
    }

    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted_c: usize = (0..n).map(|g| confusion[g][c]).sum();
        let precision = ratio(tp, predicted_c);
        let recall = ratio(tp, support);
        per_class.push(ClassMetrics {
            class: class_names[c].clone(),
            precision,
            recall,
            f1: harmonic(precision, recall),
            tp,
            fp: predicted_c - tp,
            fn_: support - tp,
            support,
        });
    }

    let averaged: Vec<&ClassMetrics> = per_class
        .iter()
        .enumerate()
        .filter(|(c, m)| *c != negative && (m.support > 0 || m.tp + m.fp > 0))
        .map(|(_, m)| m)
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if averaged.is_empty() {
            0.0
        } else {
            averaged.iter().map(|m| f(m)).sum::<f64>() / averaged.len() as f64
        }
    };
    let correct: usize = (0..n).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        macro_f1: mean(|m| m.f1),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        accuracy: ratio(correct, gold.len()),
        per_class,
        confusion,
        examples: gold.len(),
    })
}

/// Gold and predicted classes for each test example.
pub fn predictions(checkpoint: &Checkpoint, test: &[TaggedExample]) -> Result<(Vec<usize>, Vec<usize>)> {
    let dims = checkpoint.params.dims;
    let mut gold = Vec::with_capacity(test.len());
    let mut predicted = Vec::with_capacity(test.len());
    for example in test {
        let g = checkpoint.classes.class_of(example)?;
        let encoded = encode(example, &checkpoint.vocab, dims.clip, usize::MAX, Some(g))?;
        gold.push(g);
        predicted.push(predict(&checkpoint.params, &encoded, checkpoint.hyper.other_mode)?);
    }
    Ok((gold, predicted))
}

pub fn evaluate(checkpoint: &Checkpoint, test: &[TaggedExample]) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    let (gold, predicted) = predictions(checkpoint, test)?;
    metrics_from_predictions(&gold, &predicted, &checkpoint.classes.names, checkpoint.classes.negative())
}

pub fn write_table<W: Write>(mut writer: W, report: &MetricsReport) -> Result<()> {
    let width = report.per_class.iter().map(|m| m.class.len()).max().unwrap_or(5).max(5);
    writeln!(writer, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "class", "precision", "recall", "f1", "support")?;
    for m in &report.per_class {
        writeln!(
            writer,
            "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
            m.class, m.precision, m.recall, m.f1, m.support
        )?;
    }
    writeln!(
        writer,
        "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
        "macro", report.macro_precision, report.macro_recall, report.macro_f1, report.examples
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    /// Inclusive token-length range.
    pub min_len: usize,
    pub max_len: usize,
    pub total: usize,
    pub correct: usize,
    pub wrong: usize,
    pub correct_share: f64,
    pub wrong_share: f64,
    pub low_support: bool,
}

/// Correct and wrong counts per length bucket, each normalised by the number
/// of examples in the bucket. Empty buckets are omitted.
pub fn length_histogram(lengths: &[usize], correct: &[bool], bucket_width: usize) -> Result<Vec<LengthBucket>> {
    if bucket_width < 1 {
        return Err(Error::contract("bucket width must be at least 1"));
    }
    let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&len, &ok) in lengths.iter().zip(correct) {
        let entry = buckets.entry(len / bucket_width).or_default();
        entry.0 += 1;
        entry.1 += usize::from(ok);
    }
    Ok(buckets
        .into_iter()
        .map(|(b, (total, right))| LengthBucket {
            min_len: b * bucket_width,
            max_len: b * bucket_width + bucket_width - 1,
            total,
            correct: right,
            wrong: total - right,
            correct_share: ratio(right, total),
            wrong_share: ratio(total - right, total),
            low_support: total < LOW_SUPPORT,
        })
        .collect())
}

pub fn length_analysis(checkpoint: &Checkpoint, test: &[TaggedExample], bucket_width: usize) -> Result<Vec<LengthBucket>> {
    let (gold, predicted) = predictions(checkpoint, test)?;
    let lengths: Vec<usize> = test.iter().map(|e| e.sentence.len()).collect();
    let correct: Vec<bool> = gold.iter().zip(&predicted).map(|(g, p)| g == p).collect();
    length_histogram(&lengths, &correct, bucket_width)
}

pub fn write_length_csv<W: Write>(mut writer: W, buckets: &[LengthBucket]) -> Result<()> {
    writeln!(writer, "min_len,max_len,total,correct,wrong,correct_share,wrong_share,low_support")?;
    for b in buckets {
        writeln!(
            writer,
            "{},{},{},{},{},{},{},{}",
            b.min_len, b.max_len, b.total, b.correct, b.wrong, b.correct_share, b.wrong_share, b.low_support
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workflow {
    /// The expert reads every test sentence.
    Manual,
    /// The expert labels a training set, then checks results.
    Supervised,
    /// Only the result check.
    Distant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EffortCounts {
    pub test_sentences: Option<usize>,
    pub train_sentences: Option<usize>,
    pub result_check: Option<usize>,
}

impl EffortCounts {
    /// Sentence counts of the KBP37 dataset.
    pub fn kbp37(result_check: usize) -> Self {
        EffortCounts {
            test_sentences: Some(3403),
            train_sentences: Some(17638),
            result_check: Some(result_check),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffortReport {
    pub workflow: Workflow,
    /// Sentences read to build training data.
    pub labeling: usize,
    /// Sentences read to check results.
    pub checking: usize,
    pub total: usize,
}

/// Number of sentences the expert must read under `workflow`.
pub fn effort_report(workflow: Workflow, counts: &EffortCounts) -> Result<EffortReport> {
    let need = |v: Option<usize>, what: &str| v.ok_or_else(|| Error::contract(format!("{what} count missing")));
    let (labeling, checking) = match workflow {
        Workflow::Manual => (0, need(counts.test_sentences, "test sentence")?),
        Workflow::Supervised => (
            need(counts.train_sentences, "training sentence")?,
            need(counts.result_check, "result check")?,
        ),
        Workflow::Distant => (0, need(counts.result_check, "result check")?),
    };
    Ok(EffortReport {
        workflow,
        labeling,
        checking,
        total: labeling + checking,
    })
}
