//! Representative trigrams: each class score is a sum over filters of
//! `W_classes[c][f] * pooled[f]`, and every pooled value comes from one
//! three-token window, so the score splits exactly across windows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{encode, TaggedExample, PAD_MARKER};
use crate::error::{Error, Result};
use crate::model::{check_encoded, decide, forward_unchecked, ModelParams};
use crate::corpus::EncodedExample;

pub const DEFAULT_SAMPLES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Trigram(pub [String; 3]);

impl Trigram {
    pub fn new(a: &str, b: &str, c: &str) -> Self {
        Trigram([a.to_lowercase(), b.to_lowercase(), c.to_lowercase()])
    }

    /// Window centred on `t`, with [`PAD_MARKER`] beyond the boundaries.
    pub fn at(norms: &[&str], t: usize) -> Self {
        let slot = |i: Option<usize>| {
            i.and_then(|i| norms.get(i))
                .map_or_else(|| PAD_MARKER.to_string(), |s| s.to_string())
        };
        Trigram([slot(t.checked_sub(1)), slot(Some(t)), slot(Some(t + 1))])
    }

    /// True when the trigram occurs in `norms`, boundary PAD slots matching
    /// only at the sentence edges.
    pub fn occurs_in(&self, norms: &[&str]) -> bool {
        (0..norms.len()).any(|t| Trigram::at(norms, t) == *self)
    }
}

impl fmt::Display for Trigram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.0[0], self.0[1], self.0[2])
    }
}

impl FromStr for Trigram {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        match parts.as_slice() {
            [a, b, c] => Ok(Trigram::new(a, b, c)),
            _ => Err(Error::contract(format!("`{s}` is not three tokens"))),
        }
    }
}

impl From<Trigram> for String {
    fn from(t: Trigram) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for Trigram {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Per-window attribution of `target`'s score. Sums to `scores[target]`.
pub fn attribute(params: &ModelParams, encoded: &EncodedExample, target: usize) -> Result<Vec<f64>> {
    check_encoded(params, encoded)?;
    if target >= params.dims.classes {
        return Err(Error::contract(format!("class {target} has no score row")));
    }
    let trace = forward_unchecked(params, encoded);
    Ok(route(params, &trace.pooled, &trace.argmax_pos, encoded.len(), target).0)
}

fn route(params: &ModelParams, pooled: &[f64], argmax_pos: &[usize], len: usize, target: usize) -> (Vec<f64>, Vec<bool>) {
    let mut windows = vec![0.0; len];
    let mut assigned = vec![false; len];
    let weights = params.class_emb.row(target);
    for f in 0..params.dims.filters {
        let t = argmax_pos[f];
        windows[t] += weights[f] * pooled[f];
        assigned[t] = true;
    }
    (windows, assigned)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributionTarget {
    /// The example's gold class.
    #[default]
    Gold,
    /// The model's prediction, for error analysis.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigramAttribution {
    pub relation: String,
    pub trigram: Trigram,
    pub value: f64,
    pub count: usize,
    pub samples: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregate {
    pub value: f64,
    pub count: usize,
    pub samples: Vec<String>,
}

/// Summed attributions keyed by (class, trigram).
pub type TrigramTable = BTreeMap<(usize, Trigram), Aggregate>;

pub struct AggregateOptions {
    pub target: AttributionTarget,
    pub max_samples: usize,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            target: AttributionTarget::Gold,
            max_samples: DEFAULT_SAMPLES,
        }
    }
}

/// Attributes every example against its target class and sums per
/// (class, trigram). Examples whose target has no score row (the omitted
/// negative class) contribute nothing.
pub fn aggregate_trigrams(
    checkpoint: &Checkpoint,
    dataset: &[TaggedExample],
    options: &AggregateOptions,
) -> Result<TrigramTable> {
    let params = &checkpoint.params;
    let hyper = &checkpoint.hyper;
    let mut table = TrigramTable::new();
    for example in dataset {
        let gold = checkpoint.classes.class_of(example)?;
        let encoded = encode(example, &checkpoint.vocab, params.dims.clip, usize::MAX, Some(gold))?;
        check_encoded(params, &encoded)?;
        let trace = forward_unchecked(params, &encoded);
        let target = match options.target {
            AttributionTarget::Gold => gold,
            AttributionTarget::Predicted => decide(&trace.scores, hyper.other_mode),
        };
        if target >= params.dims.classes {
            continue;
        }
        let (windows, assigned) = route(params, &trace.pooled, &trace.argmax_pos, encoded.len(), target);
        let norms: Vec<&str> = example.sentence.norms().collect();
        for (t, value) in windows.iter().enumerate() {
            if !assigned[t] {
                continue;
            }
            let entry = table.entry((target, Trigram::at(&norms, t))).or_default();
            entry.value += value;
            entry.count += 1;
            if entry.samples.len() < options.max_samples && entry.samples.last().map(String::as_str) != Some(example.id()) {
                entry.samples.push(example.id().to_string());
            }
        }
    }
    Ok(table)
}

/// Ranks a table per class: value descending, then trigram order.
pub fn rank(table: &TrigramTable, checkpoint: &Checkpoint, k: usize) -> Result<BTreeMap<String, Vec<TrigramAttribution>>> {
    if k < 1 {
        return Err(Error::contract("top-k must be at least 1"));
    }
    let mut per_class: BTreeMap<usize, Vec<(&Trigram, &Aggregate)>> = BTreeMap::new();
    for ((class, trigram), agg) in table {
        per_class.entry(*class).or_default().push((trigram, agg));
    }
    let mut out = BTreeMap::new();
    for (class, mut entries) in per_class {
        entries.sort_by(|a, b| b.1.value.total_cmp(&a.1.value).then_with(|| a.0.cmp(b.0)));
        let relation = checkpoint.classes.name(class).to_string();
        let ranked = entries
            .into_iter()
            .take(k)
            .map(|(trigram, agg)| TrigramAttribution {
                relation: relation.clone(),
                trigram: trigram.clone(),
                value: agg.value,
                count: agg.count,
                samples: agg.samples.clone(),
            })
            .collect();
        out.insert(relation, ranked);
    }
    Ok(out)
}

pub fn top_trigrams(
    checkpoint: &Checkpoint,
    dataset: &[TaggedExample],
    k: usize,
    options: &AggregateOptions,
) -> Result<BTreeMap<String, Vec<TrigramAttribution>>> {
    if k < 1 {
        return Err(Error::contract("top-k must be at least 1"));
    }
    rank(&aggregate_trigrams(checkpoint, dataset, options)?, checkpoint, k)
}

pub fn write_jsonl<W: Write>(mut writer: W, ranked: &BTreeMap<String, Vec<TrigramAttribution>>) -> Result<()> {
    for entry in ranked.values().flatten() {
        serde_json::to_writer(&mut writer, entry)?;
        writeln!(writer)?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<TrigramAttribution>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Two-column table: relation, then `;`-separated trigrams.
pub fn write_table<W: Write>(mut writer: W, ranked: &BTreeMap<String, Vec<TrigramAttribution>>) -> Result<()> {
    let width = ranked.keys().map(|k| k.len()).max().unwrap_or(0);
    for (relation, entries) in ranked {
        let trigrams: Vec<String> = entries.iter().map(|e| e.trigram.to_string()).collect();
        writeln!(writer, "{relation:<width$} | {}", trigrams.join("; "))?;
    }
    Ok(())
}
