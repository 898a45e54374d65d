//! Expert verdicts on trigrams, filtering of training sentences that contain
//! banned trigrams, and retraining rounds.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::align::Bag;
use crate::checkpoint::Checkpoint;
use crate::corpus::TaggedExample;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::kb::ClassSet;
use crate::model::Hyperparams;
use crate::pipeline::fit;
use crate::train::{EpochRecord, TrainHistory};
use crate::trigrams::{top_trigrams, AggregateOptions, Trigram, TrigramAttribution};

/// Relation value that bans a trigram for every relation.
pub const ANY_RELATION: &str = "*";

/// A trigram banned for one relation. `relation` is a relation id (both
/// directions), a directional class name such as `rel(e2,e1)`, or
/// [`ANY_RELATION`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BannedTrigram {
    pub relation: String,
    pub trigram: Trigram,
}

pub type BannedSet = BTreeSet<BannedTrigram>;

/// Reads `relation<TAB>tok1 tok2 tok3` lines.
pub fn read_banned<R: BufRead>(reader: R) -> Result<BannedSet> {
    let mut banned = BannedSet::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let parse = |message: String| Error::Parse { line: index + 1, message };
        let (relation, trigram) = line
            .split_once('\t')
            .ok_or_else(|| parse("expected `relation<TAB>trigram`".into()))?;
        let trigram = trigram.parse::<Trigram>().map_err(|e| parse(e.to_string()))?;
        banned.insert(BannedTrigram {
            relation: relation.trim().to_string(),
            trigram,
        });
    }
    Ok(banned)
}

pub fn write_banned<W: Write>(mut writer: W, banned: &BannedSet) -> Result<()> {
    for b in banned {
        writeln!(writer, "{}\t{}", b.relation, b.trigram)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Keep,
    Ban,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub relation: String,
    pub trigram: Trigram,
    pub decision: Decision,
    #[serde(default)]
    pub reviewer: String,
    /// Seconds since the Unix epoch.
    #[serde(default)]
    pub timestamp: u64,
}

/// Verdicts for one round; a later verdict on the same (relation, trigram)
/// replaces the earlier one. Serialized as a plain list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<Verdict>", into = "Vec<Verdict>")]
pub struct VerdictSet {
    verdicts: BTreeMap<(String, Trigram), Verdict>,
}

impl VerdictSet {
    /// Records `verdict`; returns false when an identical decision was
    /// already recorded, leaving the stored verdict untouched.
    pub fn record(&mut self, verdict: Verdict) -> bool {
        let key = (verdict.relation.clone(), verdict.trigram.clone());
        match self.verdicts.get(&key) {
            Some(old) if old.decision == verdict.decision && old.reviewer == verdict.reviewer => false,
            _ => {
                self.verdicts.insert(key, verdict);
                true
            }
        }
    }

    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.values()
    }

    pub fn merge(&mut self, later: VerdictSet) {
        for v in later.verdicts.into_values() {
            self.record(v);
        }
    }

    pub fn banned(&self) -> BannedSet {
        self.iter()
            .filter(|v| v.decision == Decision::Ban)
            .map(|v| BannedTrigram {
                relation: v.relation.clone(),
                trigram: v.trigram.clone(),
            })
            .collect()
    }
}

impl From<Vec<Verdict>> for VerdictSet {
    fn from(list: Vec<Verdict>) -> Self {
        let mut set = VerdictSet::default();
        for v in list {
            set.record(v);
        }
        set
    }
}

impl From<VerdictSet> for Vec<Verdict> {
    fn from(set: VerdictSet) -> Self {
        set.verdicts.into_values().collect()
    }
}

/// Relation keys an example answers to: its relation id and its directional
/// class name.
fn relation_keys(example: &TaggedExample) -> Option<[String; 2]> {
    let label = example.label.as_ref()?;
    Some([label.clone(), format!("{label}{}", example.direction.suffix())])
}

/// Banned trigrams that apply to `example` and occur in it.
pub fn matching_bans<'a>(example: &TaggedExample, banned: &'a BannedSet) -> Vec<&'a BannedTrigram> {
    let Some(keys) = relation_keys(example) else {
        return Vec::new();
    };
    let norms: Vec<&str> = example.sentence.norms().collect();
    banned
        .iter()
        .filter(|b| b.relation == ANY_RELATION || keys.contains(&b.relation))
        .filter(|b| b.trigram.occurs_in(&norms))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrigramRemoval {
    pub relation: String,
    pub trigram: Trigram,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub removed_per_relation: BTreeMap<String, usize>,
    /// An example containing several banned trigrams counts for each.
    pub removed_per_trigram: Vec<TrigramRemoval>,
}

/// Removes every example containing a trigram banned for its relation.
pub fn apply_verdicts(
    dataset: &[TaggedExample],
    banned: &BannedSet,
) -> (Vec<TaggedExample>, Vec<TaggedExample>, FilterReport) {
    let mut retained = Vec::new();
    let mut removed = Vec::new();
    let mut per_relation: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_trigram: BTreeMap<&BannedTrigram, usize> = BTreeMap::new();
    for example in dataset {
        let hits = matching_bans(example, banned);
        if hits.is_empty() {
            retained.push(example.clone());
            continue;
        }
        for hit in hits {
            *per_trigram.entry(hit).or_default() += 1;
        }
        *per_relation.entry(example.label.clone().unwrap_or_default()).or_default() += 1;
        removed.push(example.clone());
    }
    let report = FilterReport {
        removed_per_relation: per_relation,
        removed_per_trigram: per_trigram
            .into_iter()
            .map(|(b, count)| TrigramRemoval {
                relation: b.relation.clone(),
                trigram: b.trigram.clone(),
                count,
            })
            .collect(),
    };
    (retained, removed, report)
}

/// Bag-level filtering: members are dropped, emptied bags disappear.
pub fn apply_verdicts_to_bags(bags: &[Bag], banned: &BannedSet) -> (Vec<Bag>, Vec<TaggedExample>, FilterReport) {
    let flat: Vec<TaggedExample> = bags.iter().flat_map(|b| b.examples.iter().cloned()).collect();
    let (_, removed, report) = apply_verdicts(&flat, banned);
    let gone: BTreeSet<&str> = removed.iter().map(|e| e.id()).collect();
    let kept = bags
        .iter()
        .filter_map(|bag| {
            let examples: Vec<TaggedExample> = bag
                .examples
                .iter()
                .filter(|e| !gone.contains(e.id()))
                .cloned()
                .collect();
            (!examples.is_empty()).then(|| Bag {
                key: bag.key.clone(),
                direction: bag.direction,
                examples,
            })
        })
        .collect();
    (kept, removed, report)
}

pub fn relation_sizes(dataset: &[TaggedExample]) -> BTreeMap<String, usize> {
    let mut sizes = BTreeMap::new();
    for e in dataset {
        *sizes.entry(e.label.clone().unwrap_or_default()).or_default() += 1;
    }
    sizes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub banned: Vec<BannedTrigram>,
    pub removed: FilterReport,
    pub sizes_before: BTreeMap<String, usize>,
    pub sizes_after: BTreeMap<String, usize>,
    pub total_before: usize,
    pub total_after: usize,
    pub metrics_before: Option<MetricsReport>,
    pub metrics_after: MetricsReport,
    /// Paths relative to the workspace root.
    pub checkpoint: String,
    pub trigrams: String,
    pub dataset: String,
}

impl RoundRecord {
    /// Per-relation `removed + retained == before`.
    pub fn is_balanced(&self) -> bool {
        self.sizes_before.iter().all(|(relation, before)| {
            let after = self.sizes_after.get(relation).copied().unwrap_or(0);
            let removed = self.removed.removed_per_relation.get(relation).copied().unwrap_or(0);
            after + removed == *before
        })
    }
}

pub struct RoundInput<'a> {
    pub round: usize,
    pub train: &'a [TaggedExample],
    pub test: &'a [TaggedExample],
    pub classes: &'a ClassSet,
    pub hyper: &'a Hyperparams,
    pub banned: &'a BannedSet,
    pub metrics_before: Option<MetricsReport>,
    pub top_k: usize,
}

pub struct RoundOutput {
    pub record: RoundRecord,
    pub checkpoint: Checkpoint,
    pub retained: Vec<TaggedExample>,
    pub trigrams: BTreeMap<String, Vec<TrigramAttribution>>,
    pub history: TrainHistory,
}

/// Filters, retrains from a fresh initialisation, re-extracts trigrams and
/// evaluates on the held-out set. Record paths are left empty for the
/// caller to fill in.
pub fn run_round(input: RoundInput<'_>, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<RoundOutput> {
    let (retained, _, report) = apply_verdicts(input.train, input.banned);
    let sizes_before = relation_sizes(input.train);
    let sizes_after = relation_sizes(&retained);
    let emptied: Vec<String> = sizes_before
        .keys()
        .filter(|r| !sizes_after.contains_key(*r))
        .cloned()
        .collect();
    if !emptied.is_empty() {
        return Err(Error::EmptyRelation(emptied));
    }

    let (checkpoint, history) = fit(&retained, input.classes, input.hyper, on_epoch)?;
    let trigrams = top_trigrams(&checkpoint, &retained, input.top_k, &AggregateOptions::default())?;
    let metrics_after = evaluate(&checkpoint, input.test)?;
    let record = RoundRecord {
        round: input.round,
        banned: input.banned.iter().cloned().collect(),
        removed: report,
        total_before: input.train.len(),
        total_after: retained.len(),
        sizes_before,
        sizes_after,
        metrics_before: input.metrics_before,
        metrics_after,
        checkpoint: String::new(),
        trigrams: String::new(),
        dataset: String::new(),
    };
    Ok(RoundOutput {
        record,
        checkpoint,
        retained,
        trigrams,
        history,
    })
}
