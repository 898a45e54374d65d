//! Distant supervision: string-match KB triples against sentences and group
//! the resulting examples into entity-pair bags.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Direction, EntitySpan, Role, Sentence, TaggedExample};
use crate::error::{Error, Result};
use crate::kb::Triple;

/// Output of [`align`]: the examples plus how many sentences were dropped by
/// the length limit.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub examples: Vec<TaggedExample>,
    pub skipped_by_length: usize,
}

/// Normalized token sequences of a triple's entities.
#[derive(Debug, Clone)]
struct Pattern {
    triple: usize,
    head: Vec<String>,
    tail: Vec<String>,
    relation: String,
}

/// Example id for the match of triple `triple` in sentence `sentence`.
pub fn example_id(sentence: &str, triple: usize) -> String {
    format!("{sentence}#{triple}")
}

/// Source sentence id of an aligned example id.
pub fn source_sentence(example_id: &str) -> &str {
    example_id.rsplit_once('#').map_or(example_id, |(s, _)| s)
}

fn compile(triples: &[Triple]) -> Vec<Pattern> {
    let mut seen = HashSet::new();
    let mut patterns = Vec::new();
    for (index, triple) in triples.iter().enumerate() {
        let norms = |text: &str| -> Vec<String> {
            tokenize(text)
                .map(|ts| ts.into_iter().map(|t| t.norm).collect())
                .unwrap_or_default()
        };
        let head = norms(&triple.head);
        let tail = norms(&triple.tail);
        if head.is_empty() || tail.is_empty() {
            continue;
        }
        // duplicate triples produce one example per sentence
        if seen.insert((head.clone(), tail.clone(), triple.relation.clone())) {
            patterns.push(Pattern {
                triple: index,
                head,
                tail,
                relation: triple.relation.clone(),
            });
        }
    }
    patterns
}

/// Start positions of `needle` in `norms`, using a first-token index.
fn occurrences(index: &HashMap<&str, Vec<usize>>, norms: &[&str], needle: &[String]) -> Vec<usize> {
    let Some(starts) = index.get(needle[0].as_str()) else {
        return Vec::new();
    };
    starts
        .iter()
        .copied()
        .filter(|&s| {
            s + needle.len() <= norms.len()
                && needle.iter().zip(&norms[s..]).all(|(a, b)| a == b)
        })
        .collect()
}

fn match_sentence(sentence: &Sentence, patterns: &[Pattern]) -> Vec<TaggedExample> {
    let norms: Vec<&str> = sentence.norms().collect();
    let mut index: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, norm) in norms.iter().enumerate() {
        index.entry(norm).or_default().push(i);
    }

    let mut out = Vec::new();
    for pattern in patterns {
        let heads = occurrences(&index, &norms, &pattern.head);
        if heads.is_empty() {
            continue;
        }
        let tails = occurrences(&index, &norms, &pattern.tail);
        let chosen = heads.iter().find_map(|&h| {
            let e1 = EntitySpan::new(h, h + pattern.head.len() - 1, Role::E1);
            tails.iter().find_map(|&t| {
                let e2 = EntitySpan::new(t, t + pattern.tail.len() - 1, Role::E2);
                (!e1.overlaps(&e2)).then_some((e1, e2))
            })
        });
        if let Some((e1, e2)) = chosen {
            let mut aligned = sentence.clone();
            aligned.id = example_id(&sentence.id, pattern.triple);
            out.push(TaggedExample {
                sentence: aligned,
                e1,
                e2,
                label: Some(pattern.relation.clone()),
                direction: Direction::Forward,
            });
        }
    }
    out
}

/// Emits one example per (sentence, distinct triple) where both entities
/// occur as non-overlapping token sequences. The earliest head occurrence is
/// preferred, then the earliest tail occurrence that does not overlap it.
/// Output is ordered by sentence then triple index.
///
/// Triples are expected to be cleaned and relabeled already. Negative-class
/// examples come out with `Direction::Forward`; use [`normalize_directions`]
/// with the negative id to clear it.
pub fn align(sentences: &[Sentence], triples: &[Triple], max_len: usize) -> Alignment {
    let patterns = compile(triples);
    let skipped_by_length = sentences.iter().filter(|s| s.len() > max_len).count();
    let examples = sentences
        .par_iter()
        .filter(|s| s.len() <= max_len)
        .map(|s| match_sentence(s, &patterns))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Alignment {
        examples,
        skipped_by_length,
    }
}

/// Clears the direction of examples labeled with the negative relation.
pub fn normalize_directions(examples: &mut [TaggedExample], negative: &str) {
    for example in examples {
        if example.label.as_deref() == Some(negative) {
            example.direction = Direction::None;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BagKey {
    pub head: Vec<String>,
    pub tail: Vec<String>,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub key: BagKey,
    pub direction: Direction,
    pub examples: Vec<TaggedExample>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Groups labeled examples by (head norms, tail norms, relation). Bags come
/// out in order of first appearance; repeated source sentences inside one bag
/// are dropped.
pub fn build_bags(examples: &[TaggedExample]) -> Result<Vec<Bag>> {
    let mut order: Vec<(BagKey, Direction)> = Vec::new();
    let mut groups: HashMap<(BagKey, Direction), (Vec<TaggedExample>, HashSet<String>)> = HashMap::new();
    for example in examples {
        let relation = example
            .label
            .clone()
            .ok_or_else(|| Error::contract(format!("example `{}` is unlabeled", example.id())))?;
        let key = BagKey {
            head: example.span_norms(Role::E1),
            tail: example.span_norms(Role::E2),
            relation,
        };
        let group_key = (key, example.direction);
        let (members, seen) = groups.entry(group_key.clone()).or_insert_with(|| {
            order.push(group_key.clone());
            Default::default()
        });
        if seen.insert(source_sentence(example.id()).to_string()) {
            members.push(example.clone());
        }
    }
    Ok(order
        .into_iter()
        .map(|group_key| {
            let (examples, _) = groups.remove(&group_key).unwrap();
            Bag {
                key: group_key.0,
                direction: group_key.1,
                examples,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub examples: usize,
    pub bags: usize,
    pub examples_per_relation: BTreeMap<String, usize>,
    pub bags_per_relation: BTreeMap<String, usize>,
    pub bag_sizes: BTreeMap<usize, usize>,
    pub sentence_lengths: BTreeMap<usize, usize>,
    pub skipped_by_length: usize,
}

pub fn alignment_stats(examples: &[TaggedExample], bags: &[Bag], skipped_by_length: usize) -> AlignmentStats {
    let mut stats = AlignmentStats {
        examples: examples.len(),
        bags: bags.len(),
        skipped_by_length,
        ..Default::default()
    };
    for example in examples {
        let relation = example.label.clone().unwrap_or_default();
        *stats.examples_per_relation.entry(relation).or_default() += 1;
        *stats.sentence_lengths.entry(example.sentence.len()).or_default() += 1;
    }
    for bag in bags {
        *stats.bags_per_relation.entry(bag.key.relation.clone()).or_default() += 1;
        *stats.bag_sizes.entry(bag.len()).or_default() += 1;
    }
    stats
}

/// One line of a bag file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagRecord {
    pub key: BagKey,
    pub relation: String,
    pub direction: Direction,
    pub example_ids: Vec<String>,
}

pub fn write_bags<W: Write>(mut writer: W, bags: &[Bag]) -> Result<()> {
    for bag in bags {
        let record = BagRecord {
            key: bag.key.clone(),
            relation: bag.key.relation.clone(),
            direction: bag.direction,
            example_ids: bag.examples.iter().map(|e| e.id().to_string()).collect(),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writeln!(writer)?;
    }
    Ok(())
}

/// Reads a bag file, resolving example ids against `examples`.
pub fn read_bags<R: BufRead>(reader: R, examples: &[TaggedExample]) -> Result<Vec<Bag>> {
    let by_id: HashMap<&str, &TaggedExample> = examples.iter().map(|e| (e.id(), e)).collect();
    let mut bags = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse {
            line: index + 1,
            message,
        };
        let record: BagRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        if record.example_ids.is_empty() {
            return Err(parse("empty bag".into()));
        }
        let members = record
            .example_ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|e| (*e).clone())
                    .ok_or_else(|| parse(format!("unknown example id `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        bags.push(Bag {
            key: record.key,
            direction: record.direction,
            examples: members,
        });
    }
    Ok(bags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{read_tagged, write_tagged};

    fn sentence(id: &str, text: &str) -> Sentence {
        Sentence::from_text(id, text).unwrap()
    }

    #[test]
    fn aligns_first_occurrences() {
        let s = sentence("s", "steve jobs founded apple .");
        let t = Triple::new("Steve Jobs", "org:founded-by", "Apple");
        let out = align(&[s], &[t], 100);
        assert_eq!(out.examples.len(), 1);
        let ex = &out.examples[0];
        assert_eq!((ex.e1.start, ex.e1.end, ex.e2.start, ex.e2.end), (0, 1, 3, 3));
        assert_eq!(ex.label.as_deref(), Some("org:founded-by"));
        assert_eq!(ex.id(), "s#0");
    }

    #[test]
    fn requires_both_entities_without_overlap() {
        let t = Triple::new("Steve Jobs", "r", "Apple");
        assert!(align(&[sentence("s", "steve jobs was here")], &[t], 100).examples.is_empty());

        let t = Triple::new("New York", "r", "York");
        assert!(align(&[sentence("s", "i love new york")], std::slice::from_ref(&t), 100).examples.is_empty());
        let out = align(&[sentence("s", "new york and york")], &[t], 100);
        assert_eq!((out.examples[0].e2.start, out.examples[0].e2.end), (3, 3));
    }

    #[test]
    fn token_boundaries_and_length_limit() {
        let t = Triple::new("york", "r", "ann");
        assert!(align(&[sentence("s", "yorkshire met anne")], std::slice::from_ref(&t), 100).examples.is_empty());
        let out = align(&[sentence("s", "york met ann today")], &[t], 3);
        assert!(out.examples.is_empty());
        assert_eq!(out.skipped_by_length, 1);
    }

    #[test]
    fn bags_group_by_pair_and_relation() {
        let triples = vec![
            Triple::new("a", "r1", "b"),
            Triple::new("a", "r2", "b"),
            Triple::new("c", "r1", "d"),
        ];
        let sentences = vec![
            sentence("1", "a x b"),
            sentence("2", "a y b"),
            sentence("3", "c z d"),
        ];
        let out = align(&sentences, &triples, 100);
        let bags = build_bags(&out.examples).unwrap();
        assert_eq!(bags.len(), 3);
        assert_eq!(bags[0].key.relation, "r1");
        assert_eq!(bags[0].len(), 2);
        assert_eq!(bags[1].key.relation, "r2");
        assert_eq!(bags[1].len(), 2);
        let stats = alignment_stats(&out.examples, &bags, 0);
        assert_eq!(stats.bag_sizes, BTreeMap::from([(1, 1), (2, 2)]));
        assert_eq!(alignment_stats(&[], &[], 0), AlignmentStats::default());
    }

    #[test]
    fn duplicate_triples_collapse() {
        let triples = vec![Triple::new("a", "r", "b"), Triple::new("A", "r", "B")];
        let out = align(&[sentence("1", "a b")], &triples, 100);
        assert_eq!(out.examples.len(), 1);
    }

    #[test]
    fn unlabeled_example_is_rejected() {
        let mut out = align(&[sentence("1", "a b")], &[Triple::new("a", "r", "b")], 100);
        out.examples[0].label = None;
        assert!(build_bags(&out.examples).is_err());
    }

    #[test]
    fn bag_file_round_trip() {
        let triples = vec![Triple::new("a", "r1", "b"), Triple::new("c", "r1", "d")];
        let sentences = vec![sentence("1", "a x b"), sentence("2", "a y b"), sentence("3", "c d")];
        let out = align(&sentences, &triples, 100);
        let bags = build_bags(&out.examples).unwrap();

        let mut tagged = Vec::new();
        write_tagged(&mut tagged, &out.examples).unwrap();
        let examples = read_tagged(tagged.as_slice(), None).unwrap();
        assert_eq!(examples, out.examples);

        let mut file = Vec::new();
        write_bags(&mut file, &bags).unwrap();
        assert_eq!(read_bags(file.as_slice(), &examples).unwrap(), bags);
    }
}
