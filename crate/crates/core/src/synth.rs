//! Synthetic planted-pattern datasets: every relation owns a few signature
//! trigrams placed between the two entities, everything else is filler.
//! Optional corruptions add noisy bag members and decoy-trigram sentences.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_tagged, Direction, EntitySpan, Role, Sentence, TaggedExample, Token};
use crate::error::{Error, Result};
use crate::kb::{RelationSchema, Triple};
use crate::trigrams::Trigram;

pub const NEGATIVE_RELATION: &str = "no_relation";

const FILLERS: [&str; 40] = [
    "the", "a", "of", "in", "on", "at", "with", "and", "said", "was", "by", "for", "from", "to", "that", "its",
    "his", "her", "their", "this", "new", "last", "year", "after", "before", "during", "while", "also", "which",
    "who", "has", "had", "been", "were", "is", "be", "as", "an", "it", "more",
];

/// Decoy sentences are labeled `relation` but hold only the decoy trigram
/// between the entities. The decoy phrase also appears, at a random slot, in
/// a `background` share of all other train and test sentences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyConfig {
    pub relation: usize,
    pub sentences: usize,
    pub background: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub relations: usize,
    pub signatures: usize,
    /// Training sentences per relation; the test set gets half as many.
    pub per_relation: usize,
    /// Training sentences of the negative class; the test set gets half.
    pub negatives: usize,
    /// Sentences per entity pair.
    pub bag_size: usize,
    /// Share of positive bags whose members, except one, are replaced by
    /// sentences carrying a signature of the following relation.
    pub noise: f64,
    pub decoy: Option<DecoyConfig>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            relations: 5,
            signatures: 3,
            per_relation: 32,
            negatives: 40,
            bag_size: 1,
            noise: 0.0,
            decoy: None,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.relations < 1 || self.signatures < 1 || self.per_relation < 1 || self.bag_size < 1 {
            return Err(Error::contract(
                "relations, signatures, per_relation and bag_size must be at least 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::contract(format!("noise {} outside [0, 1]", self.noise)));
        }
        if let Some(decoy) = &self.decoy {
            if decoy.relation >= self.relations {
                return Err(Error::contract(format!("decoy relation {} out of range", decoy.relation)));
            }
            if !(0.0..=1.0).contains(&decoy.background) {
                return Err(Error::contract(format!("decoy background {} outside [0, 1]", decoy.background)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub schema: RelationSchema,
    pub train: Vec<TaggedExample>,
    pub test: Vec<TaggedExample>,
    /// One triple per training entity pair.
    pub triples: Vec<Triple>,
    /// Training sentences without entity markers.
    pub corpus: Vec<String>,
    pub signatures: BTreeMap<String, Vec<Trigram>>,
    pub decoy: Option<(String, Trigram)>,
    /// Ids of training sentences whose label does not match their content.
    pub corrupted: Vec<String>,
}

pub fn relation_name(r: usize) -> String {
    format!("rel{r}")
}

fn signature(r: usize, j: usize) -> [String; 3] {
    [0, 1, 2].map(|k| format!("r{r}s{j}t{k}"))
}

fn decoy_tokens() -> [String; 3] {
    [0, 1, 2].map(|k| format!("decoy{k}"))
}

struct Builder {
    rng: ChaCha8Rng,
    pairs: usize,
    background: Option<f64>,
}

impl Builder {
    fn fillers(&mut self, max: usize) -> Vec<String> {
        let n = self.rng.gen_range(0..=max);
        (0..n)
            .map(|_| FILLERS.choose(&mut self.rng).copied().unwrap_or("the").to_string())
            .collect()
    }

    fn pair(&mut self) -> (String, String) {
        self.pairs += 1;
        (format!("Ent{}a", self.pairs), format!("Ent{}b", self.pairs))
    }

    /// `pre E1 mid CORE mid E2 post .`
    fn sentence(
        &mut self,
        id: String,
        pair: &(String, String),
        core: &[String],
        label: &str,
    ) -> Result<TaggedExample> {
        let mut slots = [self.fillers(2), self.fillers(2), self.fillers(2), self.fillers(2)];
        if let Some(share) = self.background {
            if self.rng.gen_bool(share) {
                let slot = self.rng.gen_range(0..slots.len());
                slots[slot].extend(decoy_tokens());
            }
        }
        let [pre, before, after, post] = slots;
        let mut words = pre;
        let e1 = words.len();
        words.push(pair.0.clone());
        words.extend(before);
        words.extend(core.iter().cloned());
        words.extend(after);
        let e2 = words.len();
        words.push(pair.1.clone());
        words.extend(post);
        words.push(".".into());
        let tokens = words.into_iter().map(Token::new).collect();
        let direction = if label == NEGATIVE_RELATION {
            Direction::None
        } else {
            Direction::Forward
        };
        TaggedExample::new(
            Sentence::new(id, tokens)?,
            EntitySpan::new(e1, e1, Role::E1),
            EntitySpan::new(e2, e2, Role::E2),
            Some(label.to_string()),
            direction,
        )
    }

    fn negative_core(&mut self) -> Vec<String> {
        let n = self.rng.gen_range(1..=3);
        (0..n)
            .map(|_| FILLERS.choose(&mut self.rng).copied().unwrap_or("the").to_string())
            .collect()
    }
}

/// Generates train and test sets. The test set is always clean.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let relations: Vec<String> = (0..config.relations).map(relation_name).collect();
    let schema = RelationSchema::new(relations.clone(), false, NEGATIVE_RELATION)?;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        pairs: 0,
        background: config.decoy.map(|d| d.background),
    };
    let mut train = Vec::new();
    let mut triples = Vec::new();
    let mut corrupted = Vec::new();
    let mut next_id = {
        let mut n = 0usize;
        move |prefix: &str| {
            n += 1;
            format!("{prefix}-{n}")
        }
    };

    for (r, relation) in relations.iter().enumerate() {
        let mut remaining = config.per_relation;
        while remaining > 0 {
            let size = remaining.min(config.bag_size);
            remaining -= size;
            let pair = b.pair();
            triples.push(Triple::new(&pair.0, relation, &pair.1));
            let noisy = size > 1 && b.rng.gen_bool(config.noise);
            let clean = b.rng.gen_range(0..size);
            for member in 0..size {
                let id = next_id("train");
                let example = if noisy && member != clean {
                    let confuser = (r + 1) % config.relations;
                    let core: Vec<String> = if confuser == r {
                        b.negative_core()
                    } else {
                        signature(confuser, b.rng.gen_range(0..config.signatures)).to_vec()
                    };
                    corrupted.push(id.clone());
                    b.sentence(id, &pair, &core, relation)?
                } else {
                    let core = signature(r, b.rng.gen_range(0..config.signatures));
                    b.sentence(id, &pair, &core, relation)?
                };
                train.push(example);
            }
        }
    }
    let mut remaining = config.negatives;
    while remaining > 0 {
        let size = remaining.min(config.bag_size);
        remaining -= size;
        let pair = b.pair();
        triples.push(Triple::new(&pair.0, NEGATIVE_RELATION, &pair.1));
        for _ in 0..size {
            let core = b.negative_core();
            let id = next_id("train");
            train.push(b.sentence(id, &pair, &core, NEGATIVE_RELATION)?);
        }
    }
    let decoy = match config.decoy {
        Some(d) => {
            let relation = &relations[d.relation];
            let background = b.background.take();
            for _ in 0..d.sentences {
                let pair = b.pair();
                triples.push(Triple::new(&pair.0, relation, &pair.1));
                let id = next_id("train");
                corrupted.push(id.clone());
                train.push(b.sentence(id, &pair, &decoy_tokens(), relation)?);
            }
            b.background = background;
            Some((relation.clone(), Trigram(decoy_tokens())))
        }
        None => None,
    };

    let mut test = Vec::new();
    for (r, relation) in relations.iter().enumerate() {
        for _ in 0..config.per_relation.div_ceil(2) {
            let pair = b.pair();
            let core = signature(r, b.rng.gen_range(0..config.signatures));
            let id = next_id("test");
            test.push(b.sentence(id, &pair, &core, relation)?);
        }
    }
    for _ in 0..config.negatives.div_ceil(2) {
        let pair = b.pair();
        let core = b.negative_core();
        let id = next_id("test");
        test.push(b.sentence(id, &pair, &core, NEGATIVE_RELATION)?);
    }

    let corpus = train
        .iter()
        .map(|e| {
            e.sentence
                .tokens
                .iter()
                .map(|t| t.surface.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let signatures = relations
        .iter()
        .enumerate()
        .map(|(r, name)| {
            let sigs = (0..config.signatures).map(|j| Trigram(signature(r, j))).collect();
            (name.clone(), sigs)
        })
        .collect();
    Ok(SynthData {
        schema,
        train,
        test,
        triples,
        corpus,
        signatures,
        decoy,
        corrupted,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a SynthConfig,
    signatures: &'a BTreeMap<String, Vec<Trigram>>,
    decoy: Option<&'a (String, Trigram)>,
    corrupted: &'a [String],
}

/// Writes `train.tsv`, `test.tsv`, `schema.txt`, `kb.tsv`, `corpus.txt` and
/// `synth.json` into `dir`.
pub fn write_dir(dir: &Path, config: &SynthConfig, data: &SynthData) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    write_tagged(&mut buf, &data.train)?;
    fs::write(dir.join("train.tsv"), &buf)?;
    buf.clear();
    write_tagged(&mut buf, &data.test)?;
    fs::write(dir.join("test.tsv"), &buf)?;
    fs::write(dir.join("schema.txt"), data.schema.to_text())?;
    let kb: String = data
        .triples
        .iter()
        .map(|t| format!("{}\t{}\t{}\n", t.head, t.relation, t.tail))
        .collect();
    fs::write(dir.join("kb.tsv"), kb)?;
    let corpus: String = data.corpus.iter().map(|s| format!("{s}\n")).collect();
    fs::write(dir.join("corpus.txt"), corpus)?;
    let manifest = Manifest {
        config,
        signatures: &data.signatures,
        decoy: data.decoy.as_ref(),
        corrupted: &data.corrupted,
    };
    fs::write(dir.join("synth.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{align, build_bags, normalize_directions};
    use crate::corpus::Sentence;

    #[test]
    fn clean_set_has_planted_signatures() {
        let config = SynthConfig::default();
        let data = generate(&config).unwrap();
        assert_eq!(data.train.len(), 200);
        assert_eq!(data.test.len(), 100);
        assert!(data.corrupted.is_empty());
        for e in data.train.iter().chain(&data.test) {
            let norms: Vec<&str> = e.sentence.norms().collect();
            let planted = data.signatures.values().flatten().find(|s| s.occurs_in(&norms));
            match data.signatures.get(e.label.as_ref().unwrap()) {
                Some(sigs) => assert!(sigs.contains(planted.unwrap())),
                None => assert!(planted.is_none()),
            }
            assert!(e.e1.start < e.e2.start);
        }
        assert_eq!(generate(&config).unwrap(), data);
    }

    #[test]
    fn noisy_bags_keep_one_clean_member() {
        let config = SynthConfig {
            per_relation: 40,
            negatives: 0,
            bag_size: 4,
            noise: 0.3,
            ..Default::default()
        };
        let data = generate(&config).unwrap();
        let bags = build_bags(&data.train).unwrap();
        assert_eq!(bags.len(), 50);
        let noisy = bags
            .iter()
            .filter(|bag| bag.examples.iter().any(|e| data.corrupted.contains(&e.sentence.id)))
            .count();
        assert!(noisy > 0);
        for bag in &bags {
            let sigs = &data.signatures[&bag.key.relation];
            assert!(bag.examples.iter().any(|e| {
                let norms: Vec<&str> = e.sentence.norms().collect();
                sigs.iter().any(|s| s.occurs_in(&norms))
            }));
        }
    }

    #[test]
    fn decoy_sentences_carry_only_the_decoy() {
        let config = SynthConfig {
            decoy: Some(DecoyConfig { relation: 2, sentences: 10, background: 0.0 }),
            ..Default::default()
        };
        let data = generate(&config).unwrap();
        let (relation, trigram) = data.decoy.clone().unwrap();
        assert_eq!(relation, "rel2");
        let decoyed: Vec<_> = data
            .train
            .iter()
            .filter(|e| trigram.occurs_in(&e.sentence.norms().collect::<Vec<_>>()))
            .collect();
        assert_eq!(decoyed.len(), 10);
        assert!(decoyed.iter().all(|e| e.label.as_deref() == Some("rel2")));
        assert!(data.test.iter().all(|e| !trigram.occurs_in(&e.sentence.norms().collect::<Vec<_>>())));
        for e in decoyed {
            let between: Vec<&str> = e.sentence.norms().skip(e.e1.end + 1).take(e.e2.start - e.e1.end - 1).collect();
            assert!(trigram.occurs_in(&between));
            assert!(data.signatures.values().flatten().all(|s| !s.occurs_in(&between)));
        }
    }

    #[test]
    fn background_decoys_land_in_every_slot() {
        let config = SynthConfig {
            negatives: 40,
            decoy: Some(DecoyConfig { relation: 0, sentences: 5, background: 0.5 }),
            ..Default::default()
        };
        let data = generate(&config).unwrap();
        let (_, trigram) = data.decoy.clone().unwrap();
        let carriers: Vec<&TaggedExample> = data
            .test
            .iter()
            .chain(&data.train)
            .filter(|e| !data.corrupted.contains(&e.sentence.id))
            .filter(|e| trigram.occurs_in(&e.sentence.norms().collect::<Vec<_>>()))
            .collect();
        assert!(carriers.len() > 50 && carriers.len() < 250, "{}", carriers.len());
        let inside = carriers
            .iter()
            .filter(|e| {
                let between: Vec<&str> = e.sentence.norms().skip(e.e1.end + 1).take(e.e2.start - e.e1.end - 1).collect();
                trigram.occurs_in(&between)
            })
            .count();
        assert!(inside > 0 && inside < carriers.len());
        let plain = generate(&SynthConfig::default()).unwrap();
        assert_eq!(plain.test.len(), data.test.len());
    }

    #[test]
    fn kb_and_corpus_realign_to_training_set() {
        let config = SynthConfig {
            bag_size: 3,
            negatives: 9,
            ..Default::default()
        };
        let data = generate(&config).unwrap();
        let sentences: Vec<Sentence> = data
            .corpus
            .iter()
            .enumerate()
            .map(|(i, s)| Sentence::from_text(format!("s{i}"), s).unwrap())
            .collect();
        let mut aligned = align(&sentences, &data.triples, 100).examples;
        normalize_directions(&mut aligned, NEGATIVE_RELATION);
        assert_eq!(aligned.len(), data.train.len());
        for (a, t) in aligned.iter().zip(&data.train) {
            assert_eq!((a.e1, a.e2, &a.label, a.direction), (t.e1, t.e2, &t.label, t.direction));
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SynthConfig { noise: 1.5, ..Default::default() }).is_err());
        assert!(generate(&SynthConfig { relations: 0, ..Default::default() }).is_err());
        let decoy = Some(DecoyConfig { relation: 5, sentences: 1, background: 0.0 });
        assert!(generate(&SynthConfig { decoy, ..Default::default() }).is_err());
    }
}
