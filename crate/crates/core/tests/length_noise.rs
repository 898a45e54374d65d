use rexloop_core::corpus::{Direction, Token};
use rexloop_core::eval::{length_analysis, predictions};
use rexloop_core::pipeline::initial_checkpoint;
use rexloop_core::synth::{generate, SynthConfig};
use rexloop_core::{Hyperparams, Sentence, TaggedExample};

const WIDTH: usize = 10;
const LEVELS: usize = 5;

/// Pads every test sentence to one of five length levels, labels it with the
/// model's own prediction and then corrupts a share of each level that grows
/// with length. The wrong share per bucket is therefore known exactly.
#[test]
fn wrong_share_follows_planted_length_noise() {
    let data = generate(&SynthConfig {
        per_relation: 40,
        negatives: 40,
        ..SynthConfig::default()
    })
    .unwrap();
    let hyper = Hyperparams {
        init_scale: 0.5,
        ..Hyperparams::desk()
    };
    let checkpoint = initial_checkpoint(&data.train, &data.schema.classes(), &hyper).unwrap();
    let classes = &checkpoint.classes;

    let base = 40;
    assert!(data.test.iter().all(|e| e.sentence.len() <= base));
    let padded: Vec<TaggedExample> = data
        .test
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let target = base + WIDTH * (i % LEVELS);
            let mut tokens = e.sentence.tokens.clone();
            tokens.resize(target, Token::new("filler"));
            let sentence = Sentence::new(e.sentence.id.clone(), tokens).unwrap();
            TaggedExample::new(sentence, e.e1, e.e2, e.label.clone(), e.direction).unwrap()
        })
        .collect();
    let (_, predicted) = predictions(&checkpoint, &padded).unwrap();

    let mut per_level = [0usize; LEVELS];
    let mut corrupted = [0usize; LEVELS];
    let relabeled: Vec<TaggedExample> = padded
        .into_iter()
        .zip(&predicted)
        .enumerate()
        .map(|(i, (mut e, &p))| {
            let level = i % LEVELS;
            let seen = per_level[level];
            per_level[level] += 1;
            let wrong = seen % LEVELS < level;
            corrupted[level] += usize::from(wrong);
            let class = if wrong { (p + 1) % classes.len() } else { p };
            e.label = Some(classes.relation_of(class).to_string());
            e.direction = Direction::None;
            e
        })
        .collect();

    let buckets = length_analysis(&checkpoint, &relabeled, WIDTH).unwrap();
    assert_eq!(buckets.len(), LEVELS);
    for (level, bucket) in buckets.iter().enumerate() {
        assert_eq!(bucket.min_len, base + WIDTH * level);
        assert_eq!(bucket.total, per_level[level]);
        assert_eq!(bucket.wrong, corrupted[level]);
    }
    for pair in buckets.windows(2) {
        assert!(pair[1].wrong_share > pair[0].wrong_share, "{buckets:?}");
    }
    assert_eq!(buckets[0].wrong, 0);
}
