//! End-to-end fitting: vocabulary, encoding, initialisation and either
//! supervised or multi-instance training.

use crate::align::{build_bags, Bag};
use crate::checkpoint::Checkpoint;
use crate::corpus::{build_vocab, encode, EncodedExample, TaggedExample, Vocabulary};
use crate::error::{Error, Result};
use crate::kb::ClassSet;
use crate::model::{init_params, Hyperparams};
use crate::train::{train_mil, train_supervised, EncodedBag, EpochRecord, TrainHistory};

pub fn encode_all(
    examples: &[TaggedExample],
    vocab: &Vocabulary,
    classes: &ClassSet,
    hyper: &Hyperparams,
) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|e| encode(e, vocab, hyper.clip, hyper.max_len, Some(classes.class_of(e)?)))
        .collect()
}

/// Checkpoint at initialisation, before any training.
pub fn initial_checkpoint(examples: &[TaggedExample], classes: &ClassSet, hyper: &Hyperparams) -> Result<Checkpoint> {
    hyper.validate()?;
    if examples.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    let vocab = build_vocab(examples, hyper.min_count)?;
    let params = init_params(hyper, vocab.len(), hyper.scored_classes(classes.len()), hyper.seed);
    Ok(Checkpoint {
        params,
        vocab,
        classes: classes.clone(),
        hyper: hyper.clone(),
    })
}

/// Trains on `examples`; with `hyper.mil` the examples are grouped into
/// entity-pair bags first.
pub fn fit(
    examples: &[TaggedExample],
    classes: &ClassSet,
    hyper: &Hyperparams,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainHistory)> {
    if hyper.mil {
        return fit_bags(examples, &build_bags(examples)?, classes, hyper, on_epoch);
    }
    let init = initial_checkpoint(examples, classes, hyper)?;
    let data = encode_all(examples, &init.vocab, classes, hyper)?;
    let (params, history) = train_supervised(init.params, &data, hyper, on_epoch)?;
    Ok((Checkpoint { params, ..init }, history))
}

/// Multi-instance training on explicit `bags`. The vocabulary is built from
/// `examples`, which must cover every bag member.
pub fn fit_bags(
    examples: &[TaggedExample],
    bags: &[Bag],
    classes: &ClassSet,
    hyper: &Hyperparams,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainHistory)> {
    let init = initial_checkpoint(examples, classes, hyper)?;
    let encoded = bags
        .iter()
        .map(|bag| {
            let members = encode_all(&bag.examples, &init.vocab, classes, hyper)?;
            let gold = members
                .first()
                .and_then(|m| m.gold)
                .ok_or_else(|| Error::contract("empty bag"))?;
            Ok(EncodedBag { gold, members })
        })
        .collect::<Result<Vec<_>>>()?;
    let (params, history) = train_mil(init.params, &encoded, hyper, on_epoch)?;
    Ok((Checkpoint { params, ..init }, history))
}
