//! Pairwise ranking loss, its exact gradient, and the supervised and
//! multi-instance SGD loops.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedExample, PAD};
use crate::error::{Error, Result};
use crate::model::{
    argmax, check_encoded, decide, forward_unchecked, merged_inputs, Dims, Hyperparams, Matrix, ModelParams,
    OtherMode, WINDOW,
};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingLoss {
    pub value: f64,
    /// Scored row of the gold class; `None` when the gold class is the
    /// omitted negative.
    pub positive: Option<usize>,
    /// Highest-scoring wrong row, if any.
    pub negative: Option<usize>,
    /// dL/d score[positive].
    pub d_positive: f64,
    /// dL/d score[negative].
    pub d_negative: f64,
}

/// `softplus(γ(m⁺ − s⁺)) + softplus(γ(m⁻ + s⁻))` where `s⁻` is the best
/// wrong score. In omitted mode `gold == scores.len()` names the negative
/// class and only the second term applies.
pub fn ranking_loss(scores: &[f64], gold: usize, hyper: &Hyperparams) -> Result<RankingLoss> {
    let limit = match hyper.other_mode {
        OtherMode::Embedded => scores.len(),
        OtherMode::Omitted => scores.len() + 1,
    };
    if gold >= limit {
        return Err(Error::contract(format!("gold class {gold} out of range")));
    }
    let positive = (gold < scores.len()).then_some(gold);

    let mut negative: Option<usize> = None;
    for (c, s) in scores.iter().enumerate() {
        if Some(c) != positive && negative.is_none_or(|n| *s > scores[n]) {
            negative = Some(c);
        }
    }

    let gamma = hyper.gamma;
    let mut loss = RankingLoss {
        value: 0.0,
        positive,
        negative,
        d_positive: 0.0,
        d_negative: 0.0,
    };
    if let Some(p) = positive {
        let x = gamma * (hyper.m_plus - scores[p]);
        loss.value += softplus(x);
        loss.d_positive = -gamma * sigmoid(x);
    }
    if let Some(n) = negative {
        let x = gamma * (hyper.m_minus + scores[n]);
        loss.value += softplus(x);
        loss.d_negative = gamma * sigmoid(x);
    }
    Ok(loss)
}

/// Gradient of the ranking loss for one example. Embedding gradients are
/// kept as sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub dims: Dims,
    pub loss: RankingLoss,
    pub word_rows: BTreeMap<usize, Vec<f64>>,
    pub pos1_rows: BTreeMap<usize, Vec<f64>>,
    pub pos2_rows: BTreeMap<usize, Vec<f64>>,
    pub conv_w: Matrix,
    pub conv_b: Vec<f64>,
    pub class_emb: Matrix,
}

impl Gradient {
    /// Dense arrays shaped like [`ModelParams`].
    pub fn to_dense(&self, activation: crate::model::Activation) -> ModelParams {
        let mut dense = ModelParams::zeros(self.dims, activation);
        for (rows, target) in [
            (&self.word_rows, &mut dense.word_emb),
            (&self.pos1_rows, &mut dense.pos1_emb),
            (&self.pos2_rows, &mut dense.pos2_emb),
        ] {
            for (r, g) in rows {
                target.row_mut(*r).copy_from_slice(g);
            }
        }
        dense.conv_w = self.conv_w.clone();
        dense.conv_b = self.conv_b.clone();
        dense.class_emb = self.class_emb.clone();
        dense
    }
}

fn add_row(rows: &mut BTreeMap<usize, Vec<f64>>, row: usize, values: &[f64]) {
    let entry = rows.entry(row).or_insert_with(|| vec![0.0; values.len()]);
    for (a, b) in entry.iter_mut().zip(values) {
        *a += b;
    }
}

/// Exact gradient of [`ranking_loss`] with the pooling argmax and the chosen
/// wrong class held fixed.
pub fn gradient(params: &ModelParams, encoded: &EncodedExample, gold: usize, hyper: &Hyperparams) -> Result<Gradient> {
    check_encoded(params, encoded)?;
    Ok(gradient_unchecked(params, encoded, gold, hyper)?.0)
}

fn gradient_unchecked(
    params: &ModelParams,
    encoded: &EncodedExample,
    gold: usize,
    hyper: &Hyperparams,
) -> Result<(Gradient, Vec<f64>)> {
    let dims = params.dims;
    let trace = forward_unchecked(params, encoded);
    let loss = ranking_loss(&trace.scores, gold, hyper)?;

    let mut d_scores = vec![0.0; dims.classes];
    if let Some(p) = loss.positive {
        d_scores[p] += loss.d_positive;
    }
    if let Some(n) = loss.negative {
        d_scores[n] += loss.d_negative;
    }

    let mut class_emb = Matrix::zeros(dims.classes, dims.filters);
    let mut d_pooled = vec![0.0; dims.filters];
    for (c, &d) in d_scores.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for f in 0..dims.filters {
            class_emb.set(c, f, d * trace.pooled[f]);
            d_pooled[f] += d * params.class_emb.get(c, f);
        }
    }

    let len = encoded.len();
    let width = dims.token_width();
    let merged = merged_inputs(params, encoded);
    let mut d_merged = vec![0.0; merged.len()];
    let mut conv_w = Matrix::zeros(dims.filters, dims.window_width());
    let mut conv_b = vec![0.0; dims.filters];
    for f in 0..dims.filters {
        let dz = d_pooled[f] * params.activation.derivative_from_output(trace.pooled[f]);
        if dz == 0.0 {
            continue;
        }
        conv_b[f] = dz;
        let t = trace.argmax_pos[f];
        let kernel = params.conv_w.row(f);
        let grad_row = conv_w.row_mut(f);
        for k in 0..WINDOW {
            let Some(source) = (t + k).checked_sub(1).filter(|&s| s < len) else {
                continue;
            };
            let x = &merged[source * width..(source + 1) * width];
            let w = &kernel[k * width..(k + 1) * width];
            let block = &mut grad_row[k * width..(k + 1) * width];
            let dx = &mut d_merged[source * width..(source + 1) * width];
            for i in 0..width {
                block[i] = dz * x[i];
                dx[i] += dz * w[i];
            }
        }
    }

    let mut grad = Gradient {
        dims,
        loss,
        word_rows: BTreeMap::new(),
        pos1_rows: BTreeMap::new(),
        pos2_rows: BTreeMap::new(),
        conv_w,
        conv_b,
        class_emb,
    };
    for (t, dx) in d_merged.chunks(width).enumerate() {
        if dx.iter().all(|v| *v == 0.0) {
            continue;
        }
        if encoded.token_ids[t] != PAD {
            add_row(&mut grad.word_rows, encoded.token_ids[t], &dx[..dims.word]);
        }
        if dims.pos > 0 {
            add_row(&mut grad.pos1_rows, encoded.pos1_ids[t], &dx[dims.word..dims.word + dims.pos]);
            add_row(&mut grad.pos2_rows, encoded.pos2_ids[t], &dx[dims.word + dims.pos..]);
        }
    }
    Ok((grad, trace.scores))
}

/// `params -= learning_rate * grad`.
pub fn sgd_step(params: &mut ModelParams, grad: &Gradient, learning_rate: f64) {
    if learning_rate == 0.0 {
        return;
    }
    let step = |target: &mut [f64], g: &[f64]| {
        for (p, d) in target.iter_mut().zip(g) {
            *p -= learning_rate * d;
        }
    };
    for (rows, target) in [
        (&grad.word_rows, &mut params.word_emb),
        (&grad.pos1_rows, &mut params.pos1_emb),
        (&grad.pos2_rows, &mut params.pos2_emb),
    ] {
        for (r, g) in rows {
            step(target.row_mut(*r), g);
        }
    }
    step(&mut params.conv_w.data, &grad.conv_w.data);
    step(&mut params.conv_b, &grad.conv_b);
    step(&mut params.class_emb.data, &grad.class_emb.data);
    params.word_emb.row_mut(PAD).fill(0.0);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn write_jsonl<W: std::io::Write>(&self, mut writer: W) -> Result<()> {
        for record in &self.epochs {
            serde_json::to_writer(&mut writer, record)?;
            writeln!(writer)?;
        }
        Ok(())
    }
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn gold_of(example: &EncodedExample) -> Result<usize> {
    example
        .gold
        .ok_or_else(|| Error::contract("training example has no gold class"))
}

struct EpochStats {
    loss: f64,
    correct: usize,
    seen: usize,
    started: Instant,
}

impl EpochStats {
    fn new() -> Self {
        EpochStats {
            loss: 0.0,
            correct: 0,
            seen: 0,
            started: Instant::now(),
        }
    }

    fn finish(self, epoch: usize) -> EpochRecord {
        let n = self.seen.max(1) as f64;
        EpochRecord {
            epoch,
            mean_loss: self.loss / n,
            train_accuracy: self.correct as f64 / n,
            elapsed_ms: self.started.elapsed().as_millis() as u64,
        }
    }
}

fn update(params: &mut ModelParams, example: &EncodedExample, hyper: &Hyperparams, stats: &mut EpochStats) -> Result<()> {
    let gold = gold_of(example)?;
    let (grad, scores) = gradient_unchecked(params, example, gold, hyper)?;
    stats.loss += grad.loss.value;
    stats.correct += usize::from(decide(&scores, hyper.other_mode) == gold);
    stats.seen += 1;
    sgd_step(params, &grad, hyper.learning_rate);
    Ok(())
}

/// Per-example SGD over `data`, reshuffled every epoch with the seeded
/// generator.
pub fn train_supervised(
    mut params: ModelParams,
    data: &[EncodedExample],
    hyper: &Hyperparams,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory)> {
    if data.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    for example in data {
        check_encoded(&params, example)?;
        gold_of(example)?;
    }
    let mut rng = shuffle_rng(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut stats = EpochStats::new();
        for &i in &order {
            update(&mut params, &data[i], hyper, &mut stats)?;
        }
        let record = stats.finish(epoch + 1);
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((params, history))
}

/// Score used to rank bag members for class `label`. For the omitted
/// negative class this is minus the best positive score.
pub fn label_score(scores: &[f64], label: usize) -> f64 {
    if label < scores.len() {
        scores[label]
    } else {
        -scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Bag member scoring highest for `label`, lowest index on ties.
pub fn select_instance(params: &ModelParams, bag: &[EncodedExample], label: usize) -> Result<usize> {
    if bag.is_empty() {
        return Err(Error::contract("empty bag"));
    }
    if bag.len() == 1 {
        return Ok(0);
    }
    let scores = bag
        .iter()
        .map(|e| {
            check_encoded(params, e)?;
            Ok(label_score(&forward_unchecked(params, e).scores, label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax(&scores).unwrap_or(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBag {
    pub gold: usize,
    pub members: Vec<EncodedExample>,
}

/// Multi-instance SGD: each epoch visits the shuffled bags and takes one
/// step on the member selected at visit time.
pub fn train_mil(
    mut params: ModelParams,
    bags: &[EncodedBag],
    hyper: &Hyperparams,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory)> {
    if bags.is_empty() {
        return Err(Error::contract("no bags to train on"));
    }
    for bag in bags {
        if bag.members.is_empty() {
            return Err(Error::contract("empty bag in training input"));
        }
        for member in &bag.members {
            check_encoded(&params, member)?;
            if member.gold != Some(bag.gold) {
                return Err(Error::contract("bag member disagrees with the bag label"));
            }
        }
    }
    let mut rng = shuffle_rng(hyper.seed);
    let mut order: Vec<usize> = (0..bags.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut stats = EpochStats::new();
        for &b in &order {
            let bag = &bags[b];
            let chosen = select_instance(&params, &bag.members, bag.gold)?;
            update(&mut params, &bag.members[chosen], hyper, &mut stats)?;
        }
        let record = stats.finish(epoch + 1);
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((params, history))
}
