//! The ranking convolutional network: word and position embeddings, a
//! width-3 convolution with zero padding, global max pooling, and a bias-free
//! scoring layer against learned class embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedExample, DEFAULT_CLIP, DEFAULT_MAX_LEN, PAD};
use crate::error::{Error, Result};

/// Tokens per convolution window.
pub const WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OtherMode {
    /// The negative class has its own row in the class embeddings.
    Embedded,
    /// The negative class has no row and wins when every score is below 0.
    Omitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub gamma: f64,
    pub m_plus: f64,
    pub m_minus: f64,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub filters: usize,
    pub clip: usize,
    pub max_len: usize,
    pub min_count: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mil: bool,
    pub other_mode: OtherMode,
    pub activation: Activation,
    /// Half-width of the uniform initialisation range.
    pub init_scale: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams::desk()
    }
}

impl Hyperparams {
    /// Small dimensions suited to laptop-sized data.
    pub fn desk() -> Self {
        Hyperparams {
            gamma: 2.0,
            m_plus: 2.5,
            m_minus: 0.5,
            word_dim: 50,
            pos_dim: 10,
            filters: 64,
            clip: DEFAULT_CLIP,
            max_len: DEFAULT_MAX_LEN,
            min_count: 1,
            learning_rate: 0.025,
            epochs: 10,
            seed: 1,
            mil: false,
            other_mode: OtherMode::Omitted,
            activation: Activation::Tanh,
            init_scale: 0.01,
        }
    }

    /// 1000 convolution filters.
    pub fn wide() -> Self {
        Hyperparams {
            filters: 1000,
            ..Hyperparams::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::contract("gamma must be positive"));
        }
        if self.filters == 0 || self.word_dim == 0 {
            return Err(Error::contract("filters and word_dim must be positive"));
        }
        if self.max_len == 0 {
            return Err(Error::contract("max_len must be positive"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::contract("learning rate must be finite and non-negative"));
        }
        Ok(())
    }

    /// Rows in the class-embedding matrix for a class set of `num_classes`.
    pub fn scored_classes(&self, num_classes: usize) -> usize {
        match self.other_mode {
            OtherMode::Embedded => num_classes,
            OtherMode::Omitted => num_classes - 1,
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub word: usize,
    pub pos: usize,
    pub clip: usize,
    pub filters: usize,
    /// Rows of the class-embedding matrix.
    pub classes: usize,
}

impl Dims {
    pub fn positions(&self) -> usize {
        2 * self.clip + 1
    }

    /// Width of one merged token vector.
    pub fn token_width(&self) -> usize {
        self.word + 2 * self.pos
    }

    pub fn window_width(&self) -> usize {
        WINDOW * self.token_width()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    pub activation: Activation,
    pub word_emb: Matrix,
    pub pos1_emb: Matrix,
    pub pos2_emb: Matrix,
    pub conv_w: Matrix,
    pub conv_b: Vec<f64>,
    pub class_emb: Matrix,
}

impl ModelParams {
    pub fn zeros(dims: Dims, activation: Activation) -> Self {
        ModelParams {
            dims,
            activation,
            word_emb: Matrix::zeros(dims.vocab, dims.word),
            pos1_emb: Matrix::zeros(dims.positions(), dims.pos),
            pos2_emb: Matrix::zeros(dims.positions(), dims.pos),
            conv_w: Matrix::zeros(dims.filters, dims.window_width()),
            conv_b: vec![0.0; dims.filters],
            class_emb: Matrix::zeros(dims.classes, dims.filters),
        }
    }

    /// All arrays in checkpoint order.
    pub fn arrays(&self) -> [&[f64]; 6] {
        [
            &self.word_emb.data,
            &self.pos1_emb.data,
            &self.pos2_emb.data,
            &self.conv_w.data,
            &self.conv_b,
            &self.class_emb.data,
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.word_emb.data,
            &mut self.pos1_emb.data,
            &mut self.pos2_emb.data,
            &mut self.conv_w.data,
            &mut self.conv_b,
            &mut self.class_emb.data,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }
}

/// Uniform(-scale, scale) initialisation from a seeded ChaCha stream, PAD
/// row zeroed.
pub fn init_params(hyper: &Hyperparams, vocab_size: usize, num_scored: usize, seed: u64) -> ModelParams {
    let dims = Dims {
        vocab: vocab_size,
        word: hyper.word_dim,
        pos: hyper.pos_dim,
        clip: hyper.clip,
        filters: hyper.filters,
        classes: num_scored,
    };
    let mut params = ModelParams::zeros(dims, hyper.activation);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = hyper.init_scale;
    for array in params.arrays_mut() {
        for v in array.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
    params.word_emb.row_mut(PAD).fill(0.0);
    params
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub scores: Vec<f64>,
    pub pooled: Vec<f64>,
    /// Window (centre token) that produced each pooled value.
    pub argmax_pos: Vec<usize>,
}

/// Merged `[word ; pos1 ; pos2]` vectors, one per token.
pub(crate) fn merged_inputs(params: &ModelParams, encoded: &EncodedExample) -> Vec<f64> {
    let dims = params.dims;
    let width = dims.token_width();
    let mut merged = vec![0.0; encoded.len() * width];
    for (t, chunk) in merged.chunks_mut(width).enumerate() {
        chunk[..dims.word].copy_from_slice(params.word_emb.row(encoded.token_ids[t]));
        chunk[dims.word..dims.word + dims.pos].copy_from_slice(params.pos1_emb.row(encoded.pos1_ids[t]));
        chunk[dims.word + dims.pos..].copy_from_slice(params.pos2_emb.row(encoded.pos2_ids[t]));
    }
    merged
}

/// Pre-activation of filter `f` at window centre `t`.
pub(crate) fn window_preactivation(params: &ModelParams, merged: &[f64], len: usize, f: usize, t: usize) -> f64 {
    let width = params.dims.token_width();
    let kernel = params.conv_w.row(f);
    let mut z = params.conv_b[f];
    for k in 0..WINDOW {
        let Some(source) = (t + k).checked_sub(1).filter(|&s| s < len) else {
            continue;
        };
        let x = &merged[source * width..(source + 1) * width];
        let w = &kernel[k * width..(k + 1) * width];
        z += w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
    z
}

/// Activation of filter `f` at window centre `t`.
pub fn window_activation(params: &ModelParams, encoded: &EncodedExample, f: usize, t: usize) -> f64 {
    let merged = merged_inputs(params, encoded);
    params
        .activation
        .apply(window_preactivation(params, &merged, encoded.len(), f, t))
}

pub(crate) fn check_encoded(params: &ModelParams, encoded: &EncodedExample) -> Result<()> {
    let dims = params.dims;
    let len = encoded.len();
    if len == 0 {
        return Err(Error::contract("cannot score an empty sentence"));
    }
    if encoded.pos1_ids.len() != len || encoded.pos2_ids.len() != len {
        return Err(Error::contract("token and position arrays differ in length"));
    }
    if encoded.token_ids.iter().any(|&t| t >= dims.vocab) {
        return Err(Error::contract("token id outside the vocabulary"));
    }
    if encoded
        .pos1_ids
        .iter()
        .chain(&encoded.pos2_ids)
        .any(|&p| p >= dims.positions())
    {
        return Err(Error::contract("position id outside the clip range"));
    }
    Ok(())
}

pub fn forward(params: &ModelParams, encoded: &EncodedExample) -> Result<ForwardTrace> {
    check_encoded(params, encoded)?;
    Ok(forward_unchecked(params, encoded))
}

pub(crate) fn forward_unchecked(params: &ModelParams, encoded: &EncodedExample) -> ForwardTrace {
    let dims = params.dims;
    let len = encoded.len();
    let merged = merged_inputs(params, encoded);

    let mut pooled = vec![f64::NEG_INFINITY; dims.filters];
    let mut argmax_pos = vec![0; dims.filters];
    for f in 0..dims.filters {
        for t in 0..len {
            let a = params
                .activation
                .apply(window_preactivation(params, &merged, len, f, t));
            // strict comparison keeps the lowest window on ties
            if a > pooled[f] {
                pooled[f] = a;
                argmax_pos[f] = t;
            }
        }
    }

    let scores = (0..dims.classes)
        .map(|c| {
            params
                .class_emb
                .row(c)
                .iter()
                .zip(&pooled)
                .map(|(w, p)| w * p)
                .sum()
        })
        .collect();
    ForwardTrace {
        scores,
        pooled,
        argmax_pos,
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Class decision from scores. In omitted mode `scores` has no negative row
/// and the negative class index is `scores.len()`.
pub fn decide(scores: &[f64], other_mode: OtherMode) -> usize {
    match other_mode {
        OtherMode::Embedded => argmax(scores).unwrap_or(0),
        OtherMode::Omitted => {
            if scores.iter().all(|s| *s < 0.0) {
                scores.len()
            } else {
                argmax(scores).unwrap_or(0)
            }
        }
    }
}

pub fn predict(params: &ModelParams, encoded: &EncodedExample, other_mode: OtherMode) -> Result<usize> {
    Ok(decide(&forward(params, encoded)?.scores, other_mode))
}
