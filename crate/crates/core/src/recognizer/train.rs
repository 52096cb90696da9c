use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ctc::ctc_grad;
use super::model::{backward, forward_trace, softmax_rows, AcousticModelParams};
use super::{PhonemeSequence, Posteriorgram, RecognizerError};
use crate::dsp::FeatureMatrix;

/// Minimum number of phonemes in every training target.
pub const MIN_TARGET_PHONEMES: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 60, learning_rate: 0.01, momentum: 0.9, clip_norm: 5.0, hidden: 128, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: AcousticModelParams,
    /// Mean CTC loss of each epoch, measured before each example's update.
    pub epoch_losses: Vec<f64>,
}

/// Per-dimension mean and inverse standard deviation over every frame.
fn normalization(dataset: &[(FeatureMatrix, PhonemeSequence)], width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; width];
    let mut sq = vec![0.0; width];
    let mut n = 0usize;
    for (f, _) in dataset {
        for row in f.values.iter_rows() {
            for (i, v) in row.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let scale = sq.iter().zip(&mean).map(|(q, m)| 1.0 / (q / n - m * m).max(1e-6).sqrt()).collect();
    (mean, scale)
}

/// Trains a fresh GRU with CTC using SGD + momentum and global-norm clipping.
///
/// Examples are visited in a seeded shuffle each epoch and the model is updated
/// after every example, so a fixed seed gives bit-identical weights.
pub fn train(dataset: &[(FeatureMatrix, PhonemeSequence)], cfg: &TrainConfig) -> Result<TrainedModel, RecognizerError> {
    train_with_progress(dataset, cfg, |_, _| {})
}

pub fn train_with_progress(
    dataset: &[(FeatureMatrix, PhonemeSequence)],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedModel, RecognizerError> {
    let first = dataset.first().ok_or(RecognizerError::EmptyDataset)?;
    let width = first.0.width();
    for (i, (f, target)) in dataset.iter().enumerate() {
        if target.len() < MIN_TARGET_PHONEMES {
            return Err(RecognizerError::TargetTooShort { index: i, len: target.len(), min: MIN_TARGET_PHONEMES });
        }
        if f.width() != width {
            return Err(RecognizerError::Shape { expected: width, found: f.width() });
        }
        let need = super::ctc::min_frames(&target.indices());
        if f.frames() < need {
            return Err(RecognizerError::ExampleInfeasible { index: i, frames: f.frames(), required: need });
        }
    }

    let mut params = AcousticModelParams::random(width, cfg.hidden, cfg.seed);
    let (mean, scale) = normalization(dataset, width);
    params.set_normalization(mean, scale);
    let mut velocity = vec![0.0; params.weights().len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (features, target) = &dataset[i];
            let trace = forward_trace(features, &params)?;
            let post = Posteriorgram::from_matrix_unchecked(softmax_rows(&trace.logits), features.frame_hop_seconds);
            let (loss, dlogits) = ctc_grad(&post, &target.indices())?;
            total += loss;
            let mut grad = backward(&trace, &params, &dlogits);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            for ((w, v), g) in params.weights_mut().iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *w += *v;
            }
        }
        let mean_loss = total / dataset.len() as f64;
        on_epoch(epoch, mean_loss);
        epoch_losses.push(mean_loss);
    }
    Ok(TrainedModel { params, epoch_losses })
}

/// Levenshtein distance between two label sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 − Σ edits / Σ reference length`.
pub fn token_accuracy(pairs: &[(PhonemeSequence, PhonemeSequence)]) -> f64 {
    let mut edits = 0;
    let mut total = 0;
    for (reference, hypothesis) in pairs {
        edits += edit_distance(&reference.symbols, &hypothesis.symbols);
        total += reference.len();
    }
    if total == 0 {
        return 1.0;
    }
    1.0 - edits as f64 / total as f64
}
