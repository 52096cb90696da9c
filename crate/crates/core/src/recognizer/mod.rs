//! Phoneme recognition: GRU acoustic model, CTC training, and decoding.
//!
//! The recognizer has no notion of speech versus non-speech. Any audio goes in
//! and some (possibly empty) phoneme sequence comes out.

mod alphabet;
mod ctc;
mod decode;
mod model;
pub mod synth;
mod train;

use std::path::Path;

use thiserror::Error;

pub use alphabet::{Phoneme, PhonemeSequence, UnknownPhoneme, BLANK, NUM_CLASSES, NUM_PHONEMES, PHONEMES};
pub use ctc::{ctc_grad, ctc_loss, ctc_occupancy, min_frames};
pub use decode::{beam_decode, greedy_decode};
pub use model::{forward, softmax_rows, AcousticModelParams};
pub use train::{edit_distance, token_accuracy, train, train_with_progress, TrainConfig, TrainedModel, MIN_TARGET_PHONEMES};

use crate::container::{Container, ContainerError, Tensor};
use crate::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecognizerError {
    #[error("feature width {found} does not match model input {expected}")]
    Shape { expected: usize, found: usize },
    #[error("empty CTC target")]
    EmptyTarget,
    #[error("label {0} is not a phoneme class of this posteriorgram")]
    InvalidLabel(usize),
    #[error("target needs at least {required} frames, posteriorgram has {frames}")]
    Infeasible { frames: usize, required: usize },
    #[error("training example {index} has {len} phonemes; at least {min} required")]
    TargetTooShort { index: usize, len: usize, min: usize },
    #[error("training example {index} has {frames} frames; its target needs {required}")]
    ExampleInfeasible { index: usize, frames: usize, required: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("invalid posteriorgram: {0}")]
    InvalidPosteriorgram(String),
}

/// Per-frame class probabilities, `frames × classes`, class 0 = blank.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriorgram {
    probs: Matrix,
    frame_hop_seconds: f64,
}

impl Posteriorgram {
    /// Validates that every row is a probability distribution (sum within 1e-6).
    pub fn new(probs: Matrix, frame_hop_seconds: f64) -> Result<Self, RecognizerError> {
        if probs.cols() < 2 {
            return Err(RecognizerError::InvalidPosteriorgram("need a blank and at least one phoneme class".into()));
        }
        if probs.cols() > NUM_CLASSES {
            return Err(RecognizerError::InvalidPosteriorgram(format!("{} classes exceeds {NUM_CLASSES}", probs.cols())));
        }
        for (t, row) in probs.iter_rows().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(RecognizerError::InvalidPosteriorgram(format!("frame {t} has an entry outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(RecognizerError::InvalidPosteriorgram(format!("frame {t} sums to {sum}")));
            }
        }
        Ok(Self { probs, frame_hop_seconds })
    }

    pub(crate) fn from_matrix_unchecked(probs: Matrix, frame_hop_seconds: f64) -> Self {
        Self { probs, frame_hop_seconds }
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn frames(&self) -> usize {
        self.probs.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn frame_hop_seconds(&self) -> f64 {
        self.frame_hop_seconds
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> Posteriorgram {
        Posteriorgram { probs: self.probs.slice_rows(start, end), frame_hop_seconds: self.frame_hop_seconds }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.push(Tensor::from_f64("posteriorgram", vec![self.frames(), self.num_classes()], self.probs.as_slice()));
        c.push(Tensor::from_f64("frame_hop_seconds", vec![1], &[self.frame_hop_seconds]));
        c
    }
}

/// Trained model plus its checkpoint I/O.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticModel {
    pub params: AcousticModelParams,
}

impl AcousticModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.params.to_container().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        Ok(Self { params: AcousticModelParams::from_container(&Container::from_bytes(bytes)?)? })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }
}
