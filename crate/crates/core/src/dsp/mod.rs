//! STFT analysis/resynthesis and log-mel features.

mod mel;
mod stft;

use thiserror::Error;

pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, FeatureMatrix, LOG_FLOOR};
pub use stft::{hann, istft, stft, Spectrogram, StftConfig};

use crate::audio::AudioBuffer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid STFT config: {0}")]
    InvalidConfig(String),
    #[error("n_fft {n_fft} with hop {hop} does not satisfy constant overlap-add")]
    NotCola { n_fft: usize, hop: usize },
    #[error("invalid mel band edges: fmin {fmin}, fmax {fmax}, nyquist {nyquist}")]
    InvalidBand { fmin: f64, fmax: f64, nyquist: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Frontend parameters for the acoustic model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureConfig {
    pub stft: StftConfig,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { stft: StftConfig { n_fft: 512, hop: 220 }, n_mels: 40, fmin: 50.0, fmax: 11025.0 }
    }
}

/// STFT followed by log-mel.
pub fn featurize(buf: &AudioBuffer, cfg: &FeatureConfig) -> Result<FeatureMatrix, DspError> {
    let fmax = cfg.fmax.min(buf.sample_rate() as f64 / 2.0);
    log_mel(&stft(buf, cfg.stft)?, cfg.n_mels, cfg.fmin, fmax)
}
