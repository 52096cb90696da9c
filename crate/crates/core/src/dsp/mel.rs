use super::{DspError, Spectrogram};
use crate::Matrix;

/// Floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Log-mel energies, `frames × n_mels`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Matrix,
    pub frame_hop_seconds: f64,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> FeatureMatrix {
        FeatureMatrix { values: self.values.slice_rows(start, end), frame_hop_seconds: self.frame_hop_seconds }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `n_mels × (n_fft/2 + 1)`, unnormalized peaks of 1.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Result<Matrix, DspError> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels == 0 || !(fmin >= 0.0) || !(fmin < fmax) || fmax > nyquist {
        return Err(DspError::InvalidBand { fmin, fmax, nyquist });
    }
    let bins = n_fft / 2 + 1;
    let lo = hz_to_mel(fmin);
    let hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)).collect();
    let mut fb = Matrix::zeros(n_mels, bins);
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[(m, k)] = w;
        }
    }
    Ok(fb)
}

/// Applies a mel filterbank to the power spectrum and takes `ln(max(x, 1e-10))`.
pub fn log_mel(spec: &Spectrogram, n_mels: usize, fmin: f64, fmax: f64) -> Result<FeatureMatrix, DspError> {
    let fb = mel_filterbank(n_mels, spec.config().n_fft, spec.sample_rate(), fmin, fmax)?;
    let mut values = Matrix::zeros(spec.frames(), n_mels);
    for t in 0..spec.frames() {
        let frame = spec.frame(t);
        for m in 0..n_mels {
            let energy: f64 = fb.row(m).iter().zip(frame).map(|(w, c)| w * c.norm_sqr()).sum();
            values[(t, m)] = energy.max(LOG_FLOOR).ln();
        }
    }
    Ok(FeatureMatrix { values, frame_hop_seconds: spec.frame_hop_seconds() })
}
