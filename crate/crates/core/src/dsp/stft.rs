use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::DspError;
use crate::audio::AudioBuffer;

/// Frame length and hop for a Hann-windowed STFT.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { n_fft: 2048, hop: 512 }
    }
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize) -> Result<Self, DspError> {
        let cfg = Self { n_fft, hop };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.n_fft < 2 || !self.n_fft.is_power_of_two() {
            return Err(DspError::InvalidConfig(format!("n_fft {} is not a power of two >= 2", self.n_fft)));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(DspError::InvalidConfig(format!("hop {} outside 1..={}", self.hop, self.n_fft)));
        }
        Ok(())
    }

    /// Hann overlap-add reconstructs exactly when the hop divides the frame
    /// and frames overlap by at least half.
    pub fn is_cola(&self) -> bool {
        self.n_fft.is_multiple_of(self.hop) && self.hop <= self.n_fft / 2
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// One-sided complex STFT, `frames × (n_fft/2 + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    data: Vec<Complex64>,
    config: StftConfig,
    sample_rate: u32,
    signal_len: Option<usize>,
}

impl Spectrogram {
    pub fn from_parts(
        frames: usize,
        data: Vec<Complex64>,
        config: StftConfig,
        sample_rate: u32,
        signal_len: Option<usize>,
    ) -> Result<Self, DspError> {
        config.validate()?;
        if data.len() != frames * config.bins() {
            return Err(DspError::Shape(format!(
                "{} values for {frames} frames of {} bins",
                data.len(),
                config.bins()
            )));
        }
        Ok(Self { frames, data, config, sample_rate, signal_len })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.config.bins()
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Length of the analysed signal, used to trim the inverse transform.
    pub fn signal_len(&self) -> Option<usize> {
        self.signal_len
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let b = self.bins();
        &self.data[t * b..(t + 1) * b]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        let b = self.bins();
        &mut self.data[t * b..(t + 1) * b]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn magnitude(&self) -> crate::Matrix {
        crate::Matrix::from_vec(self.frames, self.bins(), self.data.iter().map(|c| c.norm()).collect())
    }

    pub fn power(&self) -> crate::Matrix {
        crate::Matrix::from_vec(self.frames, self.bins(), self.data.iter().map(|c| c.norm_sqr()).collect())
    }

    /// Multiplies every bin by the matching entry of a real `frames × bins` gain matrix.
    pub fn masked(&self, gains: &crate::Matrix) -> Result<Spectrogram, DspError> {
        if gains.shape() != (self.frames, self.bins()) {
            return Err(DspError::Shape(format!(
                "mask {:?} does not match spectrogram {:?}",
                gains.shape(),
                (self.frames, self.bins())
            )));
        }
        let data = self.data.iter().zip(gains.as_slice()).map(|(c, g)| c * g).collect();
        Ok(Spectrogram { data, ..self.clone() })
    }

    pub fn frame_hop_seconds(&self) -> f64 {
        self.config.hop as f64 / self.sample_rate as f64
    }
}

fn reflect_index(i: isize, len: usize) -> usize {
    // numpy "reflect": the edge sample is not repeated
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Centered STFT: reflect-pads `n_fft/2` on each side so frame `t` is centered on sample `t·hop`.
/// Inputs shorter than `n_fft` are zero-padded to `n_fft` first.
pub fn stft(buf: &AudioBuffer, cfg: StftConfig) -> Result<Spectrogram, DspError> {
    cfg.validate()?;
    let n = cfg.n_fft;
    let mut signal = buf.samples().to_vec();
    let original_len = signal.len();
    if signal.len() < n {
        signal.resize(n, 0.0);
    }
    let len = signal.len();
    let pad = n / 2;
    let frames = 1 + len / cfg.hop;
    let bins = cfg.bins();
    let window = hann(n);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n);

    let mut data = Vec::with_capacity(frames * bins);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut frame = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let start = (t * cfg.hop) as isize - pad as isize;
        for (i, slot) in frame.iter_mut().enumerate() {
            let idx = start + i as isize;
            let x = if idx >= 0 && (idx as usize) < len { signal[idx as usize] } else { signal[reflect_index(idx, len)] };
            *slot = Complex64::new(x * window[i], 0.0);
        }
        fft.process_with_scratch(&mut frame, &mut scratch);
        data.extend_from_slice(&frame[..bins]);
    }
    Ok(Spectrogram { frames, data, config: cfg, sample_rate: buf.sample_rate(), signal_len: Some(original_len) })
}

/// Weighted overlap-add inverse with a Hann synthesis window, normalized by the
/// summed squared window. Trims to the original length when it is known.
pub fn istft(spec: &Spectrogram) -> Result<AudioBuffer, DspError> {
    let cfg = spec.config;
    if !cfg.is_cola() {
        return Err(DspError::NotCola { n_fft: cfg.n_fft, hop: cfg.hop });
    }
    let n = cfg.n_fft;
    let pad = n / 2;
    let out_len = match spec.signal_len {
        Some(l) => l,
        None => spec.frames.saturating_sub(1) * cfg.hop,
    };
    if spec.frames == 0 {
        return Ok(AudioBuffer::silence(out_len, spec.sample_rate));
    }
    let padded_len = (spec.frames - 1) * cfg.hop + n;
    let window = hann(n);
    let ifft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_inverse(n);
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut acc = vec![0.0; padded_len];
    let mut wsum = vec![0.0; padded_len];
    let bins = cfg.bins();

    for t in 0..spec.frames {
        let frame = spec.frame(t);
        buf[..bins].copy_from_slice(frame);
        // Hermitian completion; DC and Nyquist imaginary parts are dropped.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = frame[k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let offset = t * cfg.hop;
        for i in 0..n {
            acc[offset + i] += buf[i].re / n as f64 * window[i];
            wsum[offset + i] += window[i] * window[i];
        }
    }

    let samples = (0..out_len)
        .map(|i| {
            let p = i + pad;
            if p < padded_len && wsum[p] > 1e-10 {
                acc[p] / wsum[p]
            } else {
                0.0
            }
        })
        .collect();
    AudioBuffer::new(samples, spec.sample_rate).map_err(|e| DspError::InvalidConfig(e.to_string()))
}
