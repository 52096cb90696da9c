//! Similarity-matrix repeating-pattern separation (REPET-SIM).
//!
//! Each magnitude frame is modeled as the element-wise median of its most
//! similar frames. What the median cannot explain is foreground. On music the
//! foreground is mostly voice; on anything else it is whatever does not repeat,
//! and those leftovers are what the recognizer later hears as speech.

use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::dsp::{istft, stft, DspError, StftConfig};
use crate::Matrix;

const BLOCK: usize = 256;
const MASK_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeparatorError {
    #[error("audio too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("audio too long: {seconds:.1} s exceeds the {max:.1} s limit")]
    TooLong { seconds: f64, max: f64 },
    #[error("invalid separator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparatorConfig {
    pub k_neighbors: usize,
    pub min_spacing_seconds: f64,
    /// Mask hardness; 1.0 is the plain ratio mask.
    pub mask_exponent: f64,
    pub stft: StftConfig,
    /// Cap on input length; similarity cost grows with the square of the frame count.
    pub max_duration_seconds: f64,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 30,
            min_spacing_seconds: 1.0,
            mask_exponent: 1.0,
            stft: StftConfig::default(),
            max_duration_seconds: 120.0,
        }
    }
}

impl SeparatorConfig {
    pub fn validate(&self) -> Result<(), SeparatorError> {
        if self.k_neighbors == 0 {
            return Err(SeparatorError::InvalidConfig("k_neighbors must be >= 1".into()));
        }
        if !(self.min_spacing_seconds >= 0.0) {
            return Err(SeparatorError::InvalidConfig("min_spacing_seconds must be >= 0".into()));
        }
        if !(self.mask_exponent >= 0.0) {
            return Err(SeparatorError::InvalidConfig("mask_exponent must be >= 0".into()));
        }
        if !(self.max_duration_seconds > 0.0) {
            return Err(SeparatorError::InvalidConfig("max_duration_seconds must be > 0".into()));
        }
        self.stft.validate()?;
        Ok(())
    }

    pub fn min_spacing_frames(&self, sample_rate: u32) -> usize {
        (self.min_spacing_seconds * sample_rate as f64 / self.stft.hop as f64).round() as usize
    }
}

/// Frame-by-frame cosine similarity of a `T × F` magnitude matrix.
///
/// All-zero frames have similarity 0 to every other frame and 1 to themselves.
pub fn similarity_matrix(mag: &Matrix) -> Matrix {
    let t = mag.rows();
    let norms: Vec<f64> = mag.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut sim = Matrix::zeros(t, t);
    for bi in (0..t).step_by(BLOCK) {
        for bj in (bi..t).step_by(BLOCK) {
            for i in bi..(bi + BLOCK).min(t) {
                let start = if bi == bj { i } else { bj };
                for j in start..(bj + BLOCK).min(t) {
                    let value = if i == j {
                        1.0
                    } else if norms[i] == 0.0 || norms[j] == 0.0 {
                        0.0
                    } else {
                        let dot: f64 = mag.row(i).iter().zip(mag.row(j)).map(|(a, b)| a * b).sum();
                        (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                    };
                    sim[(i, j)] = value;
                    sim[(j, i)] = value;
                }
            }
        }
    }
    sim
}

/// Picks the repeating neighbours of `frame`: itself first, then the most similar
/// frames in descending order (lower index wins ties), skipping any candidate
/// closer than `spacing` frames to one already chosen.
pub fn select_neighbors(similarity: &[f64], frame: usize, k: usize, spacing: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..similarity.len()).filter(|&i| i != frame).collect();
    order.sort_by(|&a, &b| similarity[b].total_cmp(&similarity[a]).then(a.cmp(&b)));
    let mut chosen = vec![frame];
    for cand in order {
        if chosen.len() >= k {
            break;
        }
        if chosen.iter().all(|&c| c.abs_diff(cand) >= spacing) {
            chosen.push(cand);
        }
    }
    chosen
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of each frame's repeating neighbours; row `j` models frame `j`.
pub fn repeating_model(mag: &Matrix, similarity: &Matrix, k_neighbors: usize, spacing_frames: usize) -> Matrix {
    let (t, f) = mag.shape();
    assert_eq!(similarity.shape(), (t, t), "similarity shape does not match magnitude");
    let mut out = Matrix::zeros(t, f);
    let mut column = Vec::with_capacity(k_neighbors);
    for j in 0..t {
        let chosen = select_neighbors(similarity.row(j), j, k_neighbors.max(1), spacing_frames);
        let row = out.row_mut(j);
        for (bin, slot) in row.iter_mut().enumerate() {
            column.clear();
            column.extend(chosen.iter().map(|&c| mag[(c, bin)]));
            *slot = median(&mut column);
        }
    }
    out
}

/// Background soft mask `(min(repeating, mag) / max(mag, ε))^p`; the foreground mask is `1 − M`.
pub fn soft_mask(mag: &Matrix, repeating: &Matrix, exponent: f64) -> Matrix {
    assert_eq!(mag.shape(), repeating.shape(), "mask inputs differ in shape");
    let data = mag
        .as_slice()
        .iter()
        .zip(repeating.as_slice())
        .map(|(&m, &r)| (r.min(m) / m.max(MASK_EPS)).max(0.0).powf(exponent).clamp(0.0, 1.0))
        .collect();
    Matrix::from_vec(mag.rows(), mag.cols(), data)
}

/// Foreground and background stems plus the background mask that produced them.
#[derive(Clone, Debug)]
pub struct Separation {
    pub foreground: AudioBuffer,
    pub background: AudioBuffer,
    pub background_mask: Matrix,
}

pub fn separate(buf: &AudioBuffer, cfg: &SeparatorConfig) -> Result<Separation, SeparatorError> {
    cfg.validate()?;
    if buf.len() < cfg.stft.n_fft {
        return Err(SeparatorError::TooShort { len: buf.len(), min: cfg.stft.n_fft });
    }
    let seconds = buf.duration_seconds();
    if seconds > cfg.max_duration_seconds {
        return Err(SeparatorError::TooLong { seconds, max: cfg.max_duration_seconds });
    }
    let spec = stft(buf, cfg.stft)?;
    let mag = spec.magnitude();
    let sim = similarity_matrix(&mag);
    let repeating = repeating_model(&mag, &sim, cfg.k_neighbors, cfg.min_spacing_frames(buf.sample_rate()));
    let mask = soft_mask(&mag, &repeating, cfg.mask_exponent);
    let fg_mask = mask.map(|m| 1.0 - m);
    let background = istft(&spec.masked(&mask)?)?;
    let foreground = istft(&spec.masked(&fg_mask)?)?;
    Ok(Separation { foreground, background, background_mask: mask })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_frames_are_fully_similar() {
        let mag = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]);
        let s = similarity_matrix(&mag);
        assert!(s.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn orthogonal_frames() {
        let s = similarity_matrix(&Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]));
        assert_eq!(s.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_frame_convention() {
        let s = similarity_matrix(&Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]]));
        assert_eq!(s.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(s.row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn neighbor_selection_respects_spacing_and_ties() {
        let sim = [0.9, 0.5, 1.0, 0.9, 0.1, 0.9];
        assert_eq!(select_neighbors(&sim, 2, 3, 0), vec![2, 0, 3]);
        // spacing 2: 3 is too close to 2, 0 and 5 are fine
        assert_eq!(select_neighbors(&sim, 2, 3, 2), vec![2, 0, 5]);
        assert_eq!(select_neighbors(&sim, 2, 1, 0), vec![2]);
    }

    #[test]
    fn identical_frames_model_is_input() {
        let mag = Matrix::from_rows(&[[0.3, 1.0, 2.0]; 6]);
        let sim = similarity_matrix(&mag);
        assert_eq!(repeating_model(&mag, &sim, 4, 0), mag);
    }

    #[test]
    fn single_neighbor_model_is_input() {
        let mag = Matrix::from_rows(&[[0.3, 1.0], [5.0, 0.1], [2.0, 2.0]]);
        let sim = similarity_matrix(&mag);
        assert_eq!(repeating_model(&mag, &sim, 1, 0), mag);
    }

    #[test]
    fn corrupted_frame_replaced_by_clean_median() {
        // Period-2 pattern a/b with frame 2 corrupted. With k = T = 5 and no spacing
        // every frame sees all five rows, so each row is the column median:
        // col0 {1,1,9,1,1} -> 1, col1 {2,3,9,3,2}... sorted {2,2,3,3,9} -> 3, col2 {3,1,9,1,3} -> 3.
        let mag = Matrix::from_rows(&[[1.0, 2.0, 3.0], [1.0, 3.0, 1.0], [9.0, 9.0, 9.0], [1.0, 3.0, 1.0], [1.0, 2.0, 3.0]]);
        let sim = similarity_matrix(&mag);
        let model = repeating_model(&mag, &sim, 5, 0);
        assert_eq!(model.row(2), &[1.0, 3.0, 3.0]);
    }

    #[test]
    fn mask_cases() {
        let mag = Matrix::from_rows(&[[1.0, 2.0], [4.0, 0.0]]);
        assert!(soft_mask(&mag, &mag.map(|v| v + 1.0), 1.0).as_slice().iter().all(|&m| m == 1.0 || m == 0.0));
        assert_eq!(soft_mask(&mag, &mag.map(|v| v * 2.0), 1.0).as_slice()[..3], [1.0, 1.0, 1.0]);
        assert!(soft_mask(&mag, &Matrix::zeros(2, 2), 1.0).as_slice().iter().all(|&m| m == 0.0));
        let half = soft_mask(&mag, &mag.map(|v| v / 2.0), 1.0);
        assert_eq!(&half.as_slice()[..3], &[0.5, 0.5, 0.5]);
        let hard = soft_mask(&mag, &mag.map(|v| v / 2.0), 2.0);
        assert_eq!(hard.as_slice()[0], 0.25);
    }

    #[test]
    fn short_audio_rejected() {
        let cfg = SeparatorConfig::default();
        let err = separate(&AudioBuffer::silence(1000, 22050), &cfg).unwrap_err();
        assert_eq!(err, SeparatorError::TooShort { len: 1000, min: 2048 });
        let long = SeparatorConfig { max_duration_seconds: 0.1, ..SeparatorConfig::default() };
        assert!(matches!(separate(&AudioBuffer::silence(22050, 22050), &long), Err(SeparatorError::TooLong { .. })));
    }
}
