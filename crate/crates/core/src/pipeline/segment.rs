//! Splits audio into line-sized segments by frame energy.

use serde::{Deserialize, Serialize};

use super::config::ConfigError;
use crate::audio::AudioBuffer;

pub const RMS_FRAME_SECONDS: f64 = 0.025;

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationConfig {
    /// Frames louder than this multiple of the median frame RMS are active.
    pub rms_threshold_factor: f64,
    pub min_gap_seconds: f64,
    pub min_segment_seconds: f64,
    pub max_segment_seconds: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self { rms_threshold_factor: 0.5, min_gap_seconds: 0.3, min_segment_seconds: 0.5, max_segment_seconds: 10.0 }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let all_positive = [self.rms_threshold_factor, self.min_gap_seconds, self.min_segment_seconds, self.max_segment_seconds]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err(ConfigError::Invalid("segmentation settings must be positive".into()));
        }
        if self.max_segment_seconds < 2.0 * self.min_segment_seconds {
            return Err(ConfigError::Invalid("max_segment must be at least twice min_segment".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeSpan {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// RMS over consecutive non-overlapping frames; the last frame may be short.
pub fn frame_rms(samples: &[f64], frame_len: usize) -> Vec<f64> {
    samples.chunks(frame_len.max(1)).map(|c| (c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64).sqrt()).collect()
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Splits `[start, end)` (in frames) until every piece fits `max_len`,
/// cutting at the quietest frame that leaves both sides at least `min_len`.
fn split_long(rms: &[f64], start: usize, end: usize, min_len: usize, max_len: usize, tie: f64, out: &mut Vec<(usize, usize)>) {
    if end - start <= max_len {
        out.push((start, end));
        return;
    }
    let lo = start + min_len;
    let hi = end - min_len;
    let center = (start + end) as f64 / 2.0;
    let cut = if lo <= hi {
        let lowest = rms[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min);
        // among near-equal minima, cut closest to the middle
        (lo..=hi)
            .filter(|&f| rms[f] <= lowest + tie)
            .min_by(|&a, &b| (a as f64 - center).abs().total_cmp(&(b as f64 - center).abs()).then(a.cmp(&b)))
            .expect("non-empty range")
    } else {
        (start + end) / 2
    };
    split_long(rms, start, cut, min_len, max_len, tie, out);
    split_long(rms, cut, end, min_len, max_len, tie, out);
}

/// Active regions of `buf`, time-ordered and non-overlapping. Silence gives none.
pub fn segment(buf: &AudioBuffer, cfg: &SegmentationConfig) -> Vec<TimeSpan> {
    let sr = buf.sample_rate() as f64;
    let frame_len = ((RMS_FRAME_SECONDS * sr).round() as usize).max(1);
    let frame_s = frame_len as f64 / sr;
    let rms = frame_rms(buf.samples(), frame_len);
    let med = median(&rms);
    let threshold = cfg.rms_threshold_factor * med;

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &r) in rms.iter().enumerate() {
        match (r > threshold, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        runs.push((s, rms.len()));
    }

    let mut merged: Vec<(usize, usize)> = Vec::new();
    for run in runs {
        match merged.last_mut() {
            Some(last) if ((run.0 - last.1) as f64) * frame_s < cfg.min_gap_seconds => last.1 = run.1,
            _ => merged.push(run),
        }
    }

    let min_len = (cfg.min_segment_seconds / frame_s).ceil() as usize;
    let max_len = ((cfg.max_segment_seconds / frame_s).floor() as usize).max(1);
    let mut pieces = Vec::new();
    for (s, e) in merged {
        if ((e - s) as f64) * frame_s < cfg.min_segment_seconds {
            continue;
        }
        split_long(&rms, s, e, min_len, max_len, 1e-3 * med, &mut pieces);
    }
    let duration = buf.duration_seconds();
    pieces
        .into_iter()
        .map(|(s, e)| TimeSpan { start_s: s as f64 * frame_s, end_s: (e as f64 * frame_s).min(duration) })
        .collect()
}
