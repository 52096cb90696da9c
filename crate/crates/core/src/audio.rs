//! WAV decoding/encoding and resampling to the pipeline's working rate.
//!
//! Everything downstream works on mono `f64` buffers. Decoding accepts PCM16 and
//! IEEE float32 with one or two channels; encoding always writes mono PCM16.

use std::f64::consts::PI;

use thiserror::Error;

/// Default working sample rate of the pipeline.
pub const WORKING_RATE: u32 = 22050;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const RESAMPLE_TAPS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WavError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV codec: format {format}, {bits} bits, {channels} channels")]
    UnsupportedCodec { format: u16, bits: u16, channels: u16 },
    #[error("truncated data chunk: header declares {declared} bytes, {available} available")]
    TruncatedData { declared: usize, available: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
}

/// Mono audio with a sample rate in Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate: sample_rate.max(1) }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self { samples: self.samples.iter().map(|s| s * gain).collect(), sample_rate: self.sample_rate }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], WavError> {
        if self.pos + n > self.bytes.len() {
            return Err(WavError::MalformedHeader(format!("unexpected end of file reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16, WavError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, WavError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Format {
    code: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes a RIFF/WAVE byte stream into a mono buffer (channel mean).
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, WavError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "RIFF tag")? != b"RIFF" {
        return Err(WavError::MalformedHeader("missing RIFF tag".into()));
    }
    cur.u32("RIFF size")?;
    if cur.take(4, "WAVE tag")? != b"WAVE" {
        return Err(WavError::MalformedHeader("missing WAVE tag".into()));
    }

    let mut format: Option<Format> = None;
    loop {
        if cur.pos + 8 > bytes.len() {
            return Err(WavError::MalformedHeader("no data chunk".into()));
        }
        let id: [u8; 4] = cur.take(4, "chunk id")?.try_into().unwrap();
        let size = cur.u32("chunk size")? as usize;
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(WavError::MalformedHeader(format!("fmt chunk too small ({size} bytes)")));
                }
                let body = cur.take(size, "fmt chunk")?;
                let mut fc = Cursor { bytes: body, pos: 0 };
                let code = fc.u16("format code")?;
                let channels = fc.u16("channels")?;
                let sample_rate = fc.u32("sample rate")?;
                fc.u32("byte rate")?;
                fc.u16("block align")?;
                let bits = fc.u16("bits per sample")?;
                if sample_rate == 0 {
                    return Err(WavError::MalformedHeader("zero sample rate".into()));
                }
                format = Some(Format { code, channels, sample_rate, bits });
                if size % 2 == 1 {
                    let _ = cur.take(1, "pad byte");
                }
            }
            b"data" => {
                let fmt = format.ok_or_else(|| WavError::MalformedHeader("data chunk before fmt chunk".into()))?;
                let supported = matches!((fmt.code, fmt.bits), (FORMAT_PCM, 16) | (FORMAT_FLOAT, 32))
                    && (1..=2).contains(&fmt.channels);
                if !supported {
                    return Err(WavError::UnsupportedCodec { format: fmt.code, bits: fmt.bits, channels: fmt.channels });
                }
                let available = bytes.len() - cur.pos;
                let frame_bytes = fmt.channels as usize * fmt.bits as usize / 8;
                if size > available || !size.is_multiple_of(frame_bytes) {
                    return Err(WavError::TruncatedData { declared: size, available });
                }
                let data = &bytes[cur.pos..cur.pos + size];
                return Ok(AudioBuffer { samples: interleaved_to_mono(data, &fmt), sample_rate: fmt.sample_rate });
            }
            _ => {
                let skip = size + size % 2;
                if cur.pos + skip > bytes.len() {
                    return Err(WavError::MalformedHeader(format!(
                        "chunk {:?} overruns file",
                        String::from_utf8_lossy(&id)
                    )));
                }
                cur.pos += skip;
            }
        }
    }
}

fn interleaved_to_mono(data: &[u8], fmt: &Format) -> Vec<f64> {
    let width = fmt.bits as usize / 8;
    let channels = fmt.channels as usize;
    let decode = |b: &[u8]| -> f64 {
        if fmt.code == FORMAT_PCM {
            i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0
        } else {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
            if v.is_finite() {
                v
            } else {
                0.0
            }
        }
    };
    data.chunks_exact(width * channels)
        .map(|frame| frame.chunks_exact(width).map(decode).sum::<f64>() / channels as f64)
        .collect()
}

/// Encodes a buffer as mono PCM16.
///
/// Samples are clamped to [-1, 1] and mapped with the same 32768 scale the
/// decoder divides by; +1.0 saturates at 32767.
pub fn encode_wav(buf: &AudioBuffer) -> Vec<u8> {
    let data_len = buf.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &buf.samples {
        out.extend_from_slice(&quantize_pcm16(s).to_le_bytes());
    }
    out
}

fn quantize_pcm16(s: f64) -> i16 {
    let scaled = (s.clamp(-1.0, 1.0) * 32768.0).round();
    scaled.clamp(-32768.0, 32767.0) as i16
}

/// Band-limited resampling with a 64-tap Blackman-windowed sinc kernel.
///
/// Output length is `round(len * target / source)`. Indices outside the
/// signal repeat the edge sample and kernel weights are normalized per output
/// sample, so DC passes through exactly.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::ZeroSampleRate);
    }
    if target_rate == buf.sample_rate {
        return Ok(buf.clone());
    }
    let src = buf.sample_rate as f64;
    let dst = target_rate as f64;
    let n_in = buf.samples.len();
    let n_out = (n_in as f64 * dst / src).round() as usize;
    if n_in == 0 {
        return Ok(AudioBuffer { samples: vec![0.0; n_out], sample_rate: target_rate });
    }
    let ratio = src / dst;
    // Lowpass at the smaller Nyquist, slightly inside it.
    let cutoff = 0.97 * (dst / src).min(1.0);
    let half = (RESAMPLE_TAPS / 2) as isize;
    let span = RESAMPLE_TAPS as f64 / 2.0;

    let samples = (0..n_out)
        .map(|n| {
            let pos = n as f64 * ratio;
            let base = pos.floor() as isize;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for k in (base - half + 1)..=(base + half) {
                let d = pos - k as f64;
                if d.abs() >= span {
                    continue;
                }
                let w = cutoff * sinc(cutoff * d) * blackman(d / span);
                let idx = k.clamp(0, n_in as isize - 1) as usize;
                acc += w * buf.samples[idx];
                wsum += w;
            }
            if wsum.abs() > 1e-12 {
                acc / wsum
            } else {
                0.0
            }
        })
        .collect();
    Ok(AudioBuffer { samples, sample_rate: target_rate })
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

// Blackman window on [-1, 1].
fn blackman(x: f64) -> f64 {
    let t = (x + 1.0) / 2.0;
    0.42 - 0.5 * (2.0 * PI * t).cos() + 0.08 * (4.0 * PI * t).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pcm16_wav(samples: &[i16], channels: u16, rate: u32) -> Vec<u8> {
        let data_len = samples.len() * 2;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    #[test]
    fn pcm16_scaling() {
        let buf = decode_wav(&pcm16_wav(&[0, 16384, -16384, 32767], 1, 8000)).unwrap();
        assert_eq!(buf.sample_rate(), 8000);
        assert_eq!(&buf.samples()[..3], &[0.0, 0.5, -0.5]);
        assert!((buf.samples()[3] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn stereo_float_is_averaged() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&44u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&3u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&64000u32.to_le_bytes());
        bytes.extend_from_slice(&8u16.to_le_bytes());
        bytes.extend_from_slice(&32u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&8u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&0.0f32.to_le_bytes());
        assert_eq!(decode_wav(&bytes).unwrap().samples(), &[0.5]);
    }

    #[test]
    fn error_kinds_are_distinct() {
        assert!(matches!(decode_wav(b"not a wav file at all"), Err(WavError::MalformedHeader(_))));

        let mut bytes = pcm16_wav(&[1, 2], 1, 8000);
        bytes[20] = 2; // ADPCM
        assert!(matches!(decode_wav(&bytes), Err(WavError::UnsupportedCodec { format: 2, .. })));

        let mut bytes = pcm16_wav(&[1, 2, 3, 4], 1, 8000);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode_wav(&bytes), Err(WavError::TruncatedData { declared: 8, available: 5 })));

        let bytes = pcm16_wav(&[1, 2], 3, 8000);
        assert!(matches!(decode_wav(&bytes), Err(WavError::UnsupportedCodec { channels: 3, .. })));
    }

    #[test]
    fn skips_unknown_chunks() {
        let plain = pcm16_wav(&[100, -100], 1, 16000);
        let mut bytes = plain[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&plain[36..]);
        assert_eq!(decode_wav(&bytes).unwrap(), decode_wav(&plain).unwrap());
    }

    #[test]
    fn encode_zero_and_clamp() {
        let bytes = encode_wav(&AudioBuffer::new(vec![0.0], 8000).unwrap());
        assert_eq!(&bytes[44..], &[0, 0]);
        let bytes = encode_wav(&AudioBuffer::new(vec![1.5, -3.0], 8000).unwrap());
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 32767);
        assert_eq!(i16::from_le_bytes([bytes[46], bytes[47]]), -32768);
    }

    #[test]
    fn random_round_trip_within_one_lsb() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let buf = AudioBuffer::new(samples, 22050).unwrap();
        let back = decode_wav(&encode_wav(&buf)).unwrap();
        assert_eq!(back.len(), buf.len());
        for (a, b) in buf.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / 32767.0, "{a} vs {b}");
        }
    }

    #[test]
    fn resample_identity_and_errors() {
        let buf = AudioBuffer::new(vec![0.1, 0.2, 0.3], 8000).unwrap();
        assert_eq!(resample(&buf, 8000).unwrap(), buf);
        assert_eq!(resample(&buf, 0), Err(AudioError::ZeroSampleRate));
    }

    #[test]
    fn resample_preserves_dc() {
        for &(from, to) in &[(22050u32, 16000u32), (8000, 22050), (44100, 22050), (16000, 44100), (22050, 8000)] {
            let buf = AudioBuffer::new(vec![1.0; from as usize / 2], from).unwrap();
            let out = resample(&buf, to).unwrap();
            assert_eq!(out.len(), (buf.len() as f64 * to as f64 / from as f64).round() as usize);
            assert!(out.samples().iter().all(|s| (s - 1.0).abs() < 1e-3), "{from}->{to}");
        }
    }

    #[test]
    fn resample_preserves_duration() {
        let buf = AudioBuffer::silence(12345, 22050);
        let out = resample(&buf, 16000).unwrap();
        assert!((out.duration_seconds() - buf.duration_seconds()).abs() <= 1.0 / 16000.0);
    }

    #[test]
    fn rejects_non_finite_samples() {
        assert_eq!(AudioBuffer::new(vec![0.0, f64::NAN], 8000), Err(AudioError::NonFinite(1)));
        assert_eq!(AudioBuffer::new(vec![], 0), Err(AudioError::ZeroSampleRate));
    }
}
