//! Synthetic "phoneme-coded" audio for desk-scale acoustic model training.
//!
//! Every phoneme maps to a fixed sound: a pair of steady tones for vowels,
//! stops, nasals and liquids, or a band of noise for fricatives and
//! affricates. The sibilants and other strident fricatives (S, SH, Z, F, TH)
//! all live above 4 kHz.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Phoneme, PhonemeSequence};
use crate::audio::AudioBuffer;

/// How a single phoneme sounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhonemeCode {
    Tones { low: f64, high: f64 },
    Noise { lo: f64, hi: f64, voicing: Option<f64> },
}

const LOW_TONES: [f64; 7] = [300.0, 450.0, 620.0, 800.0, 1000.0, 1250.0, 1500.0];
const HIGH_TONES: [f64; 4] = [1800.0, 2300.0, 2900.0, 3500.0];

const NOISE_CODES: [(&str, f64, f64, Option<f64>); 11] = [
    ("V", 150.0, 500.0, None),
    ("DH", 500.0, 1000.0, None),
    ("CH", 1000.0, 1500.0, None),
    ("HH", 1500.0, 2200.0, None),
    ("JH", 2200.0, 3000.0, None),
    ("ZH", 3000.0, 4000.0, Some(150.0)),
    ("SH", 4000.0, 5200.0, None),
    ("Z", 5200.0, 6400.0, Some(150.0)),
    ("S", 6400.0, 8000.0, None),
    ("TH", 8000.0, 9200.0, None),
    ("F", 9200.0, 10800.0, None),
];

pub fn phoneme_code(p: Phoneme) -> PhonemeCode {
    if let Some(&(_, lo, hi, voicing)) = NOISE_CODES.iter().find(|(s, ..)| *s == p.symbol()) {
        return PhonemeCode::Noise { lo, hi, voicing };
    }
    let slot = Phoneme::all()
        .filter(|q| !NOISE_CODES.iter().any(|(s, ..)| *s == q.symbol()))
        .position(|q| q == p)
        .expect("every non-noise phoneme has a tone slot");
    PhonemeCode::Tones { low: LOW_TONES[slot % LOW_TONES.len()], high: HIGH_TONES[slot / LOW_TONES.len()] }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub phoneme_seconds: f64,
    pub gap_seconds: f64,
    pub edge_seconds: f64,
    pub amplitude: f64,
    /// Level of the white noise floor laid under the whole example.
    pub dither: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::audio::WORKING_RATE,
            phoneme_seconds: 0.1,
            gap_seconds: 0.04,
            edge_seconds: 0.15,
            amplitude: 0.2,
            dither: 1e-3,
        }
    }
}

/// Sum of equal-amplitude sinusoids spread across `[lo, hi]` with random phases.
fn band_noise(len: usize, sr: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let partials = 48;
    let comps: Vec<(f64, f64)> = (0..partials)
        .map(|i| {
            let f = lo + (hi - lo) * (i as f64 + rng.gen_range(0.0..1.0)) / partials as f64;
            (f, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let norm = (2.0 / partials as f64).sqrt();
    (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            comps.iter().map(|(f, ph)| (2.0 * PI * f * t + ph).sin()).sum::<f64>() * norm
        })
        .collect()
}

fn render_code(code: PhonemeCode, len: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match code {
        PhonemeCode::Tones { low, high } => (0..len)
            .map(|n| {
                let t = n as f64 / sr;
                ((2.0 * PI * low * t).sin() + (2.0 * PI * high * t).sin()) / 2f64.sqrt()
            })
            .collect(),
        PhonemeCode::Noise { lo, hi, voicing } => {
            let mut x = band_noise(len, sr, lo, hi, rng);
            if let Some(f0) = voicing {
                for (n, v) in x.iter_mut().enumerate() {
                    *v = 0.8 * *v + 0.4 * (2.0 * PI * f0 * n as f64 / sr).sin();
                }
            }
            x
        }
    }
}

/// Renders a phoneme sequence; returns the audio and each phoneme's sample span.
pub fn render(seq: &PhonemeSequence, cfg: &SynthConfig, seed: u64) -> (AudioBuffer, Vec<(usize, usize)>) {
    let sr = cfg.sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ph_len = (cfg.phoneme_seconds * sr).round() as usize;
    let gap = (cfg.gap_seconds * sr).round() as usize;
    let edge = (cfg.edge_seconds * sr).round() as usize;
    let fade = ((0.005 * sr) as usize).min(ph_len / 2).max(1);
    let total = 2 * edge + seq.len() * ph_len + seq.len().saturating_sub(1) * gap;

    let mut out: Vec<f64> = (0..total).map(|_| rng.gen_range(-1.0..1.0) * cfg.dither).collect();
    let mut spans = Vec::with_capacity(seq.len());
    let mut pos = edge;
    for &p in &seq.symbols {
        let sound = render_code(phoneme_code(p), ph_len, sr, &mut rng);
        for (i, s) in sound.iter().enumerate() {
            let ramp = (i.min(ph_len - 1 - i) as f64 / fade as f64).min(1.0);
            out[pos + i] += cfg.amplitude * ramp * s;
        }
        spans.push((pos, pos + ph_len));
        pos += ph_len + gap;
    }
    let buf = AudioBuffer::new(out.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(), cfg.sample_rate)
        .expect("synthetic audio is finite");
    (buf, spans)
}

/// `n` random sequences of `min_len..=max_len` phonemes drawn from a shuffled
/// cycle of the whole alphabet, so every phoneme appears about equally often.
pub fn random_sequences(n: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<PhonemeSequence> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<Phoneme> = Vec::new();
    (0..n)
        .map(|_| {
            let len = rng.gen_range(min_len..=max_len);
            let symbols = (0..len)
                .map(|_| {
                    if pool.is_empty() {
                        pool = Phoneme::all().collect();
                        pool.shuffle(&mut rng);
                    }
                    pool.pop().unwrap()
                })
                .collect();
            PhonemeSequence::new(symbols)
        })
        .collect()
}

/// Synthetic corpus of rendered sequences.
pub fn corpus(n: usize, min_len: usize, max_len: usize, cfg: &SynthConfig, seed: u64) -> Vec<(AudioBuffer, PhonemeSequence)> {
    random_sequences(n, min_len, max_len, seed)
        .into_iter()
        .enumerate()
        .map(|(i, seq)| (render(&seq, cfg, seed.wrapping_mul(1000).wrapping_add(i as u64)).0, seq))
        .collect()
}
