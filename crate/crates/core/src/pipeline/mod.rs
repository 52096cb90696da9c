//! End-to-end orchestration: separate, featurize, recognize, segment, decode.
//!
//! The acoustic half (stages 1 and 2) is cached per audio and acoustic
//! settings, so changing decoder knobs only reruns word decoding.

mod cache;
mod config;
mod result;
mod segment;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{AcousticCache, CachedAcoustics, SegmentAcoustics};
pub use config::{
    ChannelOverrides, ConfigError, ModelPaths, PipelineConfig, DATA_DIR_ENV, DEFAULT_AM_FILE, DEFAULT_CHANNEL_FILE, DEFAULT_LEXICON_FILE,
    DEFAULT_LM_FILE,
};
pub use result::{CandidateResult, Fingerprints, LyricResult, SegmentResult};
pub use segment::{frame_rms, segment, SegmentationConfig, TimeSpan, RMS_FRAME_SECONDS};

use crate::audio::{self, AudioBuffer, WavError, WORKING_RATE};
use crate::channel::{ChannelError, ChannelParams};
use crate::container::ContainerError;
use crate::decoder::decode_words;
use crate::dsp::{featurize, DspError};
use crate::lexicon::{parse_lexicon, Lexicon, LexiconError};
use crate::lm::{LmError, NGramLM};
use crate::recognizer::{beam_decode, forward, AcousticModel, RecognizerError};
use crate::separator::{separate, SeparatorError};

pub const MIN_AUDIO_SECONDS: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("audio is {seconds:.3} s long; at least {min} s required")]
    AudioTooShort { seconds: f64, min: f64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Audio(#[from] audio::AudioError),
    #[error("{path}: {source}")]
    Model { path: PathBuf, source: ContainerError },
    #[error("{path}: {source}")]
    Lexicon { path: PathBuf, source: LexiconError },
    #[error("{path}: {source}")]
    Lm { path: PathBuf, source: LmError },
    #[error("{path}: {source}")]
    ChannelFile { path: PathBuf, source: ChannelError },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Separator(#[from] SeparatorError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Recognizer(#[from] RecognizerError),
    #[error("no cached acoustics for audio {audio_sha256} with these acoustic settings")]
    CacheMiss { audio_sha256: String },
}

/// Everything stage 2 and 3 need, plus content fingerprints.
#[derive(Clone, Debug)]
pub struct Models {
    pub acoustic: AcousticModel,
    pub lexicon: Lexicon,
    pub lm: NGramLM,
    pub channel: ChannelParams,
    pub fingerprints: Fingerprints,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

impl Models {
    /// Fingerprints hash each model's canonical serialization, so the same
    /// content gives the same fingerprint wherever it was loaded from.
    pub fn from_parts(acoustic: AcousticModel, lexicon: Lexicon, lm: NGramLM, channel: ChannelParams) -> Self {
        let fingerprints = Fingerprints {
            acoustic_model: sha256_hex(&acoustic.to_bytes()),
            lexicon: sha256_hex(lexicon.to_cmudict().as_bytes()),
            lm: sha256_hex(&lm.to_bytes()),
            channel: sha256_hex(channel.to_string().as_bytes()),
        };
        Self { acoustic, lexicon, lm, channel, fingerprints }
    }

    pub fn load(paths: &ModelPaths) -> Result<Self, PipelineError> {
        let am_path = paths.acoustic_model();
        let acoustic = AcousticModel::from_bytes(&read(&am_path)?).map_err(|source| PipelineError::Model { path: am_path, source })?;

        let lex_path = paths.lexicon();
        let text = String::from_utf8_lossy(&read(&lex_path)?).into_owned();
        let lexicon = parse_lexicon(&text).map_err(|source| PipelineError::Lexicon { path: lex_path.clone(), source })?;
        if lexicon.is_empty() {
            return Err(PipelineError::Lexicon { path: lex_path, source: LexiconError::Empty });
        }

        let lm_path = paths.lm();
        let lm = NGramLM::from_bytes(&read(&lm_path)?).map_err(|source| PipelineError::Lm { path: lm_path, source })?;

        let ch_path = paths.channel();
        let text = String::from_utf8_lossy(&read(&ch_path)?).into_owned();
        let channel: ChannelParams = text.parse().map_err(|source| PipelineError::ChannelFile { path: ch_path, source })?;

        Ok(Self::from_parts(acoustic, lexicon, lm, channel))
    }
}

/// Coarse progress markers for long-running jobs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Separating,
    Recognizing,
    Decoding,
}

/// Hash of decoded audio content: sample rate plus samples as f64 bits.
pub fn audio_fingerprint(buf: &AudioBuffer) -> String {
    let mut h = Sha256::new();
    h.update(buf.sample_rate().to_le_bytes());
    for s in buf.samples() {
        h.update(s.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub struct Pipeline {
    models: Arc<Models>,
    cache: Mutex<AcousticCache>,
}

pub const DEFAULT_CACHE_ENTRIES: usize = 64;

impl Pipeline {
    pub fn new(models: Models) -> Self {
        Self::with_cache_capacity(models, DEFAULT_CACHE_ENTRIES)
    }

    pub fn with_cache_capacity(models: Models, entries: usize) -> Self {
        Self { models: Arc::new(models), cache: Mutex::new(AcousticCache::new(entries)) }
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn imagine(&self, buf: &AudioBuffer, cfg: &PipelineConfig) -> Result<LyricResult, PipelineError> {
        self.imagine_with_progress(buf, cfg, |_| {})
    }

    pub fn imagine_with_progress(
        &self,
        buf: &AudioBuffer,
        cfg: &PipelineConfig,
        mut progress: impl FnMut(Stage),
    ) -> Result<LyricResult, PipelineError> {
        cfg.validate()?;
        let seconds = buf.duration_seconds();
        if seconds < MIN_AUDIO_SECONDS {
            return Err(PipelineError::AudioTooShort { seconds, min: MIN_AUDIO_SECONDS });
        }
        let audio_sha256 = audio_fingerprint(buf);
        let key = (audio_sha256.clone(), cfg.acoustic_hash(), self.models.fingerprints.acoustic_model.clone());
        let cached = self.cache.lock().expect("cache lock").get(&key);
        let acoustics = match cached {
            Some(hit) => hit,
            None => {
                let fresh = Arc::new(self.acoustics(buf, cfg, &audio_sha256, &mut progress)?);
                self.cache.lock().expect("cache lock").insert(key, fresh.clone());
                fresh
            }
        };
        progress(Stage::Decoding);
        self.decode_stage(&acoustics, cfg)
    }

    /// Decodes a WAV byte stream.
    pub fn imagine_wav(&self, bytes: &[u8], cfg: &PipelineConfig) -> Result<LyricResult, PipelineError> {
        let buf = audio::decode_wav(bytes)?;
        self.imagine(&buf, cfg)
    }

    /// Reruns word decoding only, using cached acoustics for `audio_sha256`.
    pub fn redecode(&self, audio_sha256: &str, cfg: &PipelineConfig) -> Result<LyricResult, PipelineError> {
        cfg.validate()?;
        let key = (audio_sha256.to_string(), cfg.acoustic_hash(), self.models.fingerprints.acoustic_model.clone());
        let acoustics = self
            .cache
            .lock()
            .expect("cache lock")
            .get(&key)
            .ok_or_else(|| PipelineError::CacheMiss { audio_sha256: audio_sha256.to_string() })?;
        self.decode_stage(&acoustics, cfg)
    }

    /// Cached acoustics, if present.
    pub fn cached(&self, audio_sha256: &str, cfg: &PipelineConfig) -> Option<Arc<CachedAcoustics>> {
        let key = (audio_sha256.to_string(), cfg.acoustic_hash(), self.models.fingerprints.acoustic_model.clone());
        self.cache.lock().expect("cache lock").get(&key)
    }

    fn acoustics(
        &self,
        buf: &AudioBuffer,
        cfg: &PipelineConfig,
        audio_sha256: &str,
        progress: &mut impl FnMut(Stage),
    ) -> Result<CachedAcoustics, PipelineError> {
        let working = audio::resample(buf, WORKING_RATE)?;
        let source = if cfg.use_separation {
            progress(Stage::Separating);
            separate(&working, &cfg.separator)?.foreground
        } else {
            working
        };
        progress(Stage::Recognizing);
        let features = featurize(&source, &cfg.features)?;
        let post = forward(&features, &self.models.acoustic.params)?;
        let hop = post.frame_hop_seconds();
        let frames = post.frames();
        let segments = segment(&source, &cfg.segmentation)
            .into_iter()
            .map(|span| {
                let start = ((span.start_s / hop).round() as usize).min(frames);
                let end = ((span.end_s / hop).round() as usize).clamp(start, frames);
                let best = beam_decode(&post.slice_frames(start, end), cfg.phoneme_beam).into_iter().next();
                let (phonemes, log_prob) = best.unwrap_or_default();
                SegmentAcoustics { span, frames: (start, end), phonemes, phoneme_log_prob: log_prob }
            })
            .collect();
        Ok(CachedAcoustics { audio_sha256: audio_sha256.to_string(), duration_s: buf.duration_seconds(), posteriorgram: post, segments })
    }

    fn decode_stage(&self, acoustics: &CachedAcoustics, cfg: &PipelineConfig) -> Result<LyricResult, PipelineError> {
        let m = &*self.models;
        let channel = cfg.channel.apply(&m.channel)?;
        let decode_one = |seg: &SegmentAcoustics| -> SegmentResult {
            let decoded = decode_words(&seg.phonemes, &m.lexicon, &m.lm, &channel, &cfg.decoder);
            let (candidates, error) = match decoded {
                Ok(c) => (c.into_iter().map(CandidateResult::from).collect(), None),
                Err(e) => (Vec::new(), Some(e.to_string())),
            };
            SegmentResult {
                start_s: seg.span.start_s,
                end_s: seg.span.end_s,
                phonemes: seg.phonemes.to_symbols(),
                phoneme_log_prob: seg.phoneme_log_prob,
                candidates,
                error,
            }
        };

        // segments decode independently; results are collected in order
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(acoustics.segments.len()).max(1);
        let segments: Vec<SegmentResult> = if threads == 1 {
            acoustics.segments.iter().map(decode_one).collect()
        } else {
            let chunk = acoustics.segments.len().div_ceil(threads);
            std::thread::scope(|scope| {
                let handles: Vec<_> = acoustics
                    .segments
                    .chunks(chunk)
                    .map(|part| scope.spawn(move || part.iter().map(decode_one).collect::<Vec<_>>()))
                    .collect();
                handles.into_iter().flat_map(|h| h.join().expect("decode worker panicked")).collect()
            })
        };

        Ok(LyricResult {
            audio_sha256: acoustics.audio_sha256.clone(),
            duration_s: acoustics.duration_s,
            seed: cfg.seed,
            config_hash: cfg.config_hash(),
            config: cfg.echo(),
            fingerprints: m.fingerprints.clone(),
            segments,
        })
    }
}
