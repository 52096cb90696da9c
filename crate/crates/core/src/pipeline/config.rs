//! Pipeline configuration and its `key=value` text form.
//!
//! The same keys are accepted from config files, CLI flags and the service's
//! JSON `config` part, so every front end shares one source of truth.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::ChannelParams;
use crate::decoder::DecoderConfig;
use crate::dsp::FeatureConfig;
use crate::separator::SeparatorConfig;

use super::segment::SegmentationConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Explicit model file locations. Unset entries resolve inside the data directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelPaths {
    pub data_dir: Option<PathBuf>,
    pub acoustic_model: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub channel: Option<PathBuf>,
}

pub const DATA_DIR_ENV: &str = "IMLY_DATA_DIR";
pub const DEFAULT_AM_FILE: &str = "am.imly";
pub const DEFAULT_LEXICON_FILE: &str = "lexicon.dict";
pub const DEFAULT_LM_FILE: &str = "lm.imly";
pub const DEFAULT_CHANNEL_FILE: &str = "channel.txt";

impl ModelPaths {
    /// Data directory: explicit setting, then `$IMLY_DATA_DIR`, then `./data`.
    pub fn data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    fn resolve(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.data_dir().join(default))
    }

    pub fn acoustic_model(&self) -> PathBuf {
        self.resolve(&self.acoustic_model, DEFAULT_AM_FILE)
    }

    pub fn lexicon(&self) -> PathBuf {
        self.resolve(&self.lexicon, DEFAULT_LEXICON_FILE)
    }

    pub fn lm(&self) -> PathBuf {
        self.resolve(&self.lm, DEFAULT_LM_FILE)
    }

    pub fn channel(&self) -> PathBuf {
        self.resolve(&self.channel, DEFAULT_CHANNEL_FILE)
    }
}

/// Rate overrides applied on top of the loaded channel file.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ChannelOverrides {
    pub p_sub: Option<f64>,
    pub p_del: Option<f64>,
    pub p_ins: Option<f64>,
}

impl ChannelOverrides {
    pub fn is_empty(&self) -> bool {
        self.p_sub.is_none() && self.p_del.is_none() && self.p_ins.is_none()
    }

    pub fn apply(&self, base: &ChannelParams) -> Result<ChannelParams, crate::channel::ChannelError> {
        ChannelParams::new(self.p_sub.unwrap_or(base.p_sub), self.p_del.unwrap_or(base.p_del), self.p_ins.unwrap_or(base.p_ins))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub separator: SeparatorConfig,
    /// Feed the separated foreground to the recognizer (otherwise the mix).
    pub use_separation: bool,
    pub features: FeatureConfig,
    /// Width of the CTC prefix beam used to pick each segment's phonemes.
    pub phoneme_beam: usize,
    pub segmentation: SegmentationConfig,
    pub decoder: DecoderConfig,
    pub channel: ChannelOverrides,
    pub paths: ModelPaths,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            separator: SeparatorConfig::default(),
            use_separation: true,
            features: FeatureConfig::default(),
            phoneme_beam: 16,
            segmentation: SegmentationConfig::default(),
            decoder: DecoderConfig::default(),
            channel: ChannelOverrides::default(),
            paths: ModelPaths::default(),
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue { key: key.into(), value: value.into(), reason: e.to_string() })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::BadValue { key: key.into(), value: value.into(), reason: "expected true or false".into() }),
    }
}

/// Keys that change the recognizer output (and therefore the cache entry).
const ACOUSTIC_KEYS: &[&str] = &[
    "use_separation",
    "k_neighbors",
    "min_spacing_seconds",
    "mask_exponent",
    "separator_n_fft",
    "separator_hop",
    "max_duration_seconds",
    "feature_n_fft",
    "feature_hop",
    "n_mels",
    "fmin",
    "fmax",
    "phoneme_beam",
    "rms_threshold_factor",
    "min_gap",
    "min_segment",
    "max_segment",
];

impl PipelineConfig {
    /// Sets one key. Values are trimmed; path keys take any string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let opt_f64 = |v: &str| -> Result<Option<f64>, ConfigError> {
            if v.is_empty() || v == "none" {
                Ok(None)
            } else {
                parse(key, v).map(Some)
            }
        };
        match key.trim() {
            "use_separation" => self.use_separation = parse_bool(key, value)?,
            "k_neighbors" => self.separator.k_neighbors = parse(key, value)?,
            "min_spacing_seconds" => self.separator.min_spacing_seconds = parse(key, value)?,
            "mask_exponent" => self.separator.mask_exponent = parse(key, value)?,
            "separator_n_fft" => self.separator.stft.n_fft = parse(key, value)?,
            "separator_hop" => self.separator.stft.hop = parse(key, value)?,
            "max_duration_seconds" => self.separator.max_duration_seconds = parse(key, value)?,
            "feature_n_fft" => self.features.stft.n_fft = parse(key, value)?,
            "feature_hop" => self.features.stft.hop = parse(key, value)?,
            "n_mels" => self.features.n_mels = parse(key, value)?,
            "fmin" => self.features.fmin = parse(key, value)?,
            "fmax" => self.features.fmax = parse(key, value)?,
            "phoneme_beam" => self.phoneme_beam = parse(key, value)?,
            "rms_threshold_factor" => self.segmentation.rms_threshold_factor = parse(key, value)?,
            "min_gap" => self.segmentation.min_gap_seconds = parse(key, value)?,
            "min_segment" => self.segmentation.min_segment_seconds = parse(key, value)?,
            "max_segment" => self.segmentation.max_segment_seconds = parse(key, value)?,
            "beam_width" => self.decoder.beam_width = parse(key, value)?,
            "lm_weight" => self.decoder.lm_weight = parse(key, value)?,
            "word_penalty" => self.decoder.word_insertion_penalty = parse(key, value)?,
            "n_best" => self.decoder.n_best = parse(key, value)?,
            "max_insertions_per_gap" => self.decoder.max_insertions_per_gap = parse(key, value)?,
            "max_extra_phonemes" => self.decoder.max_extra_phonemes = parse(key, value)?,
            "p_sub" => self.channel.p_sub = opt_f64(value)?,
            "p_del" => self.channel.p_del = opt_f64(value)?,
            "p_ins" => self.channel.p_ins = opt_f64(value)?,
            "seed" => self.seed = parse(key, value)?,
            "data_dir" => self.paths.data_dir = Some(value.into()),
            "am" => self.paths.acoustic_model = Some(value.into()),
            "lexicon" => self.paths.lexicon = Some(value.into()),
            "lm" => self.paths.lm = Some(value.into()),
            "channel" => self.paths.channel = Some(value.into()),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies a `key=value` file; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.separator.validate().or_else(|e| invalid(e.to_string()))?;
        self.features.stft.validate().or_else(|e| invalid(e.to_string()))?;
        self.decoder.validate().or_else(|e| invalid(e.to_string()))?;
        self.segmentation.validate()?;
        if self.phoneme_beam == 0 {
            return invalid("phoneme_beam must be at least 1".into());
        }
        if self.features.n_mels == 0 || !(self.features.fmin >= 0.0) || !(self.features.fmax > self.features.fmin) {
            return invalid("feature band must satisfy 0 <= fmin < fmax and n_mels >= 1".into());
        }
        Ok(())
    }

    /// Every output-affecting setting as sorted `key → value` strings.
    /// Paths are left out so that results are comparable across machines;
    /// model identity is carried by content fingerprints instead.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        let s = &self.separator;
        let f = &self.features;
        let g = &self.segmentation;
        let d = &self.decoder;
        [
            ("use_separation", self.use_separation.to_string()),
            ("k_neighbors", s.k_neighbors.to_string()),
            ("min_spacing_seconds", s.min_spacing_seconds.to_string()),
            ("mask_exponent", s.mask_exponent.to_string()),
            ("separator_n_fft", s.stft.n_fft.to_string()),
            ("separator_hop", s.stft.hop.to_string()),
            ("max_duration_seconds", s.max_duration_seconds.to_string()),
            ("feature_n_fft", f.stft.n_fft.to_string()),
            ("feature_hop", f.stft.hop.to_string()),
            ("n_mels", f.n_mels.to_string()),
            ("fmin", f.fmin.to_string()),
            ("fmax", f.fmax.to_string()),
            ("phoneme_beam", self.phoneme_beam.to_string()),
            ("rms_threshold_factor", g.rms_threshold_factor.to_string()),
            ("min_gap", g.min_gap_seconds.to_string()),
            ("min_segment", g.min_segment_seconds.to_string()),
            ("max_segment", g.max_segment_seconds.to_string()),
            ("beam_width", d.beam_width.to_string()),
            ("lm_weight", d.lm_weight.to_string()),
            ("word_penalty", d.word_insertion_penalty.to_string()),
            ("n_best", d.n_best.to_string()),
            ("max_insertions_per_gap", d.max_insertions_per_gap.to_string()),
            ("max_extra_phonemes", d.max_extra_phonemes.to_string()),
            ("p_sub", opt(self.channel.p_sub)),
            ("p_del", opt(self.channel.p_del)),
            ("p_ins", opt(self.channel.p_ins)),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Hash of the full echo.
    pub fn config_hash(&self) -> String {
        hash_pairs(self.echo().iter())
    }

    /// Hash of the settings that influence stages 1 and 2 only.
    pub fn acoustic_hash(&self) -> String {
        hash_pairs(self.echo().iter().filter(|(k, _)| ACOUSTIC_KEYS.contains(&k.as_str())))
    }
}

fn hash_pairs<'a>(pairs: impl Iterator<Item = (&'a String, &'a String)>) -> String {
    let mut h = Sha256::new();
    for (k, v) in pairs {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}
