use std::path::PathBuf;
use std::time::Instant;

use imly::audio::{encode_wav, AudioBuffer, WORKING_RATE};
use imly::channel::channel_viterbi;
use imly::decoder::{decode_words, DecoderConfig};
use imly::pipeline::{Models, ModelPaths, Pipeline, PipelineConfig, PipelineError};
use imly::recognizer::synth::{render, SynthConfig};
use imly::recognizer::PhonemeSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn bundled_paths() -> ModelPaths {
    ModelPaths { data_dir: Some(data_dir()), ..Default::default() }
}

fn pipeline() -> Pipeline {
    Pipeline::new(Models::load(&bundled_paths()).expect("bundled models load"))
}

/// Two phrases of phoneme-coded audio separated by silence.
fn two_phrases() -> AudioBuffer {
    let cfg = SynthConfig::default();
    let a = render(&PhonemeSequence::parse("N AY T R EY N").unwrap(), &cfg, 1).0;
    let b = render(&PhonemeSequence::parse("G OW L D AH N F AY ER").unwrap(), &cfg, 2).0;
    let mut x = a.into_samples();
    x.extend(vec![0.0; WORKING_RATE as usize]);
    x.extend(b.into_samples());
    AudioBuffer::new(x, WORKING_RATE).unwrap()
}

/// The synthetic phrases are built from steady repeated tones, which
/// separation treats as background, so most tests recognize the mix.
fn mix() -> PipelineConfig {
    PipelineConfig { use_separation: false, ..Default::default() }
}

fn white_noise(seconds: f64, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * WORKING_RATE as f64) as usize;
    AudioBuffer::new((0..n).map(|_| rng.gen_range(-0.3..0.3)).collect(), WORKING_RATE).unwrap()
}

#[test]
fn imagine_is_byte_identical_across_instances() {
    let cfg = PipelineConfig { seed: 7, ..Default::default() };
    let wav = encode_wav(&two_phrases());
    let a = pipeline().imagine_wav(&wav, &cfg).unwrap().to_json();
    let b = pipeline().imagine_wav(&wav, &cfg).unwrap().to_json();
    assert_eq!(a, b);
}

#[test]
fn result_structure() {
    let p = pipeline();
    let r = p.imagine(&two_phrases(), &mix()).unwrap();
    assert_eq!(r.segments.len(), 2, "{:?}", r.segments.iter().map(|s| (s.start_s, s.end_s)).collect::<Vec<_>>());
    for w in r.segments.windows(2) {
        assert!(w[0].end_s <= w[1].start_s);
    }
    for s in &r.segments {
        assert!(s.start_s < s.end_s);
        assert!(s.error.is_none());
        assert!(!s.phonemes.is_empty());
        assert!(!s.candidates.is_empty());
        for w in s.candidates.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }
    // the toy model recognizes its own training code well enough to recover the words
    assert_eq!(r.top_lines(), vec!["night rain", "golden fire"]);
    assert_eq!(r.fingerprints, p.models().fingerprints);
    assert_eq!(r.config_hash.len(), 64);

    // field names are part of the interface
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    for key in ["segments", "config_hash", "seed", "fingerprints", "audio_sha256"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let seg = &v["segments"][0];
    for key in ["start_s", "end_s", "phonemes", "candidates"] {
        assert!(seg.get(key).is_some(), "missing {key}");
    }
    for key in ["text", "score", "phonemes"] {
        assert!(seg["candidates"][0].get(key).is_some(), "missing {key}");
    }
}

#[test]
fn redecode_with_original_settings_reproduces_result() {
    let p = pipeline();
    let cfg = PipelineConfig::default();
    let first = p.imagine(&two_phrases(), &cfg).unwrap();
    let again = p.redecode(&first.audio_sha256, &cfg).unwrap();
    assert_eq!(first.to_json(), again.to_json());
}

#[test]
fn zero_lm_weight_ranks_by_channel_alone() {
    let p = pipeline();
    let base = mix();
    let first = p.imagine(&two_phrases(), &base).unwrap();
    let cfg = PipelineConfig { decoder: DecoderConfig { lm_weight: 0.0, ..base.decoder.clone() }, ..base };
    let r = p.redecode(&first.audio_sha256, &cfg).unwrap();
    let m = p.models();
    for seg in &r.segments {
        let observed = PhonemeSequence::parse(&seg.phonemes.join(" ")).unwrap();
        let direct = decode_words(&observed, &m.lexicon, &m.lm, &m.channel, &cfg.decoder).unwrap();
        assert_eq!(direct.len(), seg.candidates.len());
        for (d, c) in direct.iter().zip(&seg.candidates) {
            assert_eq!(d.words.join(" "), c.text);
            assert_eq!(d.score, c.score);
            // with no LM and no word penalty the score is the best channel path
            let canonical = PhonemeSequence::parse(&c.phonemes.join(" ")).unwrap();
            let channel = channel_viterbi(&observed, &canonical, &m.channel, cfg.decoder.max_insertions_per_gap);
            assert!((channel - c.score).abs() < 1e-9, "{channel} vs {}", c.score);
        }
    }
}

#[test]
fn wider_beam_never_lowers_top_score() {
    let p = pipeline();
    let first = p.imagine(&two_phrases(), &mix()).unwrap();
    let mut previous: Option<Vec<f64>> = None;
    for width in [1, 4, 16, 64] {
        let mut cfg = mix();
        cfg.decoder.beam_width = width;
        let r = p.redecode(&first.audio_sha256, &cfg).unwrap();
        let tops: Vec<f64> = r.segments.iter().map(|s| s.candidates[0].score).collect();
        if let Some(prev) = &previous {
            for (a, b) in prev.iter().zip(&tops) {
                assert!(b >= a, "width {width}: {b} < {a}");
            }
        }
        previous = Some(tops);
    }
}

#[test]
fn redecode_needs_cached_acoustics() {
    let p = pipeline();
    let cfg = PipelineConfig::default();
    assert!(matches!(p.redecode(&"0".repeat(64), &cfg), Err(PipelineError::CacheMiss { .. })));

    let first = p.imagine(&two_phrases(), &cfg).unwrap();
    // acoustic settings are part of the cache key
    let other = PipelineConfig { use_separation: false, ..cfg.clone() };
    assert!(matches!(p.redecode(&first.audio_sha256, &other), Err(PipelineError::CacheMiss { .. })));
    // decoder and channel settings are not
    let mut knobs = cfg;
    knobs.decoder.word_insertion_penalty = -1.0;
    knobs.channel.p_sub = Some(0.3);
    assert!(p.redecode(&first.audio_sha256, &knobs).is_ok());
}

#[test]
fn cache_evicts_oldest_audio() {
    let p = Pipeline::with_cache_capacity(Models::load(&bundled_paths()).unwrap(), 1);
    let cfg = mix();
    let a = p.imagine(&white_noise(1.0, 1), &cfg).unwrap();
    let b = p.imagine(&white_noise(1.0, 2), &cfg).unwrap();
    assert!(p.redecode(&b.audio_sha256, &cfg).is_ok());
    assert!(matches!(p.redecode(&a.audio_sha256, &cfg), Err(PipelineError::CacheMiss { .. })));
}

#[test]
fn short_audio_is_rejected() {
    let err = pipeline().imagine(&white_noise(0.3, 1), &PipelineConfig::default()).unwrap_err();
    assert!(matches!(err, PipelineError::AudioTooShort { .. }), "{err}");
}

#[test]
fn silence_gives_no_segments() {
    let r = pipeline().imagine(&AudioBuffer::silence(WORKING_RATE as usize * 2, WORKING_RATE), &PipelineConfig::default()).unwrap();
    assert!(r.segments.is_empty());
}

#[test]
fn missing_model_file_is_reported() {
    let paths = ModelPaths { lm: Some(data_dir().join("does-not-exist.imly")), ..bundled_paths() };
    match Models::load(&paths) {
        Err(PipelineError::Io { path, .. }) => assert!(path.ends_with("does-not-exist.imly")),
        other => panic!("expected Io error, got {other:?}"),
    }
}

#[test]
fn white_noise_is_transcribed_and_decoded() {
    let p = pipeline();
    for seed in 0..3 {
        let r = p.imagine(&white_noise(3.0, seed), &PipelineConfig::default()).unwrap();
        assert!(!r.segments.is_empty());
        assert!(r.segments.iter().any(|s| !s.phonemes.is_empty() && !s.candidates.is_empty()));
        assert!(r.segments.iter().all(|s| s.error.is_none()));
    }
}

#[test]
fn fingerprints_follow_content_not_path() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["am.imly", "lexicon.dict", "lm.imly", "channel.txt"] {
        std::fs::copy(data_dir().join(f), dir.path().join(f)).unwrap();
    }
    let a = Models::load(&bundled_paths()).unwrap().fingerprints;
    let b = Models::load(&ModelPaths { data_dir: Some(dir.path().into()), ..Default::default() }).unwrap().fingerprints;
    assert_eq!(a, b);
}

#[test]
fn redecode_latency_on_ten_seconds() {
    let p = pipeline();
    // ~10 s of continuous phoneme-coded audio, one segment at the length limit
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seq = PhonemeSequence::from_indices(&(0..70).map(|_| rng.gen_range(1..=39)).collect::<Vec<_>>()).unwrap();
    let audio = render(&seq, &SynthConfig::default(), 9).0;
    assert!(audio.duration_seconds() <= 10.5);
    let cfg = mix();
    let first = p.imagine(&audio, &cfg).unwrap();
    let mut knobs = cfg.clone();
    knobs.decoder.lm_weight = 2.0;
    // warm-up, then the best of three
    p.redecode(&first.audio_sha256, &knobs).unwrap();
    let best = (0..3)
        .map(|_| {
            let t = Instant::now();
            p.redecode(&first.audio_sha256, &knobs).unwrap();
            t.elapsed()
        })
        .min()
        .unwrap();
    let phonemes: usize = first.segments.iter().map(|s| s.phonemes.len()).sum();
    eprintln!("redecode of {phonemes} phonemes: {best:?}");
    assert!(best.as_millis() < 200, "{best:?}");
}
