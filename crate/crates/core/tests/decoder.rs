mod common;

use common::{exhaustive_decode, random_channel, random_lexicon, random_lm, sequence_score};
use imly::channel::{corrupt, ChannelParams};
use imly::decoder::{decode_words, DecoderConfig};
use imly::recognizer::PhonemeSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_observed(rng: &mut ChaCha8Rng, alphabet: usize, max_len: usize) -> PhonemeSequence {
    let len = rng.gen_range(0..=max_len);
    PhonemeSequence::from_indices(&(0..len).map(|_| rng.gen_range(1..=alphabet)).collect::<Vec<_>>()).unwrap()
}

#[test]
fn top1_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..100 {
        let n = rng.gen_range(2..=15);
        let lex = random_lexicon(&mut rng, n, 6, 2, 4);
        let order = rng.gen_range(2..=3);
        let lm = random_lm(&mut rng, &lex, order);
        let ch = random_channel(&mut rng);
        let obs = random_observed(&mut rng, 6, 8);
        let cfg = DecoderConfig {
            beam_width: 1_000_000,
            lm_weight: [0.0, 0.5, 1.0, 2.0][rng.gen_range(0..4)],
            word_insertion_penalty: rng.gen_range(-1.0..1.0),
            ..Default::default()
        };
        let oracle = exhaustive_decode(&obs, &lex, &lm, &ch, cfg.lm_weight, cfg.word_insertion_penalty, 2, obs.len() + 4);
        let got = decode_words(&obs, &lex, &lm, &ch, &cfg).unwrap();
        assert!((got[0].score - oracle.score).abs() < 1e-9, "case {case}: {} vs {}", got[0].score, oracle.score);
        if got[0].words != oracle.words {
            // only acceptable as a tie up to summation rounding
            let words: Vec<&str> = got[0].words.iter().map(String::as_str).collect();
            let rescored = sequence_score(&obs, &words, &lex, &lm, &ch, cfg.lm_weight, cfg.word_insertion_penalty, 2, obs.len() + 4);
            assert!((rescored - oracle.score).abs() < 1e-9, "case {case}: {:?} vs {:?}", got[0].words, oracle.words);
        }
    }
}

#[test]
fn returned_scores_recompute_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let lex = random_lexicon(&mut rng, 8, 8, 1, 4);
        let lm = random_lm(&mut rng, &lex, 3);
        let ch = random_channel(&mut rng);
        let obs = random_observed(&mut rng, 8, 10);
        let cfg = DecoderConfig { lm_weight: 0.7, word_insertion_penalty: -0.3, ..Default::default() };
        for cand in decode_words(&obs, &lex, &lm, &ch, &cfg).unwrap() {
            let words: Vec<&str> = cand.words.iter().map(String::as_str).collect();
            let channel = imly::channel::channel_viterbi(&obs, &cand.canonical, &ch, 2);
            let expected = channel + 0.7 * lm.score(&words) - 0.3 * words.len() as f64;
            assert!((cand.score - expected).abs() < 1e-9);
            // no other pronunciation choice does better
            let best = sequence_score(&obs, &words, &lex, &lm, &ch, 0.7, -0.3, 2, obs.len() + 4);
            assert!((cand.score - best).abs() < 1e-9);
        }
    }
}

#[test]
fn nbest_sorted_and_distinct() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let lex = random_lexicon(&mut rng, 10, 8, 1, 4);
        let lm = random_lm(&mut rng, &lex, 2);
        let obs = random_observed(&mut rng, 8, 8);
        let cfg = DecoderConfig { n_best: 10, ..Default::default() };
        let out = decode_words(&obs, &lex, &lm, &ChannelParams::default(), &cfg).unwrap();
        assert!(!out.is_empty() && out.len() <= 10);
        for w in out.windows(2) {
            assert!(w[0].score >= w[1].score);
            assert_ne!(w[0].words, w[1].words);
        }
    }
}

#[test]
fn deterministic_across_calls() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let lex = random_lexicon(&mut rng, 12, 10, 1, 4);
    let lm = random_lm(&mut rng, &lex, 3);
    let obs = random_observed(&mut rng, 10, 12);
    let cfg = DecoderConfig::default();
    let a = decode_words(&obs, &lex, &lm, &ChannelParams::default(), &cfg).unwrap();
    let b = decode_words(&obs, &lex, &lm, &ChannelParams::default(), &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn beam_widening_never_hurts_top1() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..100 {
        let n = rng.gen_range(2..=15);
        let lex = random_lexicon(&mut rng, n, 6, 1, 4);
        let lm = random_lm(&mut rng, &lex, 2);
        let ch = random_channel(&mut rng);
        let obs = random_observed(&mut rng, 6, 8);
        let mut last = f64::NEG_INFINITY;
        for width in [1, 4, 16, 64] {
            let cfg = DecoderConfig { beam_width: width, ..Default::default() };
            let top = decode_words(&obs, &lex, &lm, &ch, &cfg).unwrap().first().map_or(f64::NEG_INFINITY, |c| c.score);
            assert!(top >= last, "case {case} width {width}: {top} < {last}");
            last = top;
        }
    }
}

#[test]
fn closed_loop_recall() {
    let lex = imly::lexicon::parse_lexicon(
        "RAIN  R EY1 N\nNIGHT  N AY1 T\nHEART  HH AA1 R T\nFIRE  F AY1 ER0\nDREAM  D R IY1 M\n\
         LIGHT  L AY1 T\nSTONE  S T OW1 N\nRIVER  R IH1 V ER0\nSHADOW  SH AE1 D OW0\nGOLDEN  G OW1 L D AH0 N\n",
    )
    .unwrap();
    let words: Vec<&str> = lex.words().collect();
    let lm = imly::lm::train_ngram(&words, 2, 0.1).unwrap();
    let ch = ChannelParams::new(0.1, 0.05, 0.05).unwrap();
    let mut hits = 0;
    for trial in 0..200u64 {
        let w = words[trial as usize % words.len()];
        let src = &lex.pronunciations(w).unwrap()[0];
        let obs = corrupt(src, &ch, 2, trial);
        let out = decode_words(&obs, &lex, &lm, &ch, &DecoderConfig::default()).unwrap();
        if out.iter().take(5).any(|c| c.words == [w]) {
            hits += 1;
        }
    }
    assert!(hits >= 180, "recall {hits}/200");
}
