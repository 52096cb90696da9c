//! Independent reference implementations shared by the integration tests.
#![allow(clippy::too_many_arguments)]
#![allow(dead_code)]

use imly::channel::{channel_viterbi, ChannelParams};
use imly::lexicon::Lexicon;
use imly::lm::NGramLM;
use imly::recognizer::{Phoneme, PhonemeSequence};

pub fn seq(s: &str) -> PhonemeSequence {
    PhonemeSequence::parse(s).unwrap()
}

/// Walks every explicit edit script (insert counts per gap, then keep /
/// substitute / delete per canonical symbol) that produces `obs`, and folds
/// the path probabilities with `fold` (sum or max). Probability domain.
pub fn brute_channel(obs: &[Phoneme], can: &[Phoneme], ch: &ChannelParams, cap: usize, fold: fn(f64, f64) -> f64) -> f64 {
    fn gap(obs: &[Phoneme], can: &[Phoneme], ch: &ChannelParams, cap: usize, i: usize, j: usize, w: f64, fold: fn(f64, f64) -> f64, acc: &mut f64) {
        for k in 0..=cap {
            if j + k > obs.len() {
                break;
            }
            // each inserted symbol: coin success and a 1/39 pick
            let mut wk = w * (ch.p_ins / 39.0).powi(k as i32);
            if k < cap {
                wk *= 1.0 - ch.p_ins;
            }
            if wk == 0.0 {
                continue;
            }
            symbol(obs, can, ch, cap, i, j + k, wk, fold, acc);
        }
    }
    fn symbol(obs: &[Phoneme], can: &[Phoneme], ch: &ChannelParams, cap: usize, i: usize, j: usize, w: f64, fold: fn(f64, f64) -> f64, acc: &mut f64) {
        if i == can.len() {
            if j == obs.len() {
                *acc = fold(*acc, w);
            }
            return;
        }
        if j < obs.len() {
            if obs[j] == can[i] {
                gap(obs, can, ch, cap, i + 1, j + 1, w * ch.p_match, fold, acc);
            } else {
                gap(obs, can, ch, cap, i + 1, j + 1, w * ch.p_sub / 38.0, fold, acc);
            }
        }
        gap(obs, can, ch, cap, i + 1, j, w * ch.p_del, fold, acc);
    }
    let mut acc = 0.0;
    gap(obs, can, ch, cap, 0, 0, 1.0, fold, &mut acc);
    acc
}

pub fn sum(a: f64, b: f64) -> f64 {
    a + b
}

pub fn max(a: f64, b: f64) -> f64 {
    a.max(b)
}

#[derive(Clone, Debug)]
pub struct OracleBest {
    pub words: Vec<String>,
    pub score: f64,
}

/// Score of one word sequence: best pronunciation choice, best edit path,
/// plus weighted LM score and per-word penalty.
pub fn sequence_score(
    obs: &PhonemeSequence,
    words: &[&str],
    lex: &Lexicon,
    lm: &NGramLM,
    ch: &ChannelParams,
    lm_weight: f64,
    penalty: f64,
    cap: usize,
    max_len: usize,
) -> f64 {
    let mut prons: Vec<Vec<Phoneme>> = vec![Vec::new()];
    for w in words {
        let options = lex.pronunciations(w).unwrap();
        prons = prons
            .iter()
            .flat_map(|p| options.iter().map(move |o| p.iter().chain(&o.symbols).copied().collect::<Vec<_>>()))
            .collect();
    }
    let channel = prons
        .into_iter()
        .filter(|p| p.len() <= max_len)
        .map(|p| channel_viterbi(obs, &PhonemeSequence::new(p), ch, cap))
        .fold(f64::NEG_INFINITY, f64::max);
    let lm_part = if lm_weight == 0.0 { 0.0 } else { lm_weight * lm.score(words) };
    channel + lm_part + penalty * words.len() as f64
}

/// Enumerates every word sequence whose shortest pronunciation fits within
/// `max_len` canonical phonemes and returns the best-scoring one (ties go to
/// the lexicographically smaller sequence).
pub fn exhaustive_decode(
    obs: &PhonemeSequence,
    lex: &Lexicon,
    lm: &NGramLM,
    ch: &ChannelParams,
    lm_weight: f64,
    penalty: f64,
    cap: usize,
    max_len: usize,
) -> OracleBest {
    let mut vocab: Vec<(String, usize)> =
        lex.words().map(|w| (w.to_string(), lex.pronunciations(w).unwrap().iter().map(|p| p.len()).min().unwrap())).collect();
    vocab.sort();
    let mut best = OracleBest { words: Vec::new(), score: f64::NEG_INFINITY };
    let mut stack: Vec<(Vec<usize>, usize)> = vec![(Vec::new(), 0)];
    while let Some((ids, len)) = stack.pop() {
        let words: Vec<&str> = ids.iter().map(|&i| vocab[i].0.as_str()).collect();
        let score = sequence_score(obs, &words, lex, lm, ch, lm_weight, penalty, cap, max_len);
        let words_owned: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        if score > best.score || (score == best.score && words_owned < best.words) {
            best = OracleBest { words: words_owned, score };
        }
        for (i, (_, l)) in vocab.iter().enumerate() {
            if len + l <= max_len {
                let mut next = ids.clone();
                next.push(i);
                stack.push((next, len + l));
            }
        }
    }
    best
}

/// Random single-pronunciation lexicon over the first `alphabet` phonemes,
/// with words named by their index.
pub fn random_lexicon(rng: &mut impl rand::Rng, words: usize, alphabet: usize, min_len: usize, max_len: usize) -> Lexicon {
    let mut lex = Lexicon::default();
    for w in 0..words {
        let len = rng.gen_range(min_len..=max_len);
        let pron: Vec<usize> = (0..len).map(|_| rng.gen_range(1..=alphabet)).collect();
        lex.insert(&format!("w{w:02}"), PhonemeSequence::from_indices(&pron).unwrap());
    }
    lex
}

/// Bigram/trigram LM over random lines drawn from the lexicon's words.
pub fn random_lm(rng: &mut impl rand::Rng, lex: &Lexicon, order: usize) -> NGramLM {
    let words: Vec<&str> = lex.words().collect();
    let lines: Vec<String> = (0..20)
        .map(|_| (0..rng.gen_range(1..=4)).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" "))
        .collect();
    imly::lm::train_ngram(&lines, order, 0.1).unwrap()
}

pub fn random_channel(rng: &mut impl rand::Rng) -> ChannelParams {
    let p_sub = rng.gen_range(0.02..0.3);
    let p_del = rng.gen_range(0.02..0.2);
    let p_ins = rng.gen_range(0.0..0.2);
    ChannelParams::new(p_sub, p_del, p_ins).unwrap()
}
