mod common;

use common::{brute_channel, max, random_channel, seq, sum};
use imly::channel::{channel_logprob, channel_viterbi, corrupt, estimate_channel, ChannelParams, RATE_FLOOR};
use imly::recognizer::{Phoneme, PhonemeSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all_sequences(alphabet: &[Phoneme], max_len: usize) -> Vec<Vec<Phoneme>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s: &Vec<Phoneme>| alphabet.iter().map(move |&p| s.iter().copied().chain([p]).collect::<Vec<_>>()))
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

#[test]
fn dp_matches_path_enumeration_on_short_pairs() {
    let alphabet: Vec<Phoneme> = ["S", "AH", "N"].iter().map(|s| s.parse().unwrap()).collect();
    let seqs = all_sequences(&alphabet, 3);
    let ch = ChannelParams::new(0.2, 0.15, 0.3).unwrap();
    let mut worst: f64 = 0.0;
    for can in &seqs {
        for obs in &seqs {
            let (o, c) = (PhonemeSequence::new(obs.clone()), PhonemeSequence::new(can.clone()));
            let p = channel_logprob(&o, &c, &ch, 2).exp();
            let v = channel_viterbi(&o, &c, &ch, 2).exp();
            worst = worst.max((p - brute_channel(obs, can, &ch, 2, sum)).abs());
            worst = worst.max((v - brute_channel(obs, can, &ch, 2, max)).abs());
        }
    }
    assert!(worst < 1e-12, "worst abs diff {worst}");
}

#[test]
fn logprob_never_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let ch = random_channel(&mut rng);
        let a = PhonemeSequence::from_indices(&(0..rng.gen_range(0..7)).map(|_| rng.gen_range(1..=39)).collect::<Vec<_>>()).unwrap();
        let b = PhonemeSequence::from_indices(&(0..rng.gen_range(0..7)).map(|_| rng.gen_range(1..=39)).collect::<Vec<_>>()).unwrap();
        assert!(channel_logprob(&a, &b, &ch, 2) <= 0.0);
    }
}

#[test]
fn mass_over_bounded_outputs_approaches_one() {
    // canonical [S, AH]; observed sequences of length <= 6 over {S, AH, OTHER},
    // where OTHER stands for each of the 37 remaining phonemes
    let s: Phoneme = "S".parse().unwrap();
    let ah: Phoneme = "AH".parse().unwrap();
    let other: Phoneme = "N".parse().unwrap();
    let can = PhonemeSequence::new(vec![s, ah]);
    let ch = ChannelParams::default();
    let mut total = 0.0;
    for obs in all_sequences(&[s, ah, other], 6) {
        let others = obs.iter().filter(|&&p| p == other).count();
        let mult = 37f64.powi(others as i32);
        total += mult * channel_logprob(&PhonemeSequence::new(obs), &can, &ch, 2).exp();
    }
    assert!((0.99..=1.0 + 1e-9).contains(&total), "{total}");
}

#[test]
fn substitution_rate_monte_carlo() {
    let ch = ChannelParams::new(0.5, 0.0, 0.0).unwrap();
    let src = PhonemeSequence::from_indices(&(0..100_000).map(|i| i % 39 + 1).collect::<Vec<_>>()).unwrap();
    let out = corrupt(&src, &ch, 2, 11);
    assert_eq!(out.len(), src.len());
    let changed = out.symbols.iter().zip(&src.symbols).filter(|(a, b)| a != b).count() as f64 / src.len() as f64;
    assert!((changed - 0.5).abs() < 0.01, "{changed}");
}

#[test]
fn corrupt_is_reproducible() {
    let s = seq("HH AH L OW W ER L D");
    let ch = ChannelParams::default();
    assert_eq!(corrupt(&s, &ch, 2, 5), corrupt(&s, &ch, 2, 5));
}

#[test]
fn em_recovers_rates() {
    let truth = ChannelParams::new(0.1, 0.05, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut pairs = Vec::new();
    let mut symbols = 0;
    let mut seed = 0;
    while symbols < 10_000 {
        let len = rng.gen_range(3..=8);
        let can = PhonemeSequence::from_indices(&(0..len).map(|_| rng.gen_range(1..=39)).collect::<Vec<_>>()).unwrap();
        let obs = corrupt(&can, &truth, 2, seed);
        seed += 1;
        symbols += len;
        pairs.push((can, obs));
    }
    let est = estimate_channel(&pairs, 2).unwrap();
    assert!((est.p_sub - 0.1).abs() <= 0.02, "{est:?}");
    assert!((est.p_del - 0.05).abs() <= 0.02, "{est:?}");
    assert!((est.p_ins - 0.05).abs() <= 0.02, "{est:?}");
    assert!(est.validate().is_ok());
}

#[test]
fn em_floor_bounds_degenerate_pair() {
    let est = estimate_channel(&[(seq("S"), PhonemeSequence::default())], 2).unwrap();
    assert!(est.p_del <= 1.0 - 2.0 * RATE_FLOOR * 0.99);
    assert!(est.p_del > 0.99);
}
