//! Noisy phoneme channel: how a canonical pronunciation turns into what the
//! recognizer hears.
//!
//! Each canonical symbol is kept, swapped for one of the 38 other phonemes, or
//! dropped. Around and between symbols there are `n + 1` gaps; in each gap,
//! uniformly drawn phonemes are inserted while a coin with bias `p_ins` keeps
//! succeeding, up to a per-gap cap. At the cap no further coin is thrown, so the
//! insertion count of a gap is a truncated geometric variable.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::recognizer::{Phoneme, PhonemeSequence, NUM_PHONEMES};

pub const DEFAULT_MAX_INSERTIONS: usize = 2;
pub const EM_ITERATIONS: usize = 10;
pub const RATE_FLOOR: f64 = 1e-3;

const SUB_CHOICES: f64 = (NUM_PHONEMES - 1) as f64;
const INS_CHOICES: f64 = NUM_PHONEMES as f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("p_match + p_sub + p_del must be 1, got {0}")]
    NotNormalized(f64),
    #[error("{name} = {value} is outside its allowed range")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing key {0}")]
    MissingKey(&'static str),
    #[error("no training pairs")]
    EmptyInput,
    #[error("no training pair is reachable under the insertion cap")]
    NoReachablePairs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelParams {
    pub p_match: f64,
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self { p_match: 0.85, p_sub: 0.1, p_del: 0.05, p_ins: 0.05 }
    }
}

impl ChannelParams {
    /// Builds params with `p_match = 1 − p_sub − p_del`.
    pub fn new(p_sub: f64, p_del: f64, p_ins: f64) -> Result<Self, ChannelError> {
        let ch = Self { p_match: 1.0 - p_sub - p_del, p_sub, p_del, p_ins };
        ch.validate()?;
        Ok(ch)
    }

    /// A channel that never alters anything.
    pub fn clean() -> Self {
        Self { p_match: 1.0, p_sub: 0.0, p_del: 0.0, p_ins: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        for (name, value) in [("p_match", self.p_match), ("p_sub", self.p_sub), ("p_del", self.p_del)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ChannelError::OutOfRange { name, value });
            }
        }
        if !(0.0..1.0).contains(&self.p_ins) {
            return Err(ChannelError::OutOfRange { name: "p_ins", value: self.p_ins });
        }
        let sum = self.p_match + self.p_sub + self.p_del;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ChannelError::NotNormalized(sum));
        }
        Ok(())
    }

    /// Log-weight of emitting `observed` for canonical `canonical`.
    pub fn log_emit(&self, canonical: Phoneme, observed: Phoneme) -> f64 {
        if canonical == observed {
            self.p_match.ln()
        } else {
            (self.p_sub / SUB_CHOICES).ln()
        }
    }

    pub fn log_del(&self) -> f64 {
        self.p_del.ln()
    }

    /// Log-weight of one inserted symbol (coin success times uniform choice).
    pub fn log_ins(&self) -> f64 {
        (self.p_ins / INS_CHOICES).ln()
    }

    /// Log-weight of closing a gap that holds `k` insertions.
    pub fn log_stop(&self, k: usize, cap: usize) -> f64 {
        if k < cap {
            (1.0 - self.p_ins).ln()
        } else {
            0.0
        }
    }
}

impl fmt::Display for ChannelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "p_match={}", self.p_match)?;
        writeln!(f, "p_sub={}", self.p_sub)?;
        writeln!(f, "p_del={}", self.p_del)?;
        writeln!(f, "p_ins={}", self.p_ins)
    }
}

impl FromStr for ChannelParams {
    type Err = ChannelError;

    /// `key=value` lines; `#` starts a comment.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut vals: [Option<f64>; 4] = [None; 4];
        const KEYS: [&str; 4] = ["p_match", "p_sub", "p_del", "p_ins"];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ChannelError::Parse { line: i + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            let slot = KEYS.iter().position(|k| *k == key.trim()).ok_or_else(|| err(format!("unknown key {:?}", key.trim())))?;
            let v: f64 = value.trim().parse().map_err(|_| err(format!("bad number {:?}", value.trim())))?;
            vals[slot] = Some(v);
        }
        let get = |i: usize| vals[i].ok_or(ChannelError::MissingKey(KEYS[i]));
        let ch = ChannelParams { p_match: get(0)?, p_sub: get(1)?, p_del: get(2)?, p_ins: get(3)? };
        ch.validate()?;
        Ok(ch)
    }
}

fn uniform_phoneme(rng: &mut ChaCha8Rng) -> Phoneme {
    Phoneme::from_index(rng.gen_range(1..=NUM_PHONEMES)).expect("index in range")
}

fn insert_gap(out: &mut Vec<Phoneme>, ch: &ChannelParams, cap: usize, rng: &mut ChaCha8Rng) {
    let mut k = 0;
    while k < cap && rng.gen::<f64>() < ch.p_ins {
        out.push(uniform_phoneme(rng));
        k += 1;
    }
}

/// Samples one corrupted copy of `seq`.
pub fn corrupt(seq: &PhonemeSequence, ch: &ChannelParams, max_insertions_per_gap: usize, seed: u64) -> PhonemeSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(seq.len() + 4);
    insert_gap(&mut out, ch, max_insertions_per_gap, &mut rng);
    for &p in &seq.symbols {
        let u: f64 = rng.gen();
        if u < ch.p_match {
            out.push(p);
        } else if u < ch.p_match + ch.p_sub {
            // uniform over the other 38
            let mut q = Phoneme::from_index(rng.gen_range(1..NUM_PHONEMES)).expect("index in range");
            if q >= p {
                q = Phoneme::from_index(q.index() + 1).expect("index in range");
            }
            out.push(q);
        }
        insert_gap(&mut out, ch, max_insertions_per_gap, &mut rng);
    }
    PhonemeSequence::new(out)
}

/// Dense `(i, j, k)` table: `i` canonical symbols done, `j` observed symbols
/// produced, `k` insertions so far in the current gap.
struct Grid {
    m: usize,
    cap: usize,
    data: Vec<f64>,
}

impl Grid {
    fn new(n: usize, m: usize, cap: usize) -> Self {
        Self { m, cap, data: vec![f64::NEG_INFINITY; (n + 1) * (m + 1) * (cap + 1)] }
    }

    fn at(&self, i: usize, j: usize, k: usize) -> usize {
        (i * (self.m + 1) + j) * (self.cap + 1) + k
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Forward pass in either the log-sum or the max semiring.
fn forward(obs: &[Phoneme], can: &[Phoneme], ch: &ChannelParams, cap: usize, combine: fn(f64, f64) -> f64) -> (Grid, f64) {
    let (n, m) = (can.len(), obs.len());
    let mut g = Grid::new(n, m, cap);
    let start = g.at(0, 0, 0);
    g.data[start] = 0.0;
    let (l_ins, l_del) = (ch.log_ins(), ch.log_del());
    let mut total = f64::NEG_INFINITY;
    for i in 0..=n {
        for j in 0..=m {
            for k in 0..=cap {
                let a = g.data[g.at(i, j, k)];
                if a == f64::NEG_INFINITY {
                    continue;
                }
                if k < cap && j < m {
                    let d = g.at(i, j + 1, k + 1);
                    g.data[d] = combine(g.data[d], a + l_ins);
                }
                let closed = a + ch.log_stop(k, cap);
                if i < n {
                    if j < m {
                        let d = g.at(i + 1, j + 1, 0);
                        g.data[d] = combine(g.data[d], closed + ch.log_emit(can[i], obs[j]));
                    }
                    let d = g.at(i + 1, j, 0);
                    g.data[d] = combine(g.data[d], closed + l_del);
                } else if j == m {
                    total = combine(total, closed);
                }
            }
        }
    }
    (g, total)
}

/// log P(corrupt(canonical) = observed), summed over every edit path.
pub fn channel_logprob(observed: &PhonemeSequence, canonical: &PhonemeSequence, ch: &ChannelParams, max_insertions_per_gap: usize) -> f64 {
    forward(&observed.symbols, &canonical.symbols, ch, max_insertions_per_gap, log_add).1
}

/// Log-weight of the single most likely edit path.
pub fn channel_viterbi(observed: &PhonemeSequence, canonical: &PhonemeSequence, ch: &ChannelParams, max_insertions_per_gap: usize) -> f64 {
    forward(&observed.symbols, &canonical.symbols, ch, max_insertions_per_gap, f64::max).1
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Counts {
    matches: f64,
    subs: f64,
    dels: f64,
    ins: f64,
    stops: f64,
}

/// Adds the posterior expected edit counts of one pair to `acc`. Returns false
/// when the pair has zero probability.
fn expected_counts(obs: &[Phoneme], can: &[Phoneme], ch: &ChannelParams, cap: usize, acc: &mut Counts) -> bool {
    let (alpha, z) = forward(obs, can, ch, cap, log_add);
    if z == f64::NEG_INFINITY {
        return false;
    }
    let (n, m) = (can.len(), obs.len());
    let (l_ins, l_del) = (ch.log_ins(), ch.log_del());
    let mut beta = Grid::new(n, m, cap);
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            for k in (0..=cap).rev() {
                let mut b = f64::NEG_INFINITY;
                if k < cap && j < m {
                    b = log_add(b, l_ins + beta.data[beta.at(i, j + 1, k + 1)]);
                }
                let stop = ch.log_stop(k, cap);
                if i < n {
                    if j < m {
                        b = log_add(b, stop + ch.log_emit(can[i], obs[j]) + beta.data[beta.at(i + 1, j + 1, 0)]);
                    }
                    b = log_add(b, stop + l_del + beta.data[beta.at(i + 1, j, 0)]);
                } else if j == m {
                    b = log_add(b, stop);
                }
                let at = beta.at(i, j, k);
                beta.data[at] = b;
            }
        }
    }

    let post = |lw: f64| lw.exp();
    for i in 0..=n {
        for j in 0..=m {
            for k in 0..=cap {
                let a = alpha.data[alpha.at(i, j, k)];
                if a == f64::NEG_INFINITY {
                    continue;
                }
                if k < cap && j < m {
                    acc.ins += post(a + l_ins + beta.data[beta.at(i, j + 1, k + 1)] - z);
                }
                let stop = ch.log_stop(k, cap);
                let mut closed_mass = 0.0;
                if i < n {
                    if j < m {
                        let w = post(a + stop + ch.log_emit(can[i], obs[j]) + beta.data[beta.at(i + 1, j + 1, 0)] - z);
                        if can[i] == obs[j] {
                            acc.matches += w;
                        } else {
                            acc.subs += w;
                        }
                        closed_mass += w;
                    }
                    let w = post(a + stop + l_del + beta.data[beta.at(i + 1, j, 0)] - z);
                    acc.dels += w;
                    closed_mass += w;
                } else if j == m {
                    closed_mass += post(a + stop - z);
                }
                if k < cap {
                    acc.stops += closed_mass;
                }
            }
        }
    }
    true
}

fn floor_and_normalize(rates: [f64; 3]) -> [f64; 3] {
    let floored = rates.map(|r| r.max(RATE_FLOOR));
    let sum: f64 = floored.iter().sum();
    floored.map(|r| r / sum)
}

/// EM estimate of the channel from `(canonical, observed)` pairs: a fixed
/// number of iterations starting from a maximally noisy channel.
pub fn estimate_channel(pairs: &[(PhonemeSequence, PhonemeSequence)], max_insertions_per_gap: usize) -> Result<ChannelParams, ChannelError> {
    if pairs.is_empty() {
        return Err(ChannelError::EmptyInput);
    }
    let third = 1.0 / 3.0;
    let mut ch = ChannelParams { p_match: third, p_sub: third, p_del: third, p_ins: 0.5 };
    for _ in 0..EM_ITERATIONS {
        let mut acc = Counts::default();
        let mut reachable = 0;
        for (can, obs) in pairs {
            if expected_counts(&obs.symbols, &can.symbols, &ch, max_insertions_per_gap, &mut acc) {
                reachable += 1;
            }
        }
        if reachable == 0 {
            return Err(ChannelError::NoReachablePairs);
        }
        let per_symbol = acc.matches + acc.subs + acc.dels;
        let [p_match, p_sub, p_del] = if per_symbol > 0.0 {
            floor_and_normalize([acc.matches / per_symbol, acc.subs / per_symbol, acc.dels / per_symbol])
        } else {
            [ch.p_match, ch.p_sub, ch.p_del]
        };
        let gap_events = acc.ins + acc.stops;
        let p_ins = if gap_events > 0.0 { (acc.ins / gap_events).clamp(RATE_FLOOR, 1.0 - RATE_FLOOR) } else { ch.p_ins };
        ch = ChannelParams { p_match, p_sub, p_del, p_ins };
    }
    Ok(ch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> PhonemeSequence {
        PhonemeSequence::parse(s).unwrap()
    }

    #[test]
    fn clean_channel_is_identity() {
        let s = seq("HH AH L OW W ER L D");
        for seed in 0..10 {
            assert_eq!(corrupt(&s, &ChannelParams::clean(), 2, seed), s);
        }
        assert_eq!(channel_logprob(&seq("S"), &seq("S"), &ChannelParams::clean(), 2), 0.0);
    }

    #[test]
    fn full_deletion_empties() {
        let ch = ChannelParams { p_match: 0.0, p_sub: 0.0, p_del: 1.0, p_ins: 0.0 };
        assert!(corrupt(&seq("S AH N"), &ch, 2, 7).is_empty());
    }

    #[test]
    fn single_deletion_path() {
        let ch = ChannelParams { p_match: 0.9, p_sub: 0.0, p_del: 0.1, p_ins: 0.0 };
        let lp = channel_logprob(&PhonemeSequence::default(), &seq("S"), &ch, 2);
        assert!((lp - 0.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn substitution_never_keeps_symbol() {
        let ch = ChannelParams { p_match: 0.0, p_sub: 1.0, p_del: 0.0, p_ins: 0.0 };
        let s = PhonemeSequence::new(Phoneme::all().collect());
        let out = corrupt(&s, &ch, 2, 3);
        assert_eq!(out.len(), s.len());
        assert!(out.symbols.iter().zip(&s.symbols).all(|(a, b)| a != b));
    }

    #[test]
    fn insertion_cap_respected() {
        let ch = ChannelParams { p_ins: 0.99, ..ChannelParams::clean() };
        let out = corrupt(&seq("AA B"), &ch, 2, 1);
        assert!(out.len() <= 2 + 3 * 2);
        // observed longer than the cap allows has probability zero
        let long = seq("AA AA AA AA AA AA AA AA AA");
        assert_eq!(channel_logprob(&long, &seq("AA B"), &ch, 2), f64::NEG_INFINITY);
    }

    #[test]
    fn viterbi_below_total() {
        let ch = ChannelParams::default();
        let (o, c) = (seq("S AH N Z"), seq("S AA N D Z"));
        let v = channel_viterbi(&o, &c, &ch, 2);
        let t = channel_logprob(&o, &c, &ch, 2);
        assert!(v < t && t <= 0.0);
    }

    #[test]
    fn params_text_round_trip() {
        let ch = ChannelParams::new(0.125, 0.0625, 0.03).unwrap();
        let back: ChannelParams = ch.to_string().parse().unwrap();
        assert_eq!(back, ch);
        assert!(matches!("p_match=0.5\np_sub=0.1\np_del=0.1\np_ins=0".parse::<ChannelParams>(), Err(ChannelError::NotNormalized(_))));
        assert_eq!("p_match=1\np_sub=0\np_del=0".parse::<ChannelParams>(), Err(ChannelError::MissingKey("p_ins")));
        assert!(matches!("p_ins=1\np_match=1\np_sub=0\np_del=0".parse::<ChannelParams>(), Err(ChannelError::OutOfRange { name: "p_ins", .. })));
    }

    #[test]
    fn estimate_degenerate_deletion() {
        let ch = estimate_channel(&[(seq("S"), PhonemeSequence::default())], 2).unwrap();
        assert!(ch.p_del > 0.99 && ch.p_del < 1.0);
        assert!(ch.p_match >= RATE_FLOOR * 0.99 && ch.p_sub >= RATE_FLOOR * 0.99);
        assert_eq!(estimate_channel(&[], 2), Err(ChannelError::EmptyInput));
    }

    #[test]
    fn estimate_identity() {
        let pairs: Vec<_> = ["S AH N", "HH AY", "L OW D ER"].iter().map(|s| (seq(s), seq(s))).collect();
        let ch = estimate_channel(&pairs, 2).unwrap();
        assert!(ch.p_match >= 0.99, "{ch:?}");
    }
}
