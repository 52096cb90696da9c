//! Beam search from a noisy phoneme string to ranked word sequences.
//!
//! The search walks the lexicon trie while consuming observed phonemes under
//! the noisy channel. Hypotheses sharing words, trie node, gap state and
//! canonical length are merged keeping the best path, so each returned score
//! is a single best path rather than a sum.

use std::cmp::Ordering;
use std::collections::hash_map::Entry;
use std::collections::BTreeMap;

use rustc_hash::FxHashMap;

use thiserror::Error;

use crate::channel::{ChannelError, ChannelParams, DEFAULT_MAX_INSERTIONS};
use crate::lexicon::{Lexicon, NodeId, PhonemeTrie, WordId};
use crate::lm::{NGramLM, TokenId};
use crate::recognizer::{Phoneme, PhonemeSequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub beam_width: usize,
    pub lm_weight: f64,
    /// Added once per emitted word.
    pub word_insertion_penalty: f64,
    pub n_best: usize,
    pub max_insertions_per_gap: usize,
    /// Canonical phonemes may exceed the observed count by at most this much.
    pub max_extra_phonemes: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            beam_width: 64,
            lm_weight: 1.0,
            word_insertion_penalty: 0.0,
            n_best: 5,
            max_insertions_per_gap: DEFAULT_MAX_INSERTIONS,
            max_extra_phonemes: 4,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), DecoderError> {
        if self.beam_width == 0 {
            return Err(DecoderError::InvalidConfig("beam_width must be at least 1".into()));
        }
        if self.n_best == 0 {
            return Err(DecoderError::InvalidConfig("n_best must be at least 1".into()));
        }
        if !self.lm_weight.is_finite() || !self.word_insertion_penalty.is_finite() {
            return Err(DecoderError::InvalidConfig("lm_weight and word_insertion_penalty must be finite".into()));
        }
        Ok(())
    }
}

/// One ranked decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub words: Vec<String>,
    pub score: f64,
    /// Concatenated pronunciations along the best path.
    pub canonical: PhonemeSequence,
}

/// Interned word histories. Equal word sequences share one id, so an id can
/// stand in for its sequence inside merge keys.
struct Histories {
    parent: Vec<u32>,
    word: Vec<WordId>,
    /// LM context after each history.
    ctx: Vec<Vec<TokenId>>,
    /// Lexicographic rank of every word, used for tie-breaks.
    ranks: Vec<Vec<usize>>,
    index: FxHashMap<(u32, WordId), u32>,
}

impl Histories {
    const EMPTY: u32 = 0;

    fn new(lm: &NGramLM) -> Self {
        Self {
            parent: vec![u32::MAX],
            word: vec![usize::MAX],
            ctx: vec![lm.start_context()],
            ranks: vec![Vec::new()],
            index: FxHashMap::default(),
        }
    }

    fn extend(&mut self, h: u32, w: WordId, token: TokenId, rank: usize, lm: &NGramLM) -> u32 {
        if let Some(&id) = self.index.get(&(h, w)) {
            return id;
        }
        let id = self.parent.len() as u32;
        self.parent.push(h);
        self.word.push(w);
        self.ctx.push(lm.advance(&self.ctx[h as usize], token));
        let mut ranks = self.ranks[h as usize].clone();
        ranks.push(rank);
        self.ranks.push(ranks);
        self.index.insert((h, w), id);
        id
    }

    fn words(&self, mut h: u32) -> Vec<WordId> {
        let mut out = Vec::new();
        while h != Self::EMPTY {
            out.push(self.word[h as usize]);
            h = self.parent[h as usize];
        }
        out.reverse();
        out
    }
}

/// Canonical phoneme strings as back-pointer chains; id 0 is the empty string.
struct Trails {
    parent: Vec<u32>,
    symbol: Vec<Phoneme>,
}

impl Trails {
    fn new() -> Self {
        Self { parent: vec![u32::MAX], symbol: vec![Phoneme::from_index(1).expect("valid phoneme")] }
    }

    fn push(&mut self, parent: u32, step: Option<Phoneme>) -> u32 {
        match step {
            None => parent,
            Some(p) => {
                self.parent.push(parent);
                self.symbol.push(p);
                (self.parent.len() - 1) as u32
            }
        }
    }

    fn materialize(&self, mut t: u32) -> Vec<Phoneme> {
        let mut out = Vec::new();
        while t != 0 {
            out.push(self.symbol[t as usize]);
            t = self.parent[t as usize];
        }
        out.reverse();
        out
    }
}

/// Merge key. The observed index is implicit in the layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Key {
    hist: u32,
    node: NodeId,
    gap_insertions: usize,
    canonical_len: usize,
}

#[derive(Clone, Copy, Debug)]
struct Val {
    score: f64,
    trail: u32,
}

/// States of one observed index, bucketed by canonical length and by
/// whether they sit at the trie root.
type Layer = Vec<[FxHashMap<Key, Val>; 2]>;

/// Final best path for one word sequence.
#[derive(Clone, Debug)]
struct Value {
    score: f64,
    canonical: Vec<Phoneme>,
}

const PRELIMINARY_WIDTH: usize = 16;

struct Search<'a> {
    observed: &'a [Phoneme],
    trie: &'a PhonemeTrie,
    lm: &'a NGramLM,
    ch: &'a ChannelParams,
    cfg: &'a DecoderConfig,
    /// LM token of every lexicon word.
    tokens: Vec<TokenId>,
    /// Position of each word in lexicographic order.
    rank: Vec<usize>,
    max_canonical: usize,
    /// Shortest pronunciation in the lexicon.
    min_pron: usize,
    /// Best log-weight of any transition that consumes an observed symbol.
    best_consume: f64,
}

impl Search<'_> {
    /// True when no completion of a state can reach `floor`. The bound
    /// assumes every remaining observed symbol is consumed at the best
    /// possible rate, LM terms contribute nothing, and a positive word
    /// penalty is collected for every word that could still fit.
    fn hopeless(&self, score: f64, j: usize, canonical_len: usize, floor: f64) -> bool {
        if floor == f64::NEG_INFINITY || self.cfg.lm_weight < 0.0 {
            return false;
        }
        let remaining = (self.observed.len() - j) as f64;
        let mut bound = if remaining > 0.0 { remaining * self.best_consume } else { 0.0 };
        if self.cfg.word_insertion_penalty > 0.0 {
            let words = 1 + (self.max_canonical - canonical_len) / self.min_pron;
            bound += self.cfg.word_insertion_penalty * words as f64;
        }
        score + bound < floor - 1e-9
    }

    fn cmp_words(&self, a: &[WordId], b: &[WordId]) -> Ordering {
        a.iter().map(|&w| self.rank[w]).cmp(b.iter().map(|&w| self.rank[w]))
    }

    fn new_layer(&self) -> Layer {
        (0..=self.max_canonical).map(|_| [FxHashMap::default(), FxHashMap::default()]).collect()
    }
}

/// Mutable state of one beam pass.
struct Run<'s, 'a> {
    s: &'s Search<'a>,
    hist: Histories,
    trails: Trails,
    lm_cache: FxHashMap<(u32, Option<WordId>), f64>,
    pruned: bool,
}

impl Run<'_, '_> {
    fn lm_term(&mut self, h: u32, next: Option<WordId>) -> f64 {
        let s = self.s;
        if s.cfg.lm_weight == 0.0 {
            return 0.0;
        }
        let ctx = &self.hist.ctx[h as usize];
        *self.lm_cache.entry((h, next)).or_insert_with(|| {
            let target = next.map_or(s.lm.eos(), |w| s.tokens[w]);
            s.cfg.lm_weight * s.lm.log_prob(ctx, target)
        })
    }

    /// Orders by score (higher first), then word sequence, then the rest of
    /// the key, so that pruning is fully deterministic.
    fn better(&self, a: &(Key, Val), b: &(Key, Val)) -> Ordering {
        b.1.score
            .total_cmp(&a.1.score)
            .then_with(|| {
                if a.0.hist == b.0.hist {
                    Ordering::Equal
                } else {
                    self.hist.ranks[a.0.hist as usize].cmp(&self.hist.ranks[b.0.hist as usize])
                }
            })
            .then(a.0.node.cmp(&b.0.node))
            .then(a.0.gap_insertions.cmp(&b.0.gap_insertions))
            .then(a.0.canonical_len.cmp(&b.0.canonical_len))
    }

    /// Keeps the better of two paths into `key`; equal scores go to the
    /// lexicographically smaller canonical string.
    fn relax(&mut self, layer: &mut Layer, key: Key, score: f64, parent: u32, step: Option<Phoneme>) {
        if score == f64::NEG_INFINITY || score.is_nan() {
            return;
        }
        let bucket = &mut layer[key.canonical_len][(key.node == PhonemeTrie::ROOT) as usize];
        match bucket.entry(key) {
            Entry::Occupied(mut e) => {
                let cur = *e.get();
                if cur.score > score {
                    return;
                }
                if cur.score == score {
                    let mut candidate = self.trails.materialize(parent);
                    candidate.extend(step);
                    if self.trails.materialize(cur.trail) <= candidate {
                        return;
                    }
                }
                e.insert(Val { score, trail: self.trails.push(parent, step) });
            }
            Entry::Vacant(e) => {
                e.insert(Val { score, trail: self.trails.push(parent, step) });
            }
        }
    }

    /// Applies deletions and word emissions, which do not consume input, and
    /// returns the surviving states of the closed layer: the `width` best
    /// states inside words plus the `width` best states at word boundaries.
    /// Word-boundary states pay their LM term immediately, so sharing a
    /// single beam with states inside words would starve them.
    ///
    /// Buckets are visited in order (canonical length, then non-root before
    /// root), which is a topological order of the closure. Within a bucket
    /// states go best first, and a state is expanded only while it ranks
    /// among the `width` best states of its kind kept so far.
    fn close(&mut self, layer: &mut Layer, j: usize, width: usize, floor: f64) -> Vec<(Key, Val)> {
        let s = self.s;
        let l_del = s.ch.log_del();
        let mut kept: [Vec<(Key, Val)>; 2] = [Vec::new(), Vec::new()];
        let mut sorted = [false, false];
        for c in 0..=s.max_canonical {
            for at_root in [false, true] {
                let bucket = std::mem::take(&mut layer[c][at_root as usize]);
                if bucket.is_empty() {
                    continue;
                }
                let mut states: Vec<(Key, Val)> = bucket.into_iter().collect();
                // nothing outside the bucket's own top `width` can be kept
                if states.len() > width {
                    states.select_nth_unstable_by(width, |a, b| self.better(a, b));
                    states.truncate(width);
                    self.pruned = true;
                }
                states.sort_unstable_by(|a, b| self.better(a, b));
                let side = at_root as usize;
                for state in states {
                    if kept[side].len() >= width {
                        if !sorted[side] {
                            kept[side].sort_unstable_by(|a, b| self.better(a, b));
                            sorted[side] = true;
                        }
                        self.pruned = true;
                        if self.better(&state, kept[side].last().expect("width >= 1")) != Ordering::Less {
                            break;
                        }
                        kept[side].pop();
                        let pos = kept[side].partition_point(|e| self.better(e, &state) == Ordering::Less);
                        kept[side].insert(pos, state);
                    } else {
                        kept[side].push(state);
                    }

                    let (key, v) = state;
                    if !at_root {
                        for &w in s.trie.words_at(key.node) {
                            let score = v.score + self.lm_term(key.hist, Some(w)) + s.cfg.word_insertion_penalty;
                            if !s.hopeless(score, j, c, floor) {
                                let hist = self.hist.extend(key.hist, w, s.tokens[w], s.rank[w], s.lm);
                                let next = Key { hist, node: PhonemeTrie::ROOT, ..key };
                                self.relax(layer, next, score, v.trail, None);
                            }
                        }
                    }
                    if c < s.max_canonical && !s.hopeless(v.score + l_del, j, c + 1, floor) {
                        let base = v.score + s.ch.log_stop(key.gap_insertions, s.cfg.max_insertions_per_gap) + l_del;
                        for &(p, child) in s.trie.children(key.node) {
                            let next = Key { hist: key.hist, node: child, gap_insertions: 0, canonical_len: c + 1 };
                            self.relax(layer, next, base, v.trail, Some(p));
                        }
                    }
                }
            }
        }
        let [mut inner, boundary] = kept;
        inner.extend(boundary);
        inner
    }

    /// Consumes `observed[j]` from every kept state.
    fn consume(&mut self, kept: &[(Key, Val)], j: usize, floor: f64) -> (Layer, usize) {
        let s = self.s;
        let o = s.observed[j];
        let cap = s.cfg.max_insertions_per_gap;
        let l_ins = s.ch.log_ins();
        let mut next = s.new_layer();
        let mut count = 0;
        for &(key, v) in kept {
            if s.hopeless(v.score, j, key.canonical_len, floor) {
                continue;
            }
            if key.gap_insertions < cap {
                let k = Key { gap_insertions: key.gap_insertions + 1, ..key };
                self.relax(&mut next, k, v.score + l_ins, v.trail, None);
                count += 1;
            }
            if key.canonical_len < s.max_canonical {
                let base = v.score + s.ch.log_stop(key.gap_insertions, cap);
                for &(p, child) in s.trie.children(key.node) {
                    let k = Key { hist: key.hist, node: child, gap_insertions: 0, canonical_len: key.canonical_len + 1 };
                    self.relax(&mut next, k, base + s.ch.log_emit(p, o), v.trail, Some(p));
                    count += 1;
                }
            }
        }
        (next, count)
    }
}

impl Search<'_> {
    /// One beam pass. Returns the best score per complete word sequence and
    /// whether any state was cut.
    fn run(&self, width: usize, floor: f64) -> (BTreeMap<Vec<WordId>, Value>, bool) {
        let mut r = Run { s: self, hist: Histories::new(self.lm), trails: Trails::new(), lm_cache: FxHashMap::default(), pruned: false };
        let mut finals = BTreeMap::new();
        let mut layer = self.new_layer();
        let start = Key { hist: Histories::EMPTY, node: PhonemeTrie::ROOT, gap_insertions: 0, canonical_len: 0 };
        layer[0][1].insert(start, Val { score: 0.0, trail: 0 });
        for j in 0..self.observed.len() {
            let kept = r.close(&mut layer, j, width, floor);
            let (next, count) = r.consume(&kept, j, floor);
            if count == 0 {
                return (finals, r.pruned);
            }
            layer = next;
        }
        let kept = r.close(&mut layer, self.observed.len(), width, floor);

        for (key, v) in kept {
            if key.node != PhonemeTrie::ROOT {
                continue;
            }
            let score = v.score + r.lm_term(key.hist, None) + self.ch.log_stop(key.gap_insertions, self.cfg.max_insertions_per_gap);
            if score.is_finite() {
                merge_final(&mut finals, r.hist.words(key.hist), Value { score, canonical: r.trails.materialize(v.trail) });
            }
        }
        (finals, r.pruned)
    }
}

fn merge_final(finals: &mut BTreeMap<Vec<WordId>, Value>, words: Vec<WordId>, v: Value) {
    match finals.get(&words) {
        Some(best) if best.score > v.score || (best.score == v.score && best.canonical <= v.canonical) => {}
        _ => {
            finals.insert(words, v);
        }
    }
}

/// Ranked word sequences for `observed`, best first, at most `cfg.n_best`.
pub fn decode_words(
    observed: &PhonemeSequence,
    lex: &Lexicon,
    lm: &NGramLM,
    ch: &ChannelParams,
    cfg: &DecoderConfig,
) -> Result<Vec<Candidate>, DecoderError> {
    if lex.is_empty() {
        return Err(DecoderError::EmptyLexicon);
    }
    cfg.validate()?;
    ch.validate()?;

    let mut order: Vec<WordId> = (0..lex.len()).collect();
    order.sort_by(|&a, &b| lex.word(a).cmp(lex.word(b)));
    let mut rank = vec![0; lex.len()];
    for (r, &w) in order.iter().enumerate() {
        rank[w] = r;
    }
    let search = Search {
        observed: &observed.symbols,
        trie: lex.trie(),
        tokens: (0..lex.len()).map(|w| lm.id(lex.word(w))).collect(),
        lm,
        ch,
        cfg,
        rank,
        max_canonical: observed.len() + cfg.max_extra_phonemes,
        min_pron: (0..lex.len()).flat_map(|w| lex.pronunciations_of(w).iter().map(|p| p.len())).min().unwrap_or(1).max(1),
        best_consume: [ch.p_match.ln(), (ch.p_sub / 38.0).ln(), ch.log_ins()].into_iter().fold(f64::NEG_INFINITY, f64::max),
    };

    // A single count-limited beam is not monotone in its width: widening can
    // let in competitors that push the eventual winner out. Every result
    // therefore merges a fixed narrow pass, the requested width, and (when the
    // requested pass had to cut states) every smaller power-of-two width. The
    // top score at width W is then at least the top score at any power of two
    // below W. The narrow pass also supplies a floor for bound pruning.
    let (mut finals, _) = search.run(PRELIMINARY_WIDTH, f64::NEG_INFINITY);
    let mut scores: Vec<f64> = finals.values().map(|v| v.score).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let floor = if scores.len() >= cfg.n_best { scores[cfg.n_best - 1] } else { f64::NEG_INFINITY };

    let (main, pruned) = search.run(cfg.beam_width, floor);
    for (words, v) in main {
        merge_final(&mut finals, words, v);
    }
    if pruned {
        let mut width = 1;
        while width < cfg.beam_width {
            let (more, pruned_here) = search.run(width, floor);
            for (words, v) in more {
                merge_final(&mut finals, words, v);
            }
            if !pruned_here {
                break;
            }
            width *= 2;
        }
    }

    let mut ranked: Vec<(Vec<WordId>, Value)> = finals.into_iter().collect();
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then_with(|| search.cmp_words(&a.0, &b.0)));
    Ok(ranked
        .into_iter()
        .take(cfg.n_best)
        .map(|(words, v)| Candidate {
            words: words.iter().map(|&w| lex.word(w).to_string()).collect(),
            score: v.score,
            canonical: PhonemeSequence::new(v.canonical),
        })
        .collect())
}
