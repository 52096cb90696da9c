//! Word n-gram language model over lyric lines, with keyword moderation of the
//! training corpus.
//!
//! Probabilities use add-k smoothing inside every context that was observed in
//! training. Unseen contexts fall back to the next shorter context scaled by a
//! fixed factor ("stupid backoff"), so backed-off scores are not normalized.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::container::{Container, ContainerError, Tensor};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const BACKOFF: f64 = 0.4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("moderation is enabled but the keyword list is empty")]
    EmptyModerationList,
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("smoothing constant must be finite and >= 0, got {0}")]
    InvalidSmoothing(f64),
    #[error("malformed language model file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Lowercases and drops every character that is not alphanumeric or an apostrophe.
pub fn tokenize(line: &str) -> Vec<String> {
    line.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ModerationList {
    keywords: BTreeSet<String>,
}

impl ModerationList {
    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Self {
        let keywords = words.into_iter().flat_map(|w| tokenize(w.as_ref())).collect();
        Self { keywords }
    }

    /// One keyword per line; blank lines are skipped.
    pub fn parse(text: &str) -> Self {
        Self::new(text.lines())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.keywords.contains(token)
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.keywords.iter().map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Moderated {
    pub kept: Vec<String>,
    pub removed: usize,
}

/// Drops every line with a token equal to a keyword (after tokenization).
pub fn moderate_corpus<S: AsRef<str>>(lines: &[S], list: &ModerationList) -> Result<Moderated, LmError> {
    if list.is_empty() {
        return Err(LmError::EmptyModerationList);
    }
    let mut kept = Vec::with_capacity(lines.len());
    let mut removed = 0;
    for line in lines {
        let line = line.as_ref();
        if tokenize(line).iter().any(|t| list.contains(t)) {
            removed += 1;
        } else {
            kept.push(line.to_string());
        }
    }
    Ok(Moderated { kept, removed })
}

pub type TokenId = u32;

#[derive(Clone, Debug, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramLM {
    order: usize,
    k: f64,
    /// Sorted lexicographically; ids are positions.
    vocab: Vec<String>,
    ids: HashMap<String, TokenId>,
    /// `counts[m]` maps length-`m` contexts to their continuation counts.
    counts: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
    bos: TokenId,
    eos: TokenId,
    unk: TokenId,
}

/// Trains an order-`order` model with add-`k` smoothing. Each line is wrapped in
/// `order − 1` start markers and one end marker.
pub fn train_ngram<S: AsRef<str>>(lines: &[S], order: usize, k: f64) -> Result<NGramLM, LmError> {
    if lines.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    if order == 0 {
        return Err(LmError::InvalidOrder);
    }
    if !(k >= 0.0) || !k.is_finite() {
        return Err(LmError::InvalidSmoothing(k));
    }
    let tokenized: Vec<Vec<String>> = lines.iter().map(|l| tokenize(l.as_ref())).collect();
    let mut words: BTreeSet<String> = tokenized.iter().flatten().cloned().collect();
    words.extend([BOS, EOS, UNK].map(String::from));
    let vocab: Vec<String> = words.into_iter().collect();
    let mut lm = NGramLM::empty(order, k, vocab);

    for line in &tokenized {
        let mut seq: Vec<TokenId> = vec![lm.bos; order - 1];
        seq.extend(line.iter().map(|w| lm.ids[w]));
        seq.push(lm.eos);
        for i in order - 1..seq.len() {
            for m in 0..order {
                let ctx = seq[i - m..i].to_vec();
                let entry = lm.counts[m].entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(seq[i]).or_default() += 1;
            }
        }
    }
    Ok(lm)
}

impl NGramLM {
    fn empty(order: usize, k: f64, vocab: Vec<String>) -> Self {
        let ids: HashMap<String, TokenId> = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as TokenId)).collect();
        let bos = ids[BOS];
        let eos = ids[EOS];
        let unk = ids[UNK];
        Self { order, k, vocab, ids, counts: vec![HashMap::new(); order], bos, eos, unk }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Number of predictable tokens: the vocabulary without the start marker.
    pub fn predictable_size(&self) -> usize {
        self.vocab.len() - 1
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(word)
    }

    /// Token id, mapping unknown words to `<unk>`.
    pub fn id(&self, word: &str) -> TokenId {
        self.ids.get(word).copied().unwrap_or(self.unk)
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.vocab[id as usize]
    }

    /// Initial context: `order − 1` start markers.
    pub fn start_context(&self) -> Vec<TokenId> {
        vec![self.bos; self.order - 1]
    }

    /// Appends a token and keeps only the last `order − 1`.
    pub fn advance(&self, ctx: &[TokenId], next: TokenId) -> Vec<TokenId> {
        let keep = self.order - 1;
        let mut out: Vec<TokenId> = ctx.iter().copied().chain(std::iter::once(next)).collect();
        let drop = out.len().saturating_sub(keep);
        out.drain(..drop);
        out
    }

    /// Contexts observed in training at full length.
    pub fn contexts(&self) -> Vec<Vec<TokenId>> {
        let mut out: Vec<Vec<TokenId>> = self.counts[self.order - 1].keys().cloned().collect();
        out.sort();
        out
    }

    /// P(word | context). Only the last `order − 1` context tokens matter.
    pub fn prob(&self, ctx: &[TokenId], word: TokenId) -> f64 {
        let keep = ctx.len().min(self.order - 1);
        let ctx = &ctx[ctx.len() - keep..];
        match self.counts[ctx.len()].get(ctx) {
            Some(c) if c.total > 0 => {
                let hits = c.next.get(&word).copied().unwrap_or(0) as f64;
                (hits + self.k) / (c.total as f64 + self.k * self.predictable_size() as f64)
            }
            _ if ctx.is_empty() => {
                let v = self.predictable_size() as f64;
                if self.k > 0.0 {
                    1.0 / v
                } else {
                    0.0
                }
            }
            _ => BACKOFF * self.prob(&ctx[1..], word),
        }
    }

    pub fn log_prob(&self, ctx: &[TokenId], word: TokenId) -> f64 {
        self.prob(ctx, word).ln()
    }

    /// Σ log P(wᵢ | context) without the end marker.
    pub fn prefix_score<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut ctx = self.start_context();
        let mut total = 0.0;
        for w in words {
            let id = self.id(w.as_ref());
            total += self.log_prob(&ctx, id);
            ctx = self.advance(&ctx, id);
        }
        total
    }

    /// Sentence log-probability including the end marker.
    pub fn score<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut ctx = self.start_context();
        let mut total = 0.0;
        for w in words {
            let id = self.id(w.as_ref());
            total += self.log_prob(&ctx, id);
            ctx = self.advance(&ctx, id);
        }
        total + self.log_prob(&ctx, self.eos)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.push(Tensor::new("lm.meta", vec![3], vec![self.order as f32, self.k as f32, BACKOFF as f32]));
        for (m, table) in self.counts.iter().enumerate() {
            let mut rows: Vec<(Vec<TokenId>, TokenId, u64)> = table
                .iter()
                .flat_map(|(ctx, cc)| cc.next.iter().map(move |(&w, &n)| (ctx.clone(), w, n)))
                .collect();
            rows.sort();
            let width = m + 2;
            let mut data = Vec::with_capacity(rows.len() * width);
            for (ctx, w, n) in &rows {
                data.extend(ctx.iter().map(|&t| t as f32));
                data.push(*w as f32);
                data.push(*n as f32);
            }
            c.push(Tensor::new(format!("lm.ngram{}", m + 1), vec![rows.len(), width], data));
        }
        c.text = Some(self.vocab.join("\n"));
        c
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LmError> {
        let c = Container::from_bytes(bytes)?;
        let meta = c.expect("lm.meta", &[3])?;
        let order = meta.data[0] as usize;
        if order == 0 {
            return Err(LmError::InvalidOrder);
        }
        // k is stored as f32; recover the short decimal it was written from
        let k: f64 = format!("{}", meta.data[1]).parse().unwrap_or(meta.data[1] as f64);
        let text = c.text.as_deref().ok_or_else(|| LmError::Malformed("missing vocabulary block".into()))?;
        let vocab: Vec<String> = text.split('\n').map(str::to_string).collect();
        if !vocab.windows(2).all(|w| w[0] < w[1]) {
            return Err(LmError::Malformed("vocabulary is not sorted and unique".into()));
        }
        for marker in [BOS, EOS, UNK] {
            if !vocab.iter().any(|w| w == marker) {
                return Err(LmError::Malformed(format!("vocabulary lacks {marker}")));
            }
        }
        let mut lm = NGramLM::empty(order, k, vocab);
        for m in 0..order {
            let name = format!("lm.ngram{}", m + 1);
            let t = c.get(&name)?;
            if t.dims.len() != 2 || t.dims[1] != m + 2 {
                return Err(LmError::Malformed(format!("{name} has shape {:?}", t.dims)));
            }
            for row in t.data.chunks_exact(m + 2) {
                let ids: Vec<TokenId> = row[..m + 1].iter().map(|&v| v as TokenId).collect();
                if ids.iter().any(|&i| i as usize >= lm.vocab.len()) {
                    return Err(LmError::Malformed(format!("{name} references a token outside the vocabulary")));
                }
                let n = row[m + 1] as u64;
                let entry = lm.counts[m].entry(ids[..m].to_vec()).or_default();
                entry.total += n;
                entry.next.insert(ids[m], n);
            }
        }
        Ok(lm)
    }
}
