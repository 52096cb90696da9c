//! CMUdict-format pronunciation lexicon with a phoneme trie.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::recognizer::{Phoneme, PhonemeSequence};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexiconError {
    #[error("line {line}: unknown phoneme {symbol:?}")]
    UnknownPhoneme { line: usize, symbol: String },
    #[error("line {line}: entry has no pronunciation")]
    MissingPronunciation { line: usize },
    #[error("lexicon is empty")]
    Empty,
}

pub type WordId = usize;
pub type NodeId = usize;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct TrieNode {
    /// Sorted by phoneme.
    children: Vec<(Phoneme, NodeId)>,
    /// Words whose pronunciation ends here, ascending.
    words: Vec<WordId>,
}

/// Prefix tree over pronunciations. Node 0 is the root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeTrie {
    nodes: Vec<TrieNode>,
}

impl Default for PhonemeTrie {
    fn default() -> Self {
        Self { nodes: vec![TrieNode::default()] }
    }
}

impl PhonemeTrie {
    pub const ROOT: NodeId = 0;

    fn insert(&mut self, pron: &[Phoneme], word: WordId) {
        let mut node = Self::ROOT;
        for &p in pron {
            node = match self.nodes[node].children.binary_search_by(|(q, _)| q.cmp(&p)) {
                Ok(i) => self.nodes[node].children[i].1,
                Err(i) => {
                    let id = self.nodes.len();
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.insert(i, (p, id));
                    id
                }
            };
        }
        if let Err(i) = self.nodes[node].words.binary_search(&word) {
            self.nodes[node].words.insert(i, word);
        }
    }

    pub fn children(&self, node: NodeId) -> &[(Phoneme, NodeId)] {
        &self.nodes[node].children
    }

    pub fn child(&self, node: NodeId, p: Phoneme) -> Option<NodeId> {
        let ch = &self.nodes[node].children;
        ch.binary_search_by(|(q, _)| q.cmp(&p)).ok().map(|i| ch[i].1)
    }

    pub fn words_at(&self, node: NodeId) -> &[WordId] {
        &self.nodes[node].words
    }

    /// Words spelled exactly by `pron`.
    pub fn lookup(&self, pron: &[Phoneme]) -> &[WordId] {
        let mut node = Self::ROOT;
        for &p in pron {
            match self.child(node, p) {
                Some(n) => node = n,
                None => return &[],
            }
        }
        self.words_at(node)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Every (word, pronunciation) pair stored in the trie.
    pub fn entries(&self) -> Vec<(WordId, Vec<Phoneme>)> {
        let mut out = Vec::new();
        let mut stack = vec![(Self::ROOT, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            for &w in &self.nodes[node].words {
                out.push((w, path.clone()));
            }
            for &(p, child) in self.nodes[node].children.iter().rev() {
                let mut next = path.clone();
                next.push(p);
                stack.push((child, next));
            }
        }
        out
    }
}

/// Word → pronunciations, plus the trie over the same pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    words: Vec<String>,
    pronunciations: Vec<Vec<PhonemeSequence>>,
    index: BTreeMap<String, WordId>,
    trie: PhonemeTrie,
}

impl Lexicon {
    /// Adds a pronunciation; identical duplicates are ignored. Words are lowercased.
    pub fn insert(&mut self, word: &str, pron: PhonemeSequence) {
        let word = word.to_lowercase();
        let id = match self.index.get(&word) {
            Some(&id) => id,
            None => {
                let id = self.words.len();
                self.words.push(word.clone());
                self.pronunciations.push(Vec::new());
                self.index.insert(word, id);
                id
            }
        };
        let pron = PhonemeSequence::new(pron.symbols);
        if !self.pronunciations[id].contains(&pron) {
            self.trie.insert(&pron.symbols, id);
            self.pronunciations[id].push(pron);
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id]
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.index.get(&word.to_lowercase()).copied()
    }

    pub fn pronunciations(&self, word: &str) -> Option<&[PhonemeSequence]> {
        self.id(word).map(|id| self.pronunciations[id].as_slice())
    }

    pub fn pronunciations_of(&self, id: WordId) -> &[PhonemeSequence] {
        &self.pronunciations[id]
    }

    pub fn trie(&self) -> &PhonemeTrie {
        &self.trie
    }

    /// Words in insertion order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// Keeps only the listed words, in the given order.
    pub fn restricted_to<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Lexicon {
        let mut out = Lexicon::default();
        for w in words {
            if let Some(prons) = self.pronunciations(w) {
                for p in prons {
                    out.insert(w, p.clone());
                }
            }
        }
        out
    }

    /// Renders the lexicon back to CMUdict text (stress-free).
    pub fn to_cmudict(&self) -> String {
        let mut out = String::new();
        for (word, &id) in &self.index {
            for (i, pron) in self.pronunciations[id].iter().enumerate() {
                let head = if i == 0 { word.to_uppercase() } else { format!("{}({})", word.to_uppercase(), i + 1) };
                out.push_str(&format!("{head}  {pron}\n"));
            }
        }
        out
    }
}

/// Parses CMUdict text: `WORD  PH1 PH2 ...`, alternates as `WORD(2)`, `;;;` comments.
pub fn parse_lexicon(text: &str) -> Result<Lexicon, LexiconError> {
    let mut lex = Lexicon::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with(";;;") {
            continue;
        }
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or_default();
        let word = match head.rfind('(') {
            Some(open) if head.ends_with(')') && head[open + 1..head.len() - 1].chars().all(|c| c.is_ascii_digit()) => {
                &head[..open]
            }
            _ => head,
        };
        let symbols = parts
            .map(|s| Phoneme::parse_stressed(s).ok_or_else(|| LexiconError::UnknownPhoneme { line: line_no, symbol: s.to_string() }))
            .collect::<Result<Vec<_>, _>>()?;
        if symbols.is_empty() {
            return Err(LexiconError::MissingPronunciation { line: line_no });
        }
        lex.insert(word, PhonemeSequence::new(symbols));
    }
    Ok(lex)
}
