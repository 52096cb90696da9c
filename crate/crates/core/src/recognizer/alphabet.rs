use std::fmt;
use std::str::FromStr;

/// Stress-free ARPAbet symbols in class order; class 0 is the CTC blank.
pub const PHONEMES: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH",
    "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
];

pub const NUM_PHONEMES: usize = 39;
/// Output classes: blank plus the phonemes.
pub const NUM_CLASSES: usize = NUM_PHONEMES + 1;
pub const BLANK: usize = 0;

/// A phoneme class index in `1..=39`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Phoneme(u8);

impl Phoneme {
    pub fn from_index(index: usize) -> Option<Self> {
        (1..=NUM_PHONEMES).contains(&index).then_some(Phoneme(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn symbol(self) -> &'static str {
        PHONEMES[self.0 as usize - 1]
    }

    /// Parses a symbol, accepting and discarding a trailing stress digit (`AH0` → `AH`).
    pub fn parse_stressed(s: &str) -> Option<Self> {
        let base = s.trim_end_matches(|c: char| c.is_ascii_digit());
        if base.len() + 1 < s.len() {
            return None;
        }
        base.parse().ok()
    }

    pub fn all() -> impl Iterator<Item = Phoneme> {
        (1..=NUM_PHONEMES as u8).map(Phoneme)
    }
}

impl FromStr for Phoneme {
    type Err = UnknownPhoneme;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.to_ascii_uppercase();
        PHONEMES
            .iter()
            .position(|&p| p == upper)
            .map(|i| Phoneme(i as u8 + 1))
            .ok_or_else(|| UnknownPhoneme(s.to_string()))
    }
}

impl fmt::Display for Phoneme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown phoneme symbol {0:?}")]
pub struct UnknownPhoneme(pub String);

/// Blank-free phoneme sequence, optionally with the frame span each symbol came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct PhonemeSequence {
    pub symbols: Vec<Phoneme>,
    pub spans: Option<Vec<(usize, usize)>>,
}

impl PhonemeSequence {
    pub fn new(symbols: Vec<Phoneme>) -> Self {
        Self { symbols, spans: None }
    }

    pub fn from_indices(indices: &[usize]) -> Option<Self> {
        indices.iter().map(|&i| Phoneme::from_index(i)).collect::<Option<Vec<_>>>().map(Self::new)
    }

    /// Parses whitespace-separated symbols; stress digits are stripped.
    pub fn parse(text: &str) -> Result<Self, UnknownPhoneme> {
        text.split_whitespace()
            .map(|s| Phoneme::parse_stressed(s).ok_or_else(|| UnknownPhoneme(s.to_string())))
            .collect::<Result<Vec<_>, _>>()
            .map(Self::new)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.symbols.iter().map(|p| p.index()).collect()
    }

    pub fn to_symbols(&self) -> Vec<String> {
        self.symbols.iter().map(|p| p.symbol().to_string()).collect()
    }
}

impl fmt::Display for PhonemeSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for p in &self.symbols {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            f.write_str(p.symbol())?;
        }
        Ok(())
    }
}
