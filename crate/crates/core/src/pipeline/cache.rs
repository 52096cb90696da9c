//! Bounded LRU store of per-audio acoustic results.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use super::segment::TimeSpan;
use crate::recognizer::{PhonemeSequence, Posteriorgram};

/// Stage 2 output for one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentAcoustics {
    pub span: TimeSpan,
    /// Posteriorgram frame range `[start, end)`.
    pub frames: (usize, usize),
    pub phonemes: PhonemeSequence,
    pub phoneme_log_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CachedAcoustics {
    pub audio_sha256: String,
    pub duration_s: f64,
    pub posteriorgram: Posteriorgram,
    pub segments: Vec<SegmentAcoustics>,
}

/// (audio hash, acoustic settings hash, acoustic model fingerprint)
pub type CacheKey = (String, String, String);

#[derive(Debug)]
pub struct AcousticCache {
    capacity: usize,
    entries: HashMap<CacheKey, Arc<CachedAcoustics>>,
    /// Least recently used at the front.
    order: VecDeque<CacheKey>,
}

impl AcousticCache {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), entries: HashMap::new(), order: VecDeque::new() }
    }

    fn touch(&mut self, key: &CacheKey) {
        if let Some(pos) = self.order.iter().position(|k| k == key) {
            let k = self.order.remove(pos).expect("position is valid");
            self.order.push_back(k);
        }
    }

    pub fn get(&mut self, key: &CacheKey) -> Option<Arc<CachedAcoustics>> {
        let hit = self.entries.get(key).cloned();
        if hit.is_some() {
            self.touch(key);
        }
        hit
    }

    pub fn insert(&mut self, key: CacheKey, value: Arc<CachedAcoustics>) {
        if self.entries.insert(key.clone(), value).is_some() {
            self.touch(&key);
            return;
        }
        self.order.push_back(key);
        while self.order.len() > self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.entries.remove(&old);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;

    fn entry(tag: &str) -> Arc<CachedAcoustics> {
        Arc::new(CachedAcoustics {
            audio_sha256: tag.into(),
            duration_s: 1.0,
            posteriorgram: Posteriorgram::new(Matrix::filled(1, 2, 0.5), 0.01).unwrap(),
            segments: Vec::new(),
        })
    }

    fn key(tag: &str) -> CacheKey {
        (tag.into(), "a".into(), "m".into())
    }

    #[test]
    fn evicts_least_recently_used() {
        let mut c = AcousticCache::new(2);
        c.insert(key("x"), entry("x"));
        c.insert(key("y"), entry("y"));
        assert!(c.get(&key("x")).is_some());
        c.insert(key("z"), entry("z"));
        assert!(c.get(&key("y")).is_none());
        assert!(c.get(&key("x")).is_some());
        assert!(c.get(&key("z")).is_some());
        assert_eq!(c.len(), 2);
    }
}
