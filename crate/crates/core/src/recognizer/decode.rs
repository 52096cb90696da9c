use std::collections::HashMap;

use super::ctc::log_add;
use super::{Phoneme, PhonemeSequence, Posteriorgram, BLANK};

/// Best-path decoding: per-frame argmax (lower class wins ties), repeats collapsed, blanks removed.
pub fn greedy_decode(post: &Posteriorgram) -> PhonemeSequence {
    let mut symbols = Vec::new();
    let mut spans = Vec::new();
    let mut prev = BLANK;
    for t in 0..post.frames() {
        let row = post.probs().row(t);
        let mut best = 0;
        for (k, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = k;
            }
        }
        if best != BLANK {
            if best == prev {
                if let Some(span) = spans.last_mut() {
                    let span: &mut (usize, usize) = span;
                    span.1 = t + 1;
                }
            } else {
                symbols.push(Phoneme::from_index(best).expect("class index within phoneme range"));
                spans.push((t, t + 1));
            }
        }
        prev = best;
    }
    PhonemeSequence { symbols, spans: Some(spans) }
}

#[derive(Clone, Copy)]
struct PrefixScore {
    blank: f64,
    non_blank: f64,
}

impl PrefixScore {
    const EMPTY: PrefixScore = PrefixScore { blank: f64::NEG_INFINITY, non_blank: f64::NEG_INFINITY };

    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

fn rank(beams: &mut [(Vec<usize>, PrefixScore)]) {
    beams.sort_by(|a, b| b.1.total().total_cmp(&a.1.total()).then_with(|| a.0.cmp(&b.0)));
}

/// CTC prefix beam search.
///
/// Hypotheses are merged by collapsed prefix, tracking the probability of
/// ending in blank and in a non-blank separately. Returns up to `width`
/// hypotheses with their log-probabilities, best first; equal scores are
/// ordered lexicographically by class index.
pub fn beam_decode(post: &Posteriorgram, width: usize) -> Vec<(PhonemeSequence, f64)> {
    let width = width.max(1);
    let mut beams: Vec<(Vec<usize>, PrefixScore)> = vec![(Vec::new(), PrefixScore { blank: 0.0, non_blank: f64::NEG_INFINITY })];
    let classes = post.num_classes();

    for t in 0..post.frames() {
        let logp: Vec<f64> = post.probs().row(t).iter().map(|p| p.ln()).collect();
        let mut next: HashMap<Vec<usize>, PrefixScore> = HashMap::with_capacity(beams.len() * classes);
        let mut order: Vec<Vec<usize>> = Vec::new();
        let mut entry = |next: &mut HashMap<Vec<usize>, PrefixScore>, key: Vec<usize>| -> Vec<usize> {
            if !next.contains_key(&key) {
                next.insert(key.clone(), PrefixScore::EMPTY);
                order.push(key.clone());
            }
            key
        };

        for (prefix, score) in &beams {
            let total = score.total();
            let last = prefix.last().copied();

            let key = entry(&mut next, prefix.clone());
            let s = next.get_mut(&key).unwrap();
            s.blank = log_add(s.blank, total + logp[BLANK]);
            if let Some(c) = last {
                s.non_blank = log_add(s.non_blank, score.non_blank + logp[c]);
            }

            for c in 1..classes {
                if logp[c] == f64::NEG_INFINITY {
                    continue;
                }
                let mut extended = prefix.clone();
                extended.push(c);
                let from = if Some(c) == last { score.blank } else { total };
                let key = entry(&mut next, extended);
                let s = next.get_mut(&key).unwrap();
                s.non_blank = log_add(s.non_blank, from + logp[c]);
            }
        }

        beams = order.into_iter().map(|k| {
            let s = next[&k];
            (k, s)
        }).filter(|(_, s)| s.total() > f64::NEG_INFINITY).collect();
        rank(&mut beams);
        beams.truncate(width);
    }

    rank(&mut beams);
    beams
        .into_iter()
        .map(|(prefix, score)| {
            let seq = PhonemeSequence::from_indices(&prefix).expect("non-blank classes are phonemes");
            (seq, score.total())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;

    fn one_hot_post(classes: &[usize], width: usize) -> Posteriorgram {
        let rows: Vec<Vec<f64>> = classes
            .iter()
            .map(|&c| (0..width).map(|k| if k == c { 0.9 } else { 0.1 / (width - 1) as f64 }).collect())
            .collect();
        Posteriorgram::new(Matrix::from_rows(&rows), 0.01).unwrap()
    }

    #[test]
    fn greedy_collapse_rule() {
        let p = one_hot_post(&[29, 29, 0, 29], 40);
        let seq = greedy_decode(&p);
        assert_eq!(seq.to_string(), "S S");
        assert_eq!(seq.spans, Some(vec![(0, 2), (3, 4)]));
    }

    #[test]
    fn greedy_all_blank() {
        assert!(greedy_decode(&one_hot_post(&[0, 0, 0], 40)).is_empty());
    }

    #[test]
    fn greedy_ties_prefer_lower_class() {
        let p = Posteriorgram::new(Matrix::from_rows(&[[0.25, 0.375, 0.375]]), 0.01).unwrap();
        assert_eq!(greedy_decode(&p).indices(), vec![1]);
    }

    #[test]
    fn beam_empty_input() {
        let p = Posteriorgram::new(Matrix::zeros(0, 40), 0.01).unwrap();
        let out = beam_decode(&p, 4);
        assert_eq!(out.len(), 1);
        assert!(out[0].0.is_empty());
        assert_eq!(out[0].1, 0.0);
    }

    #[test]
    fn beam_results_sorted_and_unique() {
        let p = one_hot_post(&[3, 0, 3, 5, 5, 0], 8);
        let out = beam_decode(&p, 16);
        assert_eq!(out[0].0.indices(), vec![3, 3, 5]);
        for w in out.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        let mut seen: Vec<Vec<usize>> = out.iter().map(|(s, _)| s.indices()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), out.len());
    }
}
