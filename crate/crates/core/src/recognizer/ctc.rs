//! CTC loss and its gradient with respect to the pre-softmax logits, via the
//! log-space forward-backward recursions.

use super::{Posteriorgram, RecognizerError, BLANK};
use crate::Matrix;

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Frames needed to emit `target`: one per label plus a blank between repeats.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check(post: &Posteriorgram, target: &[usize]) -> Result<(), RecognizerError> {
    if target.is_empty() {
        return Err(RecognizerError::EmptyTarget);
    }
    if let Some(&bad) = target.iter().find(|&&l| l == BLANK || l >= post.num_classes()) {
        return Err(RecognizerError::InvalidLabel(bad));
    }
    let need = min_frames(target);
    if post.frames() < need {
        return Err(RecognizerError::Infeasible { frames: post.frames(), required: need });
    }
    Ok(())
}

struct Lattice {
    labels: Vec<usize>,
    alpha: Matrix,
    beta: Matrix,
    log_likelihood: f64,
}

fn extended(target: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &l in target {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

fn lattice(post: &Posteriorgram, target: &[usize]) -> Lattice {
    let labels = extended(target);
    let s_len = labels.len();
    let frames = post.frames();
    let logp = |t: usize, s: usize| post.probs()[(t, labels[s])].ln();
    // a skip from s-2 is allowed into a label that differs from the label two back
    let can_skip = |s: usize| s >= 2 && labels[s] != BLANK && labels[s] != labels[s - 2];

    let mut alpha = Matrix::filled(frames, s_len, f64::NEG_INFINITY);
    alpha[(0, 0)] = logp(0, 0);
    alpha[(0, 1)] = logp(0, 1);
    for t in 1..frames {
        for s in 0..s_len {
            let mut acc = alpha[(t - 1, s)];
            if s >= 1 {
                acc = log_add(acc, alpha[(t - 1, s - 1)]);
            }
            if can_skip(s) {
                acc = log_add(acc, alpha[(t - 1, s - 2)]);
            }
            alpha[(t, s)] = acc + logp(t, s);
        }
    }

    // beta[t, s]: log-probability of finishing from state s at frame t, excluding frame t's emission.
    let mut beta = Matrix::filled(frames, s_len, f64::NEG_INFINITY);
    beta[(frames - 1, s_len - 1)] = 0.0;
    beta[(frames - 1, s_len - 2)] = 0.0;
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[(t + 1, s)] + logp(t + 1, s);
            if s + 1 < s_len {
                acc = log_add(acc, beta[(t + 1, s + 1)] + logp(t + 1, s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, beta[(t + 1, s + 2)] + logp(t + 1, s + 2));
            }
            beta[(t, s)] = acc;
        }
    }
    let log_likelihood = log_add(alpha[(frames - 1, s_len - 1)], alpha[(frames - 1, s_len - 2)]);
    Lattice { labels, alpha, beta, log_likelihood }
}

/// Negative log-likelihood of `target` (class indices, no blanks) under the posteriorgram.
pub fn ctc_loss(post: &Posteriorgram, target: &[usize]) -> Result<f64, RecognizerError> {
    check(post, target)?;
    Ok(-lattice(post, target).log_likelihood)
}

/// Per-frame alignment occupancy: the posterior probability that frame `t` emits class `k`.
pub fn ctc_occupancy(post: &Posteriorgram, target: &[usize]) -> Result<Matrix, RecognizerError> {
    check(post, target)?;
    let lat = lattice(post, target);
    let mut occ = Matrix::zeros(post.frames(), post.num_classes());
    for t in 0..post.frames() {
        for (s, &k) in lat.labels.iter().enumerate() {
            let v = lat.alpha[(t, s)] + lat.beta[(t, s)] - lat.log_likelihood;
            if v > f64::NEG_INFINITY {
                occ[(t, k)] += v.exp();
            }
        }
    }
    Ok(occ)
}

/// Loss and gradient w.r.t. the logits that produced `post` through a softmax:
/// `softmax − occupancy`.
pub fn ctc_grad(post: &Posteriorgram, target: &[usize]) -> Result<(f64, Matrix), RecognizerError> {
    let loss = ctc_loss(post, target)?;
    let occ = ctc_occupancy(post, target)?;
    let data = post.probs().as_slice().iter().zip(occ.as_slice()).map(|(p, o)| p - o).collect();
    Ok((loss, Matrix::from_vec(post.frames(), post.num_classes(), data)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(rows: &[&[f64]]) -> Posteriorgram {
        Posteriorgram::new(Matrix::from_rows(rows), 0.01).unwrap()
    }

    #[test]
    fn single_frame() {
        let p = post(&[&[0.5, 0.5]]);
        assert!((ctc_loss(&p, &[1]).unwrap() - 0.5f64.ln().abs()).abs() < 1e-12);
        let (_, g) = ctc_grad(&p, &[1]).unwrap();
        // softmax − one-hot
        assert!((g[(0, 0)] - 0.5).abs() < 1e-12 && (g[(0, 1)] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_alignments() {
        // S·S, S·−, −·S each 0.25
        let p = post(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!((ctc_loss(&p, &[1]).unwrap() + 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let p = post(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert_eq!(ctc_loss(&p, &[]), Err(RecognizerError::EmptyTarget));
        assert_eq!(ctc_loss(&p, &[1, 1]), Err(RecognizerError::Infeasible { frames: 2, required: 3 }));
        assert_eq!(ctc_loss(&p, &[2]), Err(RecognizerError::InvalidLabel(2)));
        assert_eq!(ctc_loss(&p, &[0]), Err(RecognizerError::InvalidLabel(0)));
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let p = post(&[&[0.2, 0.5, 0.3], &[0.6, 0.1, 0.3], &[0.3, 0.3, 0.4]]);
        let (_, g) = ctc_grad(&p, &[1, 2]).unwrap();
        for row in g.iter_rows() {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn log_add_handles_infinities() {
        assert_eq!(log_add(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_eq!(log_add(f64::NEG_INFINITY, -1.0), -1.0);
        assert!((log_add(0.5f64.ln(), 0.25f64.ln()) - 0.75f64.ln()).abs() < 1e-15);
    }
}
