//! CTC loss over blank-augmented label sequences, with analytic gradients,
//! an exhaustive-path verification oracle, and greedy / prefix-beam decoding.
//!
//! All recursions run in log space with exact handling of -inf; there is no
//! probability-space fallback. The blank token is index 0 of every vocabulary.

use crate::numeric::{log_add, Matrix};
use std::collections::HashMap;
use thiserror::Error;

/// Reserved blank index in every vocabulary.
pub const BLANK: usize = 0;

/// Beam width used when none is specified.
pub const DEFAULT_BEAM_WIDTH: usize = 10;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("sequence too short for labels: {frames} frames cannot carry {needed} positions")]
    SequenceTooShort { frames: usize, needed: usize },
    #[error("label sequence is empty")]
    EmptyLabels,
    #[error("label token {token} outside [1, {max}]")]
    TokenOutOfRange { token: usize, max: usize },
    #[error("instance too large for exhaustive enumeration: {vocab}^{frames} paths")]
    InstanceTooLarge { vocab: usize, frames: usize },
}

/// Token indices (blank excluded) for one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub tokens: Vec<usize>,
    pub language: String,
}

impl LabelSequence {
    pub fn new(tokens: Vec<usize>, language: impl Into<String>) -> Self {
        LabelSequence {
            tokens,
            language: language.into(),
        }
    }
}

/// Loss value and its gradient with respect to the pre-softmax logits.
#[derive(Debug, Clone)]
pub struct CtcResult {
    pub loss: f64,
    pub grad_logits: Matrix,
}

fn validate_labels(tokens: &[usize], vocab: usize) -> Result<(), CtcError> {
    for &t in tokens {
        if t == BLANK || t >= vocab {
            return Err(CtcError::TokenOutOfRange {
                token: t,
                max: vocab - 1,
            });
        }
    }
    Ok(())
}

/// Blank-augmented sequence: blank, l1, blank, l2, ..., blank.
fn augment(tokens: &[usize]) -> Vec<usize> {
    let mut aug = Vec::with_capacity(2 * tokens.len() + 1);
    aug.push(BLANK);
    for &t in tokens {
        aug.push(t);
        aug.push(BLANK);
    }
    aug
}

/// Fewest frames any valid alignment needs: one per label plus one forced
/// blank between each repeated pair.
fn min_frames(tokens: &[usize]) -> usize {
    let repeats = tokens.windows(2).filter(|w| w[0] == w[1]).count();
    tokens.len() + repeats
}

/// Log probability of emitting `tokens` (possibly empty) under the
/// forward algorithm. `log_post` is T x V with rows summing to one in
/// probability space.
pub fn ctc_log_prob(log_post: &Matrix, tokens: &[usize]) -> Result<f64, CtcError> {
    validate_labels(tokens, log_post.cols())?;
    let frames = log_post.rows();
    if frames < min_frames(tokens) {
        return Err(CtcError::SequenceTooShort {
            frames,
            needed: min_frames(tokens),
        });
    }
    let aug = augment(tokens);
    let alpha = forward_pass(log_post, &aug);
    let s = aug.len();
    let mut total = alpha.get(frames - 1, s - 1);
    if s >= 2 {
        total = log_add(total, alpha.get(frames - 1, s - 2));
    }
    Ok(total)
}

/// alpha[t][s]: log mass of valid prefixes ending in augmented state s after
/// frame t (frame-t emission included).
fn forward_pass(log_post: &Matrix, aug: &[usize]) -> Matrix {
    let frames = log_post.rows();
    let s_len = aug.len();
    let mut alpha = Matrix::from_fn(frames, s_len, |_, _| f64::NEG_INFINITY);

    alpha.set(0, 0, log_post.get(0, aug[0]));
    if s_len > 1 {
        alpha.set(0, 1, log_post.get(0, aug[1]));
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut acc = alpha.get(t - 1, s);
            if s >= 1 {
                acc = log_add(acc, alpha.get(t - 1, s - 1));
            }
            // The skip transition is legal only onto a non-blank that differs
            // from the label two states back.
            if s >= 2 && aug[s] != BLANK && aug[s] != aug[s - 2] {
                acc = log_add(acc, alpha.get(t - 1, s - 2));
            }
            if acc != f64::NEG_INFINITY {
                alpha.set(t, s, acc + log_post.get(t, aug[s]));
            }
        }
    }
    alpha
}

/// beta[t][s]: log mass of valid suffixes from state s over frames t+1..T,
/// excluding the frame-t emission.
fn backward_pass(log_post: &Matrix, aug: &[usize]) -> Matrix {
    let frames = log_post.rows();
    let s_len = aug.len();
    let mut beta = Matrix::from_fn(frames, s_len, |_, _| f64::NEG_INFINITY);

    beta.set(frames - 1, s_len - 1, 0.0);
    if s_len >= 2 {
        beta.set(frames - 1, s_len - 2, 0.0);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let mut acc = {
                let b = beta.get(t + 1, s);
                if b == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    b + log_post.get(t + 1, aug[s])
                }
            };
            if s + 1 < s_len {
                let b = beta.get(t + 1, s + 1);
                if b != f64::NEG_INFINITY {
                    acc = log_add(acc, b + log_post.get(t + 1, aug[s + 1]));
                }
            }
            if s + 2 < s_len && aug[s + 2] != BLANK && aug[s + 2] != aug[s] {
                let b = beta.get(t + 1, s + 2);
                if b != f64::NEG_INFINITY {
                    acc = log_add(acc, b + log_post.get(t + 1, aug[s + 2]));
                }
            }
            beta.set(t, s, acc);
        }
    }
    beta
}

/// CTC loss (-ln p(labels | posteriors)) and its exact gradient with respect
/// to the pre-softmax logits that produced `log_post`.
pub fn ctc_loss(log_post: &Matrix, labels: &LabelSequence) -> Result<CtcResult, CtcError> {
    if labels.tokens.is_empty() {
        return Err(CtcError::EmptyLabels);
    }
    validate_labels(&labels.tokens, log_post.cols())?;
    let frames = log_post.rows();
    let needed = min_frames(&labels.tokens);
    if frames < needed {
        return Err(CtcError::SequenceTooShort { frames, needed });
    }

    let aug = augment(&labels.tokens);
    let s_len = aug.len();
    let alpha = forward_pass(log_post, &aug);
    let beta = backward_pass(log_post, &aug);

    let mut log_p = alpha.get(frames - 1, s_len - 1);
    if s_len >= 2 {
        log_p = log_add(log_p, alpha.get(frames - 1, s_len - 2));
    }

    // d(loss)/d(logit[t][k]) = post[t][k] - exp(logsumexp_{s: aug[s]=k}
    // (alpha[t][s] + beta[t][s]) - log_p); beta excludes the frame-t
    // emission, so alpha*beta already carries each path exactly once.
    let vocab = log_post.cols();
    let mut grad = Matrix::zeros(frames, vocab);
    for t in 0..frames {
        let mut occupancy = vec![f64::NEG_INFINITY; vocab];
        for s in 0..s_len {
            let w = alpha.get(t, s) + beta.get(t, s);
            if w != f64::NEG_INFINITY {
                occupancy[aug[s]] = log_add(occupancy[aug[s]], w);
            }
        }
        let row = grad.row_mut(t);
        for k in 0..vocab {
            let posterior = log_post.get(t, k).exp();
            let target = if occupancy[k] == f64::NEG_INFINITY {
                0.0
            } else {
                (occupancy[k] - log_p).exp()
            };
            row[k] = posterior - target;
        }
    }

    Ok(CtcResult {
        loss: -log_p,
        grad_logits: grad,
    })
}

/// Exhaustive-path oracle: enumerates every frame-label path, collapses
/// repeats then removes blanks, and sums the probability of paths matching
/// the labels. Only for tiny instances.
pub fn ctc_loss_bruteforce(log_post: &Matrix, labels: &LabelSequence) -> Result<f64, CtcError> {
    let frames = log_post.rows();
    let vocab = log_post.cols();
    validate_labels(&labels.tokens, vocab)?;
    let paths = (vocab as f64).powi(frames as i32);
    if paths > 1e7 {
        return Err(CtcError::InstanceTooLarge { vocab, frames });
    }

    let mut total = 0.0f64;
    let mut path = vec![0usize; frames];
    loop {
        let mut log_p = 0.0;
        for (t, &k) in path.iter().enumerate() {
            log_p += log_post.get(t, k);
        }
        if collapse(&path) == labels.tokens {
            total += log_p.exp();
        }
        // Odometer increment over the V^T path space.
        let mut pos = frames;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < vocab {
                break;
            }
            path[pos] = 0;
        }
        if pos == 0 && path[0] == 0 {
            break;
        }
    }
    if total <= 0.0 {
        return Err(CtcError::SequenceTooShort {
            frames,
            needed: min_frames(&labels.tokens),
        });
    }
    Ok(-total.ln())
}

/// Collapse repeats, then drop blanks.
fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &k in path {
        if k != prev && k != BLANK {
            out.push(k);
        }
        prev = k;
    }
    out
}

/// Per-frame argmax, collapse repeats, drop blanks.
pub fn greedy_decode(log_post: &Matrix) -> Vec<usize> {
    let mut path = Vec::with_capacity(log_post.rows());
    for t in 0..log_post.rows() {
        let row = log_post.row(t);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        path.push(best);
    }
    collapse(&path)
}

#[derive(Clone, Copy)]
struct PrefixScore {
    ending_blank: f64,
    ending_label: f64,
}

impl PrefixScore {
    fn total(&self) -> f64 {
        log_add(self.ending_blank, self.ending_label)
    }
}

/// CTC prefix beam search without a language model. Prefixes ending in blank
/// and non-blank are tracked separately and merged, so the score of а prefix
/// is its full CTC probability over the frames seen so far.
pub fn beam_search_decode(log_post: &Matrix, width: usize) -> Vec<usize> {
    let width = width.max(1);
    let vocab = log_post.cols();
    let mut beams: Vec<(Vec<usize>, PrefixScore)> = vec![(
        Vec::new(),
        PrefixScore {
            ending_blank: 0.0,
            ending_label: f64::NEG_INFINITY,
        },
    )];

    for t in 0..log_post.rows() {
        let row = log_post.row(t);
        let mut next: HashMap<Vec<usize>, PrefixScore> = HashMap::new();
        for (prefix, score) in &beams {
            // Stay on the same prefix with a blank emission.
            let entry = next.entry(prefix.clone()).or_insert(PrefixScore {
                ending_blank: f64::NEG_INFINITY,
                ending_label: f64::NEG_INFINITY,
            });
            entry.ending_blank = log_add(entry.ending_blank, score.total() + row[BLANK]);
            // Repeat the trailing label: only extends the non-blank mass.
            if let Some(&last) = prefix.last() {
                entry.ending_label =
                    log_add(entry.ending_label, score.ending_label + row[last]);
            }
            for k in 1..vocab {
                let mut extended = prefix.clone();
                extended.push(k);
                let entry = next.entry(extended).or_insert(PrefixScore {
                    ending_blank: f64::NEG_INFINITY,
                    ending_label: f64::NEG_INFINITY,
                });
                let mass = if Some(&k) == prefix.last() {
                    // A repeated label needs a blank in between, so only the
                    // blank-ending mass may extend.
                    score.ending_blank
                } else {
                    score.total()
                };
                entry.ending_label = log_add(entry.ending_label, mass + row[k]);
            }
        }
        let mut ranked: Vec<(Vec<usize>, PrefixScore)> = next.into_iter().collect();
        // Tie-break on the prefix itself so the hash map order never leaks.
        ranked.sort_by(|a, b| {
            b.1.total()
                .partial_cmp(&a.1.total())
                .expect("scores are never NaN")
                .then_with(|| a.0.cmp(&b.0))
        });
        ranked.truncate(width);
        beams = ranked;
    }

    beams
        .into_iter()
        .next()
        .map(|(prefix, _)| prefix)
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_grad, relative_error, stable_log_softmax};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_log_post(rng: &mut ChaCha8Rng, frames: usize, vocab: usize) -> Matrix {
        let mut m = Matrix::zeros(frames, vocab);
        for t in 0..frames {
            let logits: Vec<f64> = (0..vocab).map(|_| rng.random_range(-2.0..2.0)).collect();
            let row = stable_log_softmax(&logits).unwrap();
            m.row_mut(t).copy_from_slice(&row);
        }
        m
    }

    fn uniform_log_post(frames: usize, vocab: usize) -> Matrix {
        Matrix::from_fn(frames, vocab, |_, _| -(vocab as f64).ln())
    }

    #[test]
    fn single_frame_single_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let log_post = random_log_post(&mut rng, 1, 3);
        let labels = LabelSequence::new(vec![2], "x");
        let res = ctc_loss(&log_post, &labels).unwrap();
        assert!((res.loss - (-log_post.get(0, 2))).abs() < 1e-12);
    }

    #[test]
    fn two_frames_single_label_three_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let log_post = random_log_post(&mut rng, 2, 3);
        let labels = LabelSequence::new(vec![1], "x");
        let res = ctc_loss(&log_post, &labels).unwrap();
        let p = |t: usize, k: usize| log_post.get(t, k).exp();
        let expected = p(0, 1) * p(1, 1) + p(0, BLANK) * p(1, 1) + p(0, 1) * p(1, BLANK);
        assert!((res.loss - (-expected.ln())).abs() < 1e-12);
    }

    #[test]
    fn uniform_two_frame_instance_matches_hand_enumeration() {
        // V=2 (blank, a), labels=[a]: paths aa, -a, a- collapse to "a",
        // each with probability 1/4, so loss = -ln(3/4).
        let log_post = uniform_log_post(2, 2);
        let labels = LabelSequence::new(vec![1], "x");
        let brute = ctc_loss_bruteforce(&log_post, &labels).unwrap();
        assert!((brute - (-(0.75f64).ln())).abs() < 1e-12);
        let fast = ctc_loss(&log_post, &labels).unwrap();
        assert!((fast.loss - brute).abs() < 1e-12);
    }

    #[test]
    fn impossible_labels_report_no_valid_alignment() {
        let log_post = uniform_log_post(1, 3);
        let labels = LabelSequence::new(vec![1, 2], "x");
        assert!(matches!(
            ctc_loss(&log_post, &labels),
            Err(CtcError::SequenceTooShort { .. })
        ));
        assert!(matches!(
            ctc_loss_bruteforce(&log_post, &labels),
            Err(CtcError::SequenceTooShort { .. })
        ));
        // Repeated label needs a separating blank.
        let log_post = uniform_log_post(2, 3);
        let labels = LabelSequence::new(vec![1, 1], "x");
        assert!(matches!(
            ctc_loss(&log_post, &labels),
            Err(CtcError::SequenceTooShort { frames: 2, needed: 3 })
        ));
    }

    #[test]
    fn matches_bruteforce_on_random_tiny_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tested = 0;
        while tested < 100 {
            let frames = rng.random_range(1..=8);
            let vocab = rng.random_range(2..=4);
            let label_len = rng.random_range(1..=3);
            let tokens: Vec<usize> =
                (0..label_len).map(|_| rng.random_range(1..vocab)).collect();
            let labels = LabelSequence::new(tokens, "x");
            if log_post_min_frames(&labels) > frames {
                continue;
            }
            tested += 1;
            let log_post = random_log_post(&mut rng, frames, vocab);
            let fast = ctc_loss(&log_post, &labels).unwrap().loss;
            let brute = ctc_loss_bruteforce(&log_post, &labels).unwrap();
            assert!(
                relative_error(fast, brute) < 1e-10,
                "fast={fast} brute={brute}"
            );
        }
    }

    fn log_post_min_frames(labels: &LabelSequence) -> usize {
        labels.tokens.len()
            + labels
                .tokens
                .windows(2)
                .filter(|w| w[0] == w[1])
                .count()
    }

    #[test]
    fn gradient_matches_finite_differences_through_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let frames = rng.random_range(2..=5);
            let vocab = rng.random_range(2..=4);
            let tokens: Vec<usize> = (0..rng.random_range(1..=2))
                .map(|_| rng.random_range(1..vocab))
                .collect();
            let labels = LabelSequence::new(tokens, "x");
            if log_post_min_frames(&labels) > frames {
                continue;
            }
            let logits = Matrix::from_fn(frames, vocab, |_, _| rng.random_range(-1.5..1.5));

            let loss_of = |l: &Matrix| {
                let mut lp = Matrix::zeros(l.rows(), l.cols());
                for t in 0..l.rows() {
                    let row = stable_log_softmax(l.row(t)).unwrap();
                    lp.row_mut(t).copy_from_slice(&row);
                }
                ctc_loss(&lp, &labels).unwrap().loss
            };

            let mut log_post = Matrix::zeros(frames, vocab);
            for t in 0..frames {
                let row = stable_log_softmax(logits.row(t)).unwrap();
                log_post.row_mut(t).copy_from_slice(&row);
            }
            let analytic = ctc_loss(&log_post, &labels).unwrap().grad_logits;
            let numeric = finite_diff_grad(loss_of, &logits, 1e-5).unwrap();
            for t in 0..frames {
                for k in 0..vocab {
                    assert!(
                        relative_error(analytic.get(t, k), numeric.get(t, k)) <= 1e-4,
                        "t={t} k={k}: {} vs {}",
                        analytic.get(t, k),
                        numeric.get(t, k)
                    );
                }
            }
        }
    }

    #[test]
    fn survives_extremely_small_posteriors() {
        // One row assigns e^-300 to the non-blank symbols; the loss must stay finite.
        let vocab = 3;
        let mut log_post = uniform_log_post(4, vocab);
        log_post.set(1, 0, 0.0);
        log_post.set(1, 1, -300.0);
        log_post.set(1, 2, -300.0);
        let labels = LabelSequence::new(vec![1], "x");
        let res = ctc_loss(&log_post, &labels).unwrap();
        assert!(res.loss.is_finite());
    }

    #[test]
    fn vocab_permutation_leaves_loss_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let vocab = 4;
            let frames = 6;
            let log_post = random_log_post(&mut rng, frames, vocab);
            let tokens = vec![1, 3, 2];
            let loss = ctc_loss(&log_post, &LabelSequence::new(tokens.clone(), "x"))
                .unwrap()
                .loss;
            // Permutation fixing blank: 1 -> 2 -> 3 -> 1.
            let perm = [0usize, 2, 3, 1];
            let permuted = Matrix::from_fn(frames, vocab, |t, k| {
                // permuted[t][perm[k]] = original[t][k]
                let src = perm.iter().position(|&p| p == k).unwrap();
                log_post.get(t, src)
            });
            let permuted_tokens: Vec<usize> = tokens.iter().map(|&t| perm[t]).collect();
            let loss_perm = ctc_loss(&permuted, &LabelSequence::new(permuted_tokens, "x"))
                .unwrap()
                .loss;
            assert!((loss - loss_perm).abs() <= 1e-12);
        }
    }

    #[test]
    fn appending_uniform_frame_raises_best_loss_by_at_most_single_frame_bound() {
        // Appending a blank extension keeps any collapsed sequence at a cost
        // of exactly one uniform emission, so the best achievable loss can
        // grow by at most ln(V) per appended uniform frame.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let vocab = 3;
            let frames = rng.random_range(1..=3);
            let log_post = random_log_post(&mut rng, frames, vocab);
            let mut extended = Matrix::zeros(frames + 1, vocab);
            for t in 0..frames {
                extended.row_mut(t).copy_from_slice(log_post.row(t));
            }
            extended
                .row_mut(frames)
                .copy_from_slice(&vec![-(vocab as f64).ln(); vocab]);

            let best = |m: &Matrix| {
                let mut best = f64::INFINITY;
                for len in 1..=m.rows().min(3) {
                    for combo in 0..(vocab - 1).pow(len as u32) {
                        let mut tokens = Vec::with_capacity(len);
                        let mut c = combo;
                        for _ in 0..len {
                            tokens.push(1 + c % (vocab - 1));
                            c /= vocab - 1;
                        }
                        if let Ok(l) =
                            ctc_loss_bruteforce(m, &LabelSequence::new(tokens, "x"))
                        {
                            best = best.min(l);
                        }
                    }
                }
                best
            };
            let before = best(&log_post);
            let after = best(&extended);
            let single_frame_bound = (vocab as f64).ln();
            assert!(
                after <= before + single_frame_bound + 1e-9,
                "after={after} before={before} bound={single_frame_bound}"
            );
        }
    }

    #[test]
    fn greedy_collapses_repeats_and_blanks() {
        // argmax sequence a a blank b -> [a, b]
        let rows = [
            vec![0.1f64, 0.8, 0.1],
            vec![0.2, 0.7, 0.1],
            vec![0.9, 0.05, 0.05],
            vec![0.1, 0.2, 0.7],
        ];
        let log_post = Matrix::from_fn(4, 3, |t, k| rows[t][k].ln());
        assert_eq!(greedy_decode(&log_post), vec![1, 2]);
    }

    #[test]
    fn greedy_all_blank_is_empty() {
        let log_post = Matrix::from_fn(5, 3, |_, k| if k == 0 { -0.1 } else { -5.0 });
        assert!(greedy_decode(&log_post).is_empty());
    }

    #[test]
    fn greedy_recovers_one_hot_path() {
        let path = [1usize, 1, 0, 2, 2, 0, 1];
        let log_post = Matrix::from_fn(path.len(), 3, |t, k| {
            if k == path[t] {
                -0.01
            } else {
                -9.0
            }
        });
        assert_eq!(greedy_decode(&log_post), vec![1, 2, 1]);
    }

    #[test]
    fn beam_width_one_equals_greedy_on_peaked_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let frames = rng.random_range(2..=6);
            let vocab = rng.random_range(2..=4);
            // Peaked rows: one symbol clearly dominates each frame.
            let mut log_post = Matrix::zeros(frames, vocab);
            for t in 0..frames {
                let hot = rng.random_range(0..vocab);
                let logits: Vec<f64> = (0..vocab)
                    .map(|k| if k == hot { 5.0 } else { rng.random_range(-1.0..0.0) })
                    .collect();
                let row = stable_log_softmax(&logits).unwrap();
                log_post.row_mut(t).copy_from_slice(&row);
            }
            assert_eq!(beam_search_decode(&log_post, 1), greedy_decode(&log_post));
        }
    }

    #[test]
    fn wide_beam_finds_map_sequence_on_tiny_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let frames = rng.random_range(2..=5);
            let vocab = rng.random_range(2..=3);
            let log_post = random_log_post(&mut rng, frames, vocab);

            // True MAP collapsed sequence by brute force over all paths.
            let mut totals: HashMap<Vec<usize>, f64> = HashMap::new();
            let mut path = vec![0usize; frames];
            loop {
                let mut lp = 0.0;
                for (t, &k) in path.iter().enumerate() {
                    lp += log_post.get(t, k);
                }
                let collapsed = collapse(&path);
                let slot = totals.entry(collapsed).or_insert(f64::NEG_INFINITY);
                *slot = log_add(*slot, lp);
                let mut pos = frames;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    path[pos] += 1;
                    if path[pos] < vocab {
                        break;
                    }
                    path[pos] = 0;
                }
                if pos == 0 && path[0] == 0 {
                    break;
                }
            }
            let mut ranked: Vec<(Vec<usize>, f64)> = totals.into_iter().collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            let map_seq = ranked[0].0.clone();

            let effective_width = (vocab as usize).pow(frames as u32);
            assert_eq!(
                beam_search_decode(&log_post, effective_width),
                map_seq,
                "frames={frames} vocab={vocab}"
            );
        }
    }

    #[test]
    fn beam_ten_never_scores_below_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let frames = rng.random_range(2..=7);
            let vocab = rng.random_range(2..=4);
            let log_post = random_log_post(&mut rng, frames, vocab);
            let beam = beam_search_decode(&log_post, DEFAULT_BEAM_WIDTH);
            let greedy = greedy_decode(&log_post);
            let score =
                |seq: &[usize]| ctc_log_prob(&log_post, seq).unwrap_or(f64::NEG_INFINITY);
            assert!(score(&beam) >= score(&greedy) - 1e-12);
        }
    }

    #[test]
    fn empty_labels_rejected() {
        let log_post = uniform_log_post(3, 3);
        assert!(matches!(
            ctc_loss(&log_post, &LabelSequence::new(vec![], "x")),
            Err(CtcError::EmptyLabels)
        ));
    }

    #[test]
    fn bruteforce_rejects_large_instances() {
        let log_post = uniform_log_post(20, 4);
        assert!(matches!(
            ctc_loss_bruteforce(&log_post, &LabelSequence::new(vec![1], "x")),
            Err(CtcError::InstanceTooLarge { .. })
        ));
    }
}
