//! Brute-force reference implementations shared by the integration tests.
//! Everything here works in the linear probability domain by explicit
//! enumeration, independent of the dynamic programs under test.
#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikealign::transducer::JointScorer;
use spikealign::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn random_scores(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Labels in `1..vocab`, any repeats allowed.
pub fn random_labels(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(1..vocab)).collect()
}

/// `|a - b| <= max(rel * max(|a|, |b|), abs)`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= (rel * a.abs().max(b.abs())).max(abs)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

/// Every sequence in `0..base` of length `len`, in lexicographic order.
pub fn all_sequences(base: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..base).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out
}

/// CTC collapse: merge repeats, then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != 0 {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Negative log of the total probability of all frame paths that collapse
/// to `labels`. `scores` is `T x V` row-major.
pub fn ctc_loss_brute(scores: &[f64], frames: usize, vocab: usize, labels: &[usize]) -> f64 {
    let probs: Vec<Vec<f64>> = scores.chunks(vocab).map(softmax).collect();
    let total: f64 = all_sequences(vocab, frames)
        .iter()
        .filter(|p| collapse(p) == labels)
        .map(|p| p.iter().enumerate().map(|(t, &k)| probs[t][k]).product::<f64>())
        .sum();
    -total.ln()
}

/// Highest-probability frame path collapsing to `labels`, with its log
/// probability. Ties keep the lexicographically first path.
pub fn ctc_best_path_brute(scores: &[f64], frames: usize, vocab: usize, labels: &[usize]) -> Option<(Vec<usize>, f64)> {
    let probs: Vec<Vec<f64>> = scores.chunks(vocab).map(softmax).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in all_sequences(vocab, frames) {
        if collapse(&p) != labels {
            continue;
        }
        let lp: f64 = p.iter().enumerate().map(|(t, &k)| probs[t][k].ln()).sum();
        if best.as_ref().is_none_or(|(_, b)| lp > *b) {
            best = Some((p, lp));
        }
    }
    best
}

/// Every transducer alignment: a sequence of `frames` blanks and the
/// labels in order, ending in a blank. Each step is `(t, u, emit)`.
pub fn rnnt_paths(frames: usize, targets: usize) -> Vec<Vec<(usize, usize, bool)>> {
    fn go(t: usize, u: usize, frames: usize, targets: usize, cur: &mut Vec<(usize, usize, bool)>, out: &mut Vec<Vec<(usize, usize, bool)>>) {
        if t == frames - 1 && u == targets {
            let mut p = cur.clone();
            p.push((t, u, false));
            out.push(p);
            return;
        }
        if u < targets {
            cur.push((t, u, true));
            go(t, u + 1, frames, targets, cur, out);
            cur.pop();
        }
        if t + 1 < frames {
            cur.push((t, u, false));
            go(t + 1, u, frames, targets, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, 0, frames, targets, &mut Vec::new(), &mut out);
    out
}

/// Negative log of the summed probability of every lattice path.
/// `scores` is `T x (U+1) x V` row-major.
pub fn rnnt_loss_brute(scores: &[f64], frames: usize, vocab: usize, labels: &[usize]) -> f64 {
    let u_len = labels.len();
    let node = |t: usize, u: usize| softmax(&scores[(t * (u_len + 1) + u) * vocab..][..vocab]);
    let total: f64 = rnnt_paths(frames, u_len)
        .iter()
        .map(|p| {
            p.iter()
                .map(|&(t, u, emit)| node(t, u)[if emit { labels[u] } else { 0 }])
                .product::<f64>()
        })
        .sum();
    -total.ln()
}

/// Central finite difference of `f` with respect to each coordinate.
pub fn numeric_grad(x: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + step;
            let up = f(&y);
            y[i] = x[i] - step;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Levenshtein distance by plain recursion (no memo); fine for short inputs.
pub fn edit_distance_brute<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = edit_distance_brute(ra, rb) + usize::from(x != y);
            let del = edit_distance_brute(ra, b) + 1;
            let ins = edit_distance_brute(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Joint scorer whose logits are a pseudo-random function of the frame and
/// the full emitted history.
pub struct HashScorer {
    pub seed: u64,
    pub frames: usize,
    pub vocab: usize,
    pub scale: f64,
}

impl JointScorer for HashScorer {
    fn vocab(&self) -> usize {
        self.vocab
    }

    fn frames(&self) -> usize {
        self.frames
    }

    fn logits(&self, frame: usize, history: &[usize]) -> Result<Vec<f64>> {
        let mut h = DefaultHasher::new();
        (self.seed, frame, history).hash(&mut h);
        let mut r = rng(h.finish());
        Ok(random_scores(&mut r, self.vocab, self.scale))
    }
}

/// Exhaustive transducer search: every frame emits up to `max_symbols`
/// tokens and then a blank. Probabilities of alignments with the same token
/// sequence are summed; returns the best sequence and its log probability.
pub fn exhaustive_decode(scorer: &dyn JointScorer, frames: usize, max_symbols: usize) -> (Vec<usize>, f64) {
    let mut totals: HashMap<Vec<usize>, f64> = HashMap::new();
    fn walk(
        s: &dyn JointScorer,
        t: usize,
        emitted: usize,
        frames: usize,
        cap: usize,
        hist: &mut Vec<usize>,
        prob: f64,
        totals: &mut HashMap<Vec<usize>, f64>,
    ) {
        if t == frames {
            *totals.entry(hist.clone()).or_default() += prob;
            return;
        }
        let p = softmax(&s.logits(t, hist).unwrap());
        walk(s, t + 1, 0, frames, cap, hist, prob * p[0], totals);
        if emitted < cap {
            for k in 1..s.vocab() {
                hist.push(k);
                walk(s, t, emitted + 1, frames, cap, hist, prob * p[k], totals);
                hist.pop();
            }
        }
    }
    walk(scorer, 0, 0, frames, max_symbols, &mut Vec::new(), 1.0, &mut totals);
    let (tokens, p) = totals
        .into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| b.0.cmp(&a.0)))
        .unwrap();
    (tokens, p.ln())
}
