//! Transducer loss over a precomputed joint lattice, and frame-synchronous
//! greedy / beam decoding over a [`JointScorer`].
//!
//! Lattice node `(t, u)` holds the joint logits after `u` labels have been
//! consumed at frame `t`. From `(t, u)` a blank moves to `(t + 1, u)` and
//! label `y[u]` moves to `(t, u + 1)`; every path ends with a blank emitted
//! at `(T - 1, U)`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::math::{self, log_add, LOG_ZERO};
use crate::matrix::{LogitMatrix, Matrix};

/// `T x (U + 1) x V` joint logits, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransducerLattice {
    frames: usize,
    targets: usize,
    vocab: usize,
    scores: Vec<f64>,
}

impl TransducerLattice {
    pub fn new(frames: usize, targets: usize, vocab: usize, scores: Vec<f64>) -> Result<Self> {
        if frames == 0 || vocab < 2 {
            return Err(Error::Shape(format!(
                "lattice needs T >= 1 and V >= 2, got T={frames} V={vocab}"
            )));
        }
        if scores.len() != frames * (targets + 1) * vocab {
            return Err(Error::Shape(format!(
                "{frames}x{}x{vocab} lattice needs {} scores, got {}",
                targets + 1,
                frames * (targets + 1) * vocab,
                scores.len()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite lattice score".into()));
        }
        Ok(Self {
            frames,
            targets,
            vocab,
            scores,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of labels `U`; the lattice has `U + 1` prediction steps.
    pub fn targets(&self) -> usize {
        self.targets
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn offset(&self, t: usize, u: usize) -> usize {
        (t * (self.targets + 1) + u) * self.vocab
    }

    pub fn node(&self, t: usize, u: usize) -> &[f64] {
        let o = self.offset(t, u);
        &self.scores[o..o + self.vocab]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }
}

/// Negative log of the summed probability of all lattice paths that emit
/// `labels`, with its gradient in the lattice layout.
pub fn rnnt_loss_grad(lattice: &TransducerLattice, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (t_len, u_len, v) = (lattice.frames, lattice.targets, lattice.vocab);
    if labels.len() != u_len {
        return Err(Error::Shape(format!(
            "lattice built for {u_len} labels, got {}",
            labels.len()
        )));
    }
    for &l in labels {
        if l == 0 {
            return Err(Error::BlankInLabels);
        }
        if l >= v {
            return Err(Error::LabelOutOfRange { label: l, vocab: v });
        }
    }

    let nodes = t_len * (u_len + 1);
    let mut lp = vec![0.0; nodes * v];
    for (n, chunk) in lp.chunks_exact_mut(v).enumerate() {
        chunk.copy_from_slice(&math::log_softmax(&lattice.scores[n * v..(n + 1) * v]));
    }
    let at = |t: usize, u: usize| t * (u_len + 1) + u;
    let blank = |t: usize, u: usize| lp[at(t, u) * v];
    let emit = |t: usize, u: usize| lp[at(t, u) * v + labels[u]];

    let mut alpha = vec![LOG_ZERO; nodes];
    alpha[0] = 0.0;
    for t in 0..t_len {
        for u in 0..=u_len {
            if t == 0 && u == 0 {
                continue;
            }
            let mut a = LOG_ZERO;
            if t > 0 {
                a = alpha[at(t - 1, u)] + blank(t - 1, u);
            }
            if u > 0 {
                a = log_add(a, alpha[at(t, u - 1)] + emit(t, u - 1));
            }
            alpha[at(t, u)] = a;
        }
    }
    let log_z = alpha[at(t_len - 1, u_len)] + blank(t_len - 1, u_len);

    let mut beta = vec![LOG_ZERO; nodes];
    for t in (0..t_len).rev() {
        for u in (0..=u_len).rev() {
            let mut b = if t + 1 < t_len {
                beta[at(t + 1, u)] + blank(t, u)
            } else if u == u_len {
                blank(t, u)
            } else {
                LOG_ZERO
            };
            if u < u_len {
                b = log_add(b, beta[at(t, u + 1)] + emit(t, u));
            }
            beta[at(t, u)] = b;
        }
    }
    if !log_z.is_finite() {
        return Err(Error::Numerical(format!("transducer log-likelihood is {log_z}")));
    }

    let mut grad = vec![0.0; nodes * v];
    for t in 0..t_len {
        for u in 0..=u_len {
            let n = at(t, u);
            let a = alpha[n];
            // d loss / d log p for the two outgoing arcs
            let next_blank = if t + 1 < t_len {
                beta[at(t + 1, u)]
            } else if u == u_len {
                0.0
            } else {
                LOG_ZERO
            };
            let g_blank = -(a + blank(t, u) + next_blank - log_z).exp();
            let g_emit = if u < u_len {
                -(a + emit(t, u) + beta[at(t, u + 1)] - log_z).exp()
            } else {
                0.0
            };
            let out = &mut grad[n * v..(n + 1) * v];
            let lp_row = &lp[n * v..(n + 1) * v];
            let total = g_blank + g_emit;
            for (g, l) in out.iter_mut().zip(lp_row) {
                *g = -l.exp() * total;
            }
            out[0] += g_blank;
            if u < u_len {
                out[labels[u]] += g_emit;
            }
        }
    }
    Ok((-log_z, grad))
}

/// Produces joint logits for a frame given the emitted history.
///
/// Implementations must be deterministic and must not look past `frame`.
pub trait JointScorer {
    fn vocab(&self) -> usize;

    fn frames(&self) -> usize;

    fn logits(&self, frame: usize, history: &[usize]) -> Result<Vec<f64>>;
}

/// Encoder logits plus a bigram bias indexed by the last emitted token
/// (row 0 before any emission).
#[derive(Debug, Clone)]
pub struct AdditiveScorer<'a> {
    pub encoder: &'a LogitMatrix,
    pub bigram: &'a Matrix,
}

impl<'a> AdditiveScorer<'a> {
    pub fn new(encoder: &'a LogitMatrix, bigram: &'a Matrix) -> Result<Self> {
        if bigram.rows() != encoder.vocab() || bigram.cols() != encoder.vocab() {
            return Err(Error::Shape(format!(
                "bigram table is {}x{}, vocabulary is {}",
                bigram.rows(),
                bigram.cols(),
                encoder.vocab()
            )));
        }
        Ok(Self { encoder, bigram })
    }
}

impl JointScorer for AdditiveScorer<'_> {
    fn vocab(&self) -> usize {
        self.encoder.vocab()
    }

    fn frames(&self) -> usize {
        self.encoder.frames()
    }

    fn logits(&self, frame: usize, history: &[usize]) -> Result<Vec<f64>> {
        if frame >= self.encoder.frames() {
            return Err(Error::Invalid(format!("frame {frame} past end of utterance")));
        }
        let prev = history.last().copied().unwrap_or(0);
        Ok(self
            .encoder
            .row(frame)
            .iter()
            .zip(self.bigram.row(prev))
            .map(|(a, b)| a + b)
            .collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeResult {
    pub tokens: Vec<usize>,
    /// Frame at which each token was emitted.
    pub emission_frames: Vec<usize>,
    /// Total log-probability of the hypothesis.
    pub score: f64,
}

fn scored_row(scorer: &dyn JointScorer, frame: usize, history: &[usize]) -> Result<Vec<f64>> {
    let logits = scorer.logits(frame, history)?;
    if logits.len() != scorer.vocab() {
        return Err(Error::Shape(format!(
            "scorer returned {} logits for vocabulary {}",
            logits.len(),
            scorer.vocab()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite joint logit at frame {frame}")));
    }
    Ok(math::log_softmax(&logits))
}

fn check_decode_args(scorer: &dyn JointScorer, frames: usize, max_symbols: usize) -> Result<()> {
    if frames == 0 {
        return Err(Error::Invalid("decoding needs at least one frame".into()));
    }
    if frames > scorer.frames() {
        return Err(Error::Invalid(format!(
            "{frames} frames requested, scorer has {}",
            scorer.frames()
        )));
    }
    if max_symbols == 0 {
        return Err(Error::Invalid("max symbols per frame must be >= 1".into()));
    }
    if scorer.vocab() < 2 {
        return Err(Error::Invalid("scorer vocabulary must hold blank plus one token".into()));
    }
    Ok(())
}

pub fn greedy_decode(scorer: &dyn JointScorer, frames: usize, max_symbols: usize) -> Result<DecodeResult> {
    check_decode_args(scorer, frames, max_symbols)?;
    let mut out = DecodeResult::default();
    for t in 0..frames {
        let mut emitted = 0;
        loop {
            let lp = scored_row(scorer, t, &out.tokens)?;
            let best = math::argmax(&lp);
            if best == 0 || emitted == max_symbols {
                // symbol cap forces the blank
                out.score += lp[0];
                break;
            }
            out.score += lp[best];
            out.tokens.push(best);
            out.emission_frames.push(t);
            emitted += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<usize>,
    frames: Vec<usize>,
    /// Prefix log-probability, merged over alignments.
    score: f64,
    /// Score of the single best alignment, whose frames are kept.
    best: f64,
}

struct Candidate {
    parent: usize,
    token: usize,
    score: f64,
    best: f64,
}

fn merge_into(done: &mut Vec<Hyp>, index: &mut HashMap<Vec<usize>, usize>, hyp: Hyp) {
    match index.get(&hyp.tokens) {
        Some(&i) => {
            let slot = &mut done[i];
            slot.score = log_add(slot.score, hyp.score);
            if hyp.best > slot.best {
                slot.best = hyp.best;
                slot.frames = hyp.frames;
            }
        }
        None => {
            index.insert(hyp.tokens.clone(), done.len());
            done.push(hyp);
        }
    }
}

fn by_score_desc(a: f64, b: f64) -> std::cmp::Ordering {
    b.partial_cmp(&a).unwrap_or(std::cmp::Ordering::Equal)
}

/// Frame-synchronous beam search. Within a frame, blank and token
/// extensions of all live hypotheses compete for `beam_size` slots at every
/// expansion step; hypotheses that emitted blank are merged by token
/// sequence (log-sum-exp) and pruned to `beam_size` before the next frame.
pub fn beam_decode(
    scorer: &dyn JointScorer,
    frames: usize,
    beam_size: usize,
    max_symbols: usize,
) -> Result<DecodeResult> {
    check_decode_args(scorer, frames, max_symbols)?;
    if beam_size == 0 {
        return Err(Error::Invalid("beam size must be >= 1".into()));
    }
    let vocab = scorer.vocab();
    let mut hyps = vec![Hyp {
        tokens: Vec::new(),
        frames: Vec::new(),
        score: 0.0,
        best: 0.0,
    }];
    for t in 0..frames {
        let mut done: Vec<Hyp> = Vec::new();
        let mut index = HashMap::new();
        let mut active = std::mem::take(&mut hyps);
        for step in 0..=max_symbols {
            if active.is_empty() {
                break;
            }
            let mut cands = Vec::new();
            for (i, h) in active.iter().enumerate() {
                let lp = scored_row(scorer, t, &h.tokens)?;
                let last = if step < max_symbols { vocab } else { 1 };
                for (k, &l) in lp.iter().enumerate().take(last) {
                    cands.push(Candidate {
                        parent: i,
                        token: k,
                        score: h.score + l,
                        best: h.best + l,
                    });
                }
            }
            // stable: ties keep generation order (blank first)
            cands.sort_by(|a, b| by_score_desc(a.score, b.score));
            cands.truncate(beam_size);
            let mut next = Vec::new();
            for c in cands {
                let parent = &active[c.parent];
                let mut tokens = parent.tokens.clone();
                let mut frames_ = parent.frames.clone();
                if c.token == 0 {
                    let hyp = Hyp { tokens, frames: frames_, score: c.score, best: c.best };
                    merge_into(&mut done, &mut index, hyp);
                } else {
                    tokens.push(c.token);
                    frames_.push(t);
                    next.push(Hyp { tokens, frames: frames_, score: c.score, best: c.best });
                }
            }
            active = next;
        }
        done.sort_by(|a, b| by_score_desc(a.score, b.score));
        done.truncate(beam_size);
        hyps = done;
    }
    let best = hyps
        .into_iter()
        .next()
        .ok_or_else(|| Error::Numerical("beam search produced no hypothesis".into()))?;
    Ok(DecodeResult {
        tokens: best.tokens,
        emission_frames: best.frames,
        score: best.score,
    })
}
