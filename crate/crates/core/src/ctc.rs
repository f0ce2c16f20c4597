//! CTC loss, state occupation and constrained best-path alignment.
//!
//! Labels are expanded to the usual interleaved state sequence
//! `blank y1 blank y2 ... yU blank` (length `2U + 1`); even states are blank,
//! odd state `2u + 1` is label occurrence `u`. All recursions run in the log
//! domain. Frame indices are 0-based.

use crate::error::{Error, Result};
use crate::math::{log_add, LOG_ZERO};
use crate::matrix::{LogitMatrix, Matrix};

pub const BLANK: usize = 0;

/// Run of frames the alignment assigns to one label occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpikeSegment {
    pub token: usize,
    /// First frame, inclusive.
    pub start: usize,
    /// Last frame, inclusive.
    pub end: usize,
}

impl SpikeSegment {
    pub fn new(token: usize, start: usize, end: usize) -> Self {
        Self { token, start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath {
    /// Expanded-state index per frame.
    pub states: Vec<usize>,
    pub segments: Vec<SpikeSegment>,
    /// Log-probability of the path under the model.
    pub log_prob: f64,
}

impl AlignmentPath {
    /// Token (or blank) per frame.
    pub fn frame_tokens(&self) -> Vec<usize> {
        let mut out = vec![BLANK; self.states.len()];
        for seg in &self.segments {
            out[seg.start..=seg.end].fill(seg.token);
        }
        out
    }
}

/// Which alignment drives spike extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignmentMode {
    /// Constrained Viterbi path over the model's log-probabilities.
    #[default]
    Viterbi,
    /// Constrained path maximizing the summed log state posteriors.
    OccupationArgmax,
}

impl std::str::FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "viterbi" => Ok(Self::Viterbi),
            "occupation-argmax" | "occupation" => Ok(Self::OccupationArgmax),
            other => Err(Error::Invalid(format!("unknown alignment mode {other:?}"))),
        }
    }
}

pub(crate) fn expand_labels(labels: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK);
    for &l in labels {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

#[inline]
fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

/// Minimum number of frames needed to emit `labels`: one per label plus a
/// separating blank between adjacent repeats.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn validate(logits: &LogitMatrix, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Invalid("CTC needs a non-empty label sequence".into()));
    }
    for &l in labels {
        if l == BLANK {
            return Err(Error::BlankInLabels);
        }
        if l >= logits.vocab() {
            return Err(Error::LabelOutOfRange {
                label: l,
                vocab: logits.vocab(),
            });
        }
    }
    let required = min_frames(labels);
    if logits.frames() < required {
        return Err(Error::Infeasible {
            frames: logits.frames(),
            labels: labels.len(),
            required,
        });
    }
    Ok(())
}

struct Lattice {
    ext: Vec<usize>,
    log_probs: Matrix,
    alpha: Matrix,
    beta: Matrix,
    log_z: f64,
}

fn forward_backward(logits: &LogitMatrix, labels: &[usize]) -> Result<Lattice> {
    validate(logits, labels)?;
    let ext = expand_labels(labels);
    let lp = logits.log_softmax();
    let (t_len, s_len) = (logits.frames(), ext.len());

    let mut alpha = Matrix::zeros(t_len, s_len);
    alpha.as_mut_slice().fill(LOG_ZERO);
    alpha.set(0, 0, lp.get(0, ext[0]));
    alpha.set(0, 1, lp.get(0, ext[1]));
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha.get(t - 1, s);
            if s >= 1 {
                acc = log_add(acc, alpha.get(t - 1, s - 1));
            }
            if can_skip(&ext, s) {
                acc = log_add(acc, alpha.get(t - 1, s - 2));
            }
            if acc != LOG_ZERO {
                alpha.set(t, s, acc + lp.get(t, ext[s]));
            }
        }
    }

    // beta[t][s] excludes the emission at frame t.
    let mut beta = Matrix::zeros(t_len, s_len);
    beta.as_mut_slice().fill(LOG_ZERO);
    beta.set(t_len - 1, s_len - 1, 0.0);
    beta.set(t_len - 1, s_len - 2, 0.0);
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = LOG_ZERO;
            for next in s..(s + 3).min(s_len) {
                if next == s + 2 && !can_skip(&ext, next) {
                    continue;
                }
                let b = beta.get(t + 1, next);
                if b != LOG_ZERO {
                    acc = log_add(acc, b + lp.get(t + 1, ext[next]));
                }
            }
            beta.set(t, s, acc);
        }
    }

    let log_z = log_add(
        alpha.get(t_len - 1, s_len - 1),
        alpha.get(t_len - 1, s_len - 2),
    );
    if !log_z.is_finite() {
        return Err(Error::Numerical(format!("CTC total log-probability is {log_z}")));
    }
    Ok(Lattice {
        ext,
        log_probs: lp,
        alpha,
        beta,
        log_z,
    })
}

impl Lattice {
    fn occupation(&self) -> Matrix {
        let (t_len, s_len) = (self.alpha.rows(), self.alpha.cols());
        let mut gamma = Matrix::zeros(t_len, s_len);
        for t in 0..t_len {
            for s in 0..s_len {
                let a = self.alpha.get(t, s);
                let b = self.beta.get(t, s);
                if a != LOG_ZERO && b != LOG_ZERO {
                    gamma.set(t, s, (a + b - self.log_z).exp());
                }
            }
        }
        gamma
    }
}

/// Negative log-likelihood of `labels` and its gradient with respect to the
/// logits.
pub fn ctc_loss_grad(logits: &LogitMatrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let lattice = forward_backward(logits, labels)?;
    let gamma = lattice.occupation();
    let mut grad = lattice.log_probs.clone();
    grad.as_mut_slice().iter_mut().for_each(|v| *v = v.exp());
    for t in 0..gamma.rows() {
        for (s, &tok) in lattice.ext.iter().enumerate() {
            let g = grad.get(t, tok) - gamma.get(t, s);
            grad.set(t, tok, g);
        }
    }
    Ok((-lattice.log_z, grad))
}

/// Per-frame posterior over the expanded states (`T x (2U + 1)`).
pub fn ctc_occupation(logits: &LogitMatrix, labels: &[usize]) -> Result<Matrix> {
    Ok(forward_backward(logits, labels)?.occupation())
}

/// Max-sum over valid state sequences. Ties prefer the lower state index.
fn constrained_viterbi(ext: &[usize], frames: usize, score: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let s_len = ext.len();
    let mut delta = vec![LOG_ZERO; s_len];
    let mut back = vec![0usize; frames * s_len];
    delta[0] = score(0, 0);
    delta[1] = score(0, 1);
    for t in 1..frames {
        let mut next = vec![LOG_ZERO; s_len];
        for s in 0..s_len {
            let lo = if can_skip(ext, s) { s - 2 } else { s.saturating_sub(1) };
            let mut best = lo;
            for p in lo + 1..=s {
                if delta[p] > delta[best] {
                    best = p;
                }
            }
            if delta[best] != LOG_ZERO {
                next[s] = delta[best] + score(t, s);
            }
            back[t * s_len + s] = best;
        }
        delta = next;
    }
    let mut s = if delta[s_len - 1] > delta[s_len - 2] {
        s_len - 1
    } else {
        s_len - 2
    };
    let mut states = vec![0; frames];
    for t in (0..frames).rev() {
        states[t] = s;
        if t > 0 {
            s = back[t * s_len + s];
        }
    }
    states
}

fn segments_from_states(ext: &[usize], states: &[usize]) -> Vec<SpikeSegment> {
    let mut segments: Vec<SpikeSegment> = Vec::new();
    let mut last_state = usize::MAX;
    for (t, &s) in states.iter().enumerate() {
        if ext[s] != BLANK {
            if s == last_state {
                segments.last_mut().unwrap().end = t;
            } else {
                segments.push(SpikeSegment::new(ext[s], t, t));
            }
        }
        last_state = s;
    }
    segments
}

fn path_log_prob(lp: &Matrix, ext: &[usize], states: &[usize]) -> f64 {
    states.iter().enumerate().map(|(t, &s)| lp.get(t, ext[s])).sum()
}

/// Most probable state sequence consistent with `labels`.
pub fn ctc_best_path(logits: &LogitMatrix, labels: &[usize]) -> Result<AlignmentPath> {
    validate(logits, labels)?;
    let ext = expand_labels(labels);
    let lp = logits.log_softmax();
    let states = constrained_viterbi(&ext, logits.frames(), |t, s| lp.get(t, ext[s]));
    Ok(AlignmentPath {
        segments: segments_from_states(&ext, &states),
        log_prob: path_log_prob(&lp, &ext, &states),
        states,
    })
}

/// Valid state sequence maximizing the summed log occupation. Equals the
/// per-frame posterior argmax whenever that argmax is itself a valid path.
pub fn ctc_occupation_path(logits: &LogitMatrix, labels: &[usize]) -> Result<AlignmentPath> {
    let lattice = forward_backward(logits, labels)?;
    let gamma = lattice.occupation();
    let ext = &lattice.ext;
    let states = constrained_viterbi(ext, logits.frames(), |t, s| {
        let g = gamma.get(t, s);
        if g > 0.0 {
            g.ln()
        } else {
            LOG_ZERO
        }
    });
    Ok(AlignmentPath {
        segments: segments_from_states(ext, &states),
        log_prob: path_log_prob(&lattice.log_probs, ext, &states),
        states,
    })
}

pub fn ctc_align(logits: &LogitMatrix, labels: &[usize], mode: AlignmentMode) -> Result<AlignmentPath> {
    match mode {
        AlignmentMode::Viterbi => ctc_best_path(logits, labels),
        AlignmentMode::OccupationArgmax => ctc_occupation_path(logits, labels),
    }
}
