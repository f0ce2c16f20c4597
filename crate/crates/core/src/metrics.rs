//! Word error rate and emission latency.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor_io::UtteranceRecord;
use crate::transducer::DecodeResult;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
    }
}

/// Unit-cost Levenshtein alignment of `hyp` against `reference`.
pub fn edit_counts<T: PartialEq>(hyp: &[T], reference: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = i;
    }
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = cost[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = cost[(i - 1) * w + j] + 1;
            let ins = cost[i * w + j - 1] + 1;
            cost[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let diff = usize::from(reference[i - 1] != hyp[j - 1]);
            if here == cost[(i - 1) * w + j - 1] + diff {
                counts.substitutions += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == cost[(i - 1) * w + j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WerResult {
    pub rate: f64,
    pub counts: EditCounts,
    pub reference_words: usize,
}

pub fn wer<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<WerResult> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let counts = edit_counts(hyp, reference);
    Ok(WerResult {
        rate: counts.total() as f64 / reference.len() as f64,
        counts,
        reference_words: reference.len(),
    })
}

/// Corpus-level WER: total edits over total reference words.
pub fn corpus_wer<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<WerResult> {
    let mut counts = EditCounts::default();
    let mut words = 0;
    for (hyp, reference) in pairs {
        counts += edit_counts(hyp, reference);
        words += reference.len();
    }
    if words == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(WerResult {
        rate: counts.total() as f64 / words as f64,
        counts,
        reference_words: words,
    })
}

/// Nearest-rank percentile: the `ceil(p / 100 * n)`-th smallest value.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of no values".into()));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Invalid(format!("percentile {p} outside (0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordLatency {
    pub utterance: String,
    pub word: String,
    pub frames: i64,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub per_word: Vec<WordLatency>,
    /// `None` when no utterance was recognized exactly.
    pub el50: Option<f64>,
    pub el90: Option<f64>,
    pub num_utts_used: usize,
    pub num_utts_total: usize,
}

/// Per-word emission latency over utterances recognized exactly.
///
/// A word's latency is the emission frame of its last token minus its
/// reference end frame, times `frame_ms`; negative values mean the word was
/// emitted early. EL@50 / EL@90 pool all retained words.
pub fn emission_latency(
    decodes: &[(&DecodeResult, &UtteranceRecord)],
    frame_ms: f64,
) -> Result<LatencyReport> {
    if !(frame_ms > 0.0 && frame_ms.is_finite()) {
        return Err(Error::Invalid(format!("frame duration {frame_ms} ms must be positive")));
    }
    let mut per_word = Vec::new();
    let mut used = 0;
    for (decode, reference) in decodes {
        let words = reference
            .words
            .as_ref()
            .ok_or_else(|| Error::MissingReference(reference.id.clone()))?;
        reference.validate(None)?;
        if decode.tokens.len() != decode.emission_frames.len() {
            return Err(Error::Shape(format!(
                "{}: {} tokens but {} emission frames",
                reference.id,
                decode.tokens.len(),
                decode.emission_frames.len()
            )));
        }
        if decode.tokens != reference.tokens {
            continue;
        }
        used += 1;
        for w in words {
            let frames = decode.emission_frames[w.last_token] as i64 - w.end_frame as i64;
            per_word.push(WordLatency {
                utterance: reference.id.clone(),
                word: w.word.clone(),
                frames,
                ms: frames as f64 * frame_ms,
            });
        }
    }
    let ms: Vec<f64> = per_word.iter().map(|w| w.ms).collect();
    let (el50, el90) = if ms.is_empty() {
        (None, None)
    } else {
        (Some(percentile(&ms, 50.0)?), Some(percentile(&ms, 90.0)?))
    };
    Ok(LatencyReport {
        per_word,
        el50,
        el90,
        num_utts_used: used,
        num_utts_total: decodes.len(),
    })
}
