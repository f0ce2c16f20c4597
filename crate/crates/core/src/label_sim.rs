//! Frame-wise label simulation from CTC spikes.
//!
//! Each spike segment is grown into the blank runs on either side of it. A
//! blank gap of `G` frames between two segments is shared: the left token
//! takes `floor(r_right * G)` frames from the gap's left end and the right
//! token takes `floor(r_left * G)` frames from its right end. The leading and
//! trailing gaps are grown with the single ratio that applies. With
//! `r_left + r_right <= 1` the two claims can never meet.
//!
//! Soft labels put probability `sqrt(max(1 - d / W, 0))` on the token for an
//! expanded frame at distance `d` from its spike, where `W` is the number of
//! frames expanded on that side, and the rest on blank.

use crate::ctc::{SpikeSegment, BLANK};
use crate::error::{Error, Result};
use crate::tensor_io::FrameTargets;

/// Tolerance on `r_left + r_right <= 1`, so that e.g. 0.4 + 0.6 passes.
const RATIO_SUM_SLACK: f64 = 1e-12;
/// Guards `floor(r * G)` against products like 0.29 * 100 = 28.999999999999996.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionConfig {
    left: f64,
    right: f64,
}

impl ExpansionConfig {
    pub fn new(left: f64, right: f64) -> Result<Self> {
        for r in [left, right] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Invalid(format!("expansion ratio {r} outside [0, 1]")));
            }
        }
        if left + right > 1.0 + RATIO_SUM_SLACK {
            return Err(Error::RatioSum { left, right });
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            left: 0.2,
            right: 0.6,
        }
    }
}

/// Number of blank frames a side with ratio `ratio` takes out of a gap.
pub fn expansion_width(ratio: f64, gap: usize) -> usize {
    let w = (ratio * gap as f64 + FLOOR_SLACK).floor() as usize;
    w.min(gap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TokenExpansion {
    /// Frames gained before the spike segment.
    pub left: usize,
    /// Frames gained after the spike segment.
    pub right: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelMode {
    Hard,
    #[default]
    Soft,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "soft" => Ok(Self::Soft),
            other => Err(Error::Invalid(format!("unknown label mode {other:?}"))),
        }
    }
}

/// One token index per frame, 0 = blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabels(Vec<usize>);

impl FrameLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, usize> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Removes blanks after merging runs of identical symbols.
    pub fn collapse(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut prev = BLANK;
        for &l in &self.0 {
            if l != BLANK && l != prev {
                out.push(l);
            }
            prev = l;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftTarget {
    pub token: usize,
    /// Probability on `token`; the remainder sits on blank.
    pub prob: f64,
}

impl SoftTarget {
    pub const BLANK: SoftTarget = SoftTarget {
        token: BLANK,
        prob: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftFrameLabels(Vec<SoftTarget>);

impl SoftFrameLabels {
    pub fn new(targets: Vec<SoftTarget>) -> Self {
        Self(targets)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SoftTarget> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[SoftTarget] {
        &self.0
    }
}

pub fn validate_segments(segments: &[SpikeSegment], frames: usize) -> Result<()> {
    for (i, seg) in segments.iter().enumerate() {
        if seg.token == BLANK {
            return Err(Error::Segments(format!("segment {i} carries blank")));
        }
        if seg.start > seg.end || seg.end >= frames {
            return Err(Error::Segments(format!(
                "segment {i} spans {}..={} in {frames} frames",
                seg.start, seg.end
            )));
        }
        if i > 0 && seg.start <= segments[i - 1].end {
            return Err(Error::Segments(format!("segment {i} overlaps or precedes segment {}", i - 1)));
        }
    }
    Ok(())
}

pub fn allocate_gaps(
    segments: &[SpikeSegment],
    frames: usize,
    config: &ExpansionConfig,
) -> Result<Vec<TokenExpansion>> {
    // Re-check in case the config was built by hand.
    ExpansionConfig::new(config.left, config.right)?;
    validate_segments(segments, frames)?;
    let mut out = vec![TokenExpansion::default(); segments.len()];
    for (i, seg) in segments.iter().enumerate() {
        let gap_before = match i {
            0 => seg.start,
            _ => seg.start - segments[i - 1].end - 1,
        };
        out[i].left = expansion_width(config.left, gap_before);
        if i > 0 {
            out[i - 1].right = expansion_width(config.right, gap_before);
        }
    }
    if let Some(last) = segments.last() {
        let trailing = frames - 1 - last.end;
        out[segments.len() - 1].right = expansion_width(config.right, trailing);
    }
    Ok(out)
}

pub fn expand_hard(
    segments: &[SpikeSegment],
    frames: usize,
    config: &ExpansionConfig,
) -> Result<FrameLabels> {
    let widths = allocate_gaps(segments, frames, config)?;
    let mut labels = vec![BLANK; frames];
    for (seg, w) in segments.iter().zip(&widths) {
        labels[seg.start - w.left..=seg.end + w.right].fill(seg.token);
    }
    Ok(FrameLabels(labels))
}

/// Token probability at distance `d >= 1` from the spike, for a side that
/// was expanded by `width` frames.
pub fn soft_probability(d: usize, width: usize) -> f64 {
    if d == 0 {
        return 1.0;
    }
    if width == 0 {
        return 0.0;
    }
    (1.0 - d as f64 / width as f64).max(0.0).sqrt()
}

pub fn expand_soft(
    segments: &[SpikeSegment],
    frames: usize,
    config: &ExpansionConfig,
) -> Result<SoftFrameLabels> {
    let widths = allocate_gaps(segments, frames, config)?;
    let mut out = vec![SoftTarget::BLANK; frames];
    let mut put = |t: usize, token: usize, prob: f64| {
        // a zero-probability token frame is plain blank
        if prob > 0.0 {
            out[t] = SoftTarget { token, prob };
        }
    };
    for (seg, w) in segments.iter().zip(&widths) {
        for t in seg.start..=seg.end {
            put(t, seg.token, 1.0);
        }
        for d in 1..=w.left {
            put(seg.start - d, seg.token, soft_probability(d, w.left));
        }
        for d in 1..=w.right {
            put(seg.end + d, seg.token, soft_probability(d, w.right));
        }
    }
    Ok(SoftFrameLabels(out))
}

pub fn simulate(
    segments: &[SpikeSegment],
    frames: usize,
    config: &ExpansionConfig,
    mode: LabelMode,
) -> Result<FrameTargets> {
    Ok(match mode {
        LabelMode::Hard => FrameTargets::Hard(expand_hard(segments, frames, config)?),
        LabelMode::Soft => FrameTargets::Soft(expand_soft(segments, frames, config)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(l: f64, r: f64) -> ExpansionConfig {
        ExpansionConfig::new(l, r).unwrap()
    }

    #[test]
    fn ratio_sum_is_enforced() {
        assert!(matches!(ExpansionConfig::new(0.7, 0.6), Err(Error::RatioSum { .. })));
        assert!(ExpansionConfig::new(0.4, 0.6).is_ok());
        assert!(ExpansionConfig::new(0.3, 0.7).is_ok());
        assert!(ExpansionConfig::new(-0.1, 0.2).is_err());
        assert!(ExpansionConfig::new(f64::NAN, 0.2).is_err());
    }

    #[test]
    fn shared_gap_of_ten() {
        let segs = [SpikeSegment::new(1, 0, 0), SpikeSegment::new(2, 11, 11)];
        let w = allocate_gaps(&segs, 12, &cfg(0.2, 0.6)).unwrap();
        assert_eq!(w[0].right, 6);
        assert_eq!(w[1].left, 2);
        let hard = expand_hard(&segs, 12, &cfg(0.2, 0.6)).unwrap();
        assert_eq!(hard.as_slice(), &[1, 1, 1, 1, 1, 1, 1, 0, 0, 2, 2, 2]);
    }

    #[test]
    fn adjacent_segments_do_not_grow_into_each_other() {
        let segs = [SpikeSegment::new(1, 2, 3), SpikeSegment::new(2, 4, 4)];
        let w = allocate_gaps(&segs, 8, &cfg(0.5, 0.5)).unwrap();
        assert_eq!(w[0].right, 0);
        assert_eq!(w[1].left, 0);
        let hard = expand_hard(&segs, 8, &cfg(0.5, 0.5)).unwrap();
        // trailing gap of 3 grows by floor(0.5 * 3) = 1
        assert_eq!(hard.as_slice(), &[0, 1, 1, 1, 2, 2, 0, 0]);
        assert_eq!(hard.collapse(), vec![1, 2]);
    }

    #[test]
    fn leading_gap() {
        let segs = [SpikeSegment::new(4, 5, 5)];
        let w = allocate_gaps(&segs, 6, &cfg(0.2, 0.6)).unwrap();
        assert_eq!(w[0].left, 1);
        assert_eq!(w[0].right, 0);
    }

    #[test]
    fn single_spike_in_seven_frames() {
        // Spike on frame 3 (0-based): 3 blanks before, 3 after.
        // left: floor(0.2 * 3) = 0, right: floor(0.6 * 3) = 1.
        let segs = [SpikeSegment::new(3, 3, 3)];
        let hard = expand_hard(&segs, 7, &cfg(0.2, 0.6)).unwrap();
        assert_eq!(hard.as_slice(), &[0, 0, 0, 3, 3, 0, 0]);
        // 4 blanks before and 2 after: left 0, right 1 again.
        let segs = [SpikeSegment::new(3, 4, 4)];
        let hard = expand_hard(&segs, 7, &cfg(0.2, 0.6)).unwrap();
        assert_eq!(hard.as_slice(), &[0, 0, 0, 0, 3, 3, 0]);
    }

    #[test]
    fn zero_ratios_are_identity() {
        let segs = [SpikeSegment::new(1, 1, 2), SpikeSegment::new(3, 5, 5)];
        let hard = expand_hard(&segs, 7, &cfg(0.0, 0.0)).unwrap();
        assert_eq!(hard.as_slice(), &[0, 1, 1, 0, 0, 3, 0]);
    }

    #[test]
    fn malformed_segments() {
        let c = cfg(0.2, 0.6);
        assert!(allocate_gaps(&[SpikeSegment::new(1, 3, 2)], 5, &c).is_err());
        assert!(allocate_gaps(&[SpikeSegment::new(1, 3, 5)], 5, &c).is_err());
        assert!(allocate_gaps(&[SpikeSegment::new(0, 1, 1)], 5, &c).is_err());
        let overlapping = [SpikeSegment::new(1, 1, 2), SpikeSegment::new(2, 2, 3)];
        assert!(allocate_gaps(&overlapping, 5, &c).is_err());
        let bad = ExpansionConfig { left: 0.7, right: 0.6 };
        assert!(matches!(
            allocate_gaps(&[SpikeSegment::new(1, 0, 0)], 3, &bad),
            Err(Error::RatioSum { .. })
        ));
    }

    #[test]
    fn soft_probabilities() {
        assert_eq!(soft_probability(0, 4), 1.0);
        assert!((soft_probability(1, 4) - 0.866025).abs() < 1e-6);
        assert!((soft_probability(1, 4) - 0.75f64.sqrt()).abs() < 1e-15);
        assert_eq!(soft_probability(4, 4), 0.0);
        assert_eq!(soft_probability(5, 4), 0.0);
    }

    #[test]
    fn soft_labels_taper() {
        // trailing gap of 10 with r_right 0.4 -> W = 4
        let segs = [SpikeSegment::new(2, 0, 1)];
        let soft = expand_soft(&segs, 12, &cfg(0.0, 0.4)).unwrap();
        let p: Vec<f64> = soft.iter().map(|s| s.prob).collect();
        assert_eq!(soft.as_slice()[0], SoftTarget { token: 2, prob: 1.0 });
        assert_eq!(soft.as_slice()[1], SoftTarget { token: 2, prob: 1.0 });
        for (d, t) in (2..=4).enumerate() {
            let want = (1.0 - (d + 1) as f64 / 4.0).sqrt();
            assert_eq!(soft.as_slice()[t].token, 2);
            assert!((p[t] - want).abs() < 1e-15);
        }
        // d = W lands on blank
        assert_eq!(soft.as_slice()[5], SoftTarget::BLANK);
        assert!(soft.as_slice()[6..].iter().all(|s| *s == SoftTarget::BLANK));
    }

    #[test]
    fn label_mode_parse() {
        assert_eq!("hard".parse::<LabelMode>().unwrap(), LabelMode::Hard);
        assert!("fuzzy".parse::<LabelMode>().is_err());
    }

    fn segments_strategy() -> impl Strategy<Value = (Vec<SpikeSegment>, usize)> {
        prop::collection::vec((0usize..6, 1usize..4, 1usize..5), 0..6).prop_flat_map(|parts| {
            let mut segs = Vec::new();
            let mut t = 0;
            for (gap, len, tok) in &parts {
                t += gap;
                segs.push(SpikeSegment::new(*tok, t, t + len - 1));
                t += len;
            }
            (Just(segs), t..t + 6).prop_map(|(s, f)| (s, f.max(1)))
        })
    }

    proptest! {
        #[test]
        fn expansion_never_overlaps((segs, frames) in segments_strategy(), l in 0.0f64..=1.0, split in 0.0f64..=1.0) {
            let r = (1.0 - l) * split;
            let c = cfg(l, r);
            let widths = allocate_gaps(&segs, frames, &c).unwrap();
            let mut owner = vec![None; frames];
            for (i, (seg, w)) in segs.iter().zip(&widths).enumerate() {
                for slot in &mut owner[seg.start - w.left..=seg.end + w.right] {
                    prop_assert!(slot.is_none());
                    *slot = Some(i);
                }
            }
            let hard = expand_hard(&segs, frames, &c).unwrap();
            prop_assert_eq!(hard.len(), frames);
            let soft = expand_soft(&segs, frames, &c).unwrap();
            for (t, (&h, s)) in hard.iter().zip(soft.iter()).enumerate() {
                if s.token != BLANK {
                    prop_assert_eq!(s.token, h);
                    prop_assert!(s.prob > 0.0 && s.prob <= 1.0);
                }
                if segs.iter().any(|g| (g.start..=g.end).contains(&t)) {
                    prop_assert_eq!(s.prob, 1.0);
                }
            }
        }
    }
}
