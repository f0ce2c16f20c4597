//! Acceptance checks. Each criterion prints one `PASS`/`FAIL` line; the
//! process exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use rand::Rng;
use spikealign::ctc::{ctc_loss_grad, min_frames};
use spikealign::framewise::{hard_ce_loss_grad, soft_ce_loss_grad, soft_kl_loss_grad};
use spikealign::label_sim::{allocate_gaps, expand_hard, expand_soft, soft_probability};
use spikealign::metrics::{percentile, wer};
use spikealign::toy::{run_comparison, ToyConfig};
use spikealign::transducer::{beam_decode, greedy_decode, rnnt_loss_grad};
use spikealign::{ExpansionConfig, FrameLabels, LogitMatrix, SoftFrameLabels, SoftTarget, SpikeSegment, TransducerLattice};

type Outcome = (bool, String);

fn ctc_loss_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let vocab = r.random_range(2..=4);
        let u = r.random_range(1..=3);
        let labels = random_labels(&mut r, u, vocab);
        let frames = r.random_range(min_frames(&labels)..=6);
        let scores = random_scores(&mut r, frames * vocab, 3.0);
        let logits = LogitMatrix::new(frames, vocab, scores.clone()).unwrap();
        let (loss, _) = ctc_loss_grad(&logits, &labels).unwrap();
        worst = worst.max(rel_err(loss, ctc_loss_brute(&scores, frames, vocab, &labels)));
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst <= 1e-6 && secs < 10.0,
        format!("200 instances, max rel err {worst:.2e}, {secs:.2} s"),
    )
}

fn rnnt_loss_oracle() -> Outcome {
    let mut r = rng(202);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let vocab = r.random_range(2..=4);
        let u = r.random_range(0..=3);
        let frames = r.random_range(1..=5);
        let labels = random_labels(&mut r, u, vocab);
        let scores = random_scores(&mut r, frames * (u + 1) * vocab, 3.0);
        let lat = TransducerLattice::new(frames, u, vocab, scores.clone()).unwrap();
        let (loss, _) = rnnt_loss_grad(&lat, &labels).unwrap();
        worst = worst.max(rel_err(loss, rnnt_loss_brute(&scores, frames, vocab, &labels)));
    }
    (worst <= 1e-6, format!("200 instances, max rel err {worst:.2e}"))
}

/// Largest deviation between analytic and central-difference gradients,
/// as a relative error with an absolute floor for near-zero entries.
fn grad_gap(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

fn gradient_checks() -> Outcome {
    const H: f64 = 1e-4;
    let mut r = rng(303);
    let mut worst = [0.0f64; 4];
    for _ in 0..50 {
        // CTC, differentiated through the brute-force loss.
        let vocab = r.random_range(2..=4);
        let u = r.random_range(1..=3);
        let labels = random_labels(&mut r, u, vocab);
        let frames = r.random_range(min_frames(&labels)..=6);
        let x = random_scores(&mut r, frames * vocab, 2.0);
        let (_, g) = ctc_loss_grad(&LogitMatrix::new(frames, vocab, x.clone()).unwrap(), &labels).unwrap();
        let n = numeric_grad(&x, H, |y| ctc_loss_brute(y, frames, vocab, &labels));
        worst[0] = worst[0].max(grad_gap(g.as_slice(), &n));

        // RNN-T
        let vocab = r.random_range(2..=4);
        let u = r.random_range(0..=3);
        let frames = r.random_range(1..=5);
        let labels = random_labels(&mut r, u, vocab);
        let x = random_scores(&mut r, frames * (u + 1) * vocab, 2.0);
        let (_, g) = rnnt_loss_grad(&TransducerLattice::new(frames, u, vocab, x.clone()).unwrap(), &labels).unwrap();
        let n = numeric_grad(&x, H, |y| rnnt_loss_brute(y, frames, vocab, &labels));
        worst[1] = worst[1].max(grad_gap(&g, &n));

        // Frame-wise CE, hard and soft.
        let vocab = r.random_range(2..=6);
        let frames = r.random_range(1..=8);
        let x = random_scores(&mut r, frames * vocab, 2.0);
        let hard = FrameLabels::new((0..frames).map(|_| r.random_range(0..vocab)).collect());
        let (_, g) = hard_ce_loss_grad(&LogitMatrix::new(frames, vocab, x.clone()).unwrap(), &hard).unwrap();
        let n = numeric_grad(&x, H, |y| {
            hard_ce_loss_grad(&LogitMatrix::new(frames, vocab, y.to_vec()).unwrap(), &hard).unwrap().0
        });
        worst[2] = worst[2].max(grad_gap(g.as_slice(), &n));

        let soft = SoftFrameLabels::new(
            (0..frames)
                .map(|_| SoftTarget {
                    token: r.random_range(1..vocab),
                    prob: r.random_range(0.0..=1.0),
                })
                .collect(),
        );
        let (_, g) = soft_ce_loss_grad(&LogitMatrix::new(frames, vocab, x.clone()).unwrap(), &soft).unwrap();
        let n = numeric_grad(&x, H, |y| {
            soft_ce_loss_grad(&LogitMatrix::new(frames, vocab, y.to_vec()).unwrap(), &soft).unwrap().0
        });
        worst[3] = worst[3].max(grad_gap(g.as_slice(), &n));
    }
    (
        worst.iter().all(|&w| w <= 1e-3),
        format!(
            "50 instances each, max rel err ctc {:.1e}, rnnt {:.1e}, hard-ce {:.1e}, soft-ce {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn soft_probability_spot_checks() -> Outcome {
    let checks = [
        (soft_probability(0, 4), 1.0),
        (soft_probability(4, 4), 0.0),
        (soft_probability(7, 7), 0.0),
        (soft_probability(1, 4), 0.75f64.sqrt()),
    ];
    let worst = checks.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (worst <= 1e-9, format!("P(0,W)=1, P(W,W)=0, P(1,4)=sqrt(0.75); max abs err {worst:.1e}"))
}

fn soft_loss_reductions() -> Outcome {
    let mut r = rng(505);
    let mut exact = true;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let vocab = r.random_range(2..=6);
        let frames = r.random_range(1..=20);
        let logits = LogitMatrix::new(frames, vocab, random_scores(&mut r, frames * vocab, 4.0)).unwrap();
        let hard: Vec<usize> = (0..frames).map(|_| r.random_range(0..vocab)).collect();
        let ones = SoftFrameLabels::new(hard.iter().map(|&token| SoftTarget { token, prob: 1.0 }).collect());
        let (lh, gh) = hard_ce_loss_grad(&logits, &FrameLabels::new(hard)).unwrap();
        let (ls, gs) = soft_ce_loss_grad(&logits, &ones).unwrap();
        exact &= lh == ls && gh.as_slice() == gs.as_slice();

        let soft = SoftFrameLabels::new(
            (0..frames)
                .map(|_| SoftTarget {
                    token: r.random_range(1..vocab),
                    prob: r.random_range(0.0..=1.0),
                })
                .collect(),
        );
        let (_, gce) = soft_ce_loss_grad(&logits, &soft).unwrap();
        let (_, gkl) = soft_kl_loss_grad(&logits, &soft).unwrap();
        for (a, b) in gce.as_slice().iter().zip(gkl.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    (
        exact && worst <= 1e-12,
        format!("100 instances, P=1 soft == hard exactly: {exact}, max |dCE - dKL| {worst:.1e}"),
    )
}

/// Random ordered, non-overlapping spike segments in `frames` frames.
fn random_segments(r: &mut rand_chacha::ChaCha8Rng, frames: usize) -> Vec<SpikeSegment> {
    let mut segs: Vec<SpikeSegment> = Vec::new();
    let mut pos = r.random_range(0..=6);
    loop {
        let len = r.random_range(1..=3);
        if pos + len > frames {
            break;
        }
        let mut token = r.random_range(1..5);
        if let Some(prev) = segs.last() {
            if prev.end + 1 == pos && prev.token == token {
                token = token % 4 + 1;
            }
        }
        segs.push(SpikeSegment::new(token, pos, pos + len - 1));
        pos += len + r.random_range(0..=12);
    }
    segs
}

fn random_ratios(r: &mut rand_chacha::ChaCha8Rng) -> (f64, f64) {
    match r.random_range(0..10) {
        0 => (0.0, 0.0),
        1 => {
            let l: f64 = r.random_range(0.0..=1.0);
            (l, 1.0 - l)
        }
        2 => (0.2, 0.6),
        _ => {
            let l: f64 = r.random_range(0.0..=1.0);
            (l, r.random_range(0.0..=1.0 - l))
        }
    }
}

/// Checks one configuration; returns a description of the first violation.
fn check_geometry(segs: &[SpikeSegment], frames: usize, left: f64, right: f64) -> Result<(), String> {
    let cfg = ExpansionConfig::new(left, right).map_err(|e| e.to_string())?;
    let hard = expand_hard(segs, frames, &cfg).map_err(|e| e.to_string())?;
    let soft = expand_soft(segs, frames, &cfg).map_err(|e| e.to_string())?;
    let widths = allocate_gaps(segs, frames, &cfg).map_err(|e| e.to_string())?;
    let fl = |ratio: f64, gap: usize| (ratio * gap as f64 + 1e-9).floor() as usize;

    let mut expected = vec![0; frames];
    let mut spans = Vec::new();
    for (i, s) in segs.iter().enumerate() {
        let before = if i == 0 { s.start } else { s.start - segs[i - 1].end - 1 };
        let after = match segs.get(i + 1) {
            Some(n) => n.start - s.end - 1,
            None => frames - 1 - s.end,
        };
        let (a, b) = (s.start - fl(left, before), s.end + fl(right, after));
        if (widths[i].left, widths[i].right) != (s.start - a, b - s.end) {
            return Err(format!("segment {i}: widths {:?}", widths[i]));
        }
        if let Some(&(_, pb)) = spans.last() {
            if a <= pb {
                return Err(format!("segment {i} overlaps its predecessor"));
            }
        }
        expected[a..=b].fill(s.token);
        spans.push((a, b));
        // residual blank in the gap before this segment, when it fits
        let share = if i == 0 { left } else { left + right };
        if share < 1.0 && before as f64 * (1.0 - share) >= 1.0 + 1e-9 {
            let lo = if i == 0 { 0 } else { spans[i - 1].1 + 1 };
            if lo >= a {
                return Err(format!("gap of {before} before segment {i} left no blank"));
            }
        }
    }
    if let (Some(last), Some(&(_, b))) = (segs.last(), spans.last()) {
        let trailing = frames - 1 - last.end;
        if right < 1.0 && trailing as f64 * (1.0 - right) >= 1.0 + 1e-9 && b + 1 >= frames {
            return Err(format!("trailing gap of {trailing} left no blank"));
        }
    }
    if hard.as_slice() != expected.as_slice() {
        return Err(format!("hard labels {:?}, expected {:?}", hard.as_slice(), expected));
    }
    for (t, (s, &h)) in soft.iter().zip(hard.iter()).enumerate() {
        if s.token != 0 && s.token != h {
            return Err(format!("soft frame {t} carries token {} outside the hard span", s.token));
        }
    }
    Ok(())
}

fn expansion_geometry() -> Outcome {
    let mut r = rng(606);
    let mut segments = 0;
    for case in 0..1000 {
        let frames = r.random_range(1..=60);
        let segs = random_segments(&mut r, frames);
        let (left, right) = random_ratios(&mut r);
        segments += segs.len();
        if let Err(e) = check_geometry(&segs, frames, left, right) {
            return (false, format!("case {case} (T={frames}, r={left}/{right}): {e}"));
        }
    }
    (true, format!("1000 configurations, {segments} segments"))
}

fn beam_reduction() -> Outcome {
    let mut r = rng(707);
    let mut agree_greedy = 0;
    for i in 0..100 {
        let s = HashScorer {
            seed: i,
            frames: r.random_range(1..=8),
            vocab: r.random_range(2..=6),
            scale: 3.0,
        };
        let cap = r.random_range(1..=4);
        let g = greedy_decode(&s, s.frames, cap).unwrap();
        let b = beam_decode(&s, s.frames, 1, cap).unwrap();
        agree_greedy += usize::from(g.tokens == b.tokens);
    }
    let mut agree_exhaustive = 0;
    for i in 0..100 {
        let s = HashScorer {
            seed: 1000 + i,
            frames: r.random_range(1..=3),
            vocab: r.random_range(2..=3),
            scale: 3.0,
        };
        let cap = r.random_range(1..=2);
        let (tokens, score) = exhaustive_decode(&s, s.frames, cap);
        let b = beam_decode(&s, s.frames, 100_000, cap).unwrap();
        agree_exhaustive += usize::from(b.tokens == tokens && close(b.score, score, 1e-9, 1e-12));
    }
    (
        agree_greedy == 100 && agree_exhaustive == 100,
        format!("beam=1 == greedy on {agree_greedy}/100; unbounded beam == exhaustive on {agree_exhaustive}/100"),
    )
}

fn ms(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.1}"))
}

fn directional_replication() -> Outcome {
    let start = Instant::now();
    let cfg = ToyConfig::default();
    let report = match run_comparison(&cfg, &[1, 2, 3], None) {
        Ok(r) => r,
        Err(e) => return (false, format!("toy run failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let scratch = report.summary_for("scratch").unwrap();
    let mut parts = Vec::new();
    let mut any = false;
    for name in ["hard", "soft"] {
        let v = report.summary_for(name).unwrap();
        let wer_ok = v.mean_wer <= scratch.mean_wer;
        let el_ok = matches!((v.mean_el50_ms, scratch.mean_el50_ms), (Some(a), Some(b)) if a <= b);
        any |= wer_ok && el_ok;
        parts.push(format!(
            "{name}: WER {:.2}% ({}) EL@50 {} ms ({})",
            100.0 * v.mean_wer,
            if wer_ok { "ok" } else { "worse" },
            ms(v.mean_el50_ms),
            if el_ok { "ok" } else { "worse" },
        ));
    }
    (
        any && secs < 300.0,
        format!(
            "seeds 1,2,3; scratch WER {:.2}% EL@50 {} ms; {}; {secs:.0} s",
            100.0 * scratch.mean_wer,
            ms(scratch.mean_el50_ms),
            parts.join("; ")
        ),
    )
}

fn metrics_checks() -> Outcome {
    let mut r = rng(909);
    let words = ["a", "b", "c", "d"];
    let mut mismatches = 0;
    for _ in 0..500 {
        let mut seq = |lo: usize| -> Vec<&str> {
            let n = r.random_range(lo..=7);
            (0..n).map(|_| words[r.random_range(0..words.len())]).collect()
        };
        let hyp = seq(0);
        let reference = seq(1);
        let w = wer(&hyp, &reference).unwrap();
        let d = edit_distance_brute(&hyp, &reference);
        if w.counts.total() != d || w.rate != d as f64 / reference.len() as f64 {
            mismatches += 1;
        }
    }
    let p = [
        percentile(&[5.0], 50.0).unwrap() == 5.0,
        percentile(&(1..=10).map(f64::from).collect::<Vec<_>>(), 90.0).unwrap() == 9.0,
        percentile(&[3.0, 1.0, 2.0], 50.0).unwrap() == 2.0,
    ];
    let p_ok = p.iter().filter(|&&b| b).count();
    (
        mismatches == 0 && p_ok == 3,
        format!("WER mismatches {mismatches}/500; percentile examples {p_ok}/3"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("ctc loss oracle", ctc_loss_oracle),
        ("rnnt loss oracle", rnnt_loss_oracle),
        ("gradient checks", gradient_checks),
        ("soft probability spot checks", soft_probability_spot_checks),
        ("soft loss reductions", soft_loss_reductions),
        ("expansion geometry", expansion_geometry),
        ("beam reduction", beam_reduction),
        ("directional replication", directional_replication),
        ("metrics", metrics_checks),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let (ok, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| (false, "panicked".into()));
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
