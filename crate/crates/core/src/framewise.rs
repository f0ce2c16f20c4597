//! Frame-wise cross-entropy against simulated labels.
//!
//! Both losses are averaged over the `T` frames of an utterance. Log
//! arguments are floored at [`PROB_FLOOR`]; gradients are the exact
//! `(softmax - target) / T` of the unfloored loss.

use crate::error::{Error, Result};
use crate::label_sim::{FrameLabels, SoftFrameLabels};
use crate::matrix::{LogitMatrix, Matrix};
use crate::tensor_io::FrameTargets;

pub const PROB_FLOOR: f64 = 1e-30;

fn floored(log_p: f64) -> f64 {
    log_p.max(PROB_FLOOR.ln())
}

fn check_len(pred: &LogitMatrix, frames: usize) -> Result<()> {
    if pred.frames() != frames {
        return Err(Error::Shape(format!(
            "prediction has {} frames, labels have {frames}",
            pred.frames()
        )));
    }
    Ok(())
}

fn check_token(token: usize, vocab: usize) -> Result<()> {
    if token >= vocab {
        return Err(Error::LabelOutOfRange { label: token, vocab });
    }
    Ok(())
}

pub fn hard_ce_loss_grad(pred: &LogitMatrix, labels: &FrameLabels) -> Result<(f64, Matrix)> {
    check_len(pred, labels.len())?;
    let lp = pred.log_softmax();
    let scale = 1.0 / pred.frames() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(pred.frames(), pred.vocab());
    for (t, &y) in labels.iter().enumerate() {
        check_token(y, pred.vocab())?;
        loss -= floored(lp.get(t, y));
        for (k, (g, l)) in grad.row_mut(t).iter_mut().zip(lp.row(t)).enumerate() {
            let target = if k == y { 1.0 } else { 0.0 };
            *g = (l.exp() - target) * scale;
        }
    }
    Ok((loss * scale, grad))
}

/// Two-point target of one frame: `prob` on `token`, `1 - prob` on blank.
fn target_row(token: usize, prob: f64, vocab: usize) -> Vec<f64> {
    let mut row = vec![0.0; vocab];
    row[token] += prob;
    row[0] += 1.0 - prob;
    row
}

fn check_soft(pred: &LogitMatrix, soft: &SoftFrameLabels) -> Result<()> {
    check_len(pred, soft.len())?;
    for s in soft.iter() {
        check_token(s.token, pred.vocab())?;
        if !(0.0..=1.0).contains(&s.prob) {
            return Err(Error::Probability(s.prob));
        }
    }
    Ok(())
}

pub fn soft_ce_loss_grad(pred: &LogitMatrix, soft: &SoftFrameLabels) -> Result<(f64, Matrix)> {
    check_soft(pred, soft)?;
    let lp = pred.log_softmax();
    let scale = 1.0 / pred.frames() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(pred.frames(), pred.vocab());
    for (t, s) in soft.iter().enumerate() {
        loss -= s.prob * floored(lp.get(t, s.token)) + (1.0 - s.prob) * floored(lp.get(t, 0));
        let target = target_row(s.token, s.prob, pred.vocab());
        for ((g, l), q) in grad.row_mut(t).iter_mut().zip(lp.row(t)).zip(target) {
            *g = (l.exp() - q) * scale;
        }
    }
    Ok((loss * scale, grad))
}

/// Mean entropy of the soft targets; the gap between soft CE and KL.
pub fn soft_target_entropy(soft: &SoftFrameLabels) -> f64 {
    let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    let total: f64 = soft
        .iter()
        .map(|s| if s.token == 0 { 0.0 } else { h(s.prob) + h(1.0 - s.prob) })
        .sum();
    total / soft.len().max(1) as f64
}

/// `(1/T) sum_t KL(target_t || softmax_t)`, with its gradient taken through
/// the probabilities and the softmax Jacobian.
pub fn soft_kl_loss_grad(pred: &LogitMatrix, soft: &SoftFrameLabels) -> Result<(f64, Matrix)> {
    check_soft(pred, soft)?;
    let probs = pred.softmax();
    let scale = 1.0 / pred.frames() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(pred.frames(), pred.vocab());
    for (t, s) in soft.iter().enumerate() {
        let p = probs.row(t);
        let q = target_row(s.token, s.prob, pred.vocab());
        // dKL/dp_k = -q_k / p_k
        let dp: Vec<f64> = q
            .iter()
            .zip(p)
            .map(|(&qk, &pk)| if qk > 0.0 { -qk / pk.max(PROB_FLOOR) } else { 0.0 })
            .collect();
        for (k, &qk) in q.iter().enumerate() {
            if qk > 0.0 {
                loss += qk * (qk.ln() - p[k].max(PROB_FLOOR).ln());
            }
        }
        // dp_k/dz_j = p_k (delta_kj - p_j)
        let weighted: f64 = dp.iter().zip(p).map(|(d, pk)| d * pk).sum();
        for (j, g) in grad.row_mut(t).iter_mut().enumerate() {
            *g = (p[j] * dp[j] - p[j] * weighted) * scale;
        }
    }
    Ok((loss * scale, grad))
}

pub fn framewise_loss_grad(pred: &LogitMatrix, targets: &FrameTargets) -> Result<(f64, Matrix)> {
    match targets {
        FrameTargets::Hard(h) => hard_ce_loss_grad(pred, h),
        FrameTargets::Soft(s) => soft_ce_loss_grad(pred, s),
    }
}

/// Mean of per-utterance losses.
pub fn batch_mean(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Empty("no utterances in batch".into()));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
