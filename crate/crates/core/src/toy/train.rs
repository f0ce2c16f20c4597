use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Optimizer, TrainConfig};
use super::data::{tokens_to_words, Dataset, Utterance};
use super::model::{ModelGrad, ToyModel};
use crate::ctc::{self, AlignmentMode};
use crate::error::{Error, Result};
use crate::framewise;
use crate::label_sim::{self, ExpansionConfig, LabelMode};
use crate::metrics::{self, LatencyReport, WerResult};
use crate::tensor_io::{FrameTargets, LabelRecord};
use crate::transducer::{self, DecodeResult};

struct Adam {
    m: ModelGrad,
    v: ModelGrad,
    steps: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &ToyModel) -> Self {
        Self {
            m: ModelGrad::zeros_like(model),
            v: ModelGrad::zeros_like(model),
            steps: 0,
        }
    }

    fn step(&mut self, model: &mut ToyModel, grad: &ModelGrad, lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - Self::B1.powi(self.steps);
        let c2 = 1.0 - Self::B2.powi(self.steps);
        let params = model.params_mut();
        let (ms, vs) = (self.m.slices_mut(), self.v.slices_mut());
        for (((p, g), m), v) in params.into_iter().zip(grad.slices()).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Mini-batch gradient descent in manifest order. Per-utterance gradients
/// run in parallel; the batch sum is reduced sequentially so results do not
/// depend on the thread count. Returns the mean loss of every epoch.
fn gradient_descent<T: Sync>(
    model: &mut ToyModel,
    items: &[T],
    cfg: &TrainConfig,
    stage: &str,
    loss_grad: impl Fn(&ToyModel, &T) -> Result<(f64, ModelGrad)> + Sync,
) -> Result<Vec<f64>> {
    cfg.validate(stage)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    if items.is_empty() {
        return Err(Error::Empty(format!("{stage}: no training utterances")));
    }
    let mut adam = Adam::new(model);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in items.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|item| loss_grad(model, item))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = ModelGrad::zeros_like(model);
            for (loss, g) in &results {
                total += loss;
                grad.add(g);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.slices_mut().into_iter().flatten().for_each(|g| *g *= scale);
            if cfg.lr != 0.0 {
                match cfg.optimizer {
                    Optimizer::Sgd => model.step(&grad, cfg.lr),
                    Optimizer::Adam => adam.step(model, &grad, cfg.lr),
                }
            }
        }
        let mean = total / items.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Numerical(format!("{stage} diverged in epoch {epoch}")));
        }
        log::debug!("{stage} epoch {epoch}: loss {mean:.6}");
        curve.push(mean);
    }
    Ok(curve)
}

/// Sequence losses are trained per frame, matching the 1/T normalization of
/// the frame-wise losses, so one learning-rate scale serves every stage.
fn per_frame<'a>(grad: &mut dyn Iterator<Item = &'a mut f64>, frames: usize) -> f64 {
    let scale = 1.0 / frames as f64;
    grad.for_each(|g| *g *= scale);
    scale
}

pub fn train_teacher(
    dataset: &Dataset,
    context: usize,
    init_scale: f64,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<(ToyModel, Vec<f64>)> {
    let task = &dataset.task;
    let mut model = ToyModel::new(task.vocab, task.feature_dim, context, context, init_scale, seed)?;
    let curve = gradient_descent(&mut model, &dataset.utterances, cfg, "teacher", |m, u| {
        let logits = m.encoder_logits(&u.features)?;
        let (loss, mut grad) = ctc::ctc_loss_grad(&logits, u.tokens())?;
        let scale = per_frame(&mut grad.as_mut_slice().iter_mut(), u.frames());
        let mut g = ModelGrad::zeros_like(m);
        m.encoder_backward(&u.features, &grad, &mut g);
        Ok((loss * scale, g))
    })?;
    Ok((model, curve))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedLabels {
    pub records: Vec<LabelRecord>,
    /// Utterances whose alignment was infeasible.
    pub skipped: usize,
}

pub fn simulate_labels(
    teacher: &ToyModel,
    dataset: &Dataset,
    config: &ExpansionConfig,
    mode: LabelMode,
    alignment: AlignmentMode,
) -> Result<SimulatedLabels> {
    let results = dataset
        .utterances
        .par_iter()
        .map(|u| -> Result<Option<LabelRecord>> {
            let logits = teacher.encoder_logits(&u.features)?;
            let path = match ctc::ctc_align(&logits, u.tokens(), alignment) {
                Ok(p) => p,
                Err(Error::Infeasible { .. }) => {
                    log::warn!("{}: alignment infeasible, skipped", u.id());
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            let targets = label_sim::simulate(&path.segments, u.frames(), config, mode)?;
            Ok(Some(LabelRecord {
                id: u.id().to_string(),
                targets,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = results.iter().filter(|r| r.is_none()).count();
    Ok(SimulatedLabels {
        records: results.into_iter().flatten().collect(),
        skipped,
    })
}

fn pair_with_labels<'a>(dataset: &'a Dataset, labels: &'a [LabelRecord]) -> Result<Vec<(&'a Utterance, &'a FrameTargets)>> {
    let by_id: HashMap<&str, &Utterance> = dataset.utterances.iter().map(|u| (u.id(), u)).collect();
    labels
        .iter()
        .map(|r| {
            let u = by_id
                .get(r.id.as_str())
                .ok_or_else(|| Error::MissingReference(r.id.clone()))?;
            if r.targets.len() != u.frames() {
                return Err(Error::Shape(format!("{}: label length mismatch", r.id)));
            }
            Ok((*u, &r.targets))
        })
        .collect()
}

/// Frame-wise CE pre-training of a causal encoder on simulated labels.
pub fn pretrain_student(
    dataset: &Dataset,
    labels: &[LabelRecord],
    context: usize,
    init_scale: f64,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<(ToyModel, Vec<f64>)> {
    let task = &dataset.task;
    let mut model = ToyModel::new(task.vocab, task.feature_dim, context, 0, init_scale, seed)?;
    let pairs = pair_with_labels(dataset, labels)?;
    let curve = gradient_descent(&mut model, &pairs, cfg, "pretrain", |m, (u, targets)| {
        let logits = m.encoder_logits(&u.features)?;
        let (loss, grad) = framewise::framewise_loss_grad(&logits, targets)?;
        let mut g = ModelGrad::zeros_like(m);
        m.encoder_backward(&u.features, &grad, &mut g);
        Ok((loss, g))
    })?;
    Ok((model, curve))
}

/// Fraction of frames where the encoder's argmax matches the hard labels
/// (for soft records: the symbol holding most of the target mass).
pub fn frame_accuracy(model: &ToyModel, dataset: &Dataset, labels: &[LabelRecord]) -> Result<f64> {
    let pairs = pair_with_labels(dataset, labels)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (u, targets) in pairs {
        let logits = model.encoder_logits(&u.features)?;
        let want: Vec<usize> = match targets {
            FrameTargets::Hard(h) => h.as_slice().to_vec(),
            FrameTargets::Soft(s) => s.iter().map(|x| if x.prob >= 0.5 { x.token } else { 0 }).collect(),
        };
        for (t, w) in want.into_iter().enumerate() {
            hit += usize::from(crate::math::argmax(logits.row(t)) == w);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("no labelled frames".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// Transducer training of a causal student. With `init`, the encoder starts
/// from the pre-trained weights; the bigram table always starts at zero.
pub fn train_student_transducer(
    dataset: &Dataset,
    init: Option<&ToyModel>,
    context: usize,
    init_scale: f64,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<(ToyModel, Vec<f64>)> {
    let task = &dataset.task;
    let mut model = match init {
        Some(pre) => {
            if !pre.is_causal() {
                return Err(Error::Invalid("student encoder must be causal".into()));
            }
            let mut m = pre.clone();
            m.bigram = crate::matrix::Matrix::zeros(task.vocab, task.vocab);
            m
        }
        None => ToyModel::new(task.vocab, task.feature_dim, context, 0, init_scale, seed)?,
    };
    let curve = gradient_descent(&mut model, &dataset.utterances, cfg, "transducer", |m, u| {
        let enc = m.encoder_logits(&u.features)?;
        let lattice = m.lattice(&enc, u.tokens())?;
        let (loss, mut grad) = transducer::rnnt_loss_grad(&lattice, u.tokens())?;
        let scale = per_frame(&mut grad.iter_mut(), u.frames());
        let mut g = ModelGrad::zeros_like(m);
        let enc_grad = m.lattice_backward(&grad, u.frames(), u.tokens(), &mut g);
        m.encoder_backward(&u.features, &enc_grad, &mut g);
        Ok((loss * scale, g))
    })?;
    Ok((model, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub wer: WerResult,
    pub latency: LatencyReport,
}

pub fn decode_dataset(model: &ToyModel, dataset: &Dataset, max_symbols: usize) -> Result<Vec<DecodeResult>> {
    dataset
        .utterances
        .par_iter()
        .map(|u| {
            let enc = model.encoder_logits(&u.features)?;
            let scorer = model.scorer(&enc)?;
            transducer::greedy_decode(&scorer, u.frames(), max_symbols)
        })
        .collect()
}

/// WER over words and emission latency against generator ground truth.
pub fn evaluate_decodes(dataset: &Dataset, decodes: &[DecodeResult], frame_ms: f64) -> Result<EvalReport> {
    if dataset.utterances.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    if decodes.len() != dataset.utterances.len() {
        return Err(Error::Shape("one decode per utterance required".into()));
    }
    let tpw = dataset.task.tokens_per_word;
    let pairs: Vec<(Vec<String>, Vec<String>)> = dataset
        .utterances
        .iter()
        .zip(decodes)
        .map(|(u, d)| (tokens_to_words(&d.tokens, tpw), u.words()))
        .collect();
    let wer = metrics::corpus_wer(&pairs)?;
    let inputs: Vec<_> = decodes.iter().zip(&dataset.utterances).map(|(d, u)| (d, &u.record)).collect();
    let latency = metrics::emission_latency(&inputs, frame_ms)?;
    Ok(EvalReport { wer, latency })
}

pub fn evaluate(model: &ToyModel, dataset: &Dataset, frame_ms: f64, max_symbols: usize) -> Result<EvalReport> {
    if dataset.utterances.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    let decodes = decode_dataset(model, dataset, max_symbols)?;
    evaluate_decodes(dataset, &decodes, frame_ms)
}
