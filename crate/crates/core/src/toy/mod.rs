//! Desk-scale run of the three training stages on synthetic data:
//! a non-causal CTC teacher, a causal student encoder pre-trained on labels
//! simulated from the teacher's alignment, and transducer training of the
//! student from that encoder or from scratch.

mod config;
mod data;
mod model;
mod train;

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

pub use config::{Optimizer, TaskConfig, ToyConfig, TrainConfig};
pub use data::{generate_dataset, generate_prototypes, tokens_to_words, word_string, Dataset, Utterance};
pub use model::{ModelGrad, ToyModel};
pub use train::{
    decode_dataset, evaluate, evaluate_decodes, frame_accuracy, pretrain_student, simulate_labels,
    train_student_transducer, train_teacher, EvalReport, SimulatedLabels,
};

use crate::error::{Error, Result};
use crate::label_sim::LabelMode;
use crate::tensor_io;

/// Stream of per-stage seeds derived from the run seed.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantReport {
    /// `scratch`, `hard` or `soft`.
    pub name: String,
    pub pretrain_curve: Vec<f64>,
    pub transducer_curve: Vec<f64>,
    pub wer: f64,
    pub el50_ms: Option<f64>,
    pub el90_ms: Option<f64>,
    pub utts_exact: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub teacher_curve: Vec<f64>,
    pub skipped_alignments: usize,
    pub variants: Vec<VariantReport>,
}

impl ExperimentReport {
    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub mean_wer: f64,
    /// Mean over seeds of EL@50; `None` if any seed had no exact utterance.
    pub mean_el50_ms: Option<f64>,
    pub mean_el90_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub experiments: Vec<ExperimentReport>,
    pub summary: Vec<VariantSummary>,
    /// Mean WER of soft minus hard pre-training, in percentage points.
    /// Soft labels are expected to stay within one point of hard ones;
    /// recorded, not enforced.
    pub soft_minus_hard_wer_points: f64,
}

impl ComparisonReport {
    pub fn summary_for(&self, name: &str) -> Option<&VariantSummary> {
        self.summary.iter().find(|v| v.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.experiments.iter().map(|e| e.seed.to_string()).collect();
        writeln!(out, "seeds: {}", seeds.join(",")).unwrap();
        let ms = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.1}"));
        for s in &self.summary {
            writeln!(
                out,
                "{:<8} WER {:6.2}%  EL@50 {:>7} ms  EL@90 {:>7} ms",
                s.name,
                100.0 * s.mean_wer,
                ms(s.mean_el50_ms),
                ms(s.mean_el90_ms)
            )
            .unwrap();
        }
        writeln!(out, "soft - hard WER: {:+.2} points", self.soft_minus_hard_wer_points).unwrap();
        out
    }
}

pub const VARIANTS: [&str; 3] = ["scratch", "hard", "soft"];

/// Runs every stage for one seed. When `out_dir` is given, datasets,
/// models, simulated labels and the report are written below it.
pub fn run_experiment(cfg: &ToyConfig, seed: u64, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let expansion = cfg.expansion()?;
    let alignment = cfg.alignment_mode()?;
    let task = &cfg.task;
    let train = generate_dataset(task, seed, derive_seed(seed, 1), task.train_utts, "train")?;
    let eval = generate_dataset(task, seed, derive_seed(seed, 2), task.eval_utts, "eval")?;

    let (teacher, teacher_curve) =
        train_teacher(&train, cfg.teacher_context, cfg.init_scale, derive_seed(seed, 3), &cfg.teacher)?;

    let mut variants = Vec::new();
    let mut skipped = 0;
    let mut students = Vec::new();
    let (scratch, curve) = train_student_transducer(
        &train,
        None,
        cfg.student_context,
        cfg.init_scale,
        derive_seed(seed, 4),
        &cfg.transducer,
    )?;
    students.push(("scratch", Vec::new(), scratch, curve, None));
    for (name, mode) in [("hard", LabelMode::Hard), ("soft", LabelMode::Soft)] {
        let labels = simulate_labels(&teacher, &train, &expansion, mode, alignment)?;
        skipped = labels.skipped;
        let (pre, pre_curve) = pretrain_student(
            &train,
            &labels.records,
            cfg.student_context,
            cfg.init_scale,
            derive_seed(seed, 4),
            &cfg.pretrain,
        )?;
        let (student, curve) = train_student_transducer(
            &train,
            Some(&pre),
            cfg.student_context,
            cfg.init_scale,
            derive_seed(seed, 4),
            &cfg.transducer,
        )?;
        students.push((name, pre_curve, student, curve, Some(labels)));
    }

    for (name, pretrain_curve, student, transducer_curve, labels) in &students {
        let report = evaluate(student, &eval, cfg.frame_ms, cfg.max_symbols)?;
        if let Some(dir) = out_dir {
            let vdir = dir.join(name);
            student.save(vdir.join("model"))?;
            if let Some(l) = labels {
                tensor_io::write_label_records(vdir.join("labels.txt"), &l.records)?;
            }
            write_json(vdir.join("eval.json"), &report)?;
        }
        variants.push(VariantReport {
            name: name.to_string(),
            pretrain_curve: pretrain_curve.clone(),
            transducer_curve: transducer_curve.clone(),
            wer: report.wer.rate,
            el50_ms: report.latency.el50,
            el90_ms: report.latency.el90,
            utts_exact: report.latency.num_utts_used,
        });
    }

    let report = ExperimentReport {
        seed,
        teacher_curve,
        skipped_alignments: skipped,
        variants,
    };
    if let Some(dir) = out_dir {
        train.write(dir.join("train"))?;
        eval.write(dir.join("eval"))?;
        teacher.save(dir.join("teacher"))?;
        write_json(dir.join("report.json"), &report)?;
    }
    Ok(report)
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn run_comparison(cfg: &ToyConfig, seeds: &[u64], out_dir: Option<&Path>) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(Error::Empty("no seeds given".into()));
    }
    let experiments = seeds
        .iter()
        .map(|&s| {
            let dir = out_dir.map(|d| d.join(format!("seed-{s}")));
            run_experiment(cfg, s, dir.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    let summary: Vec<VariantSummary> = VARIANTS
        .iter()
        .map(|&name| {
            let rows: Vec<&VariantReport> = experiments.iter().filter_map(|e| e.variant(name)).collect();
            VariantSummary {
                name: name.to_string(),
                mean_wer: rows.iter().map(|r| r.wer).sum::<f64>() / rows.len() as f64,
                mean_el50_ms: mean_opt(rows.iter().map(|r| r.el50_ms)),
                mean_el90_ms: mean_opt(rows.iter().map(|r| r.el90_ms)),
            }
        })
        .collect();
    let mean_wer = |name: &str| -> f64 {
        summary.iter().find(|s: &&VariantSummary| s.name == name).map_or(f64::NAN, |s| s.mean_wer)
    };
    let soft_minus_hard_wer_points = 100.0 * (mean_wer("soft") - mean_wer("hard"));
    let report = ComparisonReport {
        experiments,
        summary,
        soft_minus_hard_wer_points,
    };
    if let Some(dir) = out_dir {
        write_json(dir.join("summary.json"), &report)?;
    }
    Ok(report)
}

pub(crate) fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
