use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::TaskConfig;
use crate::error::{Error, Result};
use crate::label_sim::FrameLabels;
use crate::matrix::Matrix;
use crate::tensor_io::{self, FrameTargets, LabelRecord, Tensor, UtteranceRecord, WordBoundary};

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub record: UtteranceRecord,
    /// `T x F` features.
    pub features: Matrix,
    /// Generator ground truth: token per frame, 0 for silence.
    pub frame_labels: Vec<usize>,
}

impl Utterance {
    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.record.tokens
    }

    /// Word strings of the reference transcript.
    pub fn words(&self) -> Vec<String> {
        self.record
            .words
            .as_ref()
            .map(|ws| ws.iter().map(|w| w.word.clone()).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskConfig,
    /// `V x F` feature prototypes; row 0 is silence.
    pub prototypes: Matrix,
    pub utterances: Vec<Utterance>,
}

pub fn word_string(tokens: &[usize]) -> String {
    tokens
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

/// Splits a token sequence into words of `tokens_per_word` tokens; a short
/// tail forms its own word.
pub fn tokens_to_words(tokens: &[usize], tokens_per_word: usize) -> Vec<String> {
    tokens.chunks(tokens_per_word).map(word_string).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate_prototypes(task: &TaskConfig, seed: u64) -> Result<Matrix> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..task.vocab * task.feature_dim).map(|_| normal(&mut rng)).collect();
    Matrix::from_vec(task.vocab, task.feature_dim, data)
}

fn generate_utterance(task: &TaskConfig, prototypes: &Matrix, id: String, rng: &mut ChaCha8Rng) -> Utterance {
    let frames = rng.random_range(task.min_frames..=task.max_frames);
    let mut labels = Vec::with_capacity(frames);
    let mut tokens = Vec::new();
    let mut words = Vec::new();
    let silence = |rng: &mut ChaCha8Rng| rng.random_range(0..=task.max_silence);
    labels.resize(silence(rng), 0);
    let word_room = task.tokens_per_word * task.max_token_frames + task.max_silence;
    while labels.len() + word_room <= frames || tokens.is_empty() {
        let first = tokens.len();
        let mut word_tokens = Vec::new();
        for _ in 0..task.tokens_per_word {
            let prev = tokens.last().copied().unwrap_or(0);
            // adjacent tokens always differ
            let tok = if prev == 0 {
                rng.random_range(1..task.vocab)
            } else {
                let t = rng.random_range(1..task.vocab - 1);
                if t >= prev { t + 1 } else { t }
            };
            let dur = rng.random_range(task.min_token_frames..=task.max_token_frames);
            labels.extend(std::iter::repeat_n(tok, dur));
            tokens.push(tok);
            word_tokens.push(tok);
        }
        words.push(WordBoundary {
            word: word_string(&word_tokens),
            first_token: first,
            last_token: tokens.len() - 1,
            end_frame: labels.len() - 1,
        });
        let gap = silence(rng);
        labels.extend(std::iter::repeat_n(0, gap));
    }
    labels.resize(frames.max(labels.len()), 0);
    let frames = labels.len();

    let dim = task.feature_dim;
    let mut features = Matrix::zeros(frames, dim);
    let mut run_start = 0;
    for t in 0..frames {
        if t > 0 && labels[t] != labels[t - 1] {
            run_start = t;
        }
        let cur = prototypes.row(labels[t]);
        let into = t - run_start;
        let row = features.row_mut(t);
        if labels[t] != 0 && into < task.onset_frames && run_start > 0 {
            // onset frames are a blend with the preceding segment
            let prev = prototypes.row(labels[run_start - 1]);
            let w = (into + 1) as f64 / (task.onset_frames + 1) as f64;
            for f in 0..dim {
                row[f] = w * cur[f] + (1.0 - w) * prev[f];
            }
        } else {
            row.copy_from_slice(cur);
        }
        for v in row.iter_mut() {
            *v += task.noise * normal(rng);
        }
    }
    let mut record = UtteranceRecord::new(id, frames, tokens);
    record.words = Some(words);
    Utterance {
        record,
        features,
        frame_labels: labels,
    }
}

/// Deterministic synthetic corpus. Prototypes depend on `prototype_seed`
/// only, so train and eval sets drawn with different `seed`s share them.
pub fn generate_dataset(task: &TaskConfig, prototype_seed: u64, seed: u64, n_utts: usize, prefix: &str) -> Result<Dataset> {
    let prototypes = generate_prototypes(task, prototype_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let utterances = (0..n_utts)
        .map(|i| generate_utterance(task, &prototypes, format!("{prefix}{i:05}"), &mut rng))
        .collect();
    Ok(Dataset {
        task: task.clone(),
        prototypes,
        utterances,
    })
}

impl Dataset {
    /// Writes `manifest.tsv`, `truth.txt` (true frame labels) and one feature
    /// tensor per utterance under `feats/`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let feats = dir.join("feats");
        fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
        let mut records = Vec::new();
        let mut truth = Vec::new();
        for u in &self.utterances {
            let rel = PathBuf::from("feats").join(format!("{}.bin", u.id()));
            let t = Tensor::from_f64(vec![u.frames(), self.task.feature_dim], u.features.as_slice())?;
            tensor_io::write_tensor(dir.join(&rel), &t.dims, &t.values)?;
            let mut rec = u.record.clone();
            rec.tensors.insert("features".into(), rel);
            records.push(rec);
            truth.push(LabelRecord {
                id: u.id().to_string(),
                targets: FrameTargets::Hard(FrameLabels::new(u.frame_labels.clone())),
            });
        }
        let p = Tensor::from_f64(
            vec![self.task.vocab, self.task.feature_dim],
            self.prototypes.as_slice(),
        )?;
        tensor_io::write_tensor(dir.join("prototypes.bin"), &p.dims, &p.values)?;
        let manifest = dir.join("manifest.tsv");
        tensor_io::write_manifest(&manifest, &records)?;
        tensor_io::write_label_records(dir.join("truth.txt"), &truth)?;
        Ok(manifest)
    }

    /// Reads a corpus written by [`Dataset::write`]. Features come back at
    /// f32 precision.
    pub fn read(dir: impl AsRef<Path>, task: &TaskConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = tensor_io::read_manifest(dir.join("manifest.tsv"))?;
        let truth = tensor_io::read_label_records(dir.join("truth.txt"))?;
        tensor_io::check_frame_counts(&truth, &manifest)?;
        let p = tensor_io::read_tensor(dir.join("prototypes.bin"))?;
        let prototypes = Matrix::from_vec(task.vocab, task.feature_dim, p.to_f64())?;
        let mut utterances = Vec::new();
        for (rec, lab) in manifest.records.iter().zip(&truth) {
            if rec.id != lab.id {
                return Err(Error::Invalid(format!("truth order mismatch at {}", rec.id)));
            }
            let t = tensor_io::read_tensor(manifest.tensor_path(rec, "features")?)?;
            let features = Matrix::from_vec(rec.num_frames, task.feature_dim, t.to_f64())?;
            let FrameTargets::Hard(labels) = &lab.targets else {
                return Err(Error::Invalid("truth labels must be hard".into()));
            };
            let mut record = rec.clone();
            record.tensors.clear();
            utterances.push(Utterance {
                record,
                features,
                frame_labels: labels.as_slice().to_vec(),
            });
        }
        Ok(Self {
            task: task.clone(),
            prototypes,
            utterances,
        })
    }
}
