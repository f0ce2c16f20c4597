use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::matrix::{LogitMatrix, Matrix};
use crate::tensor_io::{self, Tensor};
use crate::transducer::{AdditiveScorer, TransducerLattice};

/// Linear map from a window of stacked frames to `V` logits, plus a bigram
/// bias table that plays the prediction network in transducer training.
///
/// The window covers frames `t - past ..= t + future`, zero-padded at the
/// utterance edges. A streaming model has `future == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub past: usize,
    pub future: usize,
    pub feature_dim: usize,
    /// `V x (window * F)`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    /// `V x V`, indexed by last emitted token (0 before the first).
    pub bigram: Matrix,
}

/// Gradient of a loss with respect to every [`ToyModel`] parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub bigram: Matrix,
}

impl ModelGrad {
    pub fn zeros_like(m: &ToyModel) -> Self {
        Self {
            weight: Matrix::zeros(m.weight.rows(), m.weight.cols()),
            bias: vec![0.0; m.bias.len()],
            bigram: Matrix::zeros(m.bigram.rows(), m.bigram.cols()),
        }
    }

    pub fn add(&mut self, other: &ModelGrad) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }

    pub fn slices(&self) -> [&[f64]; 3] {
        [self.weight.as_slice(), &self.bias, self.bigram.as_slice()]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 3] {
        [self.weight.as_mut_slice(), &mut self.bias, self.bigram.as_mut_slice()]
    }
}

impl ToyModel {
    pub fn new(vocab: usize, feature_dim: usize, past: usize, future: usize, init_scale: f64, seed: u64) -> Result<Self> {
        if vocab < 2 || feature_dim == 0 {
            return Err(Error::Invalid("model needs V >= 2 and F >= 1".into()));
        }
        let window = past + future + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, init_scale).map_err(|e| Error::Invalid(e.to_string()))?;
        let data = (0..vocab * window * feature_dim).map(|_| dist.sample(&mut rng)).collect();
        Ok(Self {
            past,
            future,
            feature_dim,
            weight: Matrix::from_vec(vocab, window * feature_dim, data)?,
            bias: vec![0.0; vocab],
            bigram: Matrix::zeros(vocab, vocab),
        })
    }

    pub fn vocab(&self) -> usize {
        self.bias.len()
    }

    pub fn is_causal(&self) -> bool {
        self.future == 0
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.feature_dim || features.rows() == 0 {
            return Err(Error::Shape(format!(
                "features are {}x{}, model expects F={}",
                features.rows(),
                features.cols(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// Visits `(weight column offset, frame)` for every in-range window slot.
    fn window(&self, t: usize, frames: usize) -> impl Iterator<Item = (usize, usize)> {
        let f = self.feature_dim;
        let past = self.past;
        (0..=self.past + self.future).filter_map(move |slot| {
            let src = (t + slot).checked_sub(past)?;
            (src < frames).then_some((slot * f, src))
        })
    }

    pub fn encoder_logits(&self, features: &Matrix) -> Result<LogitMatrix> {
        self.check_features(features)?;
        let (frames, vocab, f) = (features.rows(), self.vocab(), self.feature_dim);
        let mut out = Matrix::zeros(frames, vocab);
        for t in 0..frames {
            let row = out.row_mut(t);
            row.copy_from_slice(&self.bias);
            for (off, src) in self.window(t, frames) {
                let x = features.row(src);
                for (k, r) in row.iter_mut().enumerate() {
                    let w = &self.weight.row(k)[off..off + f];
                    *r += w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        LogitMatrix::from_matrix(out)
    }

    /// Accumulates encoder parameter gradients from `dL/dlogits`.
    pub fn encoder_backward(&self, features: &Matrix, grad_logits: &Matrix, into: &mut ModelGrad) {
        let (frames, f) = (features.rows(), self.feature_dim);
        for t in 0..frames {
            let g = grad_logits.row(t);
            for (b, gk) in into.bias.iter_mut().zip(g) {
                *b += gk;
            }
            for (off, src) in self.window(t, frames) {
                let x = features.row(src);
                for (k, &gk) in g.iter().enumerate() {
                    if gk == 0.0 {
                        continue;
                    }
                    let w = &mut into.weight.row_mut(k)[off..off + f];
                    w.iter_mut().zip(x).for_each(|(a, b)| *a += gk * b);
                }
            }
        }
    }

    /// Joint lattice: `encoder[t] + bigram[previous label]` at every node.
    pub fn lattice(&self, encoder: &LogitMatrix, labels: &[usize]) -> Result<TransducerLattice> {
        let (frames, vocab) = (encoder.frames(), encoder.vocab());
        let mut scores = Vec::with_capacity(frames * (labels.len() + 1) * vocab);
        for t in 0..frames {
            for u in 0..=labels.len() {
                let prev = if u == 0 { 0 } else { labels[u - 1] };
                if prev >= vocab {
                    return Err(Error::LabelOutOfRange { label: prev, vocab });
                }
                scores.extend(encoder.row(t).iter().zip(self.bigram.row(prev)).map(|(a, b)| a + b));
            }
        }
        TransducerLattice::new(frames, labels.len(), vocab, scores)
    }

    /// Splits a lattice gradient into encoder-logit and bigram gradients.
    pub fn lattice_backward(&self, lattice_grad: &[f64], frames: usize, labels: &[usize], into: &mut ModelGrad) -> Matrix {
        let vocab = self.vocab();
        let mut enc = Matrix::zeros(frames, vocab);
        for t in 0..frames {
            for u in 0..=labels.len() {
                let prev = if u == 0 { 0 } else { labels[u - 1] };
                let o = (t * (labels.len() + 1) + u) * vocab;
                let g = &lattice_grad[o..o + vocab];
                enc.row_mut(t).iter_mut().zip(g).for_each(|(a, b)| *a += b);
                into.bigram.row_mut(prev).iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        enc
    }

    pub fn scorer<'a>(&'a self, encoder: &'a LogitMatrix) -> Result<AdditiveScorer<'a>> {
        AdditiveScorer::new(encoder, &self.bigram)
    }

    /// Parameters in the same order as [`ModelGrad::slices`].
    pub fn params_mut(&mut self) -> [&mut [f64]; 3] {
        [self.weight.as_mut_slice(), &mut self.bias, self.bigram.as_mut_slice()]
    }

    pub fn step(&mut self, grad: &ModelGrad, lr: f64) {
        for (p, g) in self.params_mut().into_iter().zip(grad.slices()) {
            p.iter_mut().zip(g).for_each(|(a, b)| *a -= lr * b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.as_slice().iter().chain(&self.bias).chain(self.bigram.as_slice()).all(|v| v.is_finite())
    }

    /// Writes `weight.bin`, `bias.bin`, `bigram.bin` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let w = Tensor::from_f64(vec![self.weight.rows(), self.weight.cols()], self.weight.as_slice())?;
        tensor_io::write_tensor(dir.join("weight.bin"), &w.dims, &w.values)?;
        let b = Tensor::from_f64(vec![self.bias.len()], &self.bias)?;
        tensor_io::write_tensor(dir.join("bias.bin"), &b.dims, &b.values)?;
        let g = Tensor::from_f64(vec![self.bigram.rows(), self.bigram.cols()], self.bigram.as_slice())?;
        tensor_io::write_tensor(dir.join("bigram.bin"), &g.dims, &g.values)?;
        Ok(())
    }
}
