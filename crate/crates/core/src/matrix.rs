use crate::error::{Error, Result};
use crate::math;

/// Dense row-major `rows x cols` matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// `T x V` unnormalized per-frame scores; column 0 is blank.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(Matrix);

impl LogitMatrix {
    pub fn new(frames: usize, vocab: usize, scores: Vec<f64>) -> Result<Self> {
        Self::from_matrix(Matrix::from_vec(frames, vocab, scores)?)
    }

    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows() < 1 {
            return Err(Error::Shape("logit matrix needs at least one frame".into()));
        }
        if m.cols() < 2 {
            return Err(Error::Shape("vocabulary must hold blank plus one token".into()));
        }
        if m.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite logit".into()));
        }
        Ok(Self(m))
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn vocab(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn log_softmax(&self) -> Matrix {
        let mut out = Matrix::zeros(self.frames(), self.vocab());
        for t in 0..self.frames() {
            out.row_mut(t).copy_from_slice(&math::log_softmax(self.row(t)));
        }
        out
    }

    pub fn softmax(&self) -> Matrix {
        let mut out = self.log_softmax();
        out.as_mut_slice().iter_mut().for_each(|v| *v = v.exp());
        out
    }
}
