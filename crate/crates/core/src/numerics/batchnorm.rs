use crate::error::Result;
use crate::numerics::tape::{column_stats, BatchStats, Tape, Var};
use crate::numerics::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Per-feature affine normalisation with running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: DenseMatrix,
    pub beta: DenseMatrix,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: BatchNormMode,
}

impl BatchNormState {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.9;

    /// Identity configuration: gamma = 1, beta = 0, running mean 0 and variance 1.
    pub fn new(features: usize) -> Self {
        Self {
            gamma: DenseMatrix::filled(1, features, 1.0),
            beta: DenseMatrix::zeros(1, features),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
            mode: BatchNormMode::Train,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.cols()
    }

    /// Records the normalisation on `tape` using leaves `gamma`, `beta` that the
    /// caller created from `self.gamma`, `self.beta`. In train mode the running
    /// statistics absorb the batch statistics.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        match self.mode {
            BatchNormMode::Train => {
                let (out, stats) = tape.batch_norm(x, gamma, beta, self.eps, None)?;
                self.absorb(&stats);
                Ok(out)
            }
            BatchNormMode::Eval => {
                let stats = BatchStats {
                    mean: self.running_mean.clone(),
                    var: self.running_var.clone(),
                };
                Ok(tape.batch_norm(x, gamma, beta, self.eps, Some(&stats))?.0)
            }
        }
    }

    /// Plain (untaped) normalisation of `x`.
    pub fn normalize(&mut self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let g = tape.constant(self.gamma.clone());
        let b = tape.constant(self.beta.clone());
        let out = self.forward(&mut tape, xv, g, b)?;
        Ok(tape.value(out).clone())
    }

    fn absorb(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }

    /// Batch statistics of `x` without touching the state.
    pub fn peek_stats(x: &DenseMatrix) -> BatchStats {
        column_stats(x)
    }
}
