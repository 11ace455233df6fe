use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Bias-corrected Adam over an ordered list of parameter matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Accumulators are created lazily on the first call
    /// and must keep matching parameter shapes afterwards.
    pub fn step(&mut self, params: &mut [&mut DenseMatrix], grads: &[DenseMatrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam_step", (params.len(), 0), (grads.len(), 0)));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| DenseMatrix::zeros(g.rows(), g.cols())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::shape("adam_step", (self.first.len(), 0), (params.len(), 0)));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || m.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            let g = grads[k].as_slice();
            let m = self.first[k].as_mut_slice();
            let v = self.second[k].as_mut_slice();
            for (((pv, &gv), mv), vv) in p.as_mut_slice().iter_mut().zip(g).zip(m).zip(v) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = DenseMatrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(1e-3);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[DenseMatrix::zeros(1, 3)]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g, v̂ = g², so the update is lr·g/(|g| + eps).
        let g = DenseMatrix::from_vec(1, 4, vec![3.0, -0.25, 1e-3, -40.0]).unwrap();
        let mut p = DenseMatrix::zeros(1, 4);
        let mut adam = AdamState::new(0.01);
        adam.step(&mut [&mut p], &[g.clone()]).unwrap();
        for (pv, gv) in p.as_slice().iter().zip(g.as_slice()) {
            let expect = -0.01 * gv / (gv.abs() + 1e-8);
            assert!((pv - expect).abs() < 1e-15, "{pv} vs {expect}");
            assert!((pv.abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn deterministic_from_cloned_state() {
        let g = DenseMatrix::from_vec(2, 2, vec![0.3, -0.1, 2.0, 0.0]).unwrap();
        let mut p0 = DenseMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut [&mut p0], &[g.clone()]).unwrap();
        let (mut a, mut b) = (adam.clone(), adam.clone());
        let (mut pa, mut pb) = (p0.clone(), p0.clone());
        a.step(&mut [&mut pa], &[g.clone()]).unwrap();
        b.step(&mut [&mut pb], &[g]).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = DenseMatrix::zeros(2, 2);
        let mut adam = AdamState::new(1e-3);
        assert!(adam.step(&mut [&mut p], &[DenseMatrix::zeros(1, 2)]).is_err());
    }
}
