use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::DenseMatrix;

/// Outcome of comparing reverse-mode gradients to central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst disagreement.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Checks the gradient of the scalar built by `loss` with respect to `params`.
///
/// `loss` receives a fresh tape and one leaf per parameter and must return a
/// 1x1 node. The relative error per coordinate is
/// `|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`.
pub fn grad_check<F>(loss: F, params: &[DenseMatrix], fd_epsilon: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[DenseMatrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = loss(&mut tape, &vars)?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = loss(&mut tape, &vars)?;
    if !tape.scalar(out).is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {}", tape.scalar(out))));
    }
    let grads = tape.backward(out)?;

    let mut work: Vec<DenseMatrix> = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    for (pi, (&var, p)) in vars.iter().zip(params).enumerate() {
        let ad = grads.get_or_zeros(var, p.shape());
        for k in 0..p.len() {
            let orig = p.as_slice()[k];
            work[pi].as_mut_slice()[k] = orig + fd_epsilon;
            let plus = eval(&work)?;
            work[pi].as_mut_slice()[k] = orig - fd_epsilon;
            let minus = eval(&work)?;
            work[pi].as_mut_slice()[k] = orig;
            let fd = (plus - minus) / (2.0 * fd_epsilon);
            let a = ad.as_slice()[k];
            let rel = (a - fd).abs() / 1f64.max(a.abs()).max(fd.abs());
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, k);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = DenseMatrix::scalar(3.0);
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let sq = tape.square(v);
        let out = tape.reduce_sum(sq);
        assert_eq!(tape.backward(out).unwrap().get(v).unwrap().item(), 6.0);
        let report = grad_check(
            |t, p| {
                let s = t.square(p[0]);
                Ok(t.reduce_sum(s))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let r = grad_check(
            |t, p| {
                let l = t.log(p[0]);
                Ok(t.reduce_sum(l))
            },
            &[DenseMatrix::scalar(-1.0)],
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
