use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients with central differences.
///
/// `f` builds a scalar expression on a fresh tape from leaves holding
/// `params`. Returns the max over all coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<'a, F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!("grad_check step {eps} outside [1e-6, 1e-4]")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = ps.iter().map(|p| tape.leaf(p.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars = params.iter().map(|p| tape.leaf(p.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get(vars[pi]).cloned().unwrap_or_else(|| Tensor::zeros(p.shape()));
        for j in 0..p.len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { op: "grad-check", node: j });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
