use crate::diffmath::Tensor;
use crate::error::{Error, Result};

/// A fixed, ordered collection of parameter tensors. Gradients are plain
/// `Vec<Tensor>` in the same order.
pub trait ParamSet: Clone + Send + Sync {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    /// `self += scale · grads`
    fn apply_update(&mut self, scale: f64, grads: &[Tensor]) -> Result<()> {
        let mut params = self.tensors_mut();
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                op: "apply-update",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in params.iter_mut().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "apply-update",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            p.axpy(scale, g);
        }
        Ok(())
    }

    fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Plain list of tensors; handy for surrogate objectives.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatParams(pub Vec<Tensor>);

impl ParamSet for FlatParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.0.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.0.iter_mut().collect()
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

pub fn all_finite(grads: &[Tensor]) -> bool {
    grads.iter().all(Tensor::is_finite)
}
