use crate::data::{Instance, MetaTask, UserId};
use crate::diffmath::{all_finite, clip_global_norm, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::hypergraph::RelationOperators;
use crate::metalearn::MetaConfig;
use crate::model::{task_loss, task_loss_and_grad, ModelParams};

/// A differentiable per-task loss over a parameter set.
pub trait Objective<P: ParamSet>: Sync {
    fn loss(&self, params: &P, batch: &[Instance]) -> Result<f64>;
    fn loss_and_grad(&self, params: &P, batch: &[Instance]) -> Result<(f64, Vec<Tensor>)>;
}

/// Next-POI cross-entropy of the hypergraph model over fixed operators.
#[derive(Clone, Copy)]
pub struct HypergraphObjective<'a> {
    pub ops: &'a RelationOperators,
}

impl Objective<ModelParams> for HypergraphObjective<'_> {
    fn loss(&self, params: &ModelParams, batch: &[Instance]) -> Result<f64> {
        task_loss(params, self.ops, batch)
    }

    fn loss_and_grad(&self, params: &ModelParams, batch: &[Instance]) -> Result<(f64, Vec<Tensor>)> {
        task_loss_and_grad(params, self.ops, batch)
    }
}

#[derive(Clone, Debug)]
pub struct AdaptResult<P> {
    pub user: UserId,
    pub rate: f64,
    pub adapted: P,
    pub support_loss_pre: f64,
    pub support_loss_post: f64,
    pub query_loss: f64,
    /// Query-loss gradient at the adapted parameters, after clipping.
    pub query_grad: Vec<Tensor>,
}

fn finite_loss(loss: f64, what: &'static str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite { op: what, node: 0 })
    }
}

/// `inner_steps` clipped gradient steps on `support`. Returns the adapted
/// parameters with the support loss before and after.
pub fn adapt_on_support<P: ParamSet, O: Objective<P>>(
    theta: &P,
    support: &[Instance],
    rate: f64,
    cfg: &MetaConfig,
    objective: &O,
) -> Result<(P, f64, f64)> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("support set is empty".into()));
    }
    let mut adapted = theta.clone();
    let mut pre = f64::NAN;
    for step in 0..cfg.inner_steps {
        let (loss, mut grads) = objective.loss_and_grad(&adapted, support)?;
        let loss = finite_loss(loss, "support-loss")?;
        if step == 0 {
            pre = loss;
        }
        clip_global_norm(&mut grads, cfg.clip_norm);
        adapted.apply_update(-rate, &grads)?;
    }
    let post = finite_loss(objective.loss(&adapted, support)?, "support-loss")?;
    Ok((adapted, pre, post))
}

/// Adapts to the task's support set at `task.inner_rate`, then takes the
/// query gradient at the adapted point. `theta` is left untouched.
pub fn inner_adapt<P: ParamSet, O: Objective<P>>(
    theta: &P,
    task: &MetaTask,
    cfg: &MetaConfig,
    objective: &O,
) -> Result<AdaptResult<P>> {
    let (adapted, pre, post) = adapt_on_support(theta, &task.support, task.inner_rate, cfg, objective)?;
    if task.query.is_empty() {
        return Err(Error::InvalidArgument(format!("task of user {} has an empty query set", task.user)));
    }
    let (query_loss, mut query_grad) = objective.loss_and_grad(&adapted, &task.query)?;
    let query_loss = finite_loss(query_loss, "query-loss")?;
    clip_global_norm(&mut query_grad, cfg.clip_norm);
    Ok(AdaptResult {
        user: task.user,
        rate: task.inner_rate,
        adapted,
        support_loss_pre: pre,
        support_loss_post: post,
        query_loss,
        query_grad,
    })
}

/// `θ − β_outer · Σ_u g_u`, summed in ascending user-id order.
pub fn outer_step<P: ParamSet>(theta: &P, results: &[AdaptResult<P>], beta_outer: f64) -> Result<P> {
    if results.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut order: Vec<&AdaptResult<P>> = results.iter().collect();
    order.sort_by_key(|r| r.user);
    let mut total = theta.zeros_like();
    for r in order {
        if r.query_grad.len() != total.len() {
            return Err(Error::ShapeMismatch {
                op: "outer-step",
                left: vec![total.len()],
                right: vec![r.query_grad.len()],
            });
        }
        for (t, g) in total.iter_mut().zip(&r.query_grad) {
            if t.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "outer-step",
                    left: t.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            t.axpy(1.0, g);
        }
    }
    if !all_finite(&total) {
        return Err(Error::NonFinite { op: "outer-step", node: 0 });
    }
    let mut next = theta.clone();
    next.apply_update(-beta_outer, &total)?;
    Ok(next)
}

/// Evaluation-time adaptation of a held-out user.
#[derive(Clone, Debug)]
pub struct ColdStartAdapt<P> {
    pub user: UserId,
    pub rate: f64,
    pub params: P,
    /// No support instances: the trained parameters are used as they are.
    pub zero_shot: bool,
}

/// Adapts on the support set only; the query set is not read.
pub fn cold_start_eval_adapt<P: ParamSet, O: Objective<P>>(
    theta: &P,
    task: &MetaTask,
    cfg: &MetaConfig,
    objective: &O,
) -> Result<ColdStartAdapt<P>> {
    if task.support.is_empty() {
        return Ok(ColdStartAdapt {
            user: task.user,
            rate: task.inner_rate,
            params: theta.clone(),
            zero_shot: true,
        });
    }
    let (params, _, _) = adapt_on_support(theta, &task.support, task.inner_rate, cfg, objective)?;
    Ok(ColdStartAdapt {
        user: task.user,
        rate: task.inner_rate,
        params,
        zero_shot: false,
    })
}
